#pragma once

#include <filesystem>
#include <string>

#include "infil/grid.hpp"

namespace infil {

// Reads a volume from disk. Supported formats, chosen by extension:
//   .nii / .nii.gz   NIfTI-1 single-file, dtypes uint8/int16/float32,
//                    sform/qform reduced to spacing (BraTS volumes are
//                    co-registered, orientation is out of scope)
//   .json            internal sidecar format: JSON header {dims, spacing,
//                    dtype, role} next to a little-endian .raw payload
// `role` declares how the scalars are interpreted for NIfTI inputs; the
// internal format carries its role in the header and ignores the argument.
VoxelGrid read_volume(const std::filesystem::path& path,
                      GridRole role = GridRole::intensity);

// Inverse of read_volume on (dims, spacing, data). NIfTI payload dtype is
// uint8 for label grids and float32 otherwise; the internal format stores
// uint8 for labels and float64 otherwise, making fixtures byte-exact.
void write_volume(const VoxelGrid& grid, const std::filesystem::path& path);

}  // namespace infil
