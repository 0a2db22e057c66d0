#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "infil/error.hpp"

namespace infil {

// Role of the scalars a grid carries. Grids are plain double storage; the
// role drives on-disk dtype selection and validity checks.
enum class GridRole { intensity, label, distance, probability };

const char* grid_role_name(GridRole role);
GridRole grid_role_from_name(const std::string& name);

// Physical voxel spacing in mm along (depth, height, width).
struct Spacing {
    double z = 1.0;
    double y = 1.0;
    double x = 1.0;

    bool operator==(const Spacing&) const = default;
};

// Three-zone infiltration-risk vocabulary. Outside covers tumor core and
// non-brain voxels.
enum class ZoneLabel : std::uint8_t {
    outside = 0,
    low_risk = 1,
    medium_risk = 2,
    high_risk = 3,
};

inline constexpr int kNumZoneLabels = 4;

// Dense 3D scalar grid, dims ordered (depth, height, width) with width (x)
// fastest in memory. The one axis convention every module inherits.
class VoxelGrid {
public:
    VoxelGrid() = default;
    VoxelGrid(std::int64_t depth, std::int64_t height, std::int64_t width,
              Spacing spacing, GridRole role, double fill = 0.0);

    std::int64_t depth() const { return dims_[0]; }
    std::int64_t height() const { return dims_[1]; }
    std::int64_t width() const { return dims_[2]; }
    const std::array<std::int64_t, 3>& dims() const { return dims_; }
    std::int64_t size() const { return dims_[0] * dims_[1] * dims_[2]; }

    std::int64_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return (z * dims_[1] + y) * dims_[2] + x;
    }

    double at(std::int64_t z, std::int64_t y, std::int64_t x) const {
        return data_[static_cast<std::size_t>(index(z, y, x))];
    }
    double& at(std::int64_t z, std::int64_t y, std::int64_t x) {
        return data_[static_cast<std::size_t>(index(z, y, x))];
    }

    const std::vector<double>& data() const { return data_; }
    std::vector<double>& data() { return data_; }

    Spacing spacing;
    GridRole role = GridRole::intensity;

    // Voxel volume in mm^3.
    double voxel_volume_mm3() const { return spacing.z * spacing.y * spacing.x; }

    bool same_geometry(const VoxelGrid& other) const {
        return dims_ == other.dims_ && spacing == other.spacing;
    }

    // True iff every value is integral and inside {0..3}.
    bool values_in_zone_vocabulary() const;

private:
    std::array<std::int64_t, 3> dims_{0, 0, 0};
    std::vector<double> data_;
};

// Four co-registered modalities in canonical order T1/t1n, T1ce/t1c, T2/t2w,
// FLAIR/t2f. FLAIR is always index 3.
struct MultiModalVolume {
    std::array<VoxelGrid, 4> modalities;

    static constexpr int kT1 = 0;
    static constexpr int kT1ce = 1;
    static constexpr int kT2 = 2;
    static constexpr int kFlair = 3;

    const VoxelGrid& flair() const { return modalities[kFlair]; }

    // Throws when the four grids disagree on dims or spacing.
    void validate() const;
};

// Axes selected for a flip, ordered (depth, height, width).
struct AxisSet {
    bool depth = false;
    bool height = false;
    bool width = false;

    bool any() const { return depth || height || width; }
};

// Orthogonal rotation planes. Named by the two in-plane axes.
enum class RotPlane { depth_height, depth_width, height_width };

// Mirror the grid along the selected axes. Involution; spacing unchanged.
VoxelGrid flip_axes(const VoxelGrid& grid, const AxisSet& axes);

// Rotate by quarter_turns * 90 degrees in the given plane. One quarter turn
// maps, in the (a, b) in-plane index pair, out[i][j] = in[j][n_b - 1 - i];
// the in-plane dims and spacing components swap for non-square slices.
// quarter_turns may be any integer (taken mod 4); four turns are the identity.
VoxelGrid rot90(const VoxelGrid& grid, RotPlane plane, int quarter_turns);

}  // namespace infil
