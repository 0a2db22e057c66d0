#pragma once

#include <cstdint>

#include <json.hpp>

namespace infil {

// Central finite-difference checks (h = 1e-5) of every analytic loss
// gradient on a seeded random fixture of `size` cubed voxels (size must be
// a positive multiple of 8 so the auxiliary downsampling divides evenly).
// Reports the max relative error per component against a 1e-4 tolerance.
nlohmann::ordered_json run_gradient_check(std::uint64_t seed, std::int64_t size);

// Fusion self-checks: streamed attention against a direct dense
// recomputation, attention row normalization via an all-ones value matrix,
// the single-token closed form, and the zero-projection reduction of the
// full network to the cnn_only ablation.
nlohmann::ordered_json run_fusion_check(std::uint64_t seed);

}  // namespace infil
