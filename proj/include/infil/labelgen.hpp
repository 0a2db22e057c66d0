#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "infil/grid.hpp"

namespace infil {

// Zone distance thresholds in mm, inclusive upper bounds.
inline constexpr double kHighRiskMaxDistMm = 10.0;
inline constexpr double kMediumRiskMaxDistMm = 20.0;

// Binary decomposition of a tumor segmentation. All grids share geometry;
// core and edema are disjoint and whole is their union.
struct TumorRegions {
    VoxelGrid core;   // necrotic plus enhancing voxels
    VoxelGrid edema;  // peritumoral edema voxels
    VoxelGrid whole;  // core or edema
};

// Raw label values used by a segmentation release for the three tumor
// sub-regions.
struct LabelVocabularyMap {
    std::string dataset;
    double necrotic = 0.0;
    double edema = 0.0;
    double enhancing = 0.0;

    static LabelVocabularyMap brats2020();  // necrotic 1, edema 2, enhancing 4
    static LabelVocabularyMap brats2025();  // necrotic 1, edema 2, enhancing 3
    // Accepts "brats2020" or "brats2025"; anything else is a vocabulary error.
    static LabelVocabularyMap from_dataset(const std::string& dataset);
};

// Splits a segmentation mask into core/edema/whole. Any value outside
// {0, necrotic, edema, enhancing} is a vocabulary error naming the value and
// how often it occurs.
TumorRegions parse_brats_mask(const VoxelGrid& mask, const LabelVocabularyMap& vocab);

// Brain mask as the literal nonzero support of the FLAIR channel. No
// morphological cleanup.
VoxelGrid brain_mask_from_flair(const VoxelGrid& flair);
VoxelGrid brain_mask_from_flair(const MultiModalVolume& volume);

// Exact anisotropic Euclidean distance transform: for every voxel, the mm
// distance to the nearest nonzero voxel of `reference` (0 on the reference
// set itself). Separable squared-distance transform, not a chamfer
// approximation. An empty reference set is an error; callers decide whether
// that means "skip this patient".
VoxelGrid exact_edt(const VoxelGrid& reference);

// Zone assignment: 3 where v is edema or 0 < D <= 10mm; 2 where
// 10 < D <= 20mm; 1 where D > 20mm inside the brain; 0 elsewhere (tumor
// core, non-brain background). The brain mask gates only the 1-vs-0 split.
// Edema voxels outside the brain mask still get 3; their count is reported
// through `edema_outside_brain` when non-null so callers can warn.
VoxelGrid assign_zones(const TumorRegions& regions, const VoxelGrid& dist,
                       const VoxelGrid& brain,
                       std::int64_t* edema_outside_brain = nullptr);

// Reference implementation of exact_edt + assign_zones by direct
// nearest-reference-voxel scan, O(voxels * |tumor|). Guarded to small grids.
// An empty tumor degenerates to D = infinity: label 1 on brain, 0 elsewhere.
// Shares the transform's canonical squared-distance form (per-axis position
// products, x/y/z accumulation order) so zone decisions agree voxel for voxel
// even on real-arithmetic threshold ties.
VoxelGrid brute_force_zone_oracle(const TumorRegions& regions, const VoxelGrid& brain,
                                  Spacing spacing);

// Voxel count per zone label.
std::array<std::int64_t, kNumZoneLabels> zone_voxel_counts(const VoxelGrid& zones);

}  // namespace infil
