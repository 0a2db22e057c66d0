#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "infil/grid.hpp"

namespace infil {

// One-vs-rest voxel counts for a single zone.
struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
};

// A metric value plus whether its defining ratio had a nonzero denominator.
// Undefined entries carry value 0 and are excluded from means.
struct MetricValue {
    double value = 0.0;
    bool defined = false;
};

struct OverlapMetrics {
    MetricValue dsc;
    MetricValue iou;
    MetricValue vs;
    MetricValue sensitivity;
    MetricValue precision;
};

struct ZoneMetrics {
    MetricValue dsc;
    MetricValue hd95_mm;
    MetricValue iou;
    MetricValue vs;
    MetricValue sensitivity;
    MetricValue precision;
};

// Per-zone scores for zones 1..3 (index zone-1) plus the unweighted mean over
// zones where each metric is defined. Zone 0 is never scored.
struct MetricsReport {
    std::array<ZoneMetrics, 3> zones;
    ZoneMetrics mean;
};

// One-vs-rest confusion counts for `zone` in {1,2,3}. Exact integer counts;
// tp+fp+fn+tn equals the voxel total.
ConfusionCounts zone_confusion(const VoxelGrid& pred, const VoxelGrid& truth, int zone);

// Ratio metrics from confusion counts and mask volumes:
//   DSC = 2tp/(2tp+fp+fn), IoU = tp/(tp+fp+fn),
//   VS = 1 - |vol_pred - vol_truth|/(vol_pred + vol_truth),
//   sensitivity = tp/(tp+fn), precision = tp/(tp+fp).
// A zero denominator flags the metric undefined, except when both masks are
// empty: then DSC = IoU = VS = 1 by convention.
OverlapMetrics overlap_metrics(const ConfusionCounts& counts, std::int64_t vol_pred,
                               std::int64_t vol_truth);

// Voxels of the mask (nonzero values) with at least one 6-neighbor outside
// the mask or outside the volume bounds. Raster (z,y,x) order.
std::vector<std::array<std::int64_t, 3>> extract_surface(const VoxelGrid& mask);

// 95th percentile of the pooled bidirectional surface distances in mm,
// spacing-aware, percentile by linear interpolation on the sorted pool.
// Both surfaces empty -> 0 (defined); exactly one empty -> undefined.
// Nearest-surface lookups run through the exact distance transform.
MetricValue hd95(const VoxelGrid& pred_mask, const VoxelGrid& truth_mask);

// Full six-metric evaluation of zones 1..3 plus per-metric means.
MetricsReport evaluate_zones(const VoxelGrid& pred, const VoxelGrid& truth);

}  // namespace infil
