#include "infil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "infil/error.hpp"
#include "infil/labelgen.hpp"

namespace infil {

namespace {

constexpr const char* kStage = "metrics";

void check_same_geometry(const VoxelGrid& pred, const VoxelGrid& truth) {
    if (!pred.same_geometry(truth)) {
        throw Error(kStage, "prediction and truth grids have different geometry");
    }
}

// Percentile rank 0.95 on a sorted pool via linear interpolation at
// r = 0.95*(m-1).
double percentile95(std::vector<double>& pool) {
    std::sort(pool.begin(), pool.end());
    const std::size_t m = pool.size();
    const double r = 0.95 * static_cast<double>(m - 1);
    const std::size_t lo = static_cast<std::size_t>(r);
    const double frac = r - static_cast<double>(lo);
    if (lo + 1 >= m) return pool[lo];
    return pool[lo] + frac * (pool[lo + 1] - pool[lo]);
}

VoxelGrid binarize_zone(const VoxelGrid& labels, int zone) {
    const auto dims = labels.dims();
    VoxelGrid mask(dims[0], dims[1], dims[2], labels.spacing, GridRole::label);
    for (std::size_t v = 0; v < labels.size(); ++v) {
        mask.data()[v] = labels.data()[v] == static_cast<double>(zone) ? 1.0 : 0.0;
    }
    return mask;
}

VoxelGrid surface_mask(const std::vector<std::array<std::int64_t, 3>>& surface,
                       const VoxelGrid& like) {
    VoxelGrid mask(like.dims()[0], like.dims()[1], like.dims()[2], like.spacing,
                   GridRole::label);
    for (const auto& v : surface) mask.at(v[0], v[1], v[2]) = 1.0;
    return mask;
}

}  // namespace

ConfusionCounts zone_confusion(const VoxelGrid& pred, const VoxelGrid& truth, int zone) {
    check_same_geometry(pred, truth);
    if (zone < 1 || zone > 3) {
        throw Error(kStage, "zone must be 1, 2, or 3, got " + std::to_string(zone));
    }
    ConfusionCounts counts;
    const double z = static_cast<double>(zone);
    for (std::size_t v = 0; v < pred.size(); ++v) {
        const bool p = pred.data()[v] == z;
        const bool g = truth.data()[v] == z;
        if (p && g) {
            ++counts.tp;
        } else if (p) {
            ++counts.fp;
        } else if (g) {
            ++counts.fn;
        } else {
            ++counts.tn;
        }
    }
    return counts;
}

OverlapMetrics overlap_metrics(const ConfusionCounts& counts, std::int64_t vol_pred,
                               std::int64_t vol_truth) {
    OverlapMetrics out;
    const bool both_empty = vol_pred == 0 && vol_truth == 0;
    const double tp = static_cast<double>(counts.tp);

    if (both_empty) {
        out.dsc = {1.0, true};
        out.iou = {1.0, true};
        out.vs = {1.0, true};
    } else {
        const std::int64_t dsc_den = 2 * counts.tp + counts.fp + counts.fn;
        if (dsc_den > 0) out.dsc = {2.0 * tp / static_cast<double>(dsc_den), true};
        const std::int64_t iou_den = counts.tp + counts.fp + counts.fn;
        if (iou_den > 0) out.iou = {tp / static_cast<double>(iou_den), true};
        const std::int64_t vs_den = vol_pred + vol_truth;
        if (vs_den > 0) {
            out.vs = {1.0 - static_cast<double>(std::llabs(vol_pred - vol_truth)) /
                                static_cast<double>(vs_den),
                      true};
        }
    }
    if (counts.tp + counts.fn > 0) {
        out.sensitivity = {tp / static_cast<double>(counts.tp + counts.fn), true};
    }
    if (counts.tp + counts.fp > 0) {
        out.precision = {tp / static_cast<double>(counts.tp + counts.fp), true};
    }
    return out;
}

std::vector<std::array<std::int64_t, 3>> extract_surface(const VoxelGrid& mask) {
    const auto dims = mask.dims();
    std::vector<std::array<std::int64_t, 3>> surface;
    for (std::int64_t z = 0; z < dims[0]; ++z) {
        for (std::int64_t y = 0; y < dims[1]; ++y) {
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                if (mask.at(z, y, x) == 0.0) continue;
                const bool exposed =
                    z == 0 || mask.at(z - 1, y, x) == 0.0 ||
                    z + 1 == dims[0] || mask.at(z + 1, y, x) == 0.0 ||
                    y == 0 || mask.at(z, y - 1, x) == 0.0 ||
                    y + 1 == dims[1] || mask.at(z, y + 1, x) == 0.0 ||
                    x == 0 || mask.at(z, y, x - 1) == 0.0 ||
                    x + 1 == dims[2] || mask.at(z, y, x + 1) == 0.0;
                if (exposed) surface.push_back({z, y, x});
            }
        }
    }
    return surface;
}

MetricValue hd95(const VoxelGrid& pred_mask, const VoxelGrid& truth_mask) {
    check_same_geometry(pred_mask, truth_mask);
    const auto pred_surface = extract_surface(pred_mask);
    const auto truth_surface = extract_surface(truth_mask);
    if (pred_surface.empty() && truth_surface.empty()) return {0.0, true};
    if (pred_surface.empty() || truth_surface.empty()) return {0.0, false};

    const VoxelGrid dist_to_truth =
        exact_edt(surface_mask(truth_surface, truth_mask));
    const VoxelGrid dist_to_pred = exact_edt(surface_mask(pred_surface, pred_mask));

    std::vector<double> pool;
    pool.reserve(pred_surface.size() + truth_surface.size());
    for (const auto& v : pred_surface) pool.push_back(dist_to_truth.at(v[0], v[1], v[2]));
    for (const auto& v : truth_surface) pool.push_back(dist_to_pred.at(v[0], v[1], v[2]));
    return {percentile95(pool), true};
}

MetricsReport evaluate_zones(const VoxelGrid& pred, const VoxelGrid& truth) {
    check_same_geometry(pred, truth);
    if (!pred.values_in_zone_vocabulary() || !truth.values_in_zone_vocabulary()) {
        throw Error(kStage, "zone grids contain values outside the vocabulary 0..3");
    }

    MetricsReport report;
    for (int zone = 1; zone <= 3; ++zone) {
        const ConfusionCounts counts = zone_confusion(pred, truth, zone);
        const OverlapMetrics overlap =
            overlap_metrics(counts, counts.tp + counts.fp, counts.tp + counts.fn);
        ZoneMetrics& out = report.zones[static_cast<std::size_t>(zone - 1)];
        out.dsc = overlap.dsc;
        out.iou = overlap.iou;
        out.vs = overlap.vs;
        out.sensitivity = overlap.sensitivity;
        out.precision = overlap.precision;
        out.hd95_mm = hd95(binarize_zone(pred, zone), binarize_zone(truth, zone));
    }

    const auto mean_of = [&report](MetricValue ZoneMetrics::*field) {
        MetricValue mean;
        int defined = 0;
        double sum = 0.0;
        for (const ZoneMetrics& zone : report.zones) {
            const MetricValue& entry = zone.*field;
            if (!entry.defined) continue;
            ++defined;
            sum += entry.value;
        }
        if (defined > 0) mean = {sum / defined, true};
        return mean;
    };
    report.mean.dsc = mean_of(&ZoneMetrics::dsc);
    report.mean.hd95_mm = mean_of(&ZoneMetrics::hd95_mm);
    report.mean.iou = mean_of(&ZoneMetrics::iou);
    report.mean.vs = mean_of(&ZoneMetrics::vs);
    report.mean.sensitivity = mean_of(&ZoneMetrics::sensitivity);
    report.mean.precision = mean_of(&ZoneMetrics::precision);
    return report;
}

}  // namespace infil
