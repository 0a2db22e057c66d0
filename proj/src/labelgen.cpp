#include "infil/labelgen.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "infil/parallel.hpp"

namespace infil {

LabelVocabularyMap LabelVocabularyMap::brats2020() {
    return {"brats2020", 1.0, 2.0, 4.0};
}

LabelVocabularyMap LabelVocabularyMap::brats2025() {
    return {"brats2025", 1.0, 2.0, 3.0};
}

LabelVocabularyMap LabelVocabularyMap::from_dataset(const std::string& dataset) {
    if (dataset == "brats2020") return brats2020();
    if (dataset == "brats2025") return brats2025();
    throw Error("labelgen", "unknown dataset vocabulary '" + dataset +
                                "' (expected brats2020 or brats2025)");
}

TumorRegions parse_brats_mask(const VoxelGrid& mask, const LabelVocabularyMap& vocab) {
    TumorRegions out;
    out.core = VoxelGrid(mask.depth(), mask.height(), mask.width(), mask.spacing,
                         GridRole::label);
    out.edema = out.core;
    out.whole = out.core;

    std::map<double, std::int64_t> unknown;
    const auto& data = mask.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        double v = data[i];
        if (v == 0.0) continue;
        if (v == vocab.necrotic || v == vocab.enhancing) {
            out.core.data()[i] = 1.0;
            out.whole.data()[i] = 1.0;
        } else if (v == vocab.edema) {
            out.edema.data()[i] = 1.0;
            out.whole.data()[i] = 1.0;
        } else {
            ++unknown[v];
        }
    }
    if (!unknown.empty()) {
        std::string msg = "mask values outside the " + vocab.dataset + " vocabulary:";
        for (const auto& [value, count] : unknown)
            msg += " value " + std::to_string(value) + " (" + std::to_string(count) +
                   " voxels)";
        throw Error("labelgen", msg);
    }
    return out;
}

VoxelGrid brain_mask_from_flair(const VoxelGrid& flair) {
    VoxelGrid mask(flair.depth(), flair.height(), flair.width(), flair.spacing,
                   GridRole::label);
    for (std::size_t i = 0; i < flair.data().size(); ++i)
        mask.data()[i] = flair.data()[i] != 0.0 ? 1.0 : 0.0;
    return mask;
}

VoxelGrid brain_mask_from_flair(const MultiModalVolume& volume) {
    volume.validate();
    return brain_mask_from_flair(volume.flair());
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared-distance transform over parabolas rooted at positions
// pos[i] = i * spacing with heights f[i] (lower envelope; Felzenszwalb and
// Huttenlocher). Infinite heights never enter the envelope. d receives
// min_i f[i] + (pos[q] - pos[i])^2 for every q.
void squared_dt_1d(const double* f, double* d, std::int64_t n, double spacing,
                   std::int64_t* v, double* z) {
    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        const double pq = static_cast<double>(q) * spacing;
        const double rq = f[q] + pq * pq;
        double s = 0.0;
        while (k >= 0) {
            const double pv = static_cast<double>(v[k]) * spacing;
            s = (rq - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -kInf : s;
        z[k + 1] = kInf;
    }
    if (k < 0) {
        for (std::int64_t q = 0; q < n; ++q) d[q] = kInf;
        return;
    }
    std::int64_t j = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        double pq = static_cast<double>(q) * spacing;
        while (z[j + 1] < pq) ++j;
        double dp = pq - static_cast<double>(v[j]) * spacing;
        d[q] = f[v[j]] + dp * dp;
    }
}

}  // namespace

VoxelGrid exact_edt(const VoxelGrid& reference) {
    const std::int64_t D = reference.depth();
    const std::int64_t H = reference.height();
    const std::int64_t W = reference.width();

    bool any = false;
    for (double v : reference.data())
        if (v != 0.0) { any = true; break; }
    if (!any)
        throw Error("labelgen", "distance transform over an empty reference set "
                                "(no tumor voxels)");

    VoxelGrid out(D, H, W, reference.spacing, GridRole::distance);
    auto& sq = out.data();
    for (std::size_t i = 0; i < sq.size(); ++i)
        sq[i] = reference.data()[i] != 0.0 ? 0.0 : kInf;

    // Pass along x: one scan line per (z, y).
    parallel_for(0, D * H, [&](std::int64_t zy) {
        std::vector<double> f(static_cast<std::size_t>(W));
        std::vector<double> d(static_cast<std::size_t>(W));
        std::vector<std::int64_t> v(static_cast<std::size_t>(W));
        std::vector<double> z(static_cast<std::size_t>(W) + 1);
        double* row = sq.data() + zy * W;
        for (std::int64_t x = 0; x < W; ++x) f[static_cast<std::size_t>(x)] = row[x];
        squared_dt_1d(f.data(), d.data(), W, reference.spacing.x, v.data(), z.data());
        for (std::int64_t x = 0; x < W; ++x) row[x] = d[static_cast<std::size_t>(x)];
    });

    // Pass along y: one scan line per (z, x).
    parallel_for(0, D * W, [&](std::int64_t zx) {
        const std::int64_t zz = zx / W;
        const std::int64_t x = zx % W;
        std::vector<double> f(static_cast<std::size_t>(H));
        std::vector<double> d(static_cast<std::size_t>(H));
        std::vector<std::int64_t> v(static_cast<std::size_t>(H));
        std::vector<double> z(static_cast<std::size_t>(H) + 1);
        for (std::int64_t y = 0; y < H; ++y)
            f[static_cast<std::size_t>(y)] = sq[static_cast<std::size_t>((zz * H + y) * W + x)];
        squared_dt_1d(f.data(), d.data(), H, reference.spacing.y, v.data(), z.data());
        for (std::int64_t y = 0; y < H; ++y)
            sq[static_cast<std::size_t>((zz * H + y) * W + x)] = d[static_cast<std::size_t>(y)];
    });

    // Pass along z: one scan line per (y, x).
    parallel_for(0, H * W, [&](std::int64_t yx) {
        std::vector<double> f(static_cast<std::size_t>(D));
        std::vector<double> d(static_cast<std::size_t>(D));
        std::vector<std::int64_t> v(static_cast<std::size_t>(D));
        std::vector<double> z(static_cast<std::size_t>(D) + 1);
        for (std::int64_t zz = 0; zz < D; ++zz)
            f[static_cast<std::size_t>(zz)] = sq[static_cast<std::size_t>(zz * H * W + yx)];
        squared_dt_1d(f.data(), d.data(), D, reference.spacing.z, v.data(), z.data());
        for (std::int64_t zz = 0; zz < D; ++zz)
            sq[static_cast<std::size_t>(zz * H * W + yx)] = d[static_cast<std::size_t>(zz)];
    });

    for (auto& s : sq) s = std::sqrt(s);
    return out;
}

VoxelGrid assign_zones(const TumorRegions& regions, const VoxelGrid& dist,
                       const VoxelGrid& brain, std::int64_t* edema_outside_brain) {
    if (!regions.whole.same_geometry(dist) || !regions.whole.same_geometry(brain) ||
        !regions.whole.same_geometry(regions.core) ||
        !regions.whole.same_geometry(regions.edema))
        throw Error("labelgen", "zone assignment inputs disagree on dims or spacing");

    VoxelGrid zones(dist.depth(), dist.height(), dist.width(), dist.spacing,
                    GridRole::label);
    std::int64_t stray_edema = 0;
    for (std::size_t i = 0; i < zones.data().size(); ++i) {
        double label = 0.0;
        if (regions.edema.data()[i] != 0.0) {
            label = 3.0;
            if (brain.data()[i] == 0.0) ++stray_edema;
        } else {
            double d = dist.data()[i];
            if (d > 0.0 && d <= kHighRiskMaxDistMm) {
                label = 3.0;
            } else if (d > kHighRiskMaxDistMm && d <= kMediumRiskMaxDistMm) {
                label = 2.0;
            } else if (d > kMediumRiskMaxDistMm && brain.data()[i] != 0.0) {
                label = 1.0;
            }
        }
        zones.data()[i] = label;
    }
    if (edema_outside_brain) *edema_outside_brain = stray_edema;
    return zones;
}

VoxelGrid brute_force_zone_oracle(const TumorRegions& regions, const VoxelGrid& brain,
                                  Spacing spacing) {
    const std::int64_t D = regions.whole.depth();
    const std::int64_t H = regions.whole.height();
    const std::int64_t W = regions.whole.width();
    if (D * H * W > 64 * 64 * 64)
        throw Error("labelgen", "brute-force zone scan limited to 64^3 voxels");

    struct Ref { std::int64_t z, y, x; };
    std::vector<Ref> refs;
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                if (regions.whole.at(z, y, x) != 0.0) refs.push_back({z, y, x});

    VoxelGrid zones(D, H, W, spacing, GridRole::label);
    for (std::int64_t z = 0; z < D; ++z)
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x) {
                double label = 0.0;
                if (regions.edema.at(z, y, x) != 0.0) {
                    label = 3.0;
                } else {
                    double best = kInf;
                    for (const auto& r : refs) {
                        // Same scalar form as the separable transform: per-axis
                        // position products subtracted, squares accumulated in
                        // x, y, z order. Real-arithmetic ties at the 10/20 mm
                        // thresholds (e.g. (12*0.8)^2 + (2*1.4)^2 = 100) would
                        // otherwise round differently and flip a zone.
                        double dz = static_cast<double>(z) * spacing.z -
                                    static_cast<double>(r.z) * spacing.z;
                        double dy = static_cast<double>(y) * spacing.y -
                                    static_cast<double>(r.y) * spacing.y;
                        double dx = static_cast<double>(x) * spacing.x -
                                    static_cast<double>(r.x) * spacing.x;
                        double d2 = dx * dx + dy * dy + dz * dz;
                        if (d2 < best) best = d2;
                    }
                    double d = std::sqrt(best);
                    if (d > 0.0 && d <= kHighRiskMaxDistMm) {
                        label = 3.0;
                    } else if (d > kHighRiskMaxDistMm && d <= kMediumRiskMaxDistMm) {
                        label = 2.0;
                    } else if (d > kMediumRiskMaxDistMm && brain.at(z, y, x) != 0.0) {
                        label = 1.0;
                    }
                }
                zones.at(z, y, x) = label;
            }
    return zones;
}

std::array<std::int64_t, kNumZoneLabels> zone_voxel_counts(const VoxelGrid& zones) {
    std::array<std::int64_t, kNumZoneLabels> counts{};
    for (double v : zones.data()) {
        if (v != std::floor(v) || v < 0.0 || v >= kNumZoneLabels)
            throw Error("labelgen", "value " + std::to_string(v) +
                                        " is outside the zone vocabulary");
        ++counts[static_cast<std::size_t>(v)];
    }
    return counts;
}

}  // namespace infil
