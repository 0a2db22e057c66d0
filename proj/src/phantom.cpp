#include "infil/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "infil/error.hpp"
#include "infil/labelgen.hpp"
#include "infil/parallel.hpp"
#include "infil/rng.hpp"
#include "infil/tensor.hpp"

namespace infil {
namespace {

constexpr const char* kStage = "phantom";

double ellipsoid_metric(const std::array<double, 3>& point,
                        const std::array<double, 3>& center,
                        const std::array<double, 3>& semi_axes) {
    double sum = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double t = (point[i] - center[i]) / semi_axes[i];
        sum += t * t;
    }
    return sum;
}

void require_positive_axes(const std::array<double, 3>& semi_axes, const char* name) {
    for (const double a : semi_axes) {
        if (!(a > 0.0)) {
            throw Error(kStage, std::string(name) + " semi-axes must be positive");
        }
    }
}

}  // namespace

void PhantomSpec::validate() const {
    for (int i = 0; i < 3; ++i) {
        if (dims[i] < 1) throw Error(kStage, "dims must be at least 1 per axis");
    }
    if (!(spacing.z > 0.0 && spacing.y > 0.0 && spacing.x > 0.0)) {
        throw Error(kStage, "spacing must be positive");
    }
    require_positive_axes(brain_semi_axes_mm, "brain");
    require_positive_axes(core_semi_axes_mm, "core");
    require_positive_axes(edema_semi_axes_mm, "edema");
    if (!(noise_sigma >= 0.0)) throw Error(kStage, "noise sigma must be non-negative");

    for (int i = 0; i < 3; ++i) {
        if (core_semi_axes_mm[i] > edema_semi_axes_mm[i]) {
            throw Error(kStage, "core ellipsoid must lie inside the edema ellipsoid");
        }
    }

    const std::array<double, 3> sp{spacing.z, spacing.y, spacing.x};
    std::array<double, 3> brain_center;
    for (int i = 0; i < 3; ++i) {
        brain_center[i] = 0.5 * static_cast<double>(dims[i] - 1) * sp[i];
        if (brain_semi_axes_mm[i] > brain_center[i]) {
            throw Error(kStage, "brain ellipsoid must fit inside the volume");
        }
    }
    // Conservative containment: the corner of the edema bounding box, offset
    // by the tumor center, must satisfy the brain ellipsoid inequality.
    double corner = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double reach =
            std::fabs(tumor_center_mm[i] - brain_center[i]) + edema_semi_axes_mm[i];
        corner += (reach / brain_semi_axes_mm[i]) * (reach / brain_semi_axes_mm[i]);
    }
    if (corner > 1.0) {
        throw Error(kStage, "edema ellipsoid must lie inside the brain ellipsoid");
    }
}

PhantomResult generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const LabelVocabularyMap vocab = LabelVocabularyMap::from_dataset(spec.dataset);

    const std::array<std::int64_t, 3> dims = spec.dims;
    const std::array<double, 3> sp{spec.spacing.z, spec.spacing.y, spec.spacing.x};
    std::array<double, 3> brain_center;
    for (int i = 0; i < 3; ++i) {
        brain_center[i] = 0.5 * static_cast<double>(dims[i] - 1) * sp[i];
    }
    std::array<double, 3> necrotic_axes;
    for (int i = 0; i < 3; ++i) necrotic_axes[i] = 0.6 * spec.core_semi_axes_mm[i];

    PhantomResult result{
        MultiModalVolume{},
        VoxelGrid(dims[0], dims[1], dims[2], spec.spacing, GridRole::label),
        VoxelGrid(dims[0], dims[1], dims[2], spec.spacing, GridRole::label)};
    for (auto& grid : result.volume.modalities) {
        grid = VoxelGrid(dims[0], dims[1], dims[2], spec.spacing, GridRole::intensity);
    }

    // Tissue id per voxel: 0 outside brain, 1 brain, 2 edema, 3 enhancing,
    // 4 necrotic. Tumor voxels double as the distance reference set.
    const std::int64_t total = dims[0] * dims[1] * dims[2];
    std::vector<std::uint8_t> tissue(static_cast<std::size_t>(total), 0);
    for (std::int64_t z = 0; z < dims[0]; ++z) {
        for (std::int64_t y = 0; y < dims[1]; ++y) {
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                const std::array<double, 3> p{static_cast<double>(z) * sp[0],
                                              static_cast<double>(y) * sp[1],
                                              static_cast<double>(x) * sp[2]};
                const std::int64_t v = (z * dims[1] + y) * dims[2] + x;
                if (ellipsoid_metric(p, brain_center, spec.brain_semi_axes_mm) > 1.0) continue;
                std::uint8_t id = 1;
                if (ellipsoid_metric(p, spec.tumor_center_mm, spec.edema_semi_axes_mm) <= 1.0) {
                    id = 2;
                    if (ellipsoid_metric(p, spec.tumor_center_mm, spec.core_semi_axes_mm) <=
                        1.0) {
                        id = ellipsoid_metric(p, spec.tumor_center_mm, necrotic_axes) <= 1.0
                                 ? 4
                                 : 3;
                    }
                }
                tissue[static_cast<std::size_t>(v)] = id;
            }
        }
    }

    for (std::int64_t v = 0; v < total; ++v) {
        switch (tissue[static_cast<std::size_t>(v)]) {
            case 2: result.seg.data()[v] = static_cast<double>(vocab.edema); break;
            case 3: result.seg.data()[v] = static_cast<double>(vocab.enhancing); break;
            case 4: result.seg.data()[v] = static_cast<double>(vocab.necrotic); break;
            default: break;
        }
    }

    // Intensities: region base value plus seeded noise inside the brain,
    // exact zero outside. FLAIR is clamped away from zero so the brain mask
    // recovered from its support matches the brain ellipsoid exactly.
    for (int m = 0; m < 4; ++m) {
        SplitMix64 rng(spec.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(m + 1)));
        const ModalityIntensity& profile = spec.intensities[static_cast<std::size_t>(m)];
        VoxelGrid& grid = result.volume.modalities[static_cast<std::size_t>(m)];
        for (std::int64_t v = 0; v < total; ++v) {
            double base = 0.0;
            switch (tissue[static_cast<std::size_t>(v)]) {
                case 1: base = profile.brain; break;
                case 2: base = profile.edema; break;
                case 3: base = profile.enhancing; break;
                case 4: base = profile.necrotic; break;
                default: continue;
            }
            double value = base;
            if (spec.noise_sigma > 0.0) value += spec.noise_sigma * rng.normal();
            if (m == static_cast<int>(MultiModalVolume::kFlair)) {
                value = std::max(value, 1e-3);
            }
            grid.data()[v] = value;
        }
    }

    // Analytic zones by brute force against the tumor boundary: for voxels
    // outside the tumor the nearest tumor voxel is always a boundary voxel,
    // so scanning the boundary set gives the exact set distance.
    std::vector<std::array<std::int64_t, 3>> boundary;
    const auto is_tumor = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        if (z < 0 || z >= dims[0] || y < 0 || y >= dims[1] || x < 0 || x >= dims[2]) {
            return false;
        }
        return tissue[static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x)] >= 2;
    };
    for (std::int64_t z = 0; z < dims[0]; ++z) {
        for (std::int64_t y = 0; y < dims[1]; ++y) {
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                if (!is_tumor(z, y, x)) continue;
                if (!is_tumor(z - 1, y, x) || !is_tumor(z + 1, y, x) || !is_tumor(z, y - 1, x) ||
                    !is_tumor(z, y + 1, x) || !is_tumor(z, y, x - 1) || !is_tumor(z, y, x + 1)) {
                    boundary.push_back({z, y, x});
                }
            }
        }
    }
    if (boundary.empty()) {
        throw Error(kStage, "phantom tumor is empty; enlarge the ellipsoids or the volume");
    }

    parallel_for(0, total, [&](std::int64_t v) {
        const std::uint8_t id = tissue[static_cast<std::size_t>(v)];
        if (id == 2) {
            result.zones.data()[v] = 3.0;  // edema is zone 3 regardless of distance
            return;
        }
        if (id >= 3) return;  // core stays zone 0
        const std::int64_t z = v / (dims[1] * dims[2]);
        const std::int64_t y = (v / dims[2]) % dims[1];
        const std::int64_t x = v % dims[2];
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : boundary) {
            // Canonical squared-distance form shared with the label pipeline:
            // per-axis position products subtracted, squares accumulated in
            // x, y, z order, so real-arithmetic threshold ties round the same
            // way here and there.
            const double dz = static_cast<double>(z) * sp[0] -
                              static_cast<double>(b[0]) * sp[0];
            const double dy = static_cast<double>(y) * sp[1] -
                              static_cast<double>(b[1]) * sp[1];
            const double dx = static_cast<double>(x) * sp[2] -
                              static_cast<double>(b[2]) * sp[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        const double dist = std::sqrt(best);
        if (dist <= 10.0) {
            result.zones.data()[v] = 3.0;
        } else if (dist <= 20.0) {
            result.zones.data()[v] = 2.0;
        } else if (id == 1) {
            result.zones.data()[v] = 1.0;
        }
    });

    return result;
}

namespace {

class OracleZonePredictor : public Predictor {
public:
    explicit OracleZonePredictor(VoxelGrid truth) : truth_(std::move(truth)) {
        if (!truth_.values_in_zone_vocabulary()) {
            throw Error(kStage, "oracle truth grid must hold zone labels 0..3");
        }
    }

    Tensor5 predict(const Tensor5& input, const PredictContext& context) override {
        const auto dims = truth_.dims();
        if (context.volume_dims != dims) {
            throw Error(kStage, "predict context volume dims do not match the oracle truth");
        }
        for (int i = 0; i < 3; ++i) {
            if (context.origin[i] < 0 || context.origin[i] >= dims[i]) {
                throw Error(kStage, "requested window starts outside the volume");
            }
        }
        constexpr double kEps = 1e-6;
        Tensor5 out(1, 4, input.d(), input.h(), input.w(), kEps / 4.0);
        const std::int64_t spatial = out.spatial_size();
        for (std::int64_t z = 0; z < out.d(); ++z) {
            const std::int64_t qz = context.origin[0] + z;
            for (std::int64_t y = 0; y < out.h(); ++y) {
                const std::int64_t qy = context.origin[1] + y;
                for (std::int64_t x = 0; x < out.w(); ++x) {
                    const std::int64_t qx = context.origin[2] + x;
                    const std::int64_t v = (z * out.h() + y) * out.w() + x;
                    if (qz >= dims[0] || qy >= dims[1] || qx >= dims[2]) {
                        for (int c = 0; c < 4; ++c) {
                            out.data[static_cast<std::size_t>(c * spatial + v)] = 0.25;
                        }
                        continue;
                    }
                    const std::int64_t uz = context.flipped.depth ? dims[0] - 1 - qz : qz;
                    const std::int64_t uy = context.flipped.height ? dims[1] - 1 - qy : qy;
                    const std::int64_t ux = context.flipped.width ? dims[2] - 1 - qx : qx;
                    const int label = static_cast<int>(truth_.at(uz, uy, ux));
                    out.data[static_cast<std::size_t>(label * spatial + v)] =
                        1.0 - kEps + kEps / 4.0;
                }
            }
        }
        return out;
    }

private:
    VoxelGrid truth_;
};

}  // namespace

std::unique_ptr<Predictor> oracle_predictor(const VoxelGrid& truth_zones) {
    return std::make_unique<OracleZonePredictor>(truth_zones);
}

}  // namespace infil
