#include "infil/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "infil/error.hpp"
#include "infil/rng.hpp"

namespace infil {

namespace {

constexpr const char* kStage = "pipeline";

std::array<std::int64_t, 3> grid_dims(const VoxelGrid& grid) { return grid.dims(); }

VoxelGrid channel_as_grid(const Tensor5& t, std::int64_t c, Spacing spacing, GridRole role) {
    VoxelGrid grid(t.d(), t.h(), t.w(), spacing, role);
    const std::int64_t spatial = t.spatial_size();
    for (std::int64_t v = 0; v < spatial; ++v) {
        grid.data()[v] = t.data[static_cast<std::size_t>(c * spatial + v)];
    }
    return grid;
}

void set_channel(Tensor5& t, std::int64_t c, const VoxelGrid& grid) {
    const std::int64_t spatial = t.spatial_size();
    for (std::int64_t v = 0; v < spatial; ++v) {
        t.data[static_cast<std::size_t>(c * spatial + v)] = grid.data()[v];
    }
}

Tensor5 flip_tensor(const Tensor5& t, AxisSet axes) {
    if (!axes.any()) return t;
    Tensor5 out(t.shape[0], t.shape[1], t.shape[2], t.shape[3], t.shape[4]);
    for (std::int64_t n = 0; n < t.n(); ++n) {
        for (std::int64_t c = 0; c < t.c(); ++c) {
            for (std::int64_t z = 0; z < t.d(); ++z) {
                const std::int64_t sz = axes.depth ? t.d() - 1 - z : z;
                for (std::int64_t y = 0; y < t.h(); ++y) {
                    const std::int64_t sy = axes.height ? t.h() - 1 - y : y;
                    for (std::int64_t x = 0; x < t.w(); ++x) {
                        const std::int64_t sx = axes.width ? t.w() - 1 - x : x;
                        out.at(n, c, z, y, x) = t.at(n, c, sz, sy, sx);
                    }
                }
            }
        }
    }
    return out;
}

MultiModalVolume flip_volume(const MultiModalVolume& volume, AxisSet axes) {
    MultiModalVolume out = volume;
    if (!axes.any()) return out;
    for (auto& grid : out.modalities) grid = flip_axes(grid, axes);
    return out;
}

void validate_probabilities(const Tensor5& probs, std::int64_t d, std::int64_t h,
                            std::int64_t w) {
    if (probs.n() != 1 || probs.c() != kNumZoneLabels || probs.d() != d || probs.h() != h ||
        probs.w() != w) {
        throw Error(kStage, "predictor output shape (" + std::to_string(probs.n()) + "," +
                                std::to_string(probs.c()) + "," + std::to_string(probs.d()) +
                                "," + std::to_string(probs.h()) + "," + std::to_string(probs.w()) +
                                ") does not match the (1,4," + std::to_string(d) + "," +
                                std::to_string(h) + "," + std::to_string(w) + ") contract");
    }
    const std::int64_t spatial = probs.spatial_size();
    for (std::int64_t v = 0; v < spatial; ++v) {
        double sum = 0.0;
        for (int c = 0; c < kNumZoneLabels; ++c) {
            sum += probs.data[static_cast<std::size_t>(c * spatial + v)];
        }
        if (!(std::fabs(sum - 1.0) <= 1e-5)) {
            throw Error(kStage, "predictor output probabilities sum to " + std::to_string(sum) +
                                    " at voxel " + std::to_string(v) + ", expected 1 within 1e-5");
        }
    }
}

// Window starts on the stride lattice with the final start clamped to the
// boundary; covers [0, dim) completely.
std::vector<std::int64_t> window_starts(std::int64_t dim, std::int64_t window,
                                        std::int64_t stride) {
    std::vector<std::int64_t> starts;
    for (std::int64_t p = 0;; p += stride) {
        if (p + window >= dim) {
            starts.push_back(dim - window);
            break;
        }
        starts.push_back(p);
    }
    return starts;
}

VoxelGrid pad_grid(const VoxelGrid& grid, const std::array<std::int64_t, 3>& dims) {
    const auto src = grid.dims();
    if (src == dims) return grid;
    VoxelGrid out(dims[0], dims[1], dims[2], grid.spacing, grid.role);
    for (std::int64_t z = 0; z < src[0]; ++z) {
        for (std::int64_t y = 0; y < src[1]; ++y) {
            for (std::int64_t x = 0; x < src[2]; ++x) out.at(z, y, x) = grid.at(z, y, x);
        }
    }
    return out;
}

void check_zone_vocabulary(const VoxelGrid& labels) {
    if (!labels.values_in_zone_vocabulary()) {
        throw Error(kStage, "zone grid contains values outside the vocabulary 0..3");
    }
}

// 6-connected component of `zone`-valued voxels seeded at `seed`, collected
// with an explicit stack. `visited` is shared across seeds of the same zone.
std::vector<std::int64_t> flood_component(const VoxelGrid& labels, double zone,
                                          std::int64_t seed, std::vector<char>& visited) {
    const auto dims = labels.dims();
    const std::int64_t plane = dims[1] * dims[2];
    std::vector<std::int64_t> component;
    std::vector<std::int64_t> stack{seed};
    visited[static_cast<std::size_t>(seed)] = 1;
    while (!stack.empty()) {
        const std::int64_t v = stack.back();
        stack.pop_back();
        component.push_back(v);
        const std::int64_t z = v / plane;
        const std::int64_t y = (v % plane) / dims[2];
        const std::int64_t x = v % dims[2];
        const auto try_push = [&](std::int64_t nz, std::int64_t ny, std::int64_t nx) {
            if (nz < 0 || nz >= dims[0] || ny < 0 || ny >= dims[1] || nx < 0 || nx >= dims[2]) {
                return;
            }
            const std::int64_t nv = (nz * dims[1] + ny) * dims[2] + nx;
            if (visited[static_cast<std::size_t>(nv)] || labels.data()[nv] != zone) return;
            visited[static_cast<std::size_t>(nv)] = 1;
            stack.push_back(nv);
        };
        try_push(z - 1, y, x);
        try_push(z + 1, y, x);
        try_push(z, y - 1, x);
        try_push(z, y + 1, x);
        try_push(z, y, x - 1);
        try_push(z, y, x + 1);
    }
    return component;
}

// Relabels sub-threshold components of `zone` to the majority label of their
// distinct out-of-component neighbors, ties to the lower label. Components
// are censused against the grid state at phase start for this zone, then all
// applied; removals of the same zone cannot interact because distinct
// components share no neighbors of that zone.
void remove_small_components(VoxelGrid& labels, int zone, std::int64_t min_voxels) {
    const auto dims = labels.dims();
    const std::int64_t plane = dims[1] * dims[2];
    std::vector<char> visited(labels.size(), 0);
    std::vector<std::pair<std::vector<std::int64_t>, double>> relabels;
    for (std::int64_t v = 0; v < static_cast<std::int64_t>(labels.size()); ++v) {
        if (visited[static_cast<std::size_t>(v)] || labels.data()[v] != zone) continue;
        std::vector<std::int64_t> component =
            flood_component(labels, static_cast<double>(zone), v, visited);
        if (static_cast<std::int64_t>(component.size()) >= min_voxels) continue;

        std::array<std::int64_t, kNumZoneLabels> census{};
        std::vector<char> seen(labels.size(), 0);
        for (const std::int64_t m : component) seen[static_cast<std::size_t>(m)] = 1;
        for (const std::int64_t m : component) {
            const std::int64_t z = m / plane;
            const std::int64_t y = (m % plane) / dims[2];
            const std::int64_t x = m % dims[2];
            const auto tally = [&](std::int64_t nz, std::int64_t ny, std::int64_t nx) {
                if (nz < 0 || nz >= dims[0] || ny < 0 || ny >= dims[1] || nx < 0 ||
                    nx >= dims[2]) {
                    return;
                }
                const std::int64_t nv = (nz * dims[1] + ny) * dims[2] + nx;
                if (seen[static_cast<std::size_t>(nv)]) return;
                seen[static_cast<std::size_t>(nv)] = 1;
                ++census[static_cast<std::size_t>(static_cast<int>(labels.data()[nv]))];
            };
            tally(z - 1, y, x);
            tally(z + 1, y, x);
            tally(z, y - 1, x);
            tally(z, y + 1, x);
            tally(z, y, x - 1);
            tally(z, y, x + 1);
        }
        std::int64_t best_count = 0;
        int best_label = zone;  // no outside neighbors: keep the label
        for (int c = 0; c < kNumZoneLabels; ++c) {
            if (census[static_cast<std::size_t>(c)] > best_count) {
                best_count = census[static_cast<std::size_t>(c)];
                best_label = c;
            }
        }
        if (best_label != zone) {
            relabels.emplace_back(std::move(component), static_cast<double>(best_label));
        }
    }
    for (const auto& [component, label] : relabels) {
        for (const std::int64_t v : component) labels.data()[v] = label;
    }
}

// Fills enclosed pockets of `zone`: complement voxels unreachable from the
// volume border become `zone`, but only where the current label is strictly
// lower, so higher-risk voxels are never overwritten.
void fill_zone_holes(VoxelGrid& labels, int zone) {
    const auto dims = labels.dims();
    const std::int64_t plane = dims[1] * dims[2];
    const double z_value = static_cast<double>(zone);
    std::vector<char> outside(labels.size(), 0);
    std::vector<std::int64_t> stack;
    const auto seed_if_complement = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
        const std::int64_t v = (z * dims[1] + y) * dims[2] + x;
        if (outside[static_cast<std::size_t>(v)] || labels.data()[v] == z_value) return;
        outside[static_cast<std::size_t>(v)] = 1;
        stack.push_back(v);
    };
    for (std::int64_t z = 0; z < dims[0]; ++z) {
        for (std::int64_t y = 0; y < dims[1]; ++y) {
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                if (z == 0 || z + 1 == dims[0] || y == 0 || y + 1 == dims[1] || x == 0 ||
                    x + 1 == dims[2]) {
                    seed_if_complement(z, y, x);
                }
            }
        }
    }
    while (!stack.empty()) {
        const std::int64_t v = stack.back();
        stack.pop_back();
        const std::int64_t z = v / plane;
        const std::int64_t y = (v % plane) / dims[2];
        const std::int64_t x = v % dims[2];
        if (z > 0) seed_if_complement(z - 1, y, x);
        if (z + 1 < dims[0]) seed_if_complement(z + 1, y, x);
        if (y > 0) seed_if_complement(z, y - 1, x);
        if (y + 1 < dims[1]) seed_if_complement(z, y + 1, x);
        if (x > 0) seed_if_complement(z, y, x - 1);
        if (x + 1 < dims[2]) seed_if_complement(z, y, x + 1);
    }
    for (std::int64_t v = 0; v < static_cast<std::int64_t>(labels.size()); ++v) {
        const double current = labels.data()[v];
        if (current == z_value || outside[static_cast<std::size_t>(v)]) continue;
        if (current < z_value) labels.data()[v] = z_value;
    }
}

}  // namespace

Tensor5 NetrefPredictor::predict(const Tensor5& input, const PredictContext&) {
    return infiltrnet_forward(input, params_, config_, mode_).probabilities;
}

Tensor5 WindowedPredictor::predict(const Tensor5& input, const PredictContext& context) {
    if (input.n() != 1 || input.c() != 4) {
        throw Error("pipeline", "windowed predictor expects a (1, 4, d, h, w) input");
    }
    MultiModalVolume volume;
    for (std::int64_t m = 0; m < 4; ++m) {
        volume.modalities[static_cast<std::size_t>(m)] =
            channel_as_grid(input, m, spacing_, GridRole::intensity);
    }
    return sliding_window_infer(volume, inner_, window_, overlap_, context.flipped);
}

MultiModalVolume zscore_normalize(const MultiModalVolume& volume) {
    volume.validate();
    MultiModalVolume out = volume;
    for (VoxelGrid& grid : out.modalities) {
        std::int64_t count = 0;
        double mean = 0.0;
        for (std::size_t v = 0; v < grid.size(); ++v) {
            if (grid.data()[v] == 0.0) continue;
            ++count;
            mean += grid.data()[v];
        }
        if (count == 0) continue;
        mean /= static_cast<double>(count);
        double var = 0.0;
        for (std::size_t v = 0; v < grid.size(); ++v) {
            if (grid.data()[v] == 0.0) continue;
            const double d = grid.data()[v] - mean;
            var += d * d;
        }
        const double std_dev = std::sqrt(var / static_cast<double>(count));
        const double denom = std::max(std_dev, 1e-8);
        for (std::size_t v = 0; v < grid.size(); ++v) {
            if (grid.data()[v] == 0.0) continue;
            grid.data()[v] = (grid.data()[v] - mean) / denom;
        }
    }
    return out;
}

std::vector<PatchSample> sample_patches(const MultiModalVolume& volume,
                                        const VoxelGrid& labels, int count,
                                        std::int64_t size, std::uint64_t seed) {
    volume.validate();
    if (!labels.same_geometry(volume.modalities[0])) {
        throw Error(kStage, "labels and volume grids have different geometry");
    }
    check_zone_vocabulary(labels);
    if (count < 1) {
        throw Error(kStage, "patch count must be >= 1, got " + std::to_string(count));
    }
    if (size < 1) {
        throw Error(kStage, "patch size must be >= 1, got " + std::to_string(size));
    }

    const auto dims = labels.dims();
    const std::array<std::int64_t, 3> padded_dims{std::max(dims[0], size),
                                                  std::max(dims[1], size),
                                                  std::max(dims[2], size)};
    std::array<VoxelGrid, 4> padded_modalities;
    for (int m = 0; m < 4; ++m) {
        padded_modalities[static_cast<std::size_t>(m)] =
            pad_grid(volume.modalities[static_cast<std::size_t>(m)], padded_dims);
    }
    const VoxelGrid padded_labels = pad_grid(labels, padded_dims);

    // Candidate centers come from the original grid, in raster order, so the
    // r-th draw is position-stable regardless of padding.
    std::vector<std::int64_t> positive_centers;
    std::vector<std::int64_t> negative_centers;
    for (std::int64_t v = 0; v < static_cast<std::int64_t>(labels.size()); ++v) {
        const double label = labels.data()[v];
        if (label == 2.0 || label == 3.0) {
            positive_centers.push_back(v);
        } else {
            negative_centers.push_back(v);
        }
    }

    SplitMix64 rng(seed);
    std::vector<PatchSample> patches;
    for (int i = 0; i < count; ++i) {
        const bool positive = i % 2 == 0;
        const std::vector<std::int64_t>* pool = positive ? &positive_centers : &negative_centers;
        std::int64_t center;
        if (pool->empty()) {
            center = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(labels.size())));
        } else {
            center = (*pool)[static_cast<std::size_t>(rng.below(pool->size()))];
        }
        const std::int64_t cz = center / (dims[1] * dims[2]);
        const std::int64_t cy = (center / dims[2]) % dims[1];
        const std::int64_t cx = center % dims[2];

        PatchSample patch;
        patch.size = size;
        patch.positive = positive;
        const std::array<std::int64_t, 3> center_idx{cz, cy, cx};
        for (int a = 0; a < 3; ++a) {
            const std::int64_t lo = center_idx[static_cast<std::size_t>(a)] - size / 2;
            patch.origin[static_cast<std::size_t>(a)] =
                std::clamp<std::int64_t>(lo, 0, padded_dims[static_cast<std::size_t>(a)] - size);
        }
        patch.modalities = Tensor5(1, 4, size, size, size);
        patch.labels = VoxelGrid(size, size, size, labels.spacing, GridRole::label);
        for (std::int64_t z = 0; z < size; ++z) {
            for (std::int64_t y = 0; y < size; ++y) {
                for (std::int64_t x = 0; x < size; ++x) {
                    const std::int64_t sz = patch.origin[0] + z;
                    const std::int64_t sy = patch.origin[1] + y;
                    const std::int64_t sx = patch.origin[2] + x;
                    for (std::int64_t m = 0; m < 4; ++m) {
                        patch.modalities.at(0, m, z, y, x) =
                            padded_modalities[static_cast<std::size_t>(m)].at(sz, sy, sx);
                    }
                    patch.labels.at(z, y, x) = padded_labels.at(sz, sy, sx);
                }
            }
        }
        patches.push_back(std::move(patch));
    }
    return patches;
}

PatchSample augment_patch(const PatchSample& patch, std::uint64_t seed,
                          AugmentRecord* record) {
    if (patch.modalities.d() != patch.size || patch.modalities.h() != patch.size ||
        patch.modalities.w() != patch.size) {
        throw Error(kStage, "augmentation requires cubic patches");
    }
    SplitMix64 rng(seed);
    AugmentRecord draw;
    draw.flips.depth = rng.coin();
    draw.flips.height = rng.coin();
    draw.flips.width = rng.coin();
    const std::uint64_t plane_draw = rng.below(3);
    draw.plane = plane_draw == 0   ? RotPlane::depth_height
                 : plane_draw == 1 ? RotPlane::depth_width
                                   : RotPlane::height_width;
    draw.quarter_turns = static_cast<int>(rng.below(4));
    if (record != nullptr) *record = draw;

    PatchSample out = patch;
    const auto apply = [&draw](const VoxelGrid& grid) {
        return rot90(flip_axes(grid, draw.flips), draw.plane, draw.quarter_turns);
    };
    for (std::int64_t m = 0; m < 4; ++m) {
        set_channel(out.modalities, m,
                    apply(channel_as_grid(patch.modalities, m, patch.labels.spacing,
                                          GridRole::intensity)));
    }
    out.labels = apply(patch.labels);
    return out;
}

PatchSample invert_augment(const PatchSample& patch, const AugmentRecord& record) {
    PatchSample out = patch;
    const auto undo = [&record](const VoxelGrid& grid) {
        return flip_axes(rot90(grid, record.plane, -record.quarter_turns), record.flips);
    };
    for (std::int64_t m = 0; m < 4; ++m) {
        set_channel(out.modalities, m,
                    undo(channel_as_grid(patch.modalities, m, patch.labels.spacing,
                                         GridRole::intensity)));
    }
    out.labels = undo(patch.labels);
    return out;
}

Tensor5 sliding_window_infer(const MultiModalVolume& volume, Predictor& predictor,
                             std::int64_t window, double overlap, AxisSet flipped) {
    volume.validate();
    if (window < 1) {
        throw Error(kStage, "window must be >= 1, got " + std::to_string(window));
    }
    if (!(overlap >= 0.0 && overlap < 1.0)) {
        throw Error(kStage, "overlap must be in [0, 1), got " + std::to_string(overlap));
    }
    const std::int64_t stride = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(window) * (1.0 - overlap))));

    const auto dims = grid_dims(volume.modalities[0]);
    const std::array<std::int64_t, 3> padded{std::max(dims[0], window), std::max(dims[1], window),
                                             std::max(dims[2], window)};
    Tensor5 full(1, 4, padded[0], padded[1], padded[2]);
    for (std::int64_t m = 0; m < 4; ++m) {
        set_channel(full, m, pad_grid(volume.modalities[static_cast<std::size_t>(m)], padded));
    }

    Tensor5 sum(1, kNumZoneLabels, padded[0], padded[1], padded[2]);
    std::vector<double> covers(static_cast<std::size_t>(sum.spatial_size()), 0.0);
    const auto zs = window_starts(padded[0], window, stride);
    const auto ys = window_starts(padded[1], window, stride);
    const auto xs = window_starts(padded[2], window, stride);
    Tensor5 input(1, 4, window, window, window);
    for (const std::int64_t z0 : zs) {
        for (const std::int64_t y0 : ys) {
            for (const std::int64_t x0 : xs) {
                for (std::int64_t m = 0; m < 4; ++m) {
                    for (std::int64_t z = 0; z < window; ++z) {
                        for (std::int64_t y = 0; y < window; ++y) {
                            for (std::int64_t x = 0; x < window; ++x) {
                                input.at(0, m, z, y, x) = full.at(0, m, z0 + z, y0 + y, x0 + x);
                            }
                        }
                    }
                }
                PredictContext context;
                context.origin = {z0, y0, x0};
                context.volume_dims = dims;
                context.flipped = flipped;
                const Tensor5 probs = predictor.predict(input, context);
                validate_probabilities(probs, window, window, window);
                for (std::int64_t c = 0; c < kNumZoneLabels; ++c) {
                    for (std::int64_t z = 0; z < window; ++z) {
                        for (std::int64_t y = 0; y < window; ++y) {
                            for (std::int64_t x = 0; x < window; ++x) {
                                sum.at(0, c, z0 + z, y0 + y, x0 + x) += probs.at(0, c, z, y, x);
                            }
                        }
                    }
                }
                for (std::int64_t z = 0; z < window; ++z) {
                    for (std::int64_t y = 0; y < window; ++y) {
                        for (std::int64_t x = 0; x < window; ++x) {
                            covers[static_cast<std::size_t>(
                                ((z0 + z) * padded[1] + y0 + y) * padded[2] + x0 + x)] += 1.0;
                        }
                    }
                }
            }
        }
    }

    Tensor5 out(1, kNumZoneLabels, dims[0], dims[1], dims[2]);
    for (std::int64_t c = 0; c < kNumZoneLabels; ++c) {
        for (std::int64_t z = 0; z < dims[0]; ++z) {
            for (std::int64_t y = 0; y < dims[1]; ++y) {
                for (std::int64_t x = 0; x < dims[2]; ++x) {
                    const std::size_t cover_idx =
                        static_cast<std::size_t>((z * padded[1] + y) * padded[2] + x);
                    out.at(0, c, z, y, x) = sum.at(0, c, z, y, x) / covers[cover_idx];
                }
            }
        }
    }
    return out;
}

Tensor5 tta_predict(const MultiModalVolume& volume, Predictor& predictor,
                    const BaseInfer& base_infer) {
    volume.validate();
    const auto dims = grid_dims(volume.modalities[0]);
    Tensor5 sum(1, kNumZoneLabels, dims[0], dims[1], dims[2]);
    for (int mask = 0; mask < 8; ++mask) {
        const AxisSet axes{(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0};
        const Tensor5 probs = base_infer(flip_volume(volume, axes), predictor, axes);
        validate_probabilities(probs, dims[0], dims[1], dims[2]);
        const Tensor5 back = flip_tensor(probs, axes);
        for (std::size_t v = 0; v < sum.data.size(); ++v) sum.data[v] += back.data[v];
    }
    for (double& v : sum.data) v /= 8.0;
    return sum;
}

VoxelGrid postprocess(const VoxelGrid& zones, const PostProcConfig& config) {
    check_zone_vocabulary(zones);
    if (config.min_component_voxels < 0) {
        throw Error(kStage, "min_component_voxels must be >= 0, got " +
                                std::to_string(config.min_component_voxels));
    }
    if (config.connectivity != 6) {
        throw Error(kStage, "connectivity must be 6, got " + std::to_string(config.connectivity));
    }
    VoxelGrid out = zones;
    for (const int zone : {3, 2, 1}) {
        remove_small_components(out, zone, config.min_component_voxels);
    }
    if (config.fill_holes) {
        for (const int zone : {3, 2, 1}) {
            fill_zone_holes(out, zone);
        }
    }
    return out;
}

VoxelGrid argmax_zones(const Tensor5& probabilities, Spacing spacing) {
    if (probabilities.n() != 1 || probabilities.c() != kNumZoneLabels) {
        throw Error(kStage, "expected a (1,4,D,H,W) probability map");
    }
    VoxelGrid zones(probabilities.d(), probabilities.h(), probabilities.w(), spacing,
                    GridRole::label);
    const std::int64_t spatial = probabilities.spatial_size();
    for (std::int64_t v = 0; v < spatial; ++v) {
        int best = 0;
        double best_p = probabilities.data[static_cast<std::size_t>(v)];
        for (int c = 1; c < kNumZoneLabels; ++c) {
            const double p = probabilities.data[static_cast<std::size_t>(c * spatial + v)];
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        zones.data()[v] = static_cast<double>(best);
    }
    return zones;
}

VoxelGrid occlusion_map(const MultiModalVolume& volume, Predictor& predictor,
                        const VoxelGrid& target_region, int target_class,
                        const std::vector<std::int64_t>& patch_sizes,
                        std::int64_t stride) {
    volume.validate();
    if (!target_region.same_geometry(volume.modalities[0])) {
        throw Error(kStage, "target region and volume have different geometry");
    }
    if (target_class < 0 || target_class >= kNumZoneLabels) {
        throw Error(kStage, "target class must be in 0..3, got " + std::to_string(target_class));
    }
    if (patch_sizes.empty()) {
        throw Error(kStage, "at least one occlusion patch size is required");
    }
    if (stride < 1) {
        throw Error(kStage, "stride must be >= 1, got " + std::to_string(stride));
    }
    const auto dims = grid_dims(volume.modalities[0]);
    for (const std::int64_t s : patch_sizes) {
        if (s < 1 || s > dims[0] || s > dims[1] || s > dims[2]) {
            throw Error(kStage, "occlusion patch size " + std::to_string(s) +
                                    " exceeds the volume dims");
        }
    }
    std::vector<std::int64_t> region;
    for (std::int64_t v = 0; v < static_cast<std::int64_t>(target_region.size()); ++v) {
        if (target_region.data()[v] != 0.0) region.push_back(v);
    }
    if (region.empty()) {
        throw Error(kStage, "target region is empty");
    }

    const Tensor5 base_input = tensor_from_volume(volume);
    PredictContext context;
    context.volume_dims = dims;
    const std::int64_t spatial = base_input.spatial_size();
    const auto region_mean = [&](const Tensor5& probs) {
        double sum = 0.0;
        for (const std::int64_t v : region) {
            sum += probs.data[static_cast<std::size_t>(target_class * spatial + v)];
        }
        return sum / static_cast<double>(region.size());
    };
    const Tensor5 base_probs = predictor.predict(base_input, context);
    validate_probabilities(base_probs, dims[0], dims[1], dims[2]);
    const double baseline = region_mean(base_probs);

    std::vector<double> mean_drop(static_cast<std::size_t>(spatial), 0.0);
    for (const std::int64_t scale : patch_sizes) {
        std::vector<double> drop_sum(static_cast<std::size_t>(spatial), 0.0);
        std::vector<double> cover(static_cast<std::size_t>(spatial), 0.0);
        const auto zs = window_starts(dims[0], scale, stride);
        const auto ys = window_starts(dims[1], scale, stride);
        const auto xs = window_starts(dims[2], scale, stride);
        for (const std::int64_t z0 : zs) {
            for (const std::int64_t y0 : ys) {
                for (const std::int64_t x0 : xs) {
                    Tensor5 occluded = base_input;
                    for (std::int64_t m = 0; m < 4; ++m) {
                        for (std::int64_t z = z0; z < z0 + scale; ++z) {
                            for (std::int64_t y = y0; y < y0 + scale; ++y) {
                                for (std::int64_t x = x0; x < x0 + scale; ++x) {
                                    occluded.at(0, m, z, y, x) = 0.0;
                                }
                            }
                        }
                    }
                    const Tensor5 probs = predictor.predict(occluded, context);
                    validate_probabilities(probs, dims[0], dims[1], dims[2]);
                    const double drop = baseline - region_mean(probs);
                    for (std::int64_t z = z0; z < z0 + scale; ++z) {
                        for (std::int64_t y = y0; y < y0 + scale; ++y) {
                            for (std::int64_t x = x0; x < x0 + scale; ++x) {
                                const std::size_t v =
                                    static_cast<std::size_t>((z * dims[1] + y) * dims[2] + x);
                                drop_sum[v] += drop;
                                cover[v] += 1.0;
                            }
                        }
                    }
                }
            }
        }
        for (std::size_t v = 0; v < mean_drop.size(); ++v) {
            mean_drop[v] += drop_sum[v] / cover[v];
        }
    }

    VoxelGrid map(dims[0], dims[1], dims[2], volume.modalities[0].spacing,
                  GridRole::probability);
    double max_drop = 0.0;
    for (std::size_t v = 0; v < mean_drop.size(); ++v) {
        const double value = std::max(mean_drop[v] / static_cast<double>(patch_sizes.size()), 0.0);
        map.data()[v] = value;
        max_drop = std::max(max_drop, value);
    }
    if (max_drop > 0.0) {
        for (std::size_t v = 0; v < map.size(); ++v) map.data()[v] /= max_drop;
    }
    return map;
}

VoxelGrid predict_zones(const MultiModalVolume& volume, Predictor& predictor,
                        const EvalFlags& flags, const InferenceConfig& inference,
                        const PostProcConfig& postproc) {
    const MultiModalVolume normalized = zscore_normalize(volume);
    const BaseInfer base = [&inference](const MultiModalVolume& v, Predictor& p, AxisSet axes) {
        return sliding_window_infer(v, p, inference.window, inference.overlap, axes);
    };
    const Tensor5 probs = flags.tta ? tta_predict(normalized, predictor, base)
                                    : base(normalized, predictor, AxisSet{});
    VoxelGrid zones = argmax_zones(probs, volume.modalities[0].spacing);
    if (flags.postprocess) zones = postprocess(zones, postproc);
    return zones;
}

PatientResult evaluate_patient(const MultiModalVolume& volume, const VoxelGrid& truth_seg,
                               const LabelVocabularyMap& vocab, Predictor& predictor,
                               const EvalFlags& flags, const InferenceConfig& inference,
                               const PostProcConfig& postproc) {
    volume.validate();
    if (!truth_seg.same_geometry(volume.modalities[0])) {
        throw Error(kStage, "segmentation and volume have different geometry");
    }
    const TumorRegions regions = parse_brats_mask(truth_seg, vocab);
    const VoxelGrid brain = brain_mask_from_flair(volume);
    const VoxelGrid dist = exact_edt(regions.whole);
    const VoxelGrid truth_zones = assign_zones(regions, dist, brain);

    PatientResult result{predict_zones(volume, predictor, flags, inference, postproc),
                         MetricsReport{}};
    result.report = evaluate_zones(result.zones, truth_zones);
    return result;
}

}  // namespace infil
