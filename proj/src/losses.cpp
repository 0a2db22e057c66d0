#include "infil/losses.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>

#include "infil/error.hpp"

namespace infil {

namespace {

constexpr const char* kStage = "losses";

void check_positive(double value, const char* key) {
    if (!(value > 0.0)) {
        throw Error(kStage, std::string(key) + " must be > 0, got " + std::to_string(value));
    }
}

void check_non_negative(double value, const char* key) {
    if (!(value >= 0.0)) {
        throw Error(kStage, std::string(key) + " must be >= 0, got " + std::to_string(value));
    }
}

void check_pair(const Tensor5& logits, const VoxelGrid& labels) {
    if (logits.n() != 1) {
        throw Error(kStage, "logits batch dimension must be 1, got " + std::to_string(logits.n()));
    }
    if (logits.c() != kNumZoneLabels) {
        throw Error(kStage, "logits must have " + std::to_string(kNumZoneLabels) +
                                " class channels, got " + std::to_string(logits.c()));
    }
    const auto dims = labels.dims();
    if (logits.d() != dims[0] || logits.h() != dims[1] || logits.w() != dims[2]) {
        throw Error(kStage, "logits spatial shape (" + std::to_string(logits.d()) + "," +
                                std::to_string(logits.h()) + "," + std::to_string(logits.w()) +
                                ") does not match labels (" + std::to_string(dims[0]) + "," +
                                std::to_string(dims[1]) + "," + std::to_string(dims[2]) + ")");
    }
    if (!logits.all_finite()) {
        throw Error(kStage, "logits contain non-finite values");
    }
    if (!labels.values_in_zone_vocabulary()) {
        throw Error(kStage, "labels contain values outside the zone vocabulary 0..3");
    }
}

// Numerically stable per-voxel softmax support. Writes p_k into out[k] and
// returns log(sum_k exp(z_k)).
double voxel_softmax(const double* z, int64_t stride, double* out) {
    double m = z[0];
    for (int c = 1; c < kNumZoneLabels; ++c) m = std::max(m, z[c * stride]);
    double sum = 0.0;
    for (int c = 0; c < kNumZoneLabels; ++c) {
        out[c] = std::exp(z[c * stride] - m);
        sum += out[c];
    }
    const double inv = 1.0 / sum;
    for (int c = 0; c < kNumZoneLabels; ++c) out[c] *= inv;
    return m + std::log(sum);
}

}  // namespace

void LossWeights::validate() const {
    for (int c = 0; c < kNumZoneLabels; ++c) {
        if (!(class_weights[c] > 0.0)) {
            throw Error(kStage, "class_weights[" + std::to_string(c) + "] must be > 0, got " +
                                    std::to_string(class_weights[c]));
        }
    }
    check_non_negative(lambda_boundary, "lambda_boundary");
    check_non_negative(lambda_aux, "lambda_aux");
    check_non_negative(boundary_extra, "boundary_extra");
    check_positive(dice_smooth, "dice_smooth");
}

DiceCeTerm dice_ce_loss(const Tensor5& logits, const VoxelGrid& labels,
                        const LossWeights& weights) {
    weights.validate();
    check_pair(logits, labels);

    const int64_t spatial = logits.spatial_size();
    const double smooth = weights.dice_smooth;

    DiceCeTerm term;
    term.grad_logits = Tensor5(1, kNumZoneLabels, logits.d(), logits.h(), logits.w());

    // Pass 1, serial raster order so reductions are thread-count independent:
    // stash probabilities in the gradient buffer and accumulate the CE sum and
    // per-class Dice statistics.
    double ce_sum = 0.0;
    double weight_sum = 0.0;
    std::array<double, kNumZoneLabels> inter{};   // sum_v p_c * g_c
    std::array<double, kNumZoneLabels> volume{};  // sum_v (p_c + g_c)
    double p[kNumZoneLabels];
    for (int64_t v = 0; v < spatial; ++v) {
        const double* z = logits.data.data() + v;
        const double lse = voxel_softmax(z, spatial, p);
        const int y = static_cast<int>(labels.data()[v]);
        const double w = weights.class_weights[y];
        ce_sum += w * (lse - z[y * spatial]);
        weight_sum += w;
        for (int c = 0; c < kNumZoneLabels; ++c) {
            term.grad_logits.data[c * spatial + v] = p[c];
            volume[c] += p[c];
        }
        inter[y] += p[y];
        volume[y] += 1.0;
    }
    term.ce = ce_sum / weight_sum;

    double total_class_weight = 0.0;
    for (int c = 0; c < kNumZoneLabels; ++c) total_class_weight += weights.class_weights[c];
    std::array<double, kNumZoneLabels> dice_score;
    for (int c = 0; c < kNumZoneLabels; ++c) {
        dice_score[c] = (2.0 * inter[c] + smooth) / (volume[c] + smooth);
        term.dice += weights.class_weights[c] / total_class_weight * (1.0 - dice_score[c]);
    }
    term.value = term.ce + term.dice;

    // Pass 2: convert stashed probabilities into the analytic gradient.
    //   CE:   (w_y / W) * (p_k - [k == y])
    //   Dice: chain dL/dp_c through the softmax, dp_c/dz_k = p_c([c==k] - p_k),
    //         giving p_k * (q_k - sum_c q_c p_c) with q_c = dL_dice/dp_c.
    std::array<double, kNumZoneLabels> q_base;  // q_c for a voxel with g_c = 0
    std::array<double, kNumZoneLabels> q_hit;   // q_c for a voxel with g_c = 1
    for (int c = 0; c < kNumZoneLabels; ++c) {
        const double wc = weights.class_weights[c] / total_class_weight;
        const double denom = volume[c] + smooth;
        q_base[c] = wc * (2.0 * inter[c] + smooth) / (denom * denom);
        q_hit[c] = q_base[c] - wc * 2.0 / denom;
    }
    for (int64_t v = 0; v < spatial; ++v) {
        const int y = static_cast<int>(labels.data()[v]);
        const double ce_scale = weights.class_weights[y] / weight_sum;
        double q[kNumZoneLabels];
        double dot = 0.0;
        for (int c = 0; c < kNumZoneLabels; ++c) {
            q[c] = (c == y) ? q_hit[c] : q_base[c];
            dot += q[c] * term.grad_logits.data[c * spatial + v];
        }
        for (int c = 0; c < kNumZoneLabels; ++c) {
            const double pc = term.grad_logits.data[c * spatial + v];
            const double dice_grad = pc * (q[c] - dot);
            const double ce_grad = ce_scale * (pc - (c == y ? 1.0 : 0.0));
            term.grad_logits.data[c * spatial + v] = ce_grad + dice_grad;
        }
    }
    return term;
}

VoxelGrid boundary_mask_6n(const VoxelGrid& labels) {
    if (!labels.values_in_zone_vocabulary()) {
        throw Error(kStage, "labels contain values outside the zone vocabulary 0..3");
    }
    const auto dims = labels.dims();
    VoxelGrid mask(dims[0], dims[1], dims[2], labels.spacing, GridRole::label);
    for (int64_t z = 0; z < dims[0]; ++z) {
        for (int64_t y = 0; y < dims[1]; ++y) {
            for (int64_t x = 0; x < dims[2]; ++x) {
                const double here = labels.at(z, y, x);
                const bool differs =
                    (z > 0 && labels.at(z - 1, y, x) != here) ||
                    (z + 1 < dims[0] && labels.at(z + 1, y, x) != here) ||
                    (y > 0 && labels.at(z, y - 1, x) != here) ||
                    (y + 1 < dims[1] && labels.at(z, y + 1, x) != here) ||
                    (x > 0 && labels.at(z, y, x - 1) != here) ||
                    (x + 1 < dims[2] && labels.at(z, y, x + 1) != here);
                mask.at(z, y, x) = differs ? 1.0 : 0.0;
            }
        }
    }
    return mask;
}

LossTerm boundary_loss(const Tensor5& logits, const VoxelGrid& labels,
                       const LossWeights& weights) {
    weights.validate();
    check_pair(logits, labels);

    const VoxelGrid mask = boundary_mask_6n(labels);
    int64_t count = 0;
    for (int64_t v = 0; v < static_cast<int64_t>(mask.size()); ++v) {
        if (mask.data()[v] != 0.0) ++count;
    }
    const double scale = weights.boundary_extra / static_cast<double>(std::max<int64_t>(count, 1));

    const int64_t spatial = logits.spatial_size();
    LossTerm term;
    term.grad_logits = Tensor5(1, kNumZoneLabels, logits.d(), logits.h(), logits.w());
    double p[kNumZoneLabels];
    double ce_sum = 0.0;
    for (int64_t v = 0; v < spatial; ++v) {
        if (mask.data()[v] == 0.0) continue;
        const double* z = logits.data.data() + v;
        const double lse = voxel_softmax(z, spatial, p);
        const int y = static_cast<int>(labels.data()[v]);
        ce_sum += lse - z[y * spatial];
        for (int c = 0; c < kNumZoneLabels; ++c) {
            term.grad_logits.data[c * spatial + v] = scale * (p[c] - (c == y ? 1.0 : 0.0));
        }
    }
    term.value = scale * ce_sum;
    return term;
}

VoxelGrid downsample_labels(const VoxelGrid& labels, int factor) {
    if (factor != 2 && factor != 4 && factor != 8) {
        throw Error(kStage, "downsample factor must be 2, 4, or 8, got " + std::to_string(factor));
    }
    const auto dims = labels.dims();
    for (int axis = 0; axis < 3; ++axis) {
        if (dims[axis] % factor != 0) {
            throw Error(kStage, "label dims (" + std::to_string(dims[0]) + "," +
                                    std::to_string(dims[1]) + "," + std::to_string(dims[2]) +
                                    ") not divisible by downsample factor " +
                                    std::to_string(factor));
        }
    }
    const Spacing out_spacing{labels.spacing.z * factor, labels.spacing.y * factor,
                              labels.spacing.x * factor};
    VoxelGrid out(dims[0] / factor, dims[1] / factor, dims[2] / factor, out_spacing,
                  labels.role);
    for (int64_t z = 0; z < out.dims()[0]; ++z) {
        for (int64_t y = 0; y < out.dims()[1]; ++y) {
            for (int64_t x = 0; x < out.dims()[2]; ++x) {
                out.at(z, y, x) = labels.at(z * factor, y * factor, x * factor);
            }
        }
    }
    return out;
}

AuxTerm aux_loss(const std::vector<Tensor5>& aux_logits, const VoxelGrid& labels,
                 const LossWeights& weights) {
    weights.validate();
    if (aux_logits.size() != 3) {
        throw Error(kStage, "expected 3 auxiliary heads, got " + std::to_string(aux_logits.size()));
    }
    AuxTerm term;
    for (int i = 0; i < 3; ++i) {
        const int factor = 2 << i;
        const VoxelGrid coarse = downsample_labels(labels, factor);
        DiceCeTerm head = dice_ce_loss(aux_logits[static_cast<size_t>(i)], coarse, weights);
        term.value += head.value / 3.0;
        for (double& g : head.grad_logits.data) g /= 3.0;
        term.grads[static_cast<size_t>(i)] = std::move(head.grad_logits);
    }
    return term;
}

LossBreakdown total_loss(const Tensor5& logits, const std::vector<Tensor5>& aux_logits,
                         const VoxelGrid& labels, const LossWeights& weights) {
    DiceCeTerm main = dice_ce_loss(logits, labels, weights);
    LossTerm boundary = boundary_loss(logits, labels, weights);
    AuxTerm aux = aux_loss(aux_logits, labels, weights);

    LossBreakdown out;
    out.dice_ce = main.value;
    out.ce = main.ce;
    out.dice = main.dice;
    out.boundary = boundary.value;
    out.aux = aux.value;
    out.total = main.value + weights.lambda_boundary * boundary.value +
                weights.lambda_aux * aux.value;
    out.grad_logits = std::move(main.grad_logits);
    for (int64_t v = 0; v < static_cast<int64_t>(out.grad_logits.size()); ++v) {
        out.grad_logits.data[static_cast<size_t>(v)] +=
            weights.lambda_boundary * boundary.grad_logits.data[static_cast<size_t>(v)];
    }
    for (int i = 0; i < 3; ++i) {
        for (double& g : aux.grads[static_cast<size_t>(i)].data) g *= weights.lambda_aux;
        out.aux_grads[static_cast<size_t>(i)] = std::move(aux.grads[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace infil
