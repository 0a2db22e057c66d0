#include "infil/selfcheck.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "infil/error.hpp"
#include "infil/grid.hpp"
#include "infil/losses.hpp"
#include "infil/netref.hpp"
#include "infil/rng.hpp"
#include "infil/tensor.hpp"

namespace infil {

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kCompositionTolerance = 1e-12;
constexpr double kFusionTolerance = 1e-6;
constexpr double kFdStep = 1e-5;
constexpr int kFixtures = 5;
constexpr int kCoordsPerTensor = 20;

struct Fixture {
    VoxelGrid labels;
    Tensor5 logits;
    std::vector<Tensor5> aux_logits;
};

Fixture make_fixture(std::int64_t size, std::uint64_t seed) {
    Fixture f{VoxelGrid(size, size, size, Spacing{}, GridRole::label),
              Tensor5(1, kNumZoneLabels, size, size, size), {}};
    SplitMix64 rng(seed);
    for (auto& v : f.labels.data()) v = static_cast<double>(rng.below(kNumZoneLabels));
    for (auto& v : f.logits.data) v = rng.uniform(-2.5, 2.5);
    for (int factor : {2, 4, 8}) {
        const std::int64_t side = size / factor;
        Tensor5 head(1, kNumZoneLabels, side, side, side);
        for (auto& v : head.data) v = rng.uniform(-2.5, 2.5);
        f.aux_logits.push_back(std::move(head));
    }
    return f;
}

// Central finite difference at one coordinate of `base` against the analytic
// value `a`, relative to max(|a|, |fd|, floor).
template <typename ValueFn>
double fd_relative_error(const Tensor5& base, std::size_t idx, double a, double floor,
                         ValueFn&& value_with) {
    Tensor5 bumped = base;
    bumped.data[idx] = base.data[idx] + kFdStep;
    const double up = value_with(bumped);
    bumped.data[idx] = base.data[idx] - kFdStep;
    const double down = value_with(bumped);
    const double fd = (up - down) / (2.0 * kFdStep);
    const double denom = std::max({std::fabs(a), std::fabs(fd), floor});
    return std::fabs(a - fd) / denom;
}

template <typename ValueFn>
double max_fd_error(const Tensor5& base, const Tensor5& grad, SplitMix64& rng,
                    int coords, ValueFn&& value_with) {
    // The central difference of two ~|loss| values carries a few ulps of the
    // loss, roughly 1e-11 to 1e-10 at h = 1e-5; at coordinates whose gradient
    // sits orders of magnitude below the tensor's scale that roundoff
    // dominates any true signal. The denominator is therefore floored at 1%
    // of the largest gradient entry (1e-7 when the whole tensor is tiny).
    // Real formula errors scale with the gradient itself, so they still trip
    // the tolerance against this floor; only discrepancies below
    // tolerance * floor in absolute terms pass unseen, and those are
    // indistinguishable from the finite-difference roundoff anyway.
    double scale = 0.0;
    for (double g : grad.data) scale = std::max(scale, std::fabs(g));
    const double floor = std::max(1e-7, 1e-2 * scale);
    double worst = 0.0;
    for (int i = 0; i < coords; ++i) {
        const std::size_t idx =
            static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(base.size())));
        worst = std::max(worst,
                         fd_relative_error(base, idx, grad.data[idx], floor, value_with));
    }
    return worst;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::fabs(a[i] - b[i]));
    }
    return worst;
}

TokenMatrix random_tokens(std::int64_t rows, std::int64_t cols, SplitMix64& rng) {
    TokenMatrix m(rows, cols);
    for (auto& v : m.data) v = rng.uniform(-1.5, 1.5);
    return m;
}

// Direct softmax(Q K^T / sqrt(scale_dim)) V with the score matrix fully
// materialized, as an independent recomputation of the streamed version.
TokenMatrix dense_attention(const TokenMatrix& q, const TokenMatrix& k,
                            const TokenMatrix& v, double scale_dim) {
    const double inv_scale = 1.0 / std::sqrt(scale_dim);
    TokenMatrix scores(q.rows, k.rows);
    for (std::int64_t i = 0; i < q.rows; ++i) {
        for (std::int64_t j = 0; j < k.rows; ++j) {
            double dot = 0.0;
            for (std::int64_t c = 0; c < q.cols; ++c) dot += q.at(i, c) * k.at(j, c);
            scores.at(i, j) = dot * inv_scale;
        }
    }
    TokenMatrix out(q.rows, v.cols);
    for (std::int64_t i = 0; i < q.rows; ++i) {
        double peak = scores.at(i, 0);
        for (std::int64_t j = 1; j < k.rows; ++j) peak = std::max(peak, scores.at(i, j));
        double denom = 0.0;
        std::vector<double> expo(static_cast<std::size_t>(k.rows));
        for (std::int64_t j = 0; j < k.rows; ++j) {
            expo[static_cast<std::size_t>(j)] = std::exp(scores.at(i, j) - peak);
            denom += expo[static_cast<std::size_t>(j)];
        }
        for (std::int64_t j = 0; j < k.rows; ++j) {
            const double w = expo[static_cast<std::size_t>(j)] / denom;
            for (std::int64_t c = 0; c < v.cols; ++c) out.at(i, c) += w * v.at(j, c);
        }
    }
    return out;
}

}  // namespace

nlohmann::ordered_json run_gradient_check(std::uint64_t seed, std::int64_t size) {
    if (size < 8 || size % 8 != 0) {
        throw Error("selfcheck",
                    "gradient check size " + std::to_string(size) +
                        " is invalid; legal: a positive multiple of 8 (the auxiliary "
                        "heads downsample by 2, 4 and 8)");
    }

    const LossWeights weights;
    double err_dice_ce = 0.0;
    double err_boundary = 0.0;
    double err_total = 0.0;
    double err_total_aux = 0.0;
    double composition = 0.0;

    for (int fi = 0; fi < kFixtures; ++fi) {
        const Fixture f =
            make_fixture(size, seed * 1000003ull + static_cast<std::uint64_t>(fi));
        SplitMix64 coords(seed ^ (0xC0FFEEull + static_cast<std::uint64_t>(fi) * 97ull));

        const DiceCeTerm dice_ce = dice_ce_loss(f.logits, f.labels, weights);
        err_dice_ce = std::max(
            err_dice_ce,
            max_fd_error(f.logits, dice_ce.grad_logits, coords, kCoordsPerTensor,
                         [&](const Tensor5& t) {
                             return dice_ce_loss(t, f.labels, weights).value;
                         }));

        const LossTerm boundary = boundary_loss(f.logits, f.labels, weights);
        err_boundary = std::max(
            err_boundary,
            max_fd_error(f.logits, boundary.grad_logits, coords, kCoordsPerTensor,
                         [&](const Tensor5& t) {
                             return boundary_loss(t, f.labels, weights).value;
                         }));

        const LossBreakdown breakdown =
            total_loss(f.logits, f.aux_logits, f.labels, weights);
        err_total = std::max(
            err_total,
            max_fd_error(f.logits, breakdown.grad_logits, coords, kCoordsPerTensor,
                         [&](const Tensor5& t) {
                             return total_loss(t, f.aux_logits, f.labels, weights).total;
                         }));

        const int per_head = (kCoordsPerTensor + 2) / 3;
        for (std::size_t hi = 0; hi < f.aux_logits.size(); ++hi) {
            err_total_aux = std::max(
                err_total_aux,
                max_fd_error(f.aux_logits[hi], breakdown.aux_grads[hi], coords, per_head,
                             [&](const Tensor5& t) {
                                 std::vector<Tensor5> heads = f.aux_logits;
                                 heads[hi] = t;
                                 return total_loss(f.logits, heads, f.labels, weights)
                                     .total;
                             }));
        }

        // The total gradient must be the exact linear combination of the term
        // gradients: dice_ce + lambda_b * boundary on the main logits, and
        // lambda_a times the aux-mean gradient on each head.
        Tensor5 combined = dice_ce.grad_logits;
        for (std::size_t i = 0; i < combined.data.size(); ++i) {
            combined.data[i] += weights.lambda_boundary * boundary.grad_logits.data[i];
        }
        composition =
            std::max(composition, max_abs_diff(breakdown.grad_logits.data, combined.data));
        const AuxTerm aux = aux_loss(f.aux_logits, f.labels, weights);
        for (std::size_t hi = 0; hi < f.aux_logits.size(); ++hi) {
            Tensor5 scaled = aux.grads[hi];
            for (auto& v : scaled.data) v *= weights.lambda_aux;
            composition = std::max(
                composition, max_abs_diff(breakdown.aux_grads[hi].data, scaled.data));
        }
    }

    const bool pass = err_dice_ce < kGradTolerance && err_boundary < kGradTolerance &&
                      err_total < kGradTolerance && err_total_aux < kGradTolerance &&
                      composition < kCompositionTolerance;

    nlohmann::ordered_json out;
    out["seed"] = seed;
    out["size"] = size;
    out["fixtures"] = kFixtures;
    out["coords_per_tensor"] = kCoordsPerTensor;
    out["step"] = kFdStep;
    out["components"] = {{"dice_ce", err_dice_ce},
                         {"boundary", err_boundary},
                         {"total", err_total},
                         {"total_aux", err_total_aux}};
    out["composition_max_abs_err"] = composition;
    out["tolerance"] = kGradTolerance;
    out["composition_tolerance"] = kCompositionTolerance;
    out["pass"] = pass;
    return out;
}

nlohmann::ordered_json run_fusion_check(std::uint64_t seed) {
    SplitMix64 rng(seed * 0x9E3779B97F4A7C15ull + 1ull);

    const double scale_dim = 5.0;
    const TokenMatrix q = random_tokens(8, 5, rng);
    const TokenMatrix k = random_tokens(4, 5, rng);
    const TokenMatrix v = random_tokens(4, 3, rng);
    const TokenMatrix streamed = scaled_dot_attention(q, k, v, scale_dim);
    const TokenMatrix dense = dense_attention(q, k, v, scale_dim);
    const double attention_diff = max_abs_diff(streamed.data, dense.data);

    // With an all-ones value matrix every output entry is the attention-row
    // sum, which softmax guarantees is exactly 1.
    TokenMatrix ones_v(4, 1, 1.0);
    const TokenMatrix row_sums = scaled_dot_attention(q, k, ones_v, scale_dim);
    double row_sum_err = 0.0;
    for (double s : row_sums.data) row_sum_err = std::max(row_sum_err, std::fabs(s - 1.0));

    // One query token against one key/value token: the single softmax weight
    // is 1, so the output must reproduce the value row.
    const TokenMatrix q1 = random_tokens(1, 5, rng);
    const TokenMatrix k1 = random_tokens(1, 5, rng);
    const TokenMatrix v1 = random_tokens(1, 3, rng);
    const TokenMatrix single = scaled_dot_attention(q1, k1, v1, scale_dim);
    const double single_diff = max_abs_diff(single.data, v1.data);

    // Zeroing every fusion output projection must collapse the full network
    // onto the cnn_only ablation, because the residual path is all that
    // remains of each fused level.
    ModelConfig cfg;
    cfg.base_filters = 2;
    cfg.swin_feature = 2;
    Tensor5 input(1, 4, 16, 16, 16);
    for (auto& x : input.data) x = rng.uniform(-1.0, 1.0);
    ParamStore p_full(seed);
    (void)infiltrnet_forward(input, p_full, cfg, AblationMode::full);
    for (int factor : {2, 4, 8, 16}) {
        const std::string base = "fusion.level" + std::to_string(factor) + ".proj_out";
        for (auto& w : p_full.existing(base + ".weight").data) w = 0.0;
        for (auto& w : p_full.existing(base + ".bias").data) w = 0.0;
    }
    const ForwardResult full = infiltrnet_forward(input, p_full, cfg, AblationMode::full);
    ParamStore p_cnn(seed);
    const ForwardResult cnn = infiltrnet_forward(input, p_cnn, cfg, AblationMode::cnn_only);
    const double reduction_diff = max_abs_diff(full.logits.data, cnn.logits.data);

    const bool pass = attention_diff < kFusionTolerance && row_sum_err < kFusionTolerance &&
                      single_diff < kFusionTolerance && reduction_diff < kFusionTolerance;

    nlohmann::ordered_json out;
    out["seed"] = seed;
    out["attention_max_abs_diff"] = attention_diff;
    out["attention_row_sum_max_err"] = row_sum_err;
    out["single_token_max_abs_diff"] = single_diff;
    out["zero_projection_max_abs_diff"] = reduction_diff;
    out["tolerance"] = kFusionTolerance;
    out["pass"] = pass;
    return out;
}

}  // namespace infil
