#pragma once

#include <array>
#include <vector>

#include "infil/grid.hpp"
#include "infil/tensor.hpp"

namespace infil {

// Training-objective weights. Defaults are the reference configuration:
// class weights (0.1, 1.0, 1.5, 2.0), both mixing coefficients 0.3, boundary
// penalty factor 0.5, soft-Dice smoothing 1e-5.
struct LossWeights {
    std::array<double, kNumZoneLabels> class_weights{0.1, 1.0, 1.5, 2.0};
    double lambda_boundary = 0.3;
    double lambda_aux = 0.3;
    double boundary_extra = 0.5;
    double dice_smooth = 1e-5;

    void validate() const;
};

// Weighted cross-entropy plus weighted soft Dice, with the exact analytic
// gradient w.r.t. every logit.
//   CE   = sum_v w[y_v] * (-log p_{y_v}) / sum_v w[y_v]
//   Dice = sum_c w[c] * (1 - (2*sum_v p_c g_c + s) / (sum_v (p_c + g_c) + s))
//          / sum_c w[c]
// Logits shape (1, 4, D, H, W); labels carry the zone vocabulary.
struct DiceCeTerm {
    double value = 0.0;
    double ce = 0.0;
    double dice = 0.0;
    Tensor5 grad_logits;
};
DiceCeTerm dice_ce_loss(const Tensor5& logits, const VoxelGrid& labels,
                        const LossWeights& weights);

// Marks voxels with at least one in-bounds 6-neighbor carrying a different
// label. Out-of-bounds neighbors are ignored.
VoxelGrid boundary_mask_6n(const VoxelGrid& labels);

// Boundary-restricted cross-entropy:
//   value = sum_v extra * b(v) * CE(v) / max(sum_v b(v), 1)
// with unweighted per-voxel CE. Empty boundary gives value 0, gradient 0.
struct LossTerm {
    double value = 0.0;
    Tensor5 grad_logits;
};
LossTerm boundary_loss(const Tensor5& logits, const VoxelGrid& labels,
                       const LossWeights& weights);

// Nearest-neighbor label downsampling: each output voxel takes the label at
// the top-front-left corner of its block, indices i*factor.
VoxelGrid downsample_labels(const VoxelGrid& labels, int factor);

// Mean DiceCE over the three auxiliary heads at 1/2, 1/4, 1/8 resolution
// against correspondingly downsampled labels. grads[i] is the gradient of
// the mean (the per-head DiceCE gradient divided by 3).
struct AuxTerm {
    double value = 0.0;
    std::array<Tensor5, 3> grads;
};
AuxTerm aux_loss(const std::vector<Tensor5>& aux_logits, const VoxelGrid& labels,
                 const LossWeights& weights);

// Full objective: total = dice_ce + lambda_b * boundary + lambda_a * aux.
// grad_logits differentiates the total w.r.t. the main logits (the aux terms
// do not touch them); aux_grads[i] differentiates the total w.r.t. aux head i
// (lambda_a / 3 times that head's DiceCE gradient).
struct LossBreakdown {
    double dice_ce = 0.0;
    double ce = 0.0;
    double dice = 0.0;
    double boundary = 0.0;
    double aux = 0.0;
    double total = 0.0;
    Tensor5 grad_logits;
    std::array<Tensor5, 3> aux_grads;
};
LossBreakdown total_loss(const Tensor5& logits, const std::vector<Tensor5>& aux_logits,
                         const VoxelGrid& labels, const LossWeights& weights);

}  // namespace infil
