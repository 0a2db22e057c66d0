#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "infil/grid.hpp"
#include "infil/labelgen.hpp"
#include "infil/metrics.hpp"
#include "infil/netref.hpp"
#include "infil/tensor.hpp"

namespace infil {

// Where a sub-volume sits when a predictor is asked to score it. Model-backed
// predictors ignore this; oracle and stub predictors use it to look up ground
// truth at the right location and orientation.
struct PredictContext {
    // Window origin inside the (possibly flipped, end-padded) volume being
    // inferred.
    std::array<std::int64_t, 3> origin{0, 0, 0};
    // Unpadded dims of that volume; padding only ever extends past these.
    std::array<std::int64_t, 3> volume_dims{0, 0, 0};
    // Axes currently flipped relative to the caller's original volume.
    AxisSet flipped;
};

// Maps a normalized 4-modality sub-volume (1, 4, d, h, w) to a 4-class
// probability map of identical spatial dims; per-voxel sums must be 1 within
// 1e-5 (enforced by the inference drivers).
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Tensor5 predict(const Tensor5& input, const PredictContext& context) = 0;
};

// Reference-network predictor: forward pass with the given parameters,
// configuration, and ablation mode. Parameters are created lazily on first
// use, so a fresh store yields the seeded random-weight network.
class NetrefPredictor : public Predictor {
public:
    NetrefPredictor(ParamStore& params, const ModelConfig& config, AblationMode mode)
        : params_(params), config_(config), mode_(mode) {}

    Tensor5 predict(const Tensor5& input, const PredictContext& context) override;

private:
    ParamStore& params_;
    ModelConfig config_;
    AblationMode mode_;
};

// Answers every predict call by running sliding-window inference with the
// wrapped predictor, so callers that hand over whole volumes of arbitrary
// dims (the occlusion mapper) can drive predictors with dimension
// constraints. The wrapped predictor sees window-local contexts; pair it with
// model-backed predictors that ignore context.
class WindowedPredictor : public Predictor {
public:
    WindowedPredictor(Predictor& inner, std::int64_t window, double overlap,
                      Spacing spacing)
        : inner_(inner), window_(window), overlap_(overlap), spacing_(spacing) {}

    Tensor5 predict(const Tensor5& input, const PredictContext& context) override;

private:
    Predictor& inner_;
    std::int64_t window_;
    double overlap_;
    Spacing spacing_;
};

// Per-modality z-score over the nonzero support: nonzero voxels are shifted
// and scaled to mean 0, std 1 (population std, guard max(std, 1e-8)); zero
// voxels stay 0.
MultiModalVolume zscore_normalize(const MultiModalVolume& volume);

struct PatchSample {
    std::array<std::int64_t, 3> origin{0, 0, 0};  // crop origin in the end-padded volume
    std::int64_t size = 0;
    Tensor5 modalities;  // (1, 4, size, size, size)
    VoxelGrid labels;
    bool positive = false;
};

// Balanced patch extraction: alternating polarity starting positive. A
// positive center is drawn uniformly from zone 2/3 voxels, a negative center
// from zone 0/1 voxels, falling back to any voxel when the class is empty.
// Draw r picks the r-th candidate in raster order, so layouts reproduce
// exactly from the seed. Volumes smaller than `size` are zero-padded at the
// high end; centers are always drawn from the original grid.
std::vector<PatchSample> sample_patches(const MultiModalVolume& volume,
                                        const VoxelGrid& labels, int count,
                                        std::int64_t size, std::uint64_t seed);

// The random transform applied by augment_patch, sufficient to invert it.
struct AugmentRecord {
    AxisSet flips;
    RotPlane plane = RotPlane::depth_height;
    int quarter_turns = 0;
};

// Independent 50% flip per axis, then a uniformly drawn rotation
// (plane x quarter-turns, identity included), applied identically to all
// modalities and the labels. The record inverts exactly: rotate back, then
// re-apply the flips.
PatchSample augment_patch(const PatchSample& patch, std::uint64_t seed,
                          AugmentRecord* record = nullptr);
PatchSample invert_augment(const PatchSample& patch, const AugmentRecord& record);

// Sliding-window inference: windows on a stride = round(window*(1-overlap))
// lattice, last window clamped to the boundary, predictions averaged
// uniformly over covering windows. Volumes smaller than the window are
// zero-padded at the high end per axis; the output matches the unpadded
// volume. `flipped` is forwarded to the predictor context untouched.
Tensor5 sliding_window_infer(const MultiModalVolume& volume, Predictor& predictor,
                             std::int64_t window, double overlap,
                             AxisSet flipped = AxisSet{});

// Inference routine TTA wraps: typically sliding_window_infer with fixed
// window/overlap. Receives the flip state the volume is currently under.
using BaseInfer = std::function<Tensor5(const MultiModalVolume&, Predictor&, AxisSet)>;

// Test-time augmentation over all 8 axis-flip combinations (bit 0 = depth,
// bit 1 = height, bit 2 = width): flip, infer, unflip, average uniformly.
Tensor5 tta_predict(const MultiModalVolume& volume, Predictor& predictor,
                    const BaseInfer& base_infer);

struct PostProcConfig {
    std::int64_t min_component_voxels = 500;
    bool fill_holes = true;
    int connectivity = 6;  // only 6-neighborhood is supported
};

// Per zone in order 3, 2, 1: 6-connected components smaller than
// min_component_voxels are relabeled to the surrounding majority label (ties
// to the lower label); then, in the same order, enclosed pockets not touching
// the volume border are filled with the zone label. A fill only converts
// voxels of strictly lower labels, which protects higher-risk voxels
// (original or just filled) and makes the whole operation idempotent.
VoxelGrid postprocess(const VoxelGrid& zones, const PostProcConfig& config);

// Argmax class per voxel; ties resolve to the lowest class index.
VoxelGrid argmax_zones(const Tensor5& probabilities, Spacing spacing);

// Occlusion sensitivity: for every cube scale and lattice position, zero the
// cube across all modalities, re-predict the full volume, and record the drop
// in mean target-class probability over target_region. Per scale, each voxel
// averages the drops of the cubes covering it; scales are then averaged,
// negatives clamped to 0, and the map is normalized by its maximum (an
// all-zero map stays zero).
VoxelGrid occlusion_map(const MultiModalVolume& volume, Predictor& predictor,
                        const VoxelGrid& target_region, int target_class,
                        const std::vector<std::int64_t>& patch_sizes,
                        std::int64_t stride);

struct EvalFlags {
    bool tta = true;
    bool postprocess = true;
};

struct InferenceConfig {
    std::int64_t window = 96;
    double overlap = 0.5;
};

// normalize -> infer (with or without TTA) -> argmax -> optional postprocess.
VoxelGrid predict_zones(const MultiModalVolume& volume, Predictor& predictor,
                        const EvalFlags& flags, const InferenceConfig& inference,
                        const PostProcConfig& postproc);

struct PatientResult {
    VoxelGrid zones;
    MetricsReport report;
};

// Full patient evaluation: ground-truth zones derived from the raw
// segmentation (vocabulary split, distance transform, brain gating), the
// prediction from predict_zones, and the six-metric comparison of the two.
PatientResult evaluate_patient(const MultiModalVolume& volume, const VoxelGrid& truth_seg,
                               const LabelVocabularyMap& vocab, Predictor& predictor,
                               const EvalFlags& flags, const InferenceConfig& inference,
                               const PostProcConfig& postproc);

}  // namespace infil
