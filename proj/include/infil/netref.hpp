#pragma once

#include <memory>
#include <string>
#include <vector>

#include "infil/grid.hpp"
#include "infil/tensor.hpp"

namespace infil {

// Architecture hyperparameters. Defaults mirror the reference configuration:
// base CNN width 32, global-branch width 24, four output classes.
struct ModelConfig {
    int base_filters = 32;  // C: CNN channel schedule (C, C, 2C, 4C, 8C)
    int swin_feature = 24;  // F: global branch schedule (F, 2F, 4F, 8F)
    int num_classes = 4;
    double leaky_slope = 0.01;
    double norm_epsilon = 1e-5;

    // CNN encoder channels at downsample factors (1, 2, 4, 8, 16).
    std::array<std::int64_t, 5> cnn_channels() const;
    // Global encoder channels at downsample factors (2, 4, 8, 16).
    std::array<std::int64_t, 4> global_channels() const;
    // Common fusion dimension d at a given factor: the CNN channel count.
    std::int64_t fusion_dim(int factor) const;

    void validate() const;
};

// One resolution level of an encoder: features at input_dims / factor.
struct PyramidLevel {
    int factor = 1;
    Tensor5 features;
};

struct EncoderPyramid {
    std::vector<PyramidLevel> levels;

    const Tensor5& at_factor(int factor) const;
};

// Strided cross-correlation with cubic kernel, standard output size
// floor((in + 2*padding - k)/stride) + 1. Weight shape (oc, ic, k, k, k),
// bias shape (1, oc, 1, 1, 1). `layer` names the layer in error messages.
Tensor5 conv3d_forward(const Tensor5& input, const Tensor5& weight, const Tensor5& bias,
                       int stride, int padding, const std::string& layer);

// Transposed convolution, kernel 2 stride 2: exact x2 upsampling where every
// output voxel receives exactly one kernel contribution. Weight shape
// (ic, oc, 2, 2, 2).
Tensor5 transposed_conv3d_x2(const Tensor5& input, const Tensor5& weight,
                             const Tensor5& bias, const std::string& layer);

// Per-sample, per-channel standardization over the spatial dims (population
// variance, epsilon under the square root). No learned affine terms.
Tensor5 instance_norm(const Tensor5& input, double epsilon);

Tensor5 leaky_relu(const Tensor5& input, double slope);

// Two 3x3x3 conv + norm + activation layers with a residual skip: the skip is
// the identity when channel counts match, a 1x1x1 projection otherwise.
// Parameters live under `name`.{conv1,conv2,skip}.
Tensor5 residual_block(const Tensor5& input, ParamStore& params, const std::string& name,
                       std::int64_t out_channels, const ModelConfig& config);

// CNN branch: residual stem at full resolution plus four strided-conv
// downsampling stages, factors (1, 2, 4, 8, 16), channels (C, C, 2C, 4C, 8C).
// Spatial dims must be divisible by 16.
EncoderPyramid cnn_encoder_forward(const Tensor5& input, ParamStore& params,
                                   const ModelConfig& config);

// Pluggable global-context branch. Any implementation may be substituted as
// long as the returned pyramid satisfies validate_global_pyramid.
class GlobalEncoder {
public:
    virtual ~GlobalEncoder() = default;
    virtual EncoderPyramid forward(const Tensor5& input, ParamStore& params,
                                   const ModelConfig& config) const = 0;
};

// Reference stand-in: four strided 3x3x3 convolutions with norm+activation,
// factors (2, 4, 8, 16), channels (F, 2F, 4F, 8F).
class StridedConvGlobalEncoder final : public GlobalEncoder {
public:
    EncoderPyramid forward(const Tensor5& input, ParamStore& params,
                           const ModelConfig& config) const override;
};

// Contract check for plugged global encoders: factors (2,4,8,16), channels
// (F,2F,4F,8F), spatial dims input/factor, finite values.
void validate_global_pyramid(const EncoderPyramid& pyramid, const ModelConfig& config,
                             std::int64_t in_d, std::int64_t in_h, std::int64_t in_w);

// Runs `encoder` (the stand-in when null) and validates its pyramid.
EncoderPyramid global_encoder_forward(const Tensor5& input, ParamStore& params,
                                      const ModelConfig& config,
                                      const GlobalEncoder* encoder = nullptr);

// Row-wise softmax(Q K^T / sqrt(scale_dim)) V with row-max stabilization.
// Never materializes the full score matrix: scores are streamed one query row
// at a time.
TokenMatrix scaled_dot_attention(const TokenMatrix& q, const TokenMatrix& k,
                                 const TokenMatrix& v, double scale_dim);

// Bidirectional cross-attention, pre-projection stage: both branches are
// projected to d_l channels by 1x1x1 convolutions, flattened to tokens, and
// attended in both directions; the two attention outputs are concatenated
// channel-wise: [Attn(Q_C,K_S,V_S) || Attn(Q_S,K_C,V_C)], giving 2*d_l
// channels. Exposed separately so the single-token closed form is testable
// before instance norm erases it.
Tensor5 cross_attention_concat(const Tensor5& cnn_features,
                               const Tensor5& global_features, ParamStore& params,
                               const std::string& name, std::int64_t d_l);

// Full fusion: the concat above followed by a 1x1x1 projection back to d_l
// channels, instance norm, and LeakyReLU.
Tensor5 cross_attention_fuse(const Tensor5& cnn_features, const Tensor5& global_features,
                             ParamStore& params, const std::string& name,
                             std::int64_t d_l, const ModelConfig& config);

enum class AblationMode { full, cnn_only, swin_only };
const char* ablation_mode_name(AblationMode mode);
AblationMode ablation_mode_from_name(const std::string& name);

struct DecoderOutput {
    Tensor5 logits;                   // full resolution, num_classes channels
    std::vector<Tensor5> aux_logits;  // resolutions 1/2, 1/4, 1/8 in that order
};

// Four decode levels from the factor-16 bottleneck. `skips` are the fused (or
// surviving-branch) maps at factors (8, 4, 2) in that order; `fullres_skip`
// is the CNN full-resolution map, or null when the active branch has no
// full-resolution level. Aux heads tap the decoder outputs at factors 2/4/8.
DecoderOutput decoder_forward(const Tensor5& bottleneck,
                              const std::vector<Tensor5>& skips,
                              const Tensor5* fullres_skip, ParamStore& params,
                              const ModelConfig& config);

// Channel-wise softmax at every voxel, row-max stabilized.
Tensor5 softmax_channels(const Tensor5& logits);

// Stacks the four modalities into a (1, 4, D, H, W) tensor.
Tensor5 tensor_from_volume(const MultiModalVolume& volume);

struct ForwardResult {
    Tensor5 probabilities;            // softmax over classes
    Tensor5 logits;
    std::vector<Tensor5> aux_logits;  // 1/2, 1/4, 1/8
};

// End-to-end forward pass: encoders, per-level fusion (skipped under the
// single-branch ablations, which feed the surviving pyramid to the decoder),
// decoder, softmax. Each fused map receives the CNN features of its level as
// a residual, so a zero-weighted fusion projection reduces the full mode to
// cnn_only exactly. The swin_only mode has no full-resolution skip.
ForwardResult infiltrnet_forward(const MultiModalVolume& volume, ParamStore& params,
                                 const ModelConfig& config, AblationMode mode,
                                 const GlobalEncoder* global_encoder = nullptr);
ForwardResult infiltrnet_forward(const Tensor5& input, ParamStore& params,
                                 const ModelConfig& config, AblationMode mode,
                                 const GlobalEncoder* global_encoder = nullptr);

}  // namespace infil
