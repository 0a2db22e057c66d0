#include "infil/netref.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "infil/parallel.hpp"

namespace infil {

std::array<std::int64_t, 5> ModelConfig::cnn_channels() const {
    const std::int64_t c = base_filters;
    return {c, c, 2 * c, 4 * c, 8 * c};
}

std::array<std::int64_t, 4> ModelConfig::global_channels() const {
    const std::int64_t f = swin_feature;
    return {f, 2 * f, 4 * f, 8 * f};
}

std::int64_t ModelConfig::fusion_dim(int factor) const {
    switch (factor) {
        case 2: return base_filters;
        case 4: return 2 * base_filters;
        case 8: return 4 * base_filters;
        case 16: return 8 * base_filters;
    }
    throw Error("netref", "no fusion level at factor " + std::to_string(factor));
}

void ModelConfig::validate() const {
    if (base_filters < 1)
        throw Error("netref", "base_filters must be >= 1, got " +
                                  std::to_string(base_filters));
    if (swin_feature < 1)
        throw Error("netref", "swin_feature must be >= 1, got " +
                                  std::to_string(swin_feature));
    if (num_classes < 2)
        throw Error("netref", "num_classes must be >= 2, got " +
                                  std::to_string(num_classes));
    if (leaky_slope < 0.0 || leaky_slope >= 1.0)
        throw Error("netref", "leaky_slope must be in [0, 1)");
    if (norm_epsilon <= 0.0)
        throw Error("netref", "norm_epsilon must be > 0");
}

const Tensor5& EncoderPyramid::at_factor(int factor) const {
    for (const auto& level : levels)
        if (level.factor == factor) return level.features;
    throw Error("netref", "pyramid has no level at factor " + std::to_string(factor));
}

Tensor5 conv3d_forward(const Tensor5& input, const Tensor5& weight, const Tensor5& bias,
                       int stride, int padding, const std::string& layer) {
    const std::int64_t oc = weight.shape[0];
    const std::int64_t ic = weight.shape[1];
    const std::int64_t k = weight.shape[2];
    if (weight.shape[3] != k || weight.shape[4] != k)
        throw Error("netref", layer + ": only cubic kernels are supported");
    if (input.c() != ic)
        throw Error("netref", layer + ": input has " + std::to_string(input.c()) +
                                  " channels, weight expects " + std::to_string(ic));
    if (bias.shape != std::array<std::int64_t, 5>{1, oc, 1, 1, 1})
        throw Error("netref", layer + ": bias shape must be (1, oc, 1, 1, 1)");
    if (stride < 1 || padding < 0)
        throw Error("netref", layer + ": invalid stride or padding");

    const std::int64_t n = input.n();
    const std::int64_t in_d = input.d(), in_h = input.h(), in_w = input.w();
    const std::int64_t out_d = (in_d + 2 * padding - k) / stride + 1;
    const std::int64_t out_h = (in_h + 2 * padding - k) / stride + 1;
    const std::int64_t out_w = (in_w + 2 * padding - k) / stride + 1;
    if (out_d < 1 || out_h < 1 || out_w < 1)
        throw Error("netref", layer + ": kernel does not fit the input extent");

    Tensor5 out(n, oc, out_d, out_h, out_w);
    const double* in_base = input.data.data();
    const double* w_base = weight.data.data();
    double* out_base = out.data.data();

    // Valid ow range for a fixed kernel offset kw: stride*ow - padding + kw
    // must land in [0, in_w). Floor division handles negative numerators.
    auto floor_div = [](std::int64_t a, std::int64_t b) {
        return a >= 0 ? a / b : -((-a + b - 1) / b);
    };

    parallel_for(0, n * oc * out_d, [&](std::int64_t nod) {
        const std::int64_t od = nod % out_d;
        const std::int64_t no = nod / out_d;
        const std::int64_t b = no / oc;
        const std::int64_t o = no % oc;
        const double bias_v = bias.data[static_cast<std::size_t>(o)];
        for (std::int64_t oh = 0; oh < out_h; ++oh) {
            double* out_row =
                out_base + (((b * oc + o) * out_d + od) * out_h + oh) * out_w;
            for (std::int64_t ow = 0; ow < out_w; ++ow) out_row[ow] = bias_v;
            for (std::int64_t i = 0; i < ic; ++i) {
                for (std::int64_t kd = 0; kd < k; ++kd) {
                    const std::int64_t id = od * stride - padding + kd;
                    if (id < 0 || id >= in_d) continue;
                    for (std::int64_t kh = 0; kh < k; ++kh) {
                        const std::int64_t ih = oh * stride - padding + kh;
                        if (ih < 0 || ih >= in_h) continue;
                        const double* in_row =
                            in_base + (((b * ic + i) * in_d + id) * in_h + ih) * in_w;
                        const double* w_row =
                            w_base + (((o * ic + i) * k + kd) * k + kh) * k;
                        for (std::int64_t kw = 0; kw < k; ++kw) {
                            const double wv = w_row[kw];
                            const std::int64_t lo = std::max<std::int64_t>(
                                0, floor_div(padding - kw + stride - 1, stride));
                            const std::int64_t hi = std::min(
                                out_w - 1, floor_div(in_w - 1 + padding - kw, stride));
                            const std::int64_t base = kw - padding;
                            for (std::int64_t ow = lo; ow <= hi; ++ow)
                                out_row[ow] += in_row[base + ow * stride] * wv;
                        }
                    }
                }
            }
        }
    });
    return out;
}

Tensor5 transposed_conv3d_x2(const Tensor5& input, const Tensor5& weight,
                             const Tensor5& bias, const std::string& layer) {
    const std::int64_t ic = weight.shape[0];
    const std::int64_t oc = weight.shape[1];
    if (weight.shape[2] != 2 || weight.shape[3] != 2 || weight.shape[4] != 2)
        throw Error("netref", layer + ": transposed kernel must be 2x2x2");
    if (input.c() != ic)
        throw Error("netref", layer + ": input has " + std::to_string(input.c()) +
                                  " channels, weight expects " + std::to_string(ic));
    if (bias.shape != std::array<std::int64_t, 5>{1, oc, 1, 1, 1})
        throw Error("netref", layer + ": bias shape must be (1, oc, 1, 1, 1)");

    const std::int64_t n = input.n();
    const std::int64_t in_d = input.d(), in_h = input.h(), in_w = input.w();
    Tensor5 out(n, oc, 2 * in_d, 2 * in_h, 2 * in_w);

    parallel_for(0, n * oc * 2 * in_d, [&](std::int64_t nod) {
        const std::int64_t od = nod % (2 * in_d);
        const std::int64_t no = nod / (2 * in_d);
        const std::int64_t b = no / oc;
        const std::int64_t o = no % oc;
        const double bias_v = bias.data[static_cast<std::size_t>(o)];
        const std::int64_t id = od / 2, kd = od % 2;
        for (std::int64_t oh = 0; oh < 2 * in_h; ++oh) {
            const std::int64_t ih = oh / 2, kh = oh % 2;
            for (std::int64_t ow = 0; ow < 2 * in_w; ++ow) {
                const std::int64_t iw = ow / 2, kw = ow % 2;
                double acc = bias_v;
                for (std::int64_t i = 0; i < ic; ++i)
                    acc += input.at(b, i, id, ih, iw) *
                           weight.data[static_cast<std::size_t>(
                               (((i * oc + o) * 2 + kd) * 2 + kh) * 2 + kw)];
                out.at(b, o, od, oh, ow) = acc;
            }
        }
    });
    return out;
}

Tensor5 instance_norm(const Tensor5& input, double epsilon) {
    Tensor5 out(input.n(), input.c(), input.d(), input.h(), input.w());
    const std::int64_t spatial = input.spatial_size();
    parallel_for(0, input.n() * input.c(), [&](std::int64_t nc) {
        const double* src = input.data.data() + nc * spatial;
        double* dst = out.data.data() + nc * spatial;
        double mean = 0.0;
        for (std::int64_t s = 0; s < spatial; ++s) mean += src[s];
        mean /= static_cast<double>(spatial);
        double var = 0.0;
        for (std::int64_t s = 0; s < spatial; ++s) {
            const double d = src[s] - mean;
            var += d * d;
        }
        var /= static_cast<double>(spatial);
        const double inv = 1.0 / std::sqrt(var + epsilon);
        for (std::int64_t s = 0; s < spatial; ++s) dst[s] = (src[s] - mean) * inv;
    });
    return out;
}

Tensor5 leaky_relu(const Tensor5& input, double slope) {
    Tensor5 out = input;
    for (auto& v : out.data) v = v >= 0.0 ? v : slope * v;
    return out;
}

namespace {

Tensor5 conv_layer(const Tensor5& input, ParamStore& params, const std::string& name,
                   std::int64_t out_channels, int k, int stride, int padding) {
    const std::int64_t ic = input.c();
    Tensor5& w =
        params.param(name + ".weight", {out_channels, ic, k, k, k}, ic * k * k * k);
    Tensor5& b = params.param(name + ".bias", {1, out_channels, 1, 1, 1}, ic * k * k * k);
    return conv3d_forward(input, w, b, stride, padding, name);
}

Tensor5 norm_act(const Tensor5& input, const ModelConfig& config) {
    return leaky_relu(instance_norm(input, config.norm_epsilon), config.leaky_slope);
}

}  // namespace

Tensor5 residual_block(const Tensor5& input, ParamStore& params, const std::string& name,
                       std::int64_t out_channels, const ModelConfig& config) {
    Tensor5 branch = norm_act(conv_layer(input, params, name + ".conv1", out_channels,
                                         3, 1, 1),
                              config);
    branch = instance_norm(conv_layer(branch, params, name + ".conv2", out_channels,
                                      3, 1, 1),
                           config.norm_epsilon);
    const Tensor5* skip = &input;
    Tensor5 projected;
    if (input.c() != out_channels) {
        projected = conv_layer(input, params, name + ".skip", out_channels, 1, 1, 0);
        skip = &projected;
    }
    for (std::size_t i = 0; i < branch.data.size(); ++i) branch.data[i] += skip->data[i];
    return leaky_relu(branch, config.leaky_slope);
}

namespace {

void require_divisible_by_16(const Tensor5& input, const char* branch) {
    if (input.d() % 16 != 0 || input.h() % 16 != 0 || input.w() % 16 != 0)
        throw Error("netref", std::string(branch) +
                                  ": spatial dims must be divisible by 16; pad the "
                                  "input before the forward pass");
}

}  // namespace

EncoderPyramid cnn_encoder_forward(const Tensor5& input, ParamStore& params,
                                   const ModelConfig& config) {
    config.validate();
    require_divisible_by_16(input, "cnn encoder");
    const auto channels = config.cnn_channels();

    EncoderPyramid pyramid;
    Tensor5 x = residual_block(input, params, "cnn.level1", channels[0], config);
    pyramid.levels.push_back({1, x});
    int factor = 1;
    for (int stage = 1; stage <= 4; ++stage) {
        factor *= 2;
        const std::string tag = "cnn.down" + std::to_string(factor);
        x = norm_act(conv_layer(x, params, tag, channels[stage], 3, 2, 1), config);
        x = residual_block(x, params, "cnn.level" + std::to_string(factor),
                           channels[stage], config);
        pyramid.levels.push_back({factor, x});
    }
    return pyramid;
}

EncoderPyramid StridedConvGlobalEncoder::forward(const Tensor5& input, ParamStore& params,
                                                 const ModelConfig& config) const {
    require_divisible_by_16(input, "global encoder");
    const auto channels = config.global_channels();
    EncoderPyramid pyramid;
    Tensor5 x = input;
    int factor = 1;
    for (int stage = 0; stage < 4; ++stage) {
        factor *= 2;
        const std::string tag = "glob.down" + std::to_string(factor);
        x = norm_act(conv_layer(x, params, tag, channels[stage], 3, 2, 1), config);
        pyramid.levels.push_back({factor, x});
    }
    return pyramid;
}

void validate_global_pyramid(const EncoderPyramid& pyramid, const ModelConfig& config,
                             std::int64_t in_d, std::int64_t in_h, std::int64_t in_w) {
    const auto channels = config.global_channels();
    if (pyramid.levels.size() != 4)
        throw Error("netref", "global pyramid must have 4 levels, got " +
                                  std::to_string(pyramid.levels.size()));
    int expect_factor = 1;
    for (std::size_t i = 0; i < 4; ++i) {
        expect_factor *= 2;
        const auto& level = pyramid.levels[i];
        if (level.factor != expect_factor)
            throw Error("netref", "global pyramid level " + std::to_string(i) +
                                      " has factor " + std::to_string(level.factor) +
                                      ", expected " + std::to_string(expect_factor));
        if (level.features.c() != channels[i])
            throw Error("netref", "global pyramid level " + std::to_string(i) +
                                      " has " + std::to_string(level.features.c()) +
                                      " channels, expected " +
                                      std::to_string(channels[i]));
        if (level.features.d() != in_d / expect_factor ||
            level.features.h() != in_h / expect_factor ||
            level.features.w() != in_w / expect_factor)
            throw Error("netref", "global pyramid level " + std::to_string(i) +
                                      " spatial dims disagree with input/factor");
        if (!level.features.all_finite())
            throw Error("netref", "global pyramid level " + std::to_string(i) +
                                      " contains non-finite values");
    }
}

EncoderPyramid global_encoder_forward(const Tensor5& input, ParamStore& params,
                                      const ModelConfig& config,
                                      const GlobalEncoder* encoder) {
    config.validate();
    require_divisible_by_16(input, "global encoder");
    StridedConvGlobalEncoder stand_in;
    const GlobalEncoder& impl = encoder ? *encoder : stand_in;
    EncoderPyramid pyramid = impl.forward(input, params, config);
    validate_global_pyramid(pyramid, config, input.d(), input.h(), input.w());
    return pyramid;
}

TokenMatrix scaled_dot_attention(const TokenMatrix& q, const TokenMatrix& k,
                                 const TokenMatrix& v, double scale_dim) {
    if (q.cols != k.cols)
        throw Error("netref", "attention: Q and K feature dims disagree");
    if (k.rows != v.rows)
        throw Error("netref", "attention: K and V token counts disagree");
    if (scale_dim <= 0.0) throw Error("netref", "attention: scale dim must be > 0");

    TokenMatrix out(q.rows, v.cols);
    const double inv_scale = 1.0 / std::sqrt(scale_dim);
    parallel_for(0, q.rows, [&](std::int64_t r) {
        std::vector<double> scores(static_cast<std::size_t>(k.rows));
        const double* qr = q.row(r);
        double row_max = -std::numeric_limits<double>::infinity();
        for (std::int64_t j = 0; j < k.rows; ++j) {
            const double* kr = k.row(j);
            double dot = 0.0;
            for (std::int64_t c = 0; c < q.cols; ++c) dot += qr[c] * kr[c];
            scores[static_cast<std::size_t>(j)] = dot * inv_scale;
            row_max = std::max(row_max, scores[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (auto& s : scores) {
            s = std::exp(s - row_max);
            denom += s;
        }
        double* orow = out.row(r);
        for (std::int64_t j = 0; j < k.rows; ++j) {
            const double wgt = scores[static_cast<std::size_t>(j)] / denom;
            const double* vr = v.row(j);
            for (std::int64_t c = 0; c < v.cols; ++c) orow[c] += wgt * vr[c];
        }
    });
    return out;
}

Tensor5 cross_attention_concat(const Tensor5& cnn_features,
                               const Tensor5& global_features, ParamStore& params,
                               const std::string& name, std::int64_t d_l) {
    if (cnn_features.d() != global_features.d() ||
        cnn_features.h() != global_features.h() ||
        cnn_features.w() != global_features.w())
        throw Error("netref", name + ": fusion inputs disagree on spatial dims");

    Tensor5 proj_c = conv_layer(cnn_features, params, name + ".proj_c", d_l, 1, 1, 0);
    Tensor5 proj_s = conv_layer(global_features, params, name + ".proj_s", d_l, 1, 1, 0);

    TokenMatrix tc = tokens_from_feature_map(proj_c);
    TokenMatrix ts = tokens_from_feature_map(proj_s);
    TokenMatrix c_attends_s = scaled_dot_attention(tc, ts, ts,
                                                   static_cast<double>(d_l));
    TokenMatrix s_attends_c = scaled_dot_attention(ts, tc, tc,
                                                   static_cast<double>(d_l));

    Tensor5 out(1, 2 * d_l, cnn_features.d(), cnn_features.h(), cnn_features.w());
    const std::int64_t spatial = out.spatial_size();
    for (std::int64_t c = 0; c < d_l; ++c)
        for (std::int64_t s = 0; s < spatial; ++s) {
            out.data[static_cast<std::size_t>(c * spatial + s)] = c_attends_s.at(s, c);
            out.data[static_cast<std::size_t>((d_l + c) * spatial + s)] =
                s_attends_c.at(s, c);
        }
    return out;
}

Tensor5 cross_attention_fuse(const Tensor5& cnn_features, const Tensor5& global_features,
                             ParamStore& params, const std::string& name,
                             std::int64_t d_l, const ModelConfig& config) {
    Tensor5 concat =
        cross_attention_concat(cnn_features, global_features, params, name, d_l);
    return norm_act(conv_layer(concat, params, name + ".proj_out", d_l, 1, 1, 0),
                    config);
}

const char* ablation_mode_name(AblationMode mode) {
    switch (mode) {
        case AblationMode::full: return "full";
        case AblationMode::cnn_only: return "cnn_only";
        case AblationMode::swin_only: return "swin_only";
    }
    throw Error("netref", "unknown ablation mode");
}

AblationMode ablation_mode_from_name(const std::string& name) {
    if (name == "full") return AblationMode::full;
    if (name == "cnn_only") return AblationMode::cnn_only;
    if (name == "swin_only") return AblationMode::swin_only;
    throw Error("netref", "unknown ablation mode '" + name +
                              "' (expected full, cnn_only, or swin_only)");
}

namespace {

Tensor5 concat_channels(const Tensor5& a, const Tensor5& b, const std::string& layer) {
    if (a.n() != b.n() || a.d() != b.d() || a.h() != b.h() || a.w() != b.w())
        throw Error("netref", layer + ": concat inputs disagree on dims");
    Tensor5 out(a.n(), a.c() + b.c(), a.d(), a.h(), a.w());
    const std::int64_t spatial = a.spatial_size();
    for (std::int64_t n = 0; n < a.n(); ++n) {
        double* dst = out.data.data() + n * out.c() * spatial;
        const double* sa = a.data.data() + n * a.c() * spatial;
        const double* sb = b.data.data() + n * b.c() * spatial;
        std::copy(sa, sa + a.c() * spatial, dst);
        std::copy(sb, sb + b.c() * spatial, dst + a.c() * spatial);
    }
    return out;
}

}  // namespace

DecoderOutput decoder_forward(const Tensor5& bottleneck,
                              const std::vector<Tensor5>& skips,
                              const Tensor5* fullres_skip, ParamStore& params,
                              const ModelConfig& config) {
    if (skips.size() != 3)
        throw Error("netref", "decoder expects skips at factors (8, 4, 2), got " +
                                  std::to_string(skips.size()));

    DecoderOutput out;
    out.aux_logits.resize(3);
    Tensor5 x = bottleneck;
    const int factors[3] = {8, 4, 2};
    for (int i = 0; i < 3; ++i) {
        const int factor = factors[i];
        const std::string tag = "decoder.up" + std::to_string(factor);
        const Tensor5& skip = skips[static_cast<std::size_t>(i)];
        Tensor5& w = params.param(tag + ".weight", {x.c(), skip.c(), 2, 2, 2},
                                  x.c() * 8);
        Tensor5& b = params.param(tag + ".bias", {1, skip.c(), 1, 1, 1}, x.c() * 8);
        x = transposed_conv3d_x2(x, w, b, tag);
        if (x.d() != skip.d() || x.h() != skip.h() || x.w() != skip.w())
            throw Error("netref", tag + ": skip spatial dims disagree with the "
                                        "upsample chain");
        x = concat_channels(x, skip, tag);
        const std::string block = "decoder.block" + std::to_string(factor);
        x = norm_act(conv_layer(x, params, block + ".conv1", skip.c(), 3, 1, 1),
                     config);
        x = norm_act(conv_layer(x, params, block + ".conv2", skip.c(), 3, 1, 1),
                     config);
        // Aux heads at 1/8, 1/4, 1/2 of full resolution; returned order is
        // 1/2, 1/4, 1/8.
        out.aux_logits[static_cast<std::size_t>(2 - i)] =
            conv_layer(x, params, "decoder.aux" + std::to_string(factor),
                       config.num_classes, 1, 1, 0);
    }

    // Final level to full resolution.
    {
        const std::int64_t up_c = fullres_skip ? fullres_skip->c() : x.c();
        Tensor5& w = params.param("decoder.up1.weight", {x.c(), up_c, 2, 2, 2},
                                  x.c() * 8);
        Tensor5& b = params.param("decoder.up1.bias", {1, up_c, 1, 1, 1}, x.c() * 8);
        x = transposed_conv3d_x2(x, w, b, "decoder.up1");
        if (fullres_skip) {
            if (x.d() != fullres_skip->d() || x.h() != fullres_skip->h() ||
                x.w() != fullres_skip->w())
                throw Error("netref", "decoder.up1: full-resolution skip dims "
                                      "disagree with the upsample chain");
            x = concat_channels(x, *fullres_skip, "decoder.up1");
        }
        x = norm_act(conv_layer(x, params, "decoder.block1.conv1", up_c, 3, 1, 1),
                     config);
        x = norm_act(conv_layer(x, params, "decoder.block1.conv2", up_c, 3, 1, 1),
                     config);
    }
    out.logits = conv_layer(x, params, "decoder.head", config.num_classes, 1, 1, 0);
    return out;
}

Tensor5 softmax_channels(const Tensor5& logits) {
    Tensor5 out(logits.n(), logits.c(), logits.d(), logits.h(), logits.w());
    const std::int64_t spatial = logits.spatial_size();
    const std::int64_t classes = logits.c();
    parallel_for(0, logits.n() * spatial, [&](std::int64_t ns) {
        const std::int64_t n = ns / spatial;
        const std::int64_t s = ns % spatial;
        const double* src = logits.data.data() + n * classes * spatial + s;
        double* dst = out.data.data() + n * classes * spatial + s;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::int64_t c = 0; c < classes; ++c)
            mx = std::max(mx, src[c * spatial]);
        double denom = 0.0;
        for (std::int64_t c = 0; c < classes; ++c) {
            const double e = std::exp(src[c * spatial] - mx);
            dst[c * spatial] = e;
            denom += e;
        }
        for (std::int64_t c = 0; c < classes; ++c) dst[c * spatial] /= denom;
    });
    return out;
}

Tensor5 tensor_from_volume(const MultiModalVolume& volume) {
    volume.validate();
    const auto& first = volume.modalities[0];
    Tensor5 input(1, 4, first.depth(), first.height(), first.width());
    const std::int64_t spatial = input.spatial_size();
    for (int m = 0; m < 4; ++m)
        std::copy(volume.modalities[static_cast<std::size_t>(m)].data().begin(),
                  volume.modalities[static_cast<std::size_t>(m)].data().end(),
                  input.data.begin() + m * spatial);
    return input;
}

ForwardResult infiltrnet_forward(const Tensor5& input, ParamStore& params,
                                 const ModelConfig& config, AblationMode mode,
                                 const GlobalEncoder* global_encoder) {
    config.validate();
    if (input.c() != 4)
        throw Error("netref", "forward pass expects 4 input modalities, got " +
                                  std::to_string(input.c()));

    const Tensor5* bottleneck = nullptr;
    std::vector<Tensor5> skips;
    const Tensor5* fullres = nullptr;

    EncoderPyramid cnn, glob;
    std::vector<Tensor5> fused;
    if (mode != AblationMode::swin_only) cnn = cnn_encoder_forward(input, params, config);
    if (mode != AblationMode::cnn_only)
        glob = global_encoder_forward(input, params, config, global_encoder);

    switch (mode) {
        case AblationMode::full: {
            fused.reserve(4);
            for (int factor : {16, 8, 4, 2}) {
                const Tensor5& c_l = cnn.at_factor(factor);
                Tensor5 f = cross_attention_fuse(
                    c_l, glob.at_factor(factor), params,
                    "fusion.level" + std::to_string(factor), config.fusion_dim(factor),
                    config);
                // Residual from the CNN branch: with a zero-weighted fusion
                // projection the fused map degenerates to the CNN features,
                // making the full mode collapse to cnn_only exactly.
                for (std::size_t i = 0; i < f.data.size(); ++i)
                    f.data[i] += c_l.data[i];
                fused.push_back(std::move(f));
            }
            bottleneck = &fused[0];
            skips = {fused[1], fused[2], fused[3]};
            fullres = &cnn.at_factor(1);
            break;
        }
        case AblationMode::cnn_only:
            bottleneck = &cnn.at_factor(16);
            skips = {cnn.at_factor(8), cnn.at_factor(4), cnn.at_factor(2)};
            fullres = &cnn.at_factor(1);
            break;
        case AblationMode::swin_only:
            bottleneck = &glob.at_factor(16);
            skips = {glob.at_factor(8), glob.at_factor(4), glob.at_factor(2)};
            fullres = nullptr;
            break;
    }

    DecoderOutput decoded = decoder_forward(*bottleneck, skips, fullres, params, config);
    ForwardResult result;
    result.probabilities = softmax_channels(decoded.logits);
    result.logits = std::move(decoded.logits);
    result.aux_logits = std::move(decoded.aux_logits);
    return result;
}

ForwardResult infiltrnet_forward(const MultiModalVolume& volume, ParamStore& params,
                                 const ModelConfig& config, AblationMode mode,
                                 const GlobalEncoder* global_encoder) {
    return infiltrnet_forward(tensor_from_volume(volume), params, config, mode,
                              global_encoder);
}

}  // namespace infil
