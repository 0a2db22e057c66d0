#include <doctest.h>

#include <cmath>
#include <numeric>

#include "infil/netref.hpp"
#include "infil/rng.hpp"
#include "support/oracles.hpp"

using namespace infil;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

Tensor5 zero_bias(std::int64_t oc) { return Tensor5(1, oc, 1, 1, 1); }

ModelConfig tiny_config(int c, int f) {
    ModelConfig cfg;
    cfg.base_filters = c;
    cfg.swin_feature = f;
    return cfg;
}

}  // namespace

TEST_CASE("conv3d with identity 1x1x1 kernel reproduces the input") {
    auto input = testsupport::random_tensor(1, 3, 4, 4, 4, 1);
    Tensor5 w(3, 3, 1, 1, 1);
    for (std::int64_t o = 0; o < 3; ++o) w.at(o, o, 0, 0, 0) = 1.0;
    auto out = conv3d_forward(input, w, zero_bias(3), 1, 0, "identity");
    CHECK(out.shape == input.shape);
    CHECK(out.data == input.data);
}

TEST_CASE("conv3d all-ones 3x3x3 kernel counts the covered voxels") {
    Tensor5 input(1, 1, 5, 5, 5, 1.0);
    Tensor5 w(1, 1, 3, 3, 3, 1.0);
    auto out = conv3d_forward(input, w, zero_bias(1), 1, 1, "ones");
    CHECK(out.at(0, 0, 2, 2, 2) == 27.0);  // interior
    CHECK(out.at(0, 0, 0, 0, 0) == 8.0);   // corner
    CHECK(out.at(0, 0, 0, 0, 2) == 12.0);  // edge
    CHECK(out.at(0, 0, 0, 2, 2) == 18.0);  // face
}

TEST_CASE("conv3d matches the naive 7-loop oracle") {
    auto input = testsupport::random_tensor(2, 2, 4, 5, 6, 42);
    SplitMix64 rng(7);

    for (auto [k, stride, padding] :
         {std::array<int, 3>{3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {3, 1, 0}, {3, 2, 0}}) {
        Tensor5 w(3, 2, k, k, k);
        for (auto& v : w.data) v = rng.uniform(-1, 1);
        Tensor5 b(1, 3, 1, 1, 1);
        for (auto& v : b.data) v = rng.uniform(-1, 1);

        auto fast = conv3d_forward(input, w, b, stride, padding, "test");
        auto naive = testsupport::naive_conv3d(input, w, b, stride, padding);
        CHECK(fast.shape == naive.shape);
        CHECK(max_abs_diff(fast.data, naive.data) < 1e-6);
    }
}

TEST_CASE("conv3d error messages name the layer") {
    auto input = testsupport::random_tensor(1, 2, 4, 4, 4, 3);
    Tensor5 w(3, 5, 3, 3, 3);
    try {
        conv3d_forward(input, w, zero_bias(3), 1, 1, "cnn.level1.conv1");
        FAIL("expected throw");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("cnn.level1.conv1") != std::string::npos);
        CHECK(e.stage() == "netref");
    }
}

TEST_CASE("transposed conv matches the scatter oracle and doubles dims") {
    auto input = testsupport::random_tensor(1, 3, 3, 4, 2, 15);
    SplitMix64 rng(16);
    Tensor5 w(3, 2, 2, 2, 2);
    for (auto& v : w.data) v = rng.uniform(-1, 1);
    Tensor5 b(1, 2, 1, 1, 1);
    for (auto& v : b.data) v = rng.uniform(-1, 1);

    auto fast = transposed_conv3d_x2(input, w, b, "up");
    auto naive = testsupport::naive_transposed_conv3d_x2(input, w, b);
    CHECK(fast.d() == 6);
    CHECK(fast.h() == 8);
    CHECK(fast.w() == 4);
    CHECK(max_abs_diff(fast.data, naive.data) < 1e-9);
}

TEST_CASE("instance norm standardizes per sample and channel") {
    // Constant channel: zero-variance guard yields zeros.
    Tensor5 constant(1, 1, 3, 3, 3, 5.0);
    auto z = instance_norm(constant, 1e-5);
    for (double v : z.data) CHECK(v == 0.0);

    // Random channel: mean ~0, variance ~1.
    auto t = testsupport::random_tensor(2, 3, 4, 4, 4, 99);
    auto n = instance_norm(t, 1e-5);
    const std::int64_t spatial = t.spatial_size();
    for (std::int64_t nc = 0; nc < 6; ++nc) {
        const double* p = n.data.data() + nc * spatial;
        double mean = std::accumulate(p, p + spatial, 0.0) / spatial;
        double var = 0.0;
        for (std::int64_t s = 0; s < spatial; ++s) var += (p[s] - mean) * (p[s] - mean);
        var /= spatial;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(var - 1.0) < 1e-4);
    }

    // Idempotence on already-normalized input. Epsilon shrinks the output
    // variance to var/(var+eps), so the check uses a tiny epsilon to measure
    // the algorithm rather than the guard term.
    auto exact = instance_norm(t, 1e-12);
    auto again = instance_norm(exact, 1e-12);
    CHECK(max_abs_diff(again.data, exact.data) < 1e-6);
}

TEST_CASE("residual block with zero weights passes LeakyReLU(input) through") {
    ModelConfig cfg = tiny_config(3, 2);
    auto input = testsupport::random_tensor(1, 3, 4, 4, 4, 55);
    ParamStore params(1);
    // Instantiate and zero every block parameter.
    (void)residual_block(input, params, "blk", 3, cfg);
    for (const char* leaf : {"blk.conv1.weight", "blk.conv1.bias", "blk.conv2.weight",
                             "blk.conv2.bias"})
        for (auto& v : params.existing(leaf).data) v = 0.0;

    auto out = residual_block(input, params, "blk", 3, cfg);
    auto expect = leaky_relu(input, cfg.leaky_slope);
    CHECK(out.data == expect.data);
}

TEST_CASE("residual block equals the composition of tested primitives") {
    ModelConfig cfg = tiny_config(4, 2);
    auto input = testsupport::random_tensor(1, 3, 4, 4, 4, 60);
    ParamStore params(9);
    auto out = residual_block(input, params, "rb", 4, cfg);
    CHECK(out.shape == std::array<std::int64_t, 5>{1, 4, 4, 4, 4});

    auto c1 = conv3d_forward(input, params.existing("rb.conv1.weight"),
                             params.existing("rb.conv1.bias"), 1, 1, "o");
    auto a1 = leaky_relu(instance_norm(c1, cfg.norm_epsilon), cfg.leaky_slope);
    auto c2 = conv3d_forward(a1, params.existing("rb.conv2.weight"),
                             params.existing("rb.conv2.bias"), 1, 1, "o");
    auto n2 = instance_norm(c2, cfg.norm_epsilon);
    auto skip = conv3d_forward(input, params.existing("rb.skip.weight"),
                               params.existing("rb.skip.bias"), 1, 0, "o");
    for (std::size_t i = 0; i < n2.data.size(); ++i) n2.data[i] += skip.data[i];
    auto expect = leaky_relu(n2, cfg.leaky_slope);
    CHECK(max_abs_diff(out.data, expect.data) == 0.0);
}

TEST_CASE("cnn encoder pyramid follows the (C,C,2C,4C,8C) schedule") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 32, 16, 16, 70);
    ParamStore params(3);
    auto pyr = cnn_encoder_forward(input, params, cfg);

    REQUIRE(pyr.levels.size() == 5);
    const std::int64_t expect_c[5] = {2, 2, 4, 8, 16};
    int factor = 1;
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(pyr.levels[i].factor == factor);
        CHECK(pyr.levels[i].features.c() == expect_c[i]);
        CHECK(pyr.levels[i].features.d() == 32 / factor);
        CHECK(pyr.levels[i].features.h() == 16 / factor);
        CHECK(pyr.levels[i].features.w() == 16 / factor);
        CHECK(pyr.levels[i].features.all_finite());
        factor *= 2;
    }

    // C=1 scales the schedule to (1,1,2,4,8).
    ModelConfig small = tiny_config(1, 1);
    ParamStore p2(4);
    auto pyr1 = cnn_encoder_forward(input, p2, small);
    CHECK(pyr1.levels[0].features.c() == 1);
    CHECK(pyr1.levels[2].features.c() == 2);
    CHECK(pyr1.levels[4].features.c() == 8);

    // Indivisible dims are rejected with a padding hint.
    auto bad = testsupport::random_tensor(1, 4, 24, 16, 16, 71);
    ParamStore p3(5);
    CHECK_THROWS_WITH_AS(cnn_encoder_forward(bad, p3, cfg),
                         doctest::Contains("pad"), Error);
}

TEST_CASE("global encoder stand-in follows the (F,2F,4F,8F) schedule") {
    ModelConfig cfg = tiny_config(2, 3);
    auto input = testsupport::random_tensor(1, 4, 16, 16, 32, 80);
    ParamStore params(6);
    auto pyr = global_encoder_forward(input, params, cfg);

    REQUIRE(pyr.levels.size() == 4);
    const std::int64_t expect_c[4] = {3, 6, 12, 24};
    int factor = 2;
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(pyr.levels[i].factor == factor);
        CHECK(pyr.levels[i].features.c() == expect_c[i]);
        CHECK(pyr.levels[i].features.d() == 16 / factor);
        CHECK(pyr.levels[i].features.w() == 32 / factor);
        factor *= 2;
    }

    // Shared levels line up spatially with the CNN pyramid.
    ParamStore p2(7);
    auto cnn = cnn_encoder_forward(input, p2, cfg);
    for (int f : {2, 4, 8, 16}) {
        CHECK(cnn.at_factor(f).d() == pyr.at_factor(f).d());
        CHECK(cnn.at_factor(f).h() == pyr.at_factor(f).h());
        CHECK(cnn.at_factor(f).w() == pyr.at_factor(f).w());
    }
}

namespace {

// Deliberately broken plug-in: wrong channel schedule.
class BadGlobalEncoder final : public GlobalEncoder {
public:
    EncoderPyramid forward(const Tensor5& input, ParamStore& params,
                           const ModelConfig& config) const override {
        StridedConvGlobalEncoder ok;
        auto pyr = ok.forward(input, params, config);
        pyr.levels[1].features = Tensor5(1, 1, pyr.levels[1].features.d(),
                                         pyr.levels[1].features.h(),
                                         pyr.levels[1].features.w());
        return pyr;
    }
};

}  // namespace

TEST_CASE("plugged global encoder violating the pyramid contract is rejected") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 16, 16, 16, 81);
    ParamStore params(8);
    BadGlobalEncoder bad;
    CHECK_THROWS_WITH_AS(global_encoder_forward(input, params, cfg, &bad),
                         doctest::Contains("channels"), Error);
}

TEST_CASE("attention single key collapses to the value row") {
    SplitMix64 rng(5);
    TokenMatrix q(3, 4), k(1, 4), v(1, 5);
    for (auto& x : q.data) x = rng.uniform(-2, 2);
    for (auto& x : k.data) x = rng.uniform(-2, 2);
    for (auto& x : v.data) x = rng.uniform(-2, 2);
    auto out = scaled_dot_attention(q, k, v, 4.0);
    for (std::int64_t r = 0; r < 3; ++r)
        for (std::int64_t c = 0; c < 5; ++c) CHECK(out.at(r, c) == v.at(0, c));
}

TEST_CASE("attention with identical keys averages the values") {
    SplitMix64 rng(6);
    TokenMatrix q(2, 3), k(5, 3), v(5, 2);
    for (auto& x : q.data) x = rng.uniform(-2, 2);
    for (std::int64_t c = 0; c < 3; ++c) {
        double val = rng.uniform(-2, 2);
        for (std::int64_t j = 0; j < 5; ++j) k.at(j, c) = val;
    }
    for (auto& x : v.data) x = rng.uniform(-2, 2);
    auto out = scaled_dot_attention(q, k, v, 3.0);
    for (std::int64_t c = 0; c < 2; ++c) {
        double mean = 0.0;
        for (std::int64_t j = 0; j < 5; ++j) mean += v.at(j, c) / 5.0;
        for (std::int64_t r = 0; r < 2; ++r)
            CHECK(out.at(r, c) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("attention matches the naive oracle on random matrices") {
    for (std::uint64_t seed : {21u, 22u, 23u}) {
        SplitMix64 rng(seed);
        TokenMatrix q(8, 4), k(6, 4), v(6, 7);
        for (auto& x : q.data) x = rng.uniform(-3, 3);
        for (auto& x : k.data) x = rng.uniform(-3, 3);
        for (auto& x : v.data) x = rng.uniform(-3, 3);
        auto fast = scaled_dot_attention(q, k, v, 4.0);
        auto naive = testsupport::naive_attention(q, k, v, 4.0);
        CHECK(max_abs_diff(fast.data, naive.data) < 1e-6);
    }
}

TEST_CASE("attention weight rows sum to 1 and are permutation equivariant") {
    SplitMix64 rng(31);
    TokenMatrix q(5, 3), k(7, 3);
    for (auto& x : q.data) x = rng.uniform(-4, 4);
    for (auto& x : k.data) x = rng.uniform(-4, 4);

    // With V = identity, each output row IS the softmax weight row.
    TokenMatrix eye(7, 7);
    for (std::int64_t j = 0; j < 7; ++j) eye.at(j, j) = 1.0;
    auto weights = scaled_dot_attention(q, k, eye, 3.0);
    for (std::int64_t r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < 7; ++j) {
            CHECK(weights.at(r, j) >= 0.0);
            sum += weights.at(r, j);
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }

    // Permuting keys and values together leaves the output unchanged.
    TokenMatrix v(7, 4);
    for (auto& x : v.data) x = rng.uniform(-4, 4);
    auto base = scaled_dot_attention(q, k, v, 3.0);
    const std::int64_t perm[7] = {3, 0, 6, 1, 5, 2, 4};
    TokenMatrix kp(7, 3), vp(7, 4);
    for (std::int64_t j = 0; j < 7; ++j) {
        for (std::int64_t c = 0; c < 3; ++c) kp.at(j, c) = k.at(perm[j], c);
        for (std::int64_t c = 0; c < 4; ++c) vp.at(j, c) = v.at(perm[j], c);
    }
    auto permuted = scaled_dot_attention(q, kp, vp, 3.0);
    CHECK(max_abs_diff(base.data, permuted.data) < 1e-6);
}

TEST_CASE("single-token fusion collapses to swapped projected values") {
    // At 1x1x1 spatial extent each attention term reduces to the opposing
    // branch's projected token: concat = [proj_s || proj_c].
    ParamStore params(77);
    auto c_feat = testsupport::random_tensor(1, 3, 1, 1, 1, 90);
    auto s_feat = testsupport::random_tensor(1, 2, 1, 1, 1, 91);
    const std::int64_t d_l = 4;
    auto concat = cross_attention_concat(c_feat, s_feat, params, "fuse1", d_l);
    REQUIRE(concat.shape == std::array<std::int64_t, 5>{1, 2 * d_l, 1, 1, 1});

    const auto& wc = params.existing("fuse1.proj_c.weight");
    const auto& bc = params.existing("fuse1.proj_c.bias");
    const auto& ws = params.existing("fuse1.proj_s.weight");
    const auto& bs = params.existing("fuse1.proj_s.bias");
    for (std::int64_t o = 0; o < d_l; ++o) {
        double pc = bc.data[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < 3; ++i)
            pc += wc.at(o, i, 0, 0, 0) * c_feat.at(0, i, 0, 0, 0);
        double ps = bs.data[static_cast<std::size_t>(o)];
        for (std::int64_t i = 0; i < 2; ++i)
            ps += ws.at(o, i, 0, 0, 0) * s_feat.at(0, i, 0, 0, 0);
        CHECK(concat.at(0, o, 0, 0, 0) == doctest::Approx(ps).epsilon(1e-12));
        CHECK(concat.at(0, d_l + o, 0, 0, 0) == doctest::Approx(pc).epsilon(1e-12));
    }
}

namespace {

// Step-by-step fusion oracle: projections, bidirectional attention, concat,
// output projection, normalization, activation, all by direct loops.
Tensor5 fusion_oracle(const Tensor5& c_feat, const Tensor5& s_feat, ParamStore& params,
                      const std::string& name, std::int64_t d_l,
                      const ModelConfig& cfg) {
    auto project = [&](const Tensor5& in, const std::string& leaf) {
        const auto& w = params.existing(name + "." + leaf + ".weight");
        const auto& b = params.existing(name + "." + leaf + ".bias");
        Tensor5 out(1, d_l, in.d(), in.h(), in.w());
        for (std::int64_t o = 0; o < d_l; ++o)
            for (std::int64_t z = 0; z < in.d(); ++z)
                for (std::int64_t y = 0; y < in.h(); ++y)
                    for (std::int64_t x = 0; x < in.w(); ++x) {
                        double acc = b.data[static_cast<std::size_t>(o)];
                        for (std::int64_t i = 0; i < in.c(); ++i)
                            acc += w.at(o, i, 0, 0, 0) * in.at(0, i, z, y, x);
                        out.at(0, o, z, y, x) = acc;
                    }
        return out;
    };

    auto pc = project(c_feat, "proj_c");
    auto ps = project(s_feat, "proj_s");
    auto tc = tokens_from_feature_map(pc);
    auto ts = tokens_from_feature_map(ps);
    auto a1 = testsupport::naive_attention(tc, ts, ts, static_cast<double>(d_l));
    auto a2 = testsupport::naive_attention(ts, tc, tc, static_cast<double>(d_l));

    Tensor5 concat(1, 2 * d_l, c_feat.d(), c_feat.h(), c_feat.w());
    const std::int64_t spatial = concat.spatial_size();
    for (std::int64_t c = 0; c < d_l; ++c)
        for (std::int64_t s = 0; s < spatial; ++s) {
            concat.data[static_cast<std::size_t>(c * spatial + s)] = a1.at(s, c);
            concat.data[static_cast<std::size_t>((d_l + c) * spatial + s)] = a2.at(s, c);
        }

    const auto& w = params.existing(name + ".proj_out.weight");
    const auto& b = params.existing(name + ".proj_out.bias");
    Tensor5 projected(1, d_l, concat.d(), concat.h(), concat.w());
    for (std::int64_t o = 0; o < d_l; ++o)
        for (std::int64_t z = 0; z < concat.d(); ++z)
            for (std::int64_t y = 0; y < concat.h(); ++y)
                for (std::int64_t x = 0; x < concat.w(); ++x) {
                    double acc = b.data[static_cast<std::size_t>(o)];
                    for (std::int64_t i = 0; i < 2 * d_l; ++i)
                        acc += w.at(o, i, 0, 0, 0) * concat.at(0, i, z, y, x);
                    projected.at(0, o, z, y, x) = acc;
                }

    // Instance norm + LeakyReLU by direct moments.
    Tensor5 out = projected;
    for (std::int64_t c = 0; c < d_l; ++c) {
        double mean = 0.0;
        for (std::int64_t s = 0; s < spatial; ++s)
            mean += projected.data[static_cast<std::size_t>(c * spatial + s)];
        mean /= static_cast<double>(spatial);
        double var = 0.0;
        for (std::int64_t s = 0; s < spatial; ++s) {
            double dd = projected.data[static_cast<std::size_t>(c * spatial + s)] - mean;
            var += dd * dd;
        }
        var /= static_cast<double>(spatial);
        for (std::int64_t s = 0; s < spatial; ++s) {
            double zv = (projected.data[static_cast<std::size_t>(c * spatial + s)] - mean) /
                        std::sqrt(var + cfg.norm_epsilon);
            out.data[static_cast<std::size_t>(c * spatial + s)] =
                zv >= 0.0 ? zv : cfg.leaky_slope * zv;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("cross attention fusion matches the step-by-step oracle") {
    ModelConfig cfg = tiny_config(2, 2);
    for (std::uint64_t seed : {200u, 201u, 202u}) {
        ParamStore params(seed);
        auto c_feat = testsupport::random_tensor(1, 3, 2, 2, 2, seed + 10);
        auto s_feat = testsupport::random_tensor(1, 2, 2, 2, 2, seed + 20);
        auto fast = cross_attention_fuse(c_feat, s_feat, params, "fz", 4, cfg);
        auto oracle = fusion_oracle(c_feat, s_feat, params, "fz", 4, cfg);
        CHECK(fast.shape == oracle.shape);
        CHECK(max_abs_diff(fast.data, oracle.data) < 1e-6);
    }
}

TEST_CASE("fusion output shape contract") {
    ModelConfig cfg = tiny_config(2, 2);
    ParamStore params(300);
    auto c_feat = testsupport::random_tensor(1, 64, 8, 8, 8, 95);
    auto s_feat = testsupport::random_tensor(1, 48, 8, 8, 8, 96);
    auto fused = cross_attention_fuse(c_feat, s_feat, params, "f8", 64, cfg);
    CHECK(fused.shape == std::array<std::int64_t, 5>{1, 64, 8, 8, 8});

    auto mismatched = testsupport::random_tensor(1, 48, 4, 8, 8, 97);
    CHECK_THROWS_AS(cross_attention_fuse(c_feat, mismatched, params, "f8b", 64, cfg),
                    Error);
}

TEST_CASE("full forward pass: shapes, probability sums, determinism") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 32, 32, 32, 400);
    ParamStore params(1234);
    auto result = infiltrnet_forward(input, params, cfg, AblationMode::full);

    CHECK(result.logits.shape == std::array<std::int64_t, 5>{1, 4, 32, 32, 32});
    REQUIRE(result.aux_logits.size() == 3);
    CHECK(result.aux_logits[0].shape == std::array<std::int64_t, 5>{1, 4, 16, 16, 16});
    CHECK(result.aux_logits[1].shape == std::array<std::int64_t, 5>{1, 4, 8, 8, 8});
    CHECK(result.aux_logits[2].shape == std::array<std::int64_t, 5>{1, 4, 4, 4, 4});
    CHECK(result.probabilities.all_finite());
    CHECK(result.logits.all_finite());

    const std::int64_t spatial = result.probabilities.spatial_size();
    for (std::int64_t s = 0; s < spatial; s += 311) {
        double sum = 0.0;
        for (std::int64_t c = 0; c < 4; ++c) {
            double p = result.probabilities.data[static_cast<std::size_t>(c * spatial + s)];
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            sum += p;
        }
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }

    // Bitwise determinism of a repeated pass with the same parameters.
    auto again = infiltrnet_forward(input, params, cfg, AblationMode::full);
    CHECK(again.logits.data == result.logits.data);
    CHECK(again.probabilities.data == result.probabilities.data);

    // And with a freshly initialized store from the same seed.
    ParamStore params2(1234);
    auto fresh = infiltrnet_forward(input, params2, cfg, AblationMode::full);
    CHECK(fresh.logits.data == result.logits.data);
}

TEST_CASE("ablation modes run and differ from the full mode") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 16, 16, 16, 500);

    ParamStore p_full(55), p_cnn(55), p_swin(55);
    auto full = infiltrnet_forward(input, p_full, cfg, AblationMode::full);
    auto cnn = infiltrnet_forward(input, p_cnn, cfg, AblationMode::cnn_only);
    auto swin = infiltrnet_forward(input, p_swin, cfg, AblationMode::swin_only);

    CHECK(full.logits.shape == cnn.logits.shape);
    CHECK(full.logits.shape == swin.logits.shape);
    CHECK(max_abs_diff(full.logits.data, cnn.logits.data) > 1e-9);
    CHECK(max_abs_diff(full.logits.data, swin.logits.data) > 1e-9);
    CHECK(max_abs_diff(cnn.logits.data, swin.logits.data) > 1e-9);
}

TEST_CASE("zero-weighted fusion projection reduces full mode to cnn_only") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 16, 16, 16, 600);

    ParamStore p_full(66);
    (void)infiltrnet_forward(input, p_full, cfg, AblationMode::full);
    for (int factor : {2, 4, 8, 16}) {
        const std::string base = "fusion.level" + std::to_string(factor) + ".proj_out";
        for (auto& v : p_full.existing(base + ".weight").data) v = 0.0;
        for (auto& v : p_full.existing(base + ".bias").data) v = 0.0;
    }
    auto full = infiltrnet_forward(input, p_full, cfg, AblationMode::full);

    ParamStore p_cnn(66);
    auto cnn = infiltrnet_forward(input, p_cnn, cfg, AblationMode::cnn_only);
    CHECK(full.logits.data == cnn.logits.data);
}

TEST_CASE("parameter store round trips through the manifest") {
    ModelConfig cfg = tiny_config(2, 2);
    auto input = testsupport::random_tensor(1, 4, 16, 16, 16, 700);
    ParamStore params(777);
    auto before = infiltrnet_forward(input, params, cfg, AblationMode::full);

    auto dir = testsupport::tmp_dir("params");
    params.save(dir / "weights.json");
    auto loaded = ParamStore::load(dir / "weights.json");
    CHECK(loaded.seed() == 777);
    CHECK(loaded.tensors().size() == params.tensors().size());
    auto after = infiltrnet_forward(input, loaded, cfg, AblationMode::full);
    CHECK(after.logits.data == before.logits.data);
}

TEST_CASE("parameter store rejects conflicting shapes and unknown names") {
    ParamStore params(1);
    params.param("w", {2, 3, 1, 1, 1}, 3);
    CHECK_THROWS_AS(params.param("w", {2, 4, 1, 1, 1}, 4), Error);
    CHECK_THROWS_AS(params.existing("nope"), Error);

    // Initialization is independent of creation order.
    ParamStore a(9), b(9);
    auto& first_a = a.param("alpha", {1, 2, 1, 1, 1}, 2);
    auto& then_a = a.param("beta", {1, 2, 1, 1, 1}, 2);
    auto& first_b = b.param("beta", {1, 2, 1, 1, 1}, 2);
    auto& then_b = b.param("alpha", {1, 2, 1, 1, 1}, 2);
    CHECK(first_a.data == then_b.data);
    CHECK(then_a.data == first_b.data);
}

TEST_CASE("token round trip preserves feature maps") {
    auto t = testsupport::random_tensor(1, 5, 2, 3, 4, 800);
    auto tokens = tokens_from_feature_map(t);
    CHECK(tokens.rows == 24);
    CHECK(tokens.cols == 5);
    auto back = feature_map_from_tokens(tokens, 2, 3, 4);
    CHECK(back.data == t.data);
}

TEST_CASE("model config validation") {
    ModelConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.cnn_channels() == std::array<std::int64_t, 5>{32, 32, 64, 128, 256});
    CHECK(cfg.global_channels() == std::array<std::int64_t, 4>{24, 48, 96, 192});
    CHECK(cfg.fusion_dim(2) == 32);
    CHECK(cfg.fusion_dim(16) == 256);
    CHECK_THROWS_AS(cfg.fusion_dim(1), Error);

    cfg.base_filters = 0;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = ModelConfig{};
    cfg.norm_epsilon = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}
