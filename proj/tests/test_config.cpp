#include <filesystem>
#include <fstream>
#include <string>

#include <doctest.h>
#include <json.hpp>

#include "infil/config.hpp"
#include "infil/error.hpp"
#include "infil/netref.hpp"

#include "support/oracles.hpp"

using namespace infil;
using nlohmann::json;

namespace {

std::filesystem::path write_json(const std::string& tag, const std::string& text) {
    const auto dir = testsupport::tmp_dir(tag);
    const auto path = dir / "config.json";
    std::ofstream out(path);
    out << text;
    return path;
}

}  // namespace

TEST_CASE("default config carries the reference training constants") {
    const RunConfig cfg;
    CHECK(cfg.dataset == "brats2020");
    CHECK(cfg.model.base_filters == 32);
    CHECK(cfg.model.swin_feature == 24);
    CHECK(cfg.model.num_classes == 4);
    CHECK(cfg.loss.class_weights == std::array<double, 4>{0.1, 1.0, 1.5, 2.0});
    CHECK(cfg.loss.lambda_boundary == 0.3);
    CHECK(cfg.loss.lambda_aux == 0.3);
    CHECK(cfg.loss.boundary_extra == 0.5);
    CHECK(cfg.loss.dice_smooth == 1e-5);
    CHECK(cfg.inference.window == 96);
    CHECK(cfg.inference.overlap == 0.5);
    CHECK(cfg.postproc.min_component_voxels == 500);
    CHECK(cfg.postproc.fill_holes);
    CHECK(cfg.postproc.connectivity == 6);
    CHECK(cfg.ablation.boundary_loss);
    CHECK(cfg.ablation.aux);
    CHECK(cfg.ablation.tta);
    CHECK(cfg.ablation.postprocess);
    CHECK(cfg.ablation.branch == AblationMode::full);
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("empty json resolves to the defaults") {
    const RunConfig cfg = RunConfig::from_json(json::object());
    CHECK(cfg.to_json() == RunConfig{}.to_json());
}

TEST_CASE("effective loss zeroes the ablated terms only") {
    RunConfig cfg;
    SUBCASE("all flags on keeps the weights") {
        const LossWeights w = cfg.effective_loss();
        CHECK(w.lambda_boundary == 0.3);
        CHECK(w.lambda_aux == 0.3);
    }
    SUBCASE("boundary off") {
        cfg.ablation.boundary_loss = false;
        const LossWeights w = cfg.effective_loss();
        CHECK(w.lambda_boundary == 0.0);
        CHECK(w.lambda_aux == 0.3);
    }
    SUBCASE("aux off") {
        cfg.ablation.aux = false;
        const LossWeights w = cfg.effective_loss();
        CHECK(w.lambda_boundary == 0.3);
        CHECK(w.lambda_aux == 0.0);
    }
}

TEST_CASE("eval flags mirror the ablation switches") {
    RunConfig cfg;
    cfg.ablation.tta = false;
    cfg.ablation.postprocess = true;
    const EvalFlags flags = cfg.eval_flags();
    CHECK_FALSE(flags.tta);
    CHECK(flags.postprocess);
}

TEST_CASE("validation errors name key, value, and legal range") {
    RunConfig cfg;
    SUBCASE("negative boundary lambda") {
        cfg.loss.lambda_boundary = -1.0;
        CHECK_THROWS_WITH_AS(cfg.validate(),
                             doctest::Contains("loss.lambda_boundary"), Error);
        try {
            cfg.validate();
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("-1") != std::string::npos);
            CHECK(std::string(e.what()).find(">= 0") != std::string::npos);
        }
    }
    SUBCASE("overlap at 1 is out of range") {
        cfg.inference.overlap = 1.0;
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("inference.overlap"), Error);
    }
    SUBCASE("window below 1") {
        cfg.inference.window = 0;
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("inference.window"), Error);
    }
    SUBCASE("unknown dataset") {
        cfg.dataset = "brats1999";
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("dataset"), Error);
    }
    SUBCASE("negative threads") {
        cfg.threads = -2;
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("threads"), Error);
    }
    SUBCASE("connectivity other than 6") {
        cfg.postproc.connectivity = 26;
        CHECK_THROWS_WITH_AS(cfg.validate(),
                             doctest::Contains("postproc.connectivity"), Error);
    }
    SUBCASE("nonpositive class weight") {
        cfg.loss.class_weights[2] = 0.0;
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("class_weights"), Error);
    }
    SUBCASE("zero dice smoothing") {
        cfg.loss.dice_smooth = 0.0;
        CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("dice_smooth"), Error);
    }
}

TEST_CASE("unknown keys are rejected at every nesting level") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"sead": 3})")),
                         doctest::Contains("unknown config key 'sead'"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"model": {"filters": 8}})")),
        doctest::Contains("model.filters"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"loss": {"lambda": 0.1}})")),
        doctest::Contains("loss.lambda"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"ablation": {"boundary": false}})")),
        doctest::Contains("ablation.boundary"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"inference": {"stride": 2}})")),
        doctest::Contains("inference.stride"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"postproc": {"min_component": 2}})")),
        doctest::Contains("postproc.min_component"), Error);
}

TEST_CASE("mistyped values are rejected with the key named") {
    CHECK_THROWS_WITH_AS(RunConfig::from_json(json::parse(R"({"seed": -4})")),
                         doctest::Contains("seed"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"inference": {"window": "big"}})")),
        doctest::Contains("inference.window"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"loss": {"class_weights": [1, 2]}})")),
        doctest::Contains("class_weights"), Error);
    CHECK_THROWS_WITH_AS(
        RunConfig::from_json(json::parse(R"({"ablation": {"branch": "hybrid"}})")),
        doctest::Contains("ablation.branch"), Error);
}

TEST_CASE("config survives a json round trip with every field changed") {
    RunConfig cfg;
    cfg.dataset = "brats2025";
    cfg.seed = 12345;
    cfg.threads = 3;
    cfg.model.base_filters = 8;
    cfg.model.swin_feature = 6;
    cfg.loss.class_weights = {0.2, 0.9, 1.1, 3.0};
    cfg.loss.lambda_boundary = 0.7;
    cfg.loss.lambda_aux = 0.05;
    cfg.loss.boundary_extra = 1.25;
    cfg.loss.dice_smooth = 1e-4;
    cfg.ablation.boundary_loss = false;
    cfg.ablation.aux = false;
    cfg.ablation.tta = false;
    cfg.ablation.postprocess = false;
    cfg.ablation.branch = AblationMode::swin_only;
    cfg.inference.window = 32;
    cfg.inference.overlap = 0.25;
    cfg.postproc.min_component_voxels = 42;
    cfg.postproc.fill_holes = false;

    const RunConfig back = RunConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    CHECK(back.dataset == "brats2025");
    CHECK(back.ablation.branch == AblationMode::swin_only);
    CHECK(back.postproc.min_component_voxels == 42);
}

TEST_CASE("config loads from a file and validates") {
    const auto path = write_json(
        "cfg-ok", R"({"seed": 9, "model": {"base_filters": 4}, "inference": {"window": 16}})");
    const RunConfig cfg = RunConfig::load(path);
    CHECK(cfg.seed == 9);
    CHECK(cfg.model.base_filters == 4);
    CHECK(cfg.inference.window == 16);
    // untouched sections keep defaults
    CHECK(cfg.model.swin_feature == 24);

    CHECK_THROWS_WITH_AS(RunConfig::load(path.parent_path() / "absent.json"),
                         doctest::Contains("absent.json"), Error);
    const auto junk = write_json("cfg-junk", "not json {");
    CHECK_THROWS_AS(RunConfig::load(junk), Error);
}

TEST_CASE("invalid file values fail at load with the key named") {
    const auto path = write_json("cfg-bad", R"({"loss": {"lambda_boundary": -1.0}})");
    CHECK_THROWS_WITH_AS(RunConfig::load(path),
                         doctest::Contains("loss.lambda_boundary"), Error);
}

TEST_CASE("phantom spec json round trips and validates") {
    PhantomSpec spec;
    spec.dims = {24, 20, 28};
    spec.spacing = {1.5, 1.0, 1.25};
    spec.brain_semi_axes_mm = {12.0, 8.0, 14.0};
    spec.tumor_center_mm = {17.0, 9.5, 17.0};
    spec.core_semi_axes_mm = {2.0, 2.0, 2.0};
    spec.edema_semi_axes_mm = {4.0, 3.0, 4.0};
    spec.intensities[1].enhancing = 3.5;
    spec.noise_sigma = 0.2;
    spec.seed = 77;
    spec.dataset = "brats2025";

    const PhantomSpec back = phantom_spec_from_json(phantom_spec_to_json(spec));
    CHECK(phantom_spec_to_json(back) == phantom_spec_to_json(spec));
    CHECK(back.intensities[1].enhancing == 3.5);
    CHECK(back.dataset == "brats2025");

    CHECK_THROWS_WITH_AS(phantom_spec_from_json(json::parse(R"({"dim": [8, 8, 8]})")),
                         doctest::Contains("unknown config key 'dim'"), Error);
    CHECK_THROWS_WITH_AS(
        phantom_spec_from_json(json::parse(
            R"({"intensities": [{"brian": 1}, {}, {}, {}]})")),
        doctest::Contains("brian"), Error);
    // validate() runs on parse: a core larger than the edema is rejected
    CHECK_THROWS_WITH_AS(
        phantom_spec_from_json(json::parse(
            R"({"core_semi_axes_mm": [9, 9, 9], "edema_semi_axes_mm": [8, 8, 8]})")),
        doctest::Contains("core"), Error);
}
