#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "infil/config.hpp"
#include "infil/error.hpp"
#include "infil/grid.hpp"
#include "infil/io.hpp"
#include "infil/metrics.hpp"
#include "infil/pipeline.hpp"
#include "infil/report.hpp"
#include "infil/rng.hpp"
#include "infil/selfcheck.hpp"
#include "infil/tensor.hpp"

#include "support/oracles.hpp"

using namespace infil;

namespace {

constexpr Spacing kCoarse{4.0, 4.0, 4.0};

void touch(const std::filesystem::path& path) {
    std::ofstream out(path);
    out << "x";
}

// Small patient with all three zones populated at 4 mm spacing: edema box
// with a two-voxel core strip, strictly positive modalities so the brain
// mask covers the whole grid.
struct DiskPatient {
    MultiModalVolume volume;
    VoxelGrid seg;
};

DiskPatient make_patient(std::uint64_t seed) {
    DiskPatient p;
    for (int m = 0; m < 4; ++m) {
        VoxelGrid grid(12, 12, 12, kCoarse, GridRole::intensity);
        SplitMix64 rng(seed * 7919 + static_cast<std::uint64_t>(m));
        for (auto& v : grid.data()) v = 0.5 + rng.next_double();
        p.volume.modalities[static_cast<std::size_t>(m)] = grid;
    }
    p.seg = VoxelGrid(12, 12, 12, kCoarse, GridRole::label);
    for (std::int64_t z = 3; z <= 8; ++z) {
        for (std::int64_t y = 3; y <= 8; ++y) {
            for (std::int64_t x = 3; x <= 8; ++x) {
                p.seg.at(z, y, x) = 2.0;
            }
        }
    }
    for (std::int64_t y = 5; y <= 6; ++y) {
        for (std::int64_t x = 5; x <= 6; ++x) {
            p.seg.at(5, y, x) = 1.0;
            p.seg.at(6, y, x) = 4.0;
        }
    }
    return p;
}

void write_patient(const std::filesystem::path& dir, const DiskPatient& p,
                   bool with_seg = true) {
    std::filesystem::create_directories(dir);
    const std::string id = dir.filename().string();
    write_volume(p.volume.modalities[0], dir / (id + "_t1.json"));
    write_volume(p.volume.modalities[1], dir / (id + "_t1ce.json"));
    write_volume(p.volume.modalities[2], dir / (id + "_t2.json"));
    write_volume(p.volume.modalities[3], dir / (id + "_flair.json"));
    if (with_seg) write_volume(p.seg, dir / (id + "_seg.json"));
}

RunConfig tiny_run_config() {
    RunConfig cfg;
    cfg.seed = 31;
    cfg.model.base_filters = 2;
    cfg.model.swin_feature = 2;
    cfg.inference.window = 16;
    cfg.inference.overlap = 0.5;
    cfg.postproc.min_component_voxels = 4;
    return cfg;
}

MetricsReport perfect_report() {
    VoxelGrid zones(4, 4, 4, Spacing{}, GridRole::label);
    zones.at(1, 1, 1) = 1.0;
    zones.at(1, 1, 2) = 2.0;
    zones.at(2, 1, 1) = 3.0;
    return evaluate_zones(zones, zones);
}

}  // namespace

TEST_CASE("format_double emits shortest exact decimal forms") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1.0) == "1");
    CHECK(format_double(0.0) == "0");
    const double third = 1.0 / 3.0;
    CHECK(std::stod(format_double(third)) == third);
}

TEST_CASE("metrics json uses null for undefined metrics") {
    const MetricsReport report = perfect_report();
    const auto j = metrics_report_to_json(report);
    CHECK(j["zone1"]["dsc"].get<double>() == 1.0);
    CHECK(j["zone1"]["hd95_mm"].get<double>() == 0.0);
    CHECK(j["mean"]["dsc"].get<double>() == 1.0);

    // empty prediction and truth for a zone: overlap metrics defined as 1,
    // sensitivity and precision undefined
    VoxelGrid empty(2, 2, 2, Spacing{}, GridRole::label);
    const auto both_empty = metrics_report_to_json(evaluate_zones(empty, empty));
    CHECK(both_empty["zone2"]["dsc"].get<double>() == 1.0);
    CHECK(both_empty["zone2"]["sensitivity"].is_null());
    CHECK(both_empty["zone2"]["precision"].is_null());
    // both surfaces empty leaves hd95 defined as 0
    CHECK(both_empty["zone2"]["hd95_mm"].get<double>() == 0.0);
}

TEST_CASE("csv header and rows follow the summary-table column order") {
    CHECK(metrics_csv_header(false) ==
          "dice_mean,dice_zone1,dice_zone2,dice_zone3,hd95_mm,iou,vs,sensitivity,"
          "precision\n");
    CHECK(metrics_csv_header(true) ==
          "patient,dice_mean,dice_zone1,dice_zone2,dice_zone3,hd95_mm,iou,vs,"
          "sensitivity,precision\n");

    const MetricsReport report = perfect_report();
    CHECK(metrics_csv_row(report, nullptr) == "1,1,1,1,0,1,1,1,1\n");
    const std::string id = "p0";
    CHECK(metrics_csv_row(report, &id) == "p0,1,1,1,1,0,1,1,1,1\n");

    // undefined metrics leave their cells empty
    VoxelGrid empty(2, 2, 2, Spacing{}, GridRole::label);
    const MetricsReport blank = evaluate_zones(empty, empty);
    const std::string row = metrics_csv_row(blank, nullptr);
    CHECK(row == "1,1,1,1,0,1,1,,\n");
}

TEST_CASE("patient discovery handles both naming schemes") {
    SUBCASE("scheme A with seg") {
        const auto dir = testsupport::tmp_dir("disc-a") / "pat01";
        std::filesystem::create_directories(dir);
        for (const char* suffix : {"_t1", "_t1ce", "_t2", "_flair", "_seg"}) {
            touch(dir / ("pat01" + std::string(suffix) + ".nii.gz"));
        }
        const PatientFiles files = discover_patient(dir, true);
        CHECK(files.id == "pat01");
        CHECK(files.t1.filename() == "pat01_t1.nii.gz");
        CHECK(files.t1ce.filename() == "pat01_t1ce.nii.gz");
        CHECK(files.t2.filename() == "pat01_t2.nii.gz");
        CHECK(files.flair.filename() == "pat01_flair.nii.gz");
        REQUIRE(files.seg.has_value());
        CHECK(files.seg->filename() == "pat01_seg.nii.gz");
    }
    SUBCASE("scheme B") {
        const auto dir = testsupport::tmp_dir("disc-b") / "sub-002";
        std::filesystem::create_directories(dir);
        for (const char* suffix : {"-t1n", "-t1c", "-t2w", "-t2f", "-seg"}) {
            touch(dir / ("sub-002" + std::string(suffix) + ".nii.gz"));
        }
        const PatientFiles files = discover_patient(dir, true);
        CHECK(files.t1.filename() == "sub-002-t1n.nii.gz");
        CHECK(files.t1ce.filename() == "sub-002-t1c.nii.gz");
        CHECK(files.t2.filename() == "sub-002-t2w.nii.gz");
        CHECK(files.flair.filename() == "sub-002-t2f.nii.gz");
    }
    SUBCASE("t1ce is never mistaken for t1") {
        const auto dir = testsupport::tmp_dir("disc-t1ce") / "p";
        std::filesystem::create_directories(dir);
        touch(dir / "p_t1.nii.gz");
        touch(dir / "p_t1ce.nii.gz");
        touch(dir / "p_t2.nii.gz");
        touch(dir / "p_flair.nii.gz");
        const PatientFiles files = discover_patient(dir, false);
        CHECK(files.t1.filename() == "p_t1.nii.gz");
        CHECK(files.t1ce.filename() == "p_t1ce.nii.gz");
        CHECK_FALSE(files.seg.has_value());
    }
    SUBCASE("missing modality is an error naming the slot") {
        const auto dir = testsupport::tmp_dir("disc-miss") / "p";
        std::filesystem::create_directories(dir);
        touch(dir / "p_t1.nii.gz");
        touch(dir / "p_t2.nii.gz");
        touch(dir / "p_flair.nii.gz");
        CHECK_THROWS_WITH_AS(discover_patient(dir, false), doctest::Contains("t1ce"),
                             Error);
    }
    SUBCASE("missing seg only matters when required") {
        const auto dir = testsupport::tmp_dir("disc-seg") / "p";
        std::filesystem::create_directories(dir);
        for (const char* suffix : {"_t1", "_t1ce", "_t2", "_flair"}) {
            touch(dir / ("p" + std::string(suffix) + ".json"));
        }
        CHECK_FALSE(discover_patient(dir, false).seg.has_value());
        CHECK_THROWS_WITH_AS(discover_patient(dir, true), doctest::Contains("seg"), Error);
    }
    SUBCASE("two candidates for one slot is an ambiguity error naming both") {
        const auto dir = testsupport::tmp_dir("disc-dup") / "p";
        std::filesystem::create_directories(dir);
        touch(dir / "a_t1.nii.gz");
        touch(dir / "b_t1.nii");
        touch(dir / "p_t1ce.nii.gz");
        touch(dir / "p_t2.nii.gz");
        touch(dir / "p_flair.nii.gz");
        try {
            (void)discover_patient(dir, false);
            FAIL("expected an ambiguity error");
        } catch (const Error& e) {
            const std::string msg = e.what();
            CHECK(msg.find("a_t1.nii.gz") != std::string::npos);
            CHECK(msg.find("b_t1.nii") != std::string::npos);
        }
    }
}

TEST_CASE("batch discovery walks patient directories in sorted order") {
    const auto root = testsupport::tmp_dir("disc-root");
    for (const char* name : {"zeta", "alpha", "mid"}) {
        const auto dir = root / name;
        std::filesystem::create_directories(dir);
        for (const char* suffix : {"_t1", "_t1ce", "_t2", "_flair", "_seg"}) {
            touch(dir / (std::string(name) + suffix + ".json"));
        }
    }
    touch(root / "stray_file.txt");  // non-directories are ignored
    const auto patients = discover_patients(root, true);
    REQUIRE(patients.size() == 3);
    CHECK(patients[0].id == "alpha");
    CHECK(patients[1].id == "mid");
    CHECK(patients[2].id == "zeta");

    CHECK_THROWS_WITH_AS(discover_patients(root / "nope", true),
                         doctest::Contains("does not exist"), Error);
    const auto empty_root = testsupport::tmp_dir("disc-empty");
    CHECK_THROWS_WITH_AS(discover_patients(empty_root, true),
                         doctest::Contains("no patient directories"), Error);
}

TEST_CASE("patient volumes load in canonical modality order") {
    const DiskPatient p = make_patient(5);
    const auto dir = testsupport::tmp_dir("load-vol") / "case7";
    write_patient(dir, p);
    const PatientFiles files = discover_patient(dir, true);
    const MultiModalVolume loaded = load_patient_volume(files);
    for (int m = 0; m < 4; ++m) {
        CHECK(loaded.modalities[static_cast<std::size_t>(m)].data() ==
              p.volume.modalities[static_cast<std::size_t>(m)].data());
    }
}

TEST_CASE("batch evaluation reports every patient with metrics and loss") {
    const auto root = testsupport::tmp_dir("batch-ok");
    write_patient(root / "p1", make_patient(1));
    write_patient(root / "p2", make_patient(2));

    const RunConfig cfg = tiny_run_config();
    ParamStore params(cfg.seed);
    const BatchReport batch = evaluate_batch(discover_patients(root, true), params, cfg);

    REQUIRE(batch.patients.size() == 2);
    CHECK(batch.patients[0].id == "p1");
    CHECK(batch.patients[1].id == "p2");
    CHECK(batch.warnings.empty());
    for (const PatientReport& p : batch.patients) {
        CHECK(std::isfinite(p.loss.total));
        CHECK(p.loss.total > 0.0);
        CHECK(p.loss.dice_ce > 0.0);
        CHECK(p.loss.aux > 0.0);
        // every zone exists in the truth, so every dsc is defined
        for (const ZoneMetrics& z : p.metrics.zones) CHECK(z.dsc.defined);
    }
    CHECK(batch.aggregate.mean.dsc.defined);
    const double mean_of_means = (batch.patients[0].metrics.mean.dsc.value +
                                  batch.patients[1].metrics.mean.dsc.value) /
                                 2.0;
    CHECK(batch.aggregate.mean.dsc.value == doctest::Approx(mean_of_means).epsilon(1e-12));

    const auto j = batch_report_to_json(batch, cfg);
    CHECK(j["patients"].size() == 2);
    CHECK(j["config"]["model"]["base_filters"].get<int>() == 2);
    CHECK(j["patients"][0]["loss"]["total"].get<double>() ==
          batch.patients[0].loss.total);
    CHECK(j["warnings"].empty());

    const std::string csv = batch_report_to_csv(batch);
    // header + two patients + aggregate mean row
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    CHECK(csv.rfind("mean,", 0) == std::string::npos);
    CHECK(csv.find("\nmean,") != std::string::npos);
}

TEST_CASE("patients with an empty tumor are skipped with a warning") {
    const auto root = testsupport::tmp_dir("batch-skip");
    write_patient(root / "good", make_patient(3));
    DiskPatient hollow = make_patient(4);
    for (auto& v : hollow.seg.data()) v = 0.0;
    write_patient(root / "hollow", hollow);

    const RunConfig cfg = tiny_run_config();
    ParamStore params(cfg.seed);
    const BatchReport batch = evaluate_batch(discover_patients(root, true), params, cfg);
    REQUIRE(batch.patients.size() == 1);
    CHECK(batch.patients[0].id == "good");
    REQUIRE(batch.warnings.size() == 1);
    CHECK(batch.warnings[0].find("hollow") != std::string::npos);

    SUBCASE("a batch where every patient is skipped is an error") {
        const auto lonely = testsupport::tmp_dir("batch-all-skip");
        write_patient(lonely / "only", hollow);
        ParamStore fresh(cfg.seed);
        CHECK_THROWS_WITH_AS(evaluate_batch(discover_patients(lonely, true), fresh, cfg),
                             doctest::Contains("skipped"), Error);
    }
}

TEST_CASE("windowed predictor adapter reproduces direct sliding-window inference") {
    const DiskPatient p = make_patient(9);
    const RunConfig cfg = tiny_run_config();
    ParamStore params(cfg.seed);
    NetrefPredictor inner(params, cfg.model, cfg.ablation.branch);

    const MultiModalVolume normalized = zscore_normalize(p.volume);
    const Tensor5 direct = sliding_window_infer(normalized, inner, cfg.inference.window,
                                                cfg.inference.overlap);

    Tensor5 stacked(1, 4, 12, 12, 12);
    for (int m = 0; m < 4; ++m) {
        const auto& grid = normalized.modalities[static_cast<std::size_t>(m)];
        for (std::int64_t v = 0; v < stacked.spatial_size(); ++v) {
            stacked.data[static_cast<std::size_t>(m * stacked.spatial_size() + v)] =
                grid.data()[v];
        }
    }
    WindowedPredictor adapter(inner, cfg.inference.window, cfg.inference.overlap, kCoarse);
    const Tensor5 via_adapter = adapter.predict(stacked, PredictContext{});
    CHECK(via_adapter.shape == direct.shape);
    CHECK(via_adapter.data == direct.data);

    Tensor5 two_batch(2, 4, 4, 4, 4, 0.25);
    CHECK_THROWS_WITH_AS(adapter.predict(two_batch, PredictContext{}),
                         doctest::Contains("(1, 4, d, h, w)"), Error);
}

TEST_CASE("gradient self-check passes and rejects bad sizes") {
    const auto out = run_gradient_check(7, 8);
    CHECK(out.at("pass").get<bool>());
    CHECK(out.at("components").at("dice_ce").get<double>() < 1e-4);
    CHECK(out.at("components").at("boundary").get<double>() < 1e-4);
    CHECK(out.at("components").at("total").get<double>() < 1e-4);
    CHECK(out.at("components").at("total_aux").get<double>() < 1e-4);
    CHECK(out.at("composition_max_abs_err").get<double>() < 1e-12);

    CHECK_THROWS_WITH_AS(run_gradient_check(7, 12), doctest::Contains("multiple of 8"),
                         Error);
    CHECK_THROWS_WITH_AS(run_gradient_check(7, 0), doctest::Contains("multiple of 8"),
                         Error);
}

TEST_CASE("fusion self-check passes at machine precision") {
    const auto out = run_fusion_check(11);
    CHECK(out.at("pass").get<bool>());
    CHECK(out.at("attention_max_abs_diff").get<double>() < 1e-6);
    CHECK(out.at("attention_row_sum_max_err").get<double>() < 1e-6);
    CHECK(out.at("single_token_max_abs_diff").get<double>() < 1e-6);
    CHECK(out.at("zero_projection_max_abs_diff").get<double>() == 0.0);
}
