#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "infil/config.hpp"
#include "infil/error.hpp"
#include "infil/io.hpp"
#include "infil/labelgen.hpp"
#include "infil/metrics.hpp"
#include "infil/netref.hpp"
#include "infil/parallel.hpp"
#include "infil/phantom.hpp"
#include "infil/pipeline.hpp"
#include "infil/report.hpp"
#include "infil/selfcheck.hpp"

namespace {

using infil::Error;

// Options shared by every sub-command: config file, overrides, ablations.
// Flags override file values; the resolved config validates as a whole.
struct CommonOpts {
    std::string config_path;
    bool dump_config = false;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> dataset;
    std::optional<int> base_filters;
    std::optional<int> swin_feature;
    std::optional<std::int64_t> window;
    std::optional<double> overlap;
    std::optional<std::int64_t> min_component;
    std::optional<std::string> branch;
    std::optional<bool> tta;
    std::optional<bool> postproc;
    std::optional<bool> boundary_loss;
    std::optional<bool> aux;
};

void add_flag_pair(CLI::App* cmd, const std::string& on, const std::string& off,
                   std::optional<bool>& slot, const std::string& what) {
    cmd->add_flag_callback(
        on, [&slot]() { slot = true; }, "enable " + what);
    cmd->add_flag_callback(
        off, [&slot]() { slot = false; }, "disable " + what);
}

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path,
                    "JSON config file; flags override its values")
        ->check(CLI::ExistingFile);
    cmd->add_flag("--dump-config", o.dump_config,
                  "print the resolved config as JSON and exit");
    cmd->add_option("--seed", o.seed, "seed for weights, sampling, and fixtures");
    cmd->add_option("--threads", o.threads,
                    "worker threads; 0 resolves INFILMAP_THREADS, then hardware");
    cmd->add_option("--dataset", o.dataset, "segmentation label vocabulary")
        ->check(CLI::IsMember({"brats2020", "brats2025"}));
    cmd->add_option("--base-filters", o.base_filters, "CNN branch base channel count");
    cmd->add_option("--swin-feature", o.swin_feature, "global branch base feature size");
    cmd->add_option("--window", o.window, "sliding-window size in voxels");
    cmd->add_option("--overlap", o.overlap, "sliding-window overlap fraction in [0, 1)");
    cmd->add_option("--min-component", o.min_component,
                    "postprocess component-size threshold in voxels");
    cmd->add_option("--branch", o.branch, "network branch mode")
        ->check(CLI::IsMember({"full", "cnn_only", "swin_only"}));
    add_flag_pair(cmd, "--tta", "--no-tta", o.tta, "test-time flip augmentation");
    add_flag_pair(cmd, "--postproc", "--no-postproc", o.postproc,
                  "connected-component postprocessing");
    add_flag_pair(cmd, "--boundary-loss", "--no-boundary-loss", o.boundary_loss,
                  "the boundary loss term");
    add_flag_pair(cmd, "--aux", "--no-aux", o.aux, "the auxiliary deep-supervision loss");
}

infil::RunConfig resolve(const CommonOpts& o) {
    infil::RunConfig cfg = o.config_path.empty() ? infil::RunConfig{}
                                                 : infil::RunConfig::load(o.config_path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.threads) cfg.threads = *o.threads;
    if (o.dataset) cfg.dataset = *o.dataset;
    if (o.base_filters) cfg.model.base_filters = *o.base_filters;
    if (o.swin_feature) cfg.model.swin_feature = *o.swin_feature;
    if (o.window) cfg.inference.window = *o.window;
    if (o.overlap) cfg.inference.overlap = *o.overlap;
    if (o.min_component) cfg.postproc.min_component_voxels = *o.min_component;
    if (o.branch) cfg.ablation.branch = infil::ablation_mode_from_name(*o.branch);
    if (o.tta) cfg.ablation.tta = *o.tta;
    if (o.postproc) cfg.ablation.postprocess = *o.postproc;
    if (o.boundary_loss) cfg.ablation.boundary_loss = *o.boundary_loss;
    if (o.aux) cfg.ablation.aux = *o.aux;
    cfg.validate();
    infil::set_thread_count(cfg.threads);
    return cfg;
}

bool maybe_dump(const CommonOpts& o, const infil::RunConfig& cfg) {
    if (!o.dump_config) return false;
    std::cout << cfg.to_json().dump(2) << "\n";
    return true;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cli", "cannot open output file: " + path.string());
    out << text;
    if (!out.good()) throw Error("cli", "failed while writing: " + path.string());
}

enum class ReportFormat { json, csv };

ReportFormat format_from_path(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".json") return ReportFormat::json;
    if (ext == ".csv") return ReportFormat::csv;
    throw Error("cli", "report path '" + path.string() + "' must end in .json or .csv");
}

// --volume accepts one patient directory or exactly four files in
// t1, t1ce, t2, flair order.
infil::MultiModalVolume load_cli_volume(const std::vector<std::string>& paths) {
    if (paths.size() == 1) {
        if (!std::filesystem::is_directory(paths[0])) {
            throw Error("cli", "--volume got a single path that is not a patient "
                               "directory: " + paths[0]);
        }
        return infil::load_patient_volume(infil::discover_patient(paths[0], false));
    }
    if (paths.size() != 4) {
        throw Error("cli", "--volume takes one patient directory or exactly four files "
                           "in t1, t1ce, t2, flair order (got " +
                           std::to_string(paths.size()) + " paths)");
    }
    infil::MultiModalVolume volume;
    for (std::size_t m = 0; m < 4; ++m) {
        volume.modalities[m] = infil::read_volume(paths[m], infil::GridRole::intensity);
    }
    volume.validate();
    return volume;
}

infil::ParamStore load_weights(const std::optional<std::string>& manifest,
                               const infil::RunConfig& cfg) {
    if (manifest) return infil::ParamStore::load(*manifest);
    return infil::ParamStore(cfg.seed);
}

void run_labelgen(const infil::RunConfig& cfg, const std::string& seg_path,
                  const std::string& flair_path, const std::string& out_path) {
    const infil::VoxelGrid seg = infil::read_volume(seg_path, infil::GridRole::label);
    const infil::VoxelGrid flair =
        infil::read_volume(flair_path, infil::GridRole::intensity);
    if (!flair.same_geometry(seg)) {
        throw Error("labelgen", "segmentation and FLAIR disagree on dims or spacing");
    }
    const auto vocab = infil::LabelVocabularyMap::from_dataset(cfg.dataset);
    const infil::TumorRegions regions = infil::parse_brats_mask(seg, vocab);
    const infil::VoxelGrid brain = infil::brain_mask_from_flair(flair);
    std::int64_t edema_outside = 0;
    const infil::VoxelGrid zones = infil::assign_zones(
        regions, infil::exact_edt(regions.whole), brain, &edema_outside);
    if (edema_outside > 0) {
        std::cerr << "warning: " << edema_outside
                  << " edema voxel(s) outside the brain mask; labeled zone 3\n";
    }
    infil::write_volume(zones, out_path);

    std::array<std::int64_t, 4> counts{};
    for (double v : zones.data()) ++counts[static_cast<std::size_t>(v)];
    const double voxel_ml =
        zones.spacing.z * zones.spacing.y * zones.spacing.x / 1000.0;
    nlohmann::ordered_json summary;
    summary["voxel_counts"] = {{"outside", counts[0]},
                               {"zone1", counts[1]},
                               {"zone2", counts[2]},
                               {"zone3", counts[3]}};
    summary["volumes_ml"] = {
        {"zone1", static_cast<double>(counts[1]) * voxel_ml},
        {"zone2", static_cast<double>(counts[2]) * voxel_ml},
        {"zone3", static_cast<double>(counts[3]) * voxel_ml}};
    summary["edema_outside_brain"] = edema_outside;
    summary["out"] = out_path;
    std::cout << summary.dump(2) << "\n";
}

void run_eval(const std::string& pred_path, const std::string& truth_path,
              const std::string& out_path) {
    const infil::VoxelGrid pred = infil::read_volume(pred_path, infil::GridRole::label);
    const infil::VoxelGrid truth = infil::read_volume(truth_path, infil::GridRole::label);
    const infil::MetricsReport report = infil::evaluate_zones(pred, truth);
    const ReportFormat format = format_from_path(out_path);
    if (format == ReportFormat::json) {
        write_text(out_path, infil::metrics_report_to_json(report).dump(2) + "\n");
    } else {
        write_text(out_path,
                   infil::metrics_csv_header(false) + infil::metrics_csv_row(report, nullptr));
    }
}

void run_infer(const infil::RunConfig& cfg, const std::vector<std::string>& volume_args,
               const std::optional<std::string>& weights, const std::string& out_path) {
    const infil::MultiModalVolume volume = load_cli_volume(volume_args);
    infil::ParamStore params = load_weights(weights, cfg);
    infil::NetrefPredictor predictor(params, cfg.model, cfg.ablation.branch);
    const infil::VoxelGrid zones = infil::predict_zones(
        volume, predictor, cfg.eval_flags(), cfg.inference, cfg.postproc);
    infil::write_volume(zones, out_path);
}

void run_occlusion(const infil::RunConfig& cfg, const std::vector<std::string>& volume_args,
                   const std::optional<std::string>& weights,
                   const std::optional<std::string>& region_path, int target_class,
                   const std::vector<std::int64_t>& scales, std::int64_t stride,
                   const std::string& out_path) {
    const infil::MultiModalVolume volume = load_cli_volume(volume_args);
    infil::ParamStore params = load_weights(weights, cfg);
    infil::NetrefPredictor inner(params, cfg.model, cfg.ablation.branch);

    infil::VoxelGrid region;
    if (region_path) {
        region = infil::read_volume(*region_path, infil::GridRole::label);
    } else {
        region = infil::predict_zones(volume, inner, cfg.eval_flags(), cfg.inference,
                                      cfg.postproc);
        for (double& v : region.data()) {
            v = v == static_cast<double>(target_class) ? 1.0 : 0.0;
        }
    }

    // The occluder zeroes cubes, which only means "remove signal" after
    // normalization, so the map runs on the z-scored volume. The windowed
    // adapter lets the mapper hand over whole volumes of arbitrary dims.
    const infil::MultiModalVolume normalized = infil::zscore_normalize(volume);
    infil::WindowedPredictor predictor(inner, cfg.inference.window, cfg.inference.overlap,
                                       volume.modalities[0].spacing);
    const infil::VoxelGrid heat =
        infil::occlusion_map(normalized, predictor, region, target_class, scales, stride);
    infil::write_volume(heat, out_path);
}

void run_phantom(const std::string& spec_path, const std::string& out_dir) {
    const infil::PhantomSpec spec = infil::load_phantom_spec(spec_path);
    const infil::PhantomResult result = infil::generate_phantom(spec);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    infil::write_volume(result.volume.modalities[infil::MultiModalVolume::kT1],
                        dir / "phantom_t1.nii.gz");
    infil::write_volume(result.volume.modalities[infil::MultiModalVolume::kT1ce],
                        dir / "phantom_t1ce.nii.gz");
    infil::write_volume(result.volume.modalities[infil::MultiModalVolume::kT2],
                        dir / "phantom_t2.nii.gz");
    infil::write_volume(result.volume.modalities[infil::MultiModalVolume::kFlair],
                        dir / "phantom_flair.nii.gz");
    infil::write_volume(result.seg, dir / "phantom_seg.nii.gz");
    infil::write_volume(result.zones, dir / "phantom_zones.nii.gz");
    write_text(dir / "spec_echo.json", infil::phantom_spec_to_json(spec).dump(2) + "\n");
}

void run_check_grads(const infil::RunConfig& cfg, std::int64_t size) {
    const nlohmann::ordered_json out = infil::run_gradient_check(cfg.seed, size);
    std::cout << out.dump(2) << "\n";
    if (!out.at("pass").get<bool>()) {
        throw Error("selfcheck", "gradient check exceeded tolerance");
    }
}

void run_check_fusion(const infil::RunConfig& cfg) {
    const nlohmann::ordered_json out = infil::run_fusion_check(cfg.seed);
    std::cout << out.dump(2) << "\n";
    if (!out.at("pass").get<bool>()) {
        throw Error("selfcheck", "fusion check exceeded tolerance");
    }
}

void run_report(const infil::RunConfig& cfg, const std::string& data_dir,
                const std::optional<std::string>& weights, const std::string& out_path) {
    const ReportFormat format = format_from_path(out_path);
    const std::vector<infil::PatientFiles> patients =
        infil::discover_patients(data_dir, true);
    infil::ParamStore params = load_weights(weights, cfg);
    const infil::BatchReport batch = infil::evaluate_batch(patients, params, cfg);
    for (const std::string& warning : batch.warnings) {
        std::cerr << "warning: " << warning << "\n";
    }
    if (format == ReportFormat::json) {
        write_text(out_path, infil::batch_report_to_json(batch, cfg).dump(2) + "\n");
    } else {
        write_text(out_path, infil::batch_report_to_csv(batch));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Infiltration-risk zone mapping toolkit"};
    app.require_subcommand(1);

    CommonOpts opts;

    CLI::App* labelgen = app.add_subcommand(
        "labelgen", "Derive three-zone labels from a tumor segmentation");
    std::string seg_path, flair_path, labelgen_out;
    labelgen->add_option("--seg", seg_path, "tumor segmentation volume")
        ->required()
        ->check(CLI::ExistingFile);
    labelgen->add_option("--flair", flair_path, "FLAIR volume (brain mask support)")
        ->required()
        ->check(CLI::ExistingFile);
    labelgen->add_option("--out", labelgen_out, "output zone-label volume")->required();
    add_common(labelgen, opts);

    CLI::App* eval = app.add_subcommand(
        "eval", "Score a predicted zone volume against the truth");
    std::string pred_path, truth_path, eval_out;
    eval->add_option("--pred", pred_path, "predicted zone volume")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--truth", truth_path, "truth zone volume")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--out", eval_out, "report path (.json or .csv)")->required();
    add_common(eval, opts);

    CLI::App* infer = app.add_subcommand(
        "infer", "Predict zone labels for one patient volume");
    std::vector<std::string> infer_volume;
    std::optional<std::string> infer_weights;
    std::string infer_out;
    infer->add_option("--volume", infer_volume,
                      "patient directory, or four files in t1, t1ce, t2, flair order")
        ->required()
        ->expected(1, 4);
    infer->add_option("--weights", infer_weights, "parameter manifest (seeded when absent)")
        ->check(CLI::ExistingFile);
    infer->add_option("--out", infer_out, "output zone-label volume")->required();
    add_common(infer, opts);

    CLI::App* occlusion = app.add_subcommand(
        "occlusion", "Occlusion-sensitivity heatmap for a target class");
    std::vector<std::string> occ_volume;
    std::optional<std::string> occ_weights, occ_region;
    std::vector<std::int64_t> occ_scales{8, 16, 32};
    std::int64_t occ_stride = 8;
    int occ_class = 3;
    std::string occ_out;
    occlusion->add_option("--volume", occ_volume,
                          "patient directory, or four files in t1, t1ce, t2, flair order")
        ->required()
        ->expected(1, 4);
    occlusion->add_option("--weights", occ_weights,
                          "parameter manifest (seeded when absent)")
        ->check(CLI::ExistingFile);
    occlusion
        ->add_option("--region", occ_region,
                     "mask volume to average the target-class probability over "
                     "(defaults to the predicted target-class voxels)")
        ->check(CLI::ExistingFile);
    occlusion->add_option("--target-class", occ_class, "class the drop is measured on");
    occlusion->add_option("--scales", occ_scales, "occluder cube edges in voxels")
        ->delimiter(',');
    occlusion->add_option("--stride", occ_stride, "occluder lattice stride in voxels");
    occlusion->add_option("--out", occ_out, "output heatmap volume")->required();
    add_common(occlusion, opts);

    CLI::App* phantom = app.add_subcommand(
        "phantom", "Generate a synthetic patient with known zone labels");
    std::string phantom_spec, phantom_out_dir;
    phantom->add_option("--spec", phantom_spec, "phantom description JSON")
        ->required()
        ->check(CLI::ExistingFile);
    phantom->add_option("--out-dir", phantom_out_dir, "output directory")->required();
    add_common(phantom, opts);

    CLI::App* check_grads = app.add_subcommand(
        "check-grads", "Verify analytic loss gradients by finite differences");
    std::int64_t grad_size = 16;
    check_grads->add_option("--size", grad_size, "fixture edge length (multiple of 8)");
    add_common(check_grads, opts);

    CLI::App* check_fusion = app.add_subcommand(
        "check-fusion", "Verify the cross-attention fusion against direct recomputation");
    add_common(check_fusion, opts);

    CLI::App* report = app.add_subcommand(
        "report", "Evaluate every patient directory under a data root");
    std::string report_data_dir, report_out;
    std::optional<std::string> report_weights;
    report->add_option("--data-dir", report_data_dir, "root with one directory per patient")
        ->required()
        ->check(CLI::ExistingDirectory);
    report->add_option("--weights", report_weights, "parameter manifest (seeded when absent)")
        ->check(CLI::ExistingFile);
    report->add_option("--out", report_out, "report path (.json or .csv)")->required();
    add_common(report, opts);

    labelgen->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_labelgen(cfg, seg_path, flair_path, labelgen_out);
    });
    eval->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_eval(pred_path, truth_path, eval_out);
    });
    infer->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_infer(cfg, infer_volume, infer_weights, infer_out);
    });
    occlusion->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_occlusion(cfg, occ_volume, occ_weights, occ_region, occ_class, occ_scales,
                      occ_stride, occ_out);
    });
    phantom->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_phantom(phantom_spec, phantom_out_dir);
    });
    check_grads->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_check_grads(cfg, grad_size);
    });
    check_fusion->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_check_fusion(cfg);
    });
    report->callback([&]() {
        const infil::RunConfig cfg = resolve(opts);
        if (maybe_dump(opts, cfg)) return;
        run_report(cfg, report_data_dir, report_weights, report_out);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        const nlohmann::ordered_json err{{"stage", "cli"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const Error& e) {
        const nlohmann::ordered_json err{{"stage", e.stage()}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    } catch (const std::exception& e) {
        const nlohmann::ordered_json err{{"stage", "cli"}, {"message", e.what()}};
        std::cerr << err.dump() << "\n";
        return 1;
    }
    return 0;
}
