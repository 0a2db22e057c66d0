#include "infil/config.hpp"

#include <fstream>
#include <set>
#include <string>

#include "infil/error.hpp"

namespace infil {
namespace {

constexpr const char* kStage = "cli";

[[noreturn]] void bad_value(const std::string& key, const nlohmann::json& value,
                            const std::string& legal) {
    throw Error(kStage, "config key '" + key + "' = " + value.dump() +
                            " is invalid; legal: " + legal);
}

void reject_unknown(const nlohmann::json& j, const std::string& scope,
                    const std::set<std::string>& known) {
    if (!j.is_object()) {
        throw Error(kStage, "config section '" + (scope.empty() ? "<root>" : scope) +
                                "' must be a JSON object, got " + j.dump());
    }
    for (const auto& item : j.items()) {
        if (known.count(item.key())) continue;
        std::string keys;
        for (const std::string& k : known) {
            if (!keys.empty()) keys += ", ";
            keys += k;
        }
        throw Error(kStage, "unknown config key '" + scope + item.key() +
                                "'; known keys: " + keys);
    }
}

double fetch_number(const nlohmann::json& j, const std::string& scope,
                    const std::string& key, double fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number()) bad_value(scope + key, j.at(key), "a number");
    return j.at(key).get<double>();
}

std::int64_t fetch_integer(const nlohmann::json& j, const std::string& scope,
                           const std::string& key, std::int64_t fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) bad_value(scope + key, j.at(key), "an integer");
    return j.at(key).get<std::int64_t>();
}

bool fetch_bool(const nlohmann::json& j, const std::string& scope, const std::string& key,
                bool fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_boolean()) bad_value(scope + key, j.at(key), "a boolean");
    return j.at(key).get<bool>();
}

std::string fetch_string(const nlohmann::json& j, const std::string& scope,
                         const std::string& key, const std::string& fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_string()) bad_value(scope + key, j.at(key), "a string");
    return j.at(key).get<std::string>();
}

std::array<double, 3> fetch_triple(const nlohmann::json& j, const std::string& scope,
                                   const std::string& key, std::array<double, 3> fallback) {
    if (!j.contains(key)) return fallback;
    const nlohmann::json& v = j.at(key);
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() ||
        !v[2].is_number()) {
        bad_value(scope + key, v, "an array of 3 numbers");
    }
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

}  // namespace

LossWeights RunConfig::effective_loss() const {
    LossWeights w = loss;
    if (!ablation.boundary_loss) w.lambda_boundary = 0.0;
    if (!ablation.aux) w.lambda_aux = 0.0;
    return w;
}

EvalFlags RunConfig::eval_flags() const {
    EvalFlags flags;
    flags.tta = ablation.tta;
    flags.postprocess = ablation.postprocess;
    return flags;
}

void RunConfig::validate() const {
    if (dataset != "brats2020" && dataset != "brats2025") {
        bad_value("dataset", dataset, "\"brats2020\" or \"brats2025\"");
    }
    if (threads < 0) bad_value("threads", threads, "an integer >= 0");
    if (model.base_filters < 1) bad_value("model.base_filters", model.base_filters, ">= 1");
    if (model.swin_feature < 1) bad_value("model.swin_feature", model.swin_feature, ">= 1");
    if (model.num_classes != 4) bad_value("model.num_classes", model.num_classes, "4");
    for (const double w : loss.class_weights) {
        if (!(w > 0.0)) bad_value("loss.class_weights", w, "each weight > 0");
    }
    if (!(loss.lambda_boundary >= 0.0)) {
        bad_value("loss.lambda_boundary", loss.lambda_boundary, ">= 0");
    }
    if (!(loss.lambda_aux >= 0.0)) bad_value("loss.lambda_aux", loss.lambda_aux, ">= 0");
    if (!(loss.boundary_extra >= 0.0)) {
        bad_value("loss.boundary_extra", loss.boundary_extra, ">= 0");
    }
    if (!(loss.dice_smooth > 0.0)) bad_value("loss.dice_smooth", loss.dice_smooth, "> 0");
    if (inference.window < 1) bad_value("inference.window", inference.window, ">= 1");
    if (!(inference.overlap >= 0.0 && inference.overlap < 1.0)) {
        bad_value("inference.overlap", inference.overlap, "[0, 1)");
    }
    if (postproc.min_component_voxels < 0) {
        bad_value("postproc.min_component_voxels", postproc.min_component_voxels, ">= 0");
    }
    if (postproc.connectivity != 6) bad_value("postproc.connectivity", postproc.connectivity, "6");
}

nlohmann::ordered_json RunConfig::to_json() const {
    nlohmann::ordered_json j;
    j["dataset"] = dataset;
    j["seed"] = seed;
    j["threads"] = threads;
    j["model"] = {{"base_filters", model.base_filters}, {"swin_feature", model.swin_feature}};
    j["loss"] = {{"class_weights", loss.class_weights},
                 {"lambda_boundary", loss.lambda_boundary},
                 {"lambda_aux", loss.lambda_aux},
                 {"boundary_extra", loss.boundary_extra},
                 {"dice_smooth", loss.dice_smooth}};
    j["ablation"] = {{"boundary_loss", ablation.boundary_loss},
                     {"aux", ablation.aux},
                     {"tta", ablation.tta},
                     {"postproc", ablation.postprocess},
                     {"branch", ablation_mode_name(ablation.branch)}};
    j["inference"] = {{"window", inference.window}, {"overlap", inference.overlap}};
    j["postproc"] = {{"min_component_voxels", postproc.min_component_voxels},
                     {"fill_holes", postproc.fill_holes},
                     {"connectivity", postproc.connectivity}};
    return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
    reject_unknown(j, "",
                   {"dataset", "seed", "threads", "model", "loss", "ablation", "inference",
                    "postproc"});
    RunConfig config;
    config.dataset = fetch_string(j, "", "dataset", config.dataset);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) {
            bad_value("seed", j.at("seed"), "a non-negative integer");
        }
        config.seed = j.at("seed").get<std::uint64_t>();
    }
    config.threads = static_cast<int>(fetch_integer(j, "", "threads", config.threads));

    if (j.contains("model")) {
        const nlohmann::json& m = j.at("model");
        reject_unknown(m, "model.", {"base_filters", "swin_feature"});
        config.model.base_filters =
            static_cast<int>(fetch_integer(m, "model.", "base_filters", config.model.base_filters));
        config.model.swin_feature =
            static_cast<int>(fetch_integer(m, "model.", "swin_feature", config.model.swin_feature));
    }
    if (j.contains("loss")) {
        const nlohmann::json& l = j.at("loss");
        reject_unknown(l, "loss.",
                       {"class_weights", "lambda_boundary", "lambda_aux", "boundary_extra",
                        "dice_smooth"});
        if (l.contains("class_weights")) {
            const nlohmann::json& w = l.at("class_weights");
            if (!w.is_array() || w.size() != 4) {
                bad_value("loss.class_weights", w, "an array of 4 positive numbers");
            }
            for (int c = 0; c < 4; ++c) {
                if (!w[static_cast<std::size_t>(c)].is_number()) {
                    bad_value("loss.class_weights", w, "an array of 4 positive numbers");
                }
                config.loss.class_weights[static_cast<std::size_t>(c)] =
                    w[static_cast<std::size_t>(c)].get<double>();
            }
        }
        config.loss.lambda_boundary =
            fetch_number(l, "loss.", "lambda_boundary", config.loss.lambda_boundary);
        config.loss.lambda_aux = fetch_number(l, "loss.", "lambda_aux", config.loss.lambda_aux);
        config.loss.boundary_extra =
            fetch_number(l, "loss.", "boundary_extra", config.loss.boundary_extra);
        config.loss.dice_smooth =
            fetch_number(l, "loss.", "dice_smooth", config.loss.dice_smooth);
    }
    if (j.contains("ablation")) {
        const nlohmann::json& a = j.at("ablation");
        reject_unknown(a, "ablation.", {"boundary_loss", "aux", "tta", "postproc", "branch"});
        config.ablation.boundary_loss =
            fetch_bool(a, "ablation.", "boundary_loss", config.ablation.boundary_loss);
        config.ablation.aux = fetch_bool(a, "ablation.", "aux", config.ablation.aux);
        config.ablation.tta = fetch_bool(a, "ablation.", "tta", config.ablation.tta);
        config.ablation.postprocess =
            fetch_bool(a, "ablation.", "postproc", config.ablation.postprocess);
        if (a.contains("branch")) {
            const std::string name = fetch_string(a, "ablation.", "branch", "full");
            try {
                config.ablation.branch = ablation_mode_from_name(name);
            } catch (const Error&) {
                bad_value("ablation.branch", name, "\"full\", \"cnn_only\", or \"swin_only\"");
            }
        }
    }
    if (j.contains("inference")) {
        const nlohmann::json& i = j.at("inference");
        reject_unknown(i, "inference.", {"window", "overlap"});
        config.inference.window =
            fetch_integer(i, "inference.", "window", config.inference.window);
        config.inference.overlap =
            fetch_number(i, "inference.", "overlap", config.inference.overlap);
    }
    if (j.contains("postproc")) {
        const nlohmann::json& p = j.at("postproc");
        reject_unknown(p, "postproc.", {"min_component_voxels", "fill_holes", "connectivity"});
        config.postproc.min_component_voxels = fetch_integer(
            p, "postproc.", "min_component_voxels", config.postproc.min_component_voxels);
        config.postproc.fill_holes =
            fetch_bool(p, "postproc.", "fill_holes", config.postproc.fill_holes);
        config.postproc.connectivity = static_cast<int>(
            fetch_integer(p, "postproc.", "connectivity", config.postproc.connectivity));
    }
    config.validate();
    return config;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(kStage, "cannot open config file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(kStage, "config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

PhantomSpec phantom_spec_from_json(const nlohmann::json& j) {
    reject_unknown(j, "",
                   {"dims", "spacing", "brain_semi_axes_mm", "tumor_center_mm",
                    "core_semi_axes_mm", "edema_semi_axes_mm", "intensities", "noise_sigma",
                    "seed", "dataset"});
    PhantomSpec spec;
    if (j.contains("dims")) {
        const nlohmann::json& d = j.at("dims");
        if (!d.is_array() || d.size() != 3 || !d[0].is_number_integer() ||
            !d[1].is_number_integer() || !d[2].is_number_integer()) {
            bad_value("dims", d, "an array of 3 integers");
        }
        spec.dims = {d[0].get<std::int64_t>(), d[1].get<std::int64_t>(),
                     d[2].get<std::int64_t>()};
    }
    if (j.contains("spacing")) {
        const auto s = fetch_triple(j, "", "spacing", {1.0, 1.0, 1.0});
        spec.spacing = Spacing{s[0], s[1], s[2]};
    }
    spec.brain_semi_axes_mm =
        fetch_triple(j, "", "brain_semi_axes_mm", spec.brain_semi_axes_mm);
    spec.tumor_center_mm = fetch_triple(j, "", "tumor_center_mm", spec.tumor_center_mm);
    spec.core_semi_axes_mm = fetch_triple(j, "", "core_semi_axes_mm", spec.core_semi_axes_mm);
    spec.edema_semi_axes_mm =
        fetch_triple(j, "", "edema_semi_axes_mm", spec.edema_semi_axes_mm);
    if (j.contains("intensities")) {
        const nlohmann::json& arr = j.at("intensities");
        if (!arr.is_array() || arr.size() != 4) {
            bad_value("intensities", arr, "an array of 4 per-modality objects");
        }
        static const char* kModality[4] = {"t1", "t1ce", "t2", "flair"};
        for (int m = 0; m < 4; ++m) {
            const nlohmann::json& e = arr[static_cast<std::size_t>(m)];
            const std::string scope = std::string("intensities[") + kModality[m] + "].";
            reject_unknown(e, scope, {"brain", "edema", "enhancing", "necrotic"});
            ModalityIntensity& prof = spec.intensities[static_cast<std::size_t>(m)];
            prof.brain = fetch_number(e, scope, "brain", prof.brain);
            prof.edema = fetch_number(e, scope, "edema", prof.edema);
            prof.enhancing = fetch_number(e, scope, "enhancing", prof.enhancing);
            prof.necrotic = fetch_number(e, scope, "necrotic", prof.necrotic);
        }
    }
    spec.noise_sigma = fetch_number(j, "", "noise_sigma", spec.noise_sigma);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) {
            bad_value("seed", j.at("seed"), "a non-negative integer");
        }
        spec.seed = j.at("seed").get<std::uint64_t>();
    }
    spec.dataset = fetch_string(j, "", "dataset", spec.dataset);
    spec.validate();
    return spec;
}

nlohmann::ordered_json phantom_spec_to_json(const PhantomSpec& spec) {
    nlohmann::ordered_json j;
    j["dims"] = spec.dims;
    j["spacing"] = {spec.spacing.z, spec.spacing.y, spec.spacing.x};
    j["brain_semi_axes_mm"] = spec.brain_semi_axes_mm;
    j["tumor_center_mm"] = spec.tumor_center_mm;
    j["core_semi_axes_mm"] = spec.core_semi_axes_mm;
    j["edema_semi_axes_mm"] = spec.edema_semi_axes_mm;
    j["intensities"] = nlohmann::ordered_json::array();
    for (const ModalityIntensity& prof : spec.intensities) {
        j["intensities"].push_back({{"brain", prof.brain},
                                    {"edema", prof.edema},
                                    {"enhancing", prof.enhancing},
                                    {"necrotic", prof.necrotic}});
    }
    j["noise_sigma"] = spec.noise_sigma;
    j["seed"] = spec.seed;
    j["dataset"] = spec.dataset;
    return j;
}

PhantomSpec load_phantom_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(kStage, "cannot open phantom spec " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error(kStage, "phantom spec " + path.string() + " is not valid JSON: " + e.what());
    }
    return phantom_spec_from_json(j);
}

}  // namespace infil
