#include "infil/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "infil/error.hpp"
#include "infil/io.hpp"
#include "infil/labelgen.hpp"
#include "infil/netref.hpp"
#include "infil/pipeline.hpp"

namespace infil {
namespace {

constexpr const char* kStage = "cli";

const std::array<std::string, 9> kCsvColumns{
    "dice_mean", "dice_zone1", "dice_zone2", "dice_zone3", "hd95_mm",
    "iou",       "vs",         "sensitivity", "precision"};

std::array<MetricValue, 9> csv_values(const MetricsReport& report) {
    return {report.mean.dsc,          report.zones[0].dsc,  report.zones[1].dsc,
            report.zones[2].dsc,      report.mean.hd95_mm,  report.mean.iou,
            report.mean.vs,           report.mean.sensitivity,
            report.mean.precision};
}

nlohmann::ordered_json zone_to_json(const ZoneMetrics& zone) {
    nlohmann::ordered_json j;
    j["dsc"] = metric_to_json(zone.dsc);
    j["hd95_mm"] = metric_to_json(zone.hd95_mm);
    j["iou"] = metric_to_json(zone.iou);
    j["vs"] = metric_to_json(zone.vs);
    j["sensitivity"] = metric_to_json(zone.sensitivity);
    j["precision"] = metric_to_json(zone.precision);
    return j;
}

// Filename base with .nii/.nii.gz/.json stripped; empty when not a volume.
std::string volume_basename(const std::filesystem::path& path) {
    std::string name = path.filename().string();
    const auto strip = [&name](const std::string& suffix) {
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
            name.resize(name.size() - suffix.size());
            return true;
        }
        return false;
    };
    if (strip(".nii.gz") || strip(".nii") || strip(".json")) return name;
    return std::string();
}

bool ends_with(const std::string& text, const std::string& suffix) {
    return text.size() >= suffix.size() &&
           text.compare(text.size() - suffix.size(), suffix.size(), suffix) == 0;
}

VoxelGrid pad_to_multiple(const VoxelGrid& grid, std::int64_t factor) {
    const auto dims = grid.dims();
    std::array<std::int64_t, 3> padded;
    for (int i = 0; i < 3; ++i) {
        padded[i] = ((dims[i] + factor - 1) / factor) * factor;
    }
    if (padded == dims) return grid;
    VoxelGrid out(padded[0], padded[1], padded[2], grid.spacing, grid.role);
    for (std::int64_t z = 0; z < dims[0]; ++z) {
        for (std::int64_t y = 0; y < dims[1]; ++y) {
            for (std::int64_t x = 0; x < dims[2]; ++x) {
                out.at(z, y, x) = grid.at(z, y, x);
            }
        }
    }
    return out;
}

MetricValue mean_over_patients(const std::vector<PatientReport>& patients,
                               const std::function<const MetricValue&(const PatientReport&)>&
                                   pick) {
    MetricValue out;
    double sum = 0.0;
    std::int64_t count = 0;
    for (const PatientReport& patient : patients) {
        const MetricValue& v = pick(patient);
        if (!v.defined) continue;
        sum += v.value;
        ++count;
    }
    if (count > 0) {
        out.value = sum / static_cast<double>(count);
        out.defined = true;
    }
    return out;
}

}  // namespace

std::string format_double(double value) {
    std::array<char, 64> buffer;
    const auto result = std::to_chars(buffer.data(), buffer.data() + buffer.size(), value);
    return std::string(buffer.data(), result.ptr);
}

nlohmann::ordered_json metric_to_json(const MetricValue& value) {
    if (!value.defined) return nullptr;
    return value.value;
}

nlohmann::ordered_json metrics_report_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["zone1"] = zone_to_json(report.zones[0]);
    j["zone2"] = zone_to_json(report.zones[1]);
    j["zone3"] = zone_to_json(report.zones[2]);
    j["mean"] = zone_to_json(report.mean);
    return j;
}

nlohmann::ordered_json loss_breakdown_to_json(const LossBreakdown& loss) {
    nlohmann::ordered_json j;
    j["dice_ce"] = loss.dice_ce;
    j["ce"] = loss.ce;
    j["dice"] = loss.dice;
    j["boundary"] = loss.boundary;
    j["aux"] = loss.aux;
    j["total"] = loss.total;
    return j;
}

std::string metrics_csv_header(bool with_id) {
    std::string line = with_id ? "patient" : "";
    for (const std::string& column : kCsvColumns) {
        if (!line.empty()) line += ",";
        line += column;
    }
    return line + "\n";
}

std::string metrics_csv_row(const MetricsReport& report, const std::string* id) {
    std::string line = id != nullptr ? *id : "";
    for (const MetricValue& value : csv_values(report)) {
        if (!line.empty() || id != nullptr) line += ",";
        if (value.defined) line += format_double(value.value);
    }
    return line + "\n";
}

PatientFiles discover_patient(const std::filesystem::path& dir, bool require_seg) {
    if (!std::filesystem::is_directory(dir)) {
        throw Error(kStage, "patient path is not a directory: " + dir.string());
    }
    // suffix -> slot; both naming schemes listed explicitly.
    const std::array<std::pair<const char*, int>, 10> suffixes{{{"_t1ce", 1},
                                                                {"_t1", 0},
                                                                {"_t2", 2},
                                                                {"_flair", 3},
                                                                {"_seg", 4},
                                                                {"-t1n", 0},
                                                                {"-t1c", 1},
                                                                {"-t2w", 2},
                                                                {"-t2f", 3},
                                                                {"-seg", 4}}};
    std::array<std::vector<std::filesystem::path>, 5> found;
    std::vector<std::filesystem::path> entries;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) entries.push_back(entry.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& path : entries) {
        const std::string base = volume_basename(path);
        if (base.empty()) continue;
        for (const auto& [suffix, slot] : suffixes) {
            if (ends_with(base, suffix)) {
                found[static_cast<std::size_t>(slot)].push_back(path);
                break;
            }
        }
    }
    static const char* kSlotName[5] = {"t1", "t1ce", "t2", "flair", "seg"};
    PatientFiles files;
    files.id = dir.filename().string();
    for (int slot = 0; slot < 5; ++slot) {
        const auto& matches = found[static_cast<std::size_t>(slot)];
        if (matches.size() > 1) {
            throw Error(kStage, "patient " + files.id + " has multiple " + kSlotName[slot] +
                                    " volumes: " + matches[0].filename().string() + " and " +
                                    matches[1].filename().string());
        }
        if (matches.empty()) {
            if (slot == 4 && !require_seg) continue;
            throw Error(kStage, "patient " + files.id + " is missing the " + kSlotName[slot] +
                                    " volume (expected a _" + kSlotName[slot] + " or scheme-B "
                                    "suffixed file)");
        }
        switch (slot) {
            case 0: files.t1 = matches[0]; break;
            case 1: files.t1ce = matches[0]; break;
            case 2: files.t2 = matches[0]; break;
            case 3: files.flair = matches[0]; break;
            default: files.seg = matches[0]; break;
        }
    }
    return files;
}

std::vector<PatientFiles> discover_patients(const std::filesystem::path& root,
                                            bool require_seg) {
    if (!std::filesystem::is_directory(root)) {
        throw Error(kStage, "data directory does not exist: " + root.string());
    }
    std::vector<std::filesystem::path> dirs;
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (dirs.empty()) {
        throw Error(kStage, "no patient directories under " + root.string());
    }
    std::vector<PatientFiles> patients;
    patients.reserve(dirs.size());
    for (const auto& dir : dirs) patients.push_back(discover_patient(dir, require_seg));
    return patients;
}

MultiModalVolume load_patient_volume(const PatientFiles& files) {
    MultiModalVolume volume;
    volume.modalities[MultiModalVolume::kT1] = read_volume(files.t1, GridRole::intensity);
    volume.modalities[MultiModalVolume::kT1ce] = read_volume(files.t1ce, GridRole::intensity);
    volume.modalities[MultiModalVolume::kT2] = read_volume(files.t2, GridRole::intensity);
    volume.modalities[MultiModalVolume::kFlair] = read_volume(files.flair, GridRole::intensity);
    volume.validate();
    return volume;
}

BatchReport evaluate_batch(const std::vector<PatientFiles>& patients, ParamStore& params,
                           const RunConfig& config) {
    const LabelVocabularyMap vocab = LabelVocabularyMap::from_dataset(config.dataset);
    NetrefPredictor predictor(params, config.model, config.ablation.branch);
    const LossWeights loss_weights = config.effective_loss();

    BatchReport report;
    for (const PatientFiles& files : patients) {
        if (!files.seg) {
            throw Error(kStage, "patient " + files.id + " has no truth segmentation");
        }
        const MultiModalVolume volume = load_patient_volume(files);
        const VoxelGrid seg = read_volume(*files.seg, GridRole::label);

        PatientReport entry;
        entry.id = files.id;
        PatientResult result;
        try {
            result = evaluate_patient(volume, seg, vocab, predictor, config.eval_flags(),
                                      config.inference, config.postproc);
        } catch (const Error& e) {
            // An empty tumor mask leaves the zone labels undefined; the batch
            // skips that patient with a warning instead of aborting.
            if (e.stage() == "labelgen" &&
                std::string(e.what()).find("empty reference set") != std::string::npos) {
                report.warnings.push_back("patient " + files.id + " skipped: " + e.what());
                continue;
            }
            throw;
        }
        entry.metrics = result.report;

        // Loss of one deterministic forward pass against the derived labels;
        // the encoder needs dims divisible by 16, so both sides are
        // end-padded (padding voxels carry label 0).
        const TumorRegions regions = parse_brats_mask(seg, vocab);
        const VoxelGrid brain = brain_mask_from_flair(volume);
        const VoxelGrid truth =
            assign_zones(regions, exact_edt(regions.whole), brain);
        MultiModalVolume padded = zscore_normalize(volume);
        for (VoxelGrid& grid : padded.modalities) grid = pad_to_multiple(grid, 16);
        const VoxelGrid padded_truth = pad_to_multiple(truth, 16);
        const ForwardResult forward =
            infiltrnet_forward(padded, params, config.model, config.ablation.branch);
        entry.loss = total_loss(forward.logits, forward.aux_logits, padded_truth, loss_weights);

        report.patients.push_back(std::move(entry));
    }

    const auto aggregate_member = [&report](MetricValue ZoneMetrics::* metric) {
        std::array<MetricValue, 4> out;
        for (int slot = 0; slot < 4; ++slot) {
            out[static_cast<std::size_t>(slot)] = mean_over_patients(
                report.patients, [slot, metric](const PatientReport& p) -> const MetricValue& {
                    return slot < 3 ? p.metrics.zones[static_cast<std::size_t>(slot)].*metric
                                    : p.metrics.mean.*metric;
                });
        }
        return out;
    };
    const auto assign = [&](MetricValue ZoneMetrics::* metric) {
        const auto values = aggregate_member(metric);
        for (int z = 0; z < 3; ++z) {
            report.aggregate.zones[static_cast<std::size_t>(z)].*metric =
                values[static_cast<std::size_t>(z)];
        }
        report.aggregate.mean.*metric = values[3];
    };
    assign(&ZoneMetrics::dsc);
    assign(&ZoneMetrics::hd95_mm);
    assign(&ZoneMetrics::iou);
    assign(&ZoneMetrics::vs);
    assign(&ZoneMetrics::sensitivity);
    assign(&ZoneMetrics::precision);
    if (report.patients.empty()) {
        throw Error(kStage, "every patient in the batch was skipped; nothing to report");
    }
    return report;
}

nlohmann::ordered_json batch_report_to_json(const BatchReport& report,
                                            const RunConfig& config) {
    nlohmann::ordered_json j;
    j["config"] = config.to_json();
    j["patients"] = nlohmann::ordered_json::array();
    for (const PatientReport& patient : report.patients) {
        nlohmann::ordered_json p;
        p["id"] = patient.id;
        p["metrics"] = metrics_report_to_json(patient.metrics);
        p["loss"] = loss_breakdown_to_json(patient.loss);
        j["patients"].push_back(std::move(p));
    }
    j["aggregate"] = metrics_report_to_json(report.aggregate);
    j["warnings"] = report.warnings;
    return j;
}

std::string batch_report_to_csv(const BatchReport& report) {
    std::string csv = metrics_csv_header(true);
    for (const PatientReport& patient : report.patients) {
        csv += metrics_csv_row(patient.metrics, &patient.id);
    }
    const std::string mean_id = "mean";
    csv += metrics_csv_row(report.aggregate, &mean_id);
    return csv;
}

}  // namespace infil
