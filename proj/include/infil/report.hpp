#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "infil/config.hpp"
#include "infil/grid.hpp"
#include "infil/losses.hpp"
#include "infil/metrics.hpp"
#include "infil/tensor.hpp"

namespace infil {

// Shortest round-trip decimal form, deterministic across runs.
std::string format_double(double value);

// Undefined metrics serialize as null.
nlohmann::ordered_json metric_to_json(const MetricValue& value);
nlohmann::ordered_json metrics_report_to_json(const MetricsReport& report);
nlohmann::ordered_json loss_breakdown_to_json(const LossBreakdown& loss);

// CSV mirrors the summary-table order: Dice mean, Dice per zone, then the
// zone-averaged HD95, IoU, VS, sensitivity, precision. Undefined cells are
// empty.
std::string metrics_csv_header(bool with_id);
std::string metrics_csv_row(const MetricsReport& report, const std::string* id);

// One patient directory holding the four modalities and optionally the
// truth segmentation, in either naming scheme (_t1/_t1ce/_t2/_flair/_seg or
// -t1n/-t1c/-t2w/-t2f/-seg).
struct PatientFiles {
    std::string id;
    std::filesystem::path t1;
    std::filesystem::path t1ce;
    std::filesystem::path t2;
    std::filesystem::path flair;
    std::optional<std::filesystem::path> seg;
};

PatientFiles discover_patient(const std::filesystem::path& dir, bool require_seg);
// One subdirectory per patient, sorted by name.
std::vector<PatientFiles> discover_patients(const std::filesystem::path& root,
                                            bool require_seg);
MultiModalVolume load_patient_volume(const PatientFiles& files);

struct PatientReport {
    std::string id;
    MetricsReport metrics;
    LossBreakdown loss;
};

struct BatchReport {
    std::vector<PatientReport> patients;
    MetricsReport aggregate;  // per-metric mean over patients where defined
    // One line per skipped patient (empty tumor mask). Reported, not fatal.
    std::vector<std::string> warnings;
};

// Evaluates every patient with the configured predictor and flags, and
// attaches the loss breakdown of a full forward pass against the derived
// zone labels (volume end-padded to a multiple of 16 for the encoder).
// Patients are processed serially in sorted order; the inner kernels
// parallelize, so output bytes are independent of the thread count.
BatchReport evaluate_batch(const std::vector<PatientFiles>& patients, ParamStore& params,
                           const RunConfig& config);

nlohmann::ordered_json batch_report_to_json(const BatchReport& report,
                                            const RunConfig& config);
std::string batch_report_to_csv(const BatchReport& report);

}  // namespace infil
