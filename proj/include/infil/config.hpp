#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "infil/losses.hpp"
#include "infil/netref.hpp"
#include "infil/phantom.hpp"
#include "infil/pipeline.hpp"

namespace infil {

// Switches mirroring the ablation rows: loss terms can be zeroed and the
// inference extras disabled without touching the underlying weights.
struct AblationFlags {
    bool boundary_loss = true;
    bool aux = true;
    bool tta = true;
    bool postprocess = true;
    AblationMode branch = AblationMode::full;
};

// Fully resolved run configuration. Defaults mirror the reference training
// setup: base_filters 32, swin_feature 24, class weights (0.1, 1, 1.5, 2),
// both loss lambdas 0.3, window 96 with overlap 0.5, min component 500.
struct RunConfig {
    std::string dataset = "brats2020";
    std::uint64_t seed = 17;
    int threads = 0;  // 0 resolves from INFILMAP_THREADS, then hardware
    ModelConfig model;
    LossWeights loss;
    AblationFlags ablation;
    InferenceConfig inference;
    PostProcConfig postproc;

    // Loss weights with the lambdas zeroed per the ablation flags.
    LossWeights effective_loss() const;
    EvalFlags eval_flags() const;

    // Throws a cli-stage error naming the key, the offending value, and the
    // legal range.
    void validate() const;

    nlohmann::ordered_json to_json() const;
    // Starts from defaults and applies present keys; unknown or mistyped
    // keys are errors naming the key.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
};

// PhantomSpec JSON with the same strictness: unknown keys rejected, absent
// keys keep their defaults.
PhantomSpec phantom_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json phantom_spec_to_json(const PhantomSpec& spec);
PhantomSpec load_phantom_spec(const std::filesystem::path& path);

}  // namespace infil
