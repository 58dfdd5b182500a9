#pragma once

#include "dermgen/backend.hpp"
#include "dermgen/data.hpp"
#include "dermgen/evaluation.hpp"
#include "dermgen/generation.hpp"
#include "dermgen/prompt.hpp"
#include "dermgen/training.hpp"

#include <cstdint>
#include <map>
#include <json.hpp>
#include <string>
#include <vector>

namespace dermgen {

/// The three training regimes being compared:
///   P1: pretrained backbone, trained on synthetic images only.
///   P2: pretrained backbone, logit-layer finetune on a small real subset.
///   P3: the P1 model, then the same logit-layer finetune.
enum class ProtocolId {
    p1_pretrained_lti,
    p2_pretrained_finetune,
    p3_pretrained_lti_finetune,
};

const char* protocol_name(ProtocolId p); // "P1_pretrained_lti", ...
ProtocolId parse_protocol(const std::string& name);

struct BackendSelection {
    std::string kind = "mock"; // "mock" | "http"
    double class_signal_strength = 1.0;
    HttpBackendConfig http;
    // Name of the environment variable holding the bearer token. Only the
    // variable's *name* ever appears in configs, manifests, or logs.
    std::string auth_token_env;
    std::map<std::string, std::string> extra_params; // forwarded with every request
};

struct GenerationSettings {
    int per_class = 1000;
    int width = 256;
    int height = 256;
};

struct ExperimentConfig {
    std::string spec_file;
    BackendSelection backend;
    GenerationSettings generation;
    std::string real_root;
    SplitSpec split;
    PreprocessConfig preprocess;
    TrainConfig train;
    FinetuneConfig finetune;
    std::vector<ProtocolId> protocols = {ProtocolId::p1_pretrained_lti,
                                         ProtocolId::p2_pretrained_finetune,
                                         ProtocolId::p3_pretrained_lti_finetune};
    int n_runs = 5;
    uint64_t base_seed = 0;
    std::string output_dir = "dermgen-out";
    int cam_per_class = 8; // saliency sample size per class; 0 disables
};

nlohmann::json experiment_config_to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);
/// Checks that need the filesystem (spec file and real root exist) plus
/// cross-field consistency. Throws before any work starts.
void validate_experiment_config(const ExperimentConfig& c);

std::unique_ptr<GenerationBackend> make_backend(const BackendSelection& selection);

struct ProtocolResult {
    ProtocolId protocol{};
    int run_index = 0;
    uint64_t run_seed = 0;
    EvalReport report;
    /// Inputs read (name:digest), the seed chain, model digests, checkpoint
    /// path. The isolation and caching assertions read this.
    nlohmann::json provenance;
};

struct ProtocolFailure {
    ProtocolId protocol{};
    int run_index = 0;
    std::string stage;
    std::string message;
};

struct ExperimentResult {
    std::string run_dir;
    std::vector<ProtocolResult> results;
    std::vector<ProtocolFailure> failures;
    /// Percent accuracies aggregated over runs, keyed by protocol name.
    std::map<std::string, RunAggregate> aggregates;
    nlohmann::json comparison; // machine-readable report, also saved to run_dir
};

/// One protocol, one run, self-contained: prepares its own inputs under
/// output_dir. run_experiment is the cheaper path for full grids because it
/// prepares inputs once and reuses the synthetic checkpoint across P1/P3.
ProtocolResult run_protocol(ProtocolId protocol, const ExperimentConfig& config, int run_index);

/// The full grid: generate once, ingest, split, then every selected
/// protocol x n_runs with run seeds base_seed + run_index. Emits
/// comparison.json / comparison.txt, per-run reports and checkpoints,
/// saliency overlays, and side-by-side panels. A failing protocol run is
/// recorded and the rest continue.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Re-render the human-readable comparison from a stored comparison.json.
std::string rerender_report(const std::string& run_dir);

/// Full-scale reference results for this comparison (hosted text-to-image
/// backend, complete Dermnet-style corpus, resnet50). Desk-scale runs are
/// not expected to match them; reports embed them as reading context.
nlohmann::json reference_results();

} // namespace dermgen
