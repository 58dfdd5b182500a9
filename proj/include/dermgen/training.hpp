#pragma once

#include "dermgen/data.hpp"
#include "dermgen/manifest.hpp"
#include "dermgen/nn/network.hpp"

#include <cstdint>
#include <json.hpp>
#include <string>
#include <vector>

namespace dermgen {

struct TrainConfig {
    std::string architecture = "resnet50";
    // Generic large-corpus pretraining. This build ships no pretrained
    // weights, so pretrained=true requires pretrained_checkpoint to point at
    // a compatible checkpoint file; pretrained=false trains from scratch.
    bool pretrained = true;
    std::string pretrained_checkpoint;
    int num_classes = 0;
    int epochs = 50;
    double learning_rate = 1e-4;
    std::string optimizer = "adam";
    std::string loss = "cross_entropy";
    int batch_size = 32;
    uint64_t seed = 0;
};

/// Scope is fixed: only the final classification layer trains.
struct FinetuneConfig {
    int per_class_count = 10;
    int epochs = 50;
    double learning_rate = 1e-4;
    std::string optimizer = "adam";
    uint64_t seed = 0;
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    std::string phase; // "train" or "finetune"

    bool operator==(const EpochStats&) const = default;
};

/// A trained classifier: everything needed to reproduce its predictions.
/// Label order is fixed at training time and all predicted indices map
/// through it, never through an evaluation manifest's order.
struct TrainedModel {
    std::string architecture;
    std::vector<std::string> labels;
    TrainConfig config;
    std::vector<EpochStats> history;
    nn::ParamStore params;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json finetune_config_to_json(const FinetuneConfig& c);
FinetuneConfig finetune_config_from_json(const nlohmann::json& j);

/// Fresh network carrying the model's weights. Instances are cheap relative
/// to training and independent, so concurrent readers each take their own.
nn::Network instantiate_network(const TrainedModel& model);

/// Untrained model: fresh seeded parameters (optionally loaded from a
/// pretraining checkpoint, head always freshly seeded), empty history.
TrainedModel make_untrained_model(const std::vector<std::string>& labels, const TrainConfig& config);

/// Full-parameter minibatch training over the manifest's images. All images
/// are preprocessed once and held in memory (the supported dataset scales
/// fit comfortably). Deterministic given (manifest, config).
TrainedModel train(const DatasetManifest& manifest, const PreprocessConfig& preprocess_config,
                   const TrainConfig& config);

/// Logit-layer finetune: backbone outputs are computed once with frozen
/// normalization statistics, then only the head trains on the cached
/// features. Every non-head parameter of the result is bit-identical to the
/// input model's. The subset must cover every model label at least once.
TrainedModel finetune_logits(const TrainedModel& model, const DatasetManifest& subset,
                             const PreprocessConfig& preprocess_config, const FinetuneConfig& config);

/// Deterministic seeded selection of min(per_class_count, class size) items
/// per class.
DatasetManifest select_finetune_subset(const DatasetManifest& manifest, int per_class_count,
                                       uint64_t seed);

/// Self-describing binary checkpoint (architecture, labels, config,
/// history, named float32 tensors). A history sidecar is written next to it
/// as <path>.history.json.
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

/// Digest over all parameter bytes in storage order; two models predict
/// identically whenever their digests match (same architecture assumed).
std::string model_digest(const TrainedModel& model);

} // namespace dermgen
