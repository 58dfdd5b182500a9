#pragma once

#include "dermgen/data.hpp"
#include "dermgen/manifest.hpp"
#include "dermgen/training.hpp"

#include <cstdint>
#include <json.hpp>
#include <opencv2/core.hpp>
#include <optional>
#include <string>
#include <vector>

namespace dermgen {

struct EvalReport {
    double accuracy = 0.0;
    std::vector<std::vector<int64_t>> confusion_counts;    // rows = ground truth, cols = prediction
    std::vector<std::vector<double>> confusion_normalized; // row-stochastic; zero rows stay zero
    std::vector<double> per_class_recall;
    std::vector<bool> zero_rows; // ground-truth classes with no samples, flagged
    int64_t n_samples = 0;
    std::vector<std::string> label_order; // the model's order, never the manifest's
};

/// Single deterministic pass; argmax prediction with ties broken toward the
/// lowest class index.
EvalReport evaluate(const TrainedModel& model, const DatasetManifest& manifest,
                    const PreprocessConfig& preprocess_config);

/// Row-stochastic form of a count matrix; zero rows map to zero rows.
std::vector<std::vector<double>> normalize_confusion(const std::vector<std::vector<int64_t>>& counts);
std::vector<bool> zero_row_flags(const std::vector<std::vector<int64_t>>& counts);

struct RunAggregate {
    std::vector<double> values;
    double mean = 0.0;
    double std_dev = 0.0; // sample standard deviation (n-1); 0 for a single run
    int n_runs = 0;
};

RunAggregate aggregate_runs(const std::vector<double>& values);
/// "63.0 ± 2.0" — one decimal, values expressed as given (callers pass percent).
std::string format_mean_std(const RunAggregate& agg);

struct CamMap {
    nn::Tensor heatmap; // (H, W), values in [0, 1]
    std::string target_class;
    std::vector<float> channel_weights; // spatial mean of d(score)/d(feature map)
    std::string input_ref;              // provenance: source path when known
};

/// Rectified, weight-summed class activation map from a feature stack and
/// the matching score gradients, both (C, h, w); max-normalized to [0, 1]
/// (all-zero maps stay all-zero). The core arithmetic of grad_cam, exposed
/// for direct verification.
nn::Tensor cam_from_features(const nn::Tensor& features, const nn::Tensor& grads);

/// (h, w) -> (out_h, out_w) bilinear resize with exact corner preservation.
nn::Tensor bilinear_resize_map(const nn::Tensor& map, int out_h, int out_w);

/// Saliency for one preprocessed input against a network instance. The
/// target defaults to the argmax prediction; an unknown label throws
/// UnknownClass. Heatmap spatial size equals the input's.
CamMap grad_cam(nn::Network& net, const std::vector<std::string>& labels, const nn::Tensor& input,
                const std::optional<std::string>& target_class = std::nullopt);
CamMap grad_cam(const TrainedModel& model, const cv::Mat& rgb,
                const PreprocessConfig& preprocess_config,
                const std::optional<std::string>& target_class = std::nullopt);

/// False-color (jet) heatmap alpha-blended over the original: each pixel
/// mixes by alpha * heat, so zero heat leaves the pixel untouched and full
/// heat at alpha 1 is pure colormap.
cv::Mat overlay(const CamMap& cam, const cv::Mat& original, double alpha = 1.0);

nlohmann::json eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);
/// Human-readable row-normalized matrix table, two decimals per cell.
std::string render_confusion_table(const EvalReport& report);

} // namespace dermgen
