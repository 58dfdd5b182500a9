#include "dermgen/evaluation.hpp"

#include "dermgen/error.hpp"
#include "dermgen/image.hpp"
#include "dermgen/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

namespace dermgen {

using nlohmann::json;

EvalReport evaluate(const TrainedModel& model, const DatasetManifest& manifest,
                    const PreprocessConfig& preprocess_config) {
    require(!manifest.records.empty(), Errc::invalid_argument, "evaluate: manifest has no records");
    std::set<std::string> known(model.labels.begin(), model.labels.end());
    for (const auto& label : manifest.class_labels)
        require(known.count(label) > 0, Errc::label_mismatch,
                "evaluate: manifest label '" + label + "' is unknown to the model");

    std::map<std::string, int> index;
    for (size_t i = 0; i < model.labels.size(); ++i)
        index[model.labels[i]] = static_cast<int>(i);

    nn::Network net = instantiate_network(model);
    const int K = static_cast<int>(model.labels.size());
    const size_t batch = 32;

    EvalReport report;
    report.label_order = model.labels;
    report.confusion_counts.assign(static_cast<size_t>(K), std::vector<int64_t>(static_cast<size_t>(K), 0));

    for (size_t begin = 0; begin < manifest.records.size(); begin += batch) {
        size_t end = std::min(begin + batch, manifest.records.size());
        std::vector<int> truths;
        std::vector<int> batch_shape;
        nn::Tensor x;
        for (size_t i = begin; i < end; ++i) {
            const auto& r = manifest.records[i];
            nn::Tensor item = preprocess_file(manifest.resolve(r), preprocess_config);
            if (i == begin) {
                batch_shape = {static_cast<int>(end - begin), item.shape[0], item.shape[1],
                               item.shape[2]};
                x = nn::Tensor(batch_shape);
            }
            std::copy(item.data.begin(), item.data.end(),
                      x.data.begin() + static_cast<size_t>(i - begin) * item.data.size());
            truths.push_back(index.at(r.condition_label));
        }
        nn::Tensor logits = net.forward(x, false);
        for (size_t i = 0; i < truths.size(); ++i) {
            int pred = nn::argmax_row(logits, static_cast<int>(i));
            ++report.confusion_counts[static_cast<size_t>(truths[i])][static_cast<size_t>(pred)];
        }
    }

    report.n_samples = static_cast<int64_t>(manifest.records.size());
    int64_t trace = 0;
    for (int k = 0; k < K; ++k) trace += report.confusion_counts[static_cast<size_t>(k)][static_cast<size_t>(k)];
    report.accuracy = static_cast<double>(trace) / static_cast<double>(report.n_samples);
    report.confusion_normalized = normalize_confusion(report.confusion_counts);
    report.zero_rows = zero_row_flags(report.confusion_counts);
    report.per_class_recall.assign(static_cast<size_t>(K), 0.0);
    for (int k = 0; k < K; ++k)
        if (!report.zero_rows[static_cast<size_t>(k)])
            report.per_class_recall[static_cast<size_t>(k)] =
                report.confusion_normalized[static_cast<size_t>(k)][static_cast<size_t>(k)];
    return report;
}

std::vector<std::vector<double>> normalize_confusion(
    const std::vector<std::vector<int64_t>>& counts) {
    std::vector<std::vector<double>> out(counts.size());
    for (size_t r = 0; r < counts.size(); ++r) {
        int64_t row_sum = 0;
        for (int64_t v : counts[r]) {
            require(v >= 0, Errc::invalid_argument, "normalize_confusion: negative count");
            row_sum += v;
        }
        out[r].assign(counts[r].size(), 0.0);
        if (row_sum == 0) continue; // zero rows stay zero; flagged separately
        for (size_t c = 0; c < counts[r].size(); ++c)
            out[r][c] = static_cast<double>(counts[r][c]) / static_cast<double>(row_sum);
    }
    return out;
}

std::vector<bool> zero_row_flags(const std::vector<std::vector<int64_t>>& counts) {
    std::vector<bool> flags(counts.size(), false);
    for (size_t r = 0; r < counts.size(); ++r) {
        int64_t row_sum = 0;
        for (int64_t v : counts[r]) row_sum += v;
        flags[r] = row_sum == 0;
    }
    return flags;
}

RunAggregate aggregate_runs(const std::vector<double>& values) {
    require(!values.empty(), Errc::invalid_argument, "aggregate_runs: no values");
    RunAggregate agg;
    agg.values = values;
    agg.n_runs = static_cast<int>(values.size());
    double sum = 0.0;
    for (double v : values) sum += v;
    agg.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - agg.mean) * (v - agg.mean);
        agg.std_dev = std::sqrt(sq / static_cast<double>(values.size() - 1));
    }
    return agg;
}

std::string format_mean_std(const RunAggregate& agg) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", agg.mean, agg.std_dev);
    return buf;
}

nn::Tensor cam_from_features(const nn::Tensor& features, const nn::Tensor& grads) {
    require(features.rank() == 3, Errc::invalid_argument, "cam: expected (C,h,w) features");
    require(features.same_shape(grads), Errc::invalid_argument,
            "cam: features and gradients must share a shape");
    const int C = features.dim(0), h = features.dim(1), w = features.dim(2);
    const size_t hw = static_cast<size_t>(h) * w;

    nn::Tensor cam({h, w});
    for (int c = 0; c < C; ++c) {
        const float* gp = grads.ptr() + static_cast<size_t>(c) * hw;
        double sum = 0.0;
        for (size_t i = 0; i < hw; ++i) sum += gp[i];
        float weight = static_cast<float>(sum / static_cast<double>(hw));
        const float* fp = features.ptr() + static_cast<size_t>(c) * hw;
        for (size_t i = 0; i < hw; ++i) cam.data[i] += weight * fp[i];
    }
    float mx = 0.0f;
    for (float& v : cam.data) {
        v = std::max(v, 0.0f); // rectify: only positively contributing regions
        mx = std::max(mx, v);
    }
    if (mx > 0.0f)
        for (float& v : cam.data) v /= mx;
    return cam;
}

nn::Tensor bilinear_resize_map(const nn::Tensor& map, int out_h, int out_w) {
    require(map.rank() == 2, Errc::invalid_argument, "resize_map: expected (h,w)");
    require(out_h > 0 && out_w > 0, Errc::invalid_argument, "resize_map: bad target size");
    const int h = map.dim(0), w = map.dim(1);
    nn::Tensor out({out_h, out_w});
    // corner-aligned sampling so grid extrema survive the resize exactly
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / (out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / (out_w - 1) : 0.0;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = oy * sy;
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, h - 1);
        double wy = fy - y0;
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = ox * sx;
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, w - 1);
            double wx = fx - x0;
            double v = (1 - wy) * ((1 - wx) * map.data[static_cast<size_t>(y0) * w + x0] +
                                   wx * map.data[static_cast<size_t>(y0) * w + x1]) +
                       wy * ((1 - wx) * map.data[static_cast<size_t>(y1) * w + x0] +
                             wx * map.data[static_cast<size_t>(y1) * w + x1]);
            out.data[static_cast<size_t>(oy) * out_w + ox] = static_cast<float>(v);
        }
    }
    return out;
}

CamMap grad_cam(nn::Network& net, const std::vector<std::string>& labels, const nn::Tensor& input,
                const std::optional<std::string>& target_class) {
    require(input.rank() == 3, Errc::invalid_argument, "grad_cam: expected a (3,H,W) input");
    require(net.tap_index >= 0, Errc::invalid_argument,
            "grad_cam: network exposes no feature tap");

    nn::Tensor batch({1, input.shape[0], input.shape[1], input.shape[2]});
    batch.data = input.data;
    nn::Tensor logits = net.forward(batch, false);

    int target;
    if (target_class.has_value()) {
        auto it = std::find(labels.begin(), labels.end(), *target_class);
        require(it != labels.end(), Errc::unknown_class,
                "grad_cam: unknown target class '" + *target_class + "'");
        target = static_cast<int>(it - labels.begin());
    } else {
        target = nn::argmax_row(logits, 0);
    }

    nn::Tensor dlogits({1, logits.dim(1)});
    dlogits.data[static_cast<size_t>(target)] = 1.0f;
    net.zero_grads();
    nn::Tensor dtap = net.backward_range(dlogits, net.tap_index + 1);

    const nn::Tensor& tap = net.activation(net.tap_index);
    const int C = tap.dim(1), h = tap.dim(2), w = tap.dim(3);
    nn::Tensor feats({C, h, w}), grads({C, h, w});
    feats.data.assign(tap.data.begin(), tap.data.end());
    grads.data.assign(dtap.data.begin(), dtap.data.end());

    CamMap cam;
    cam.target_class = labels[static_cast<size_t>(target)];
    const size_t hw = static_cast<size_t>(h) * w;
    cam.channel_weights.resize(static_cast<size_t>(C));
    for (int c = 0; c < C; ++c) {
        double sum = 0.0;
        const float* gp = grads.ptr() + static_cast<size_t>(c) * hw;
        for (size_t i = 0; i < hw; ++i) sum += gp[i];
        cam.channel_weights[static_cast<size_t>(c)] = static_cast<float>(sum / static_cast<double>(hw));
    }

    nn::Tensor small = cam_from_features(feats, grads);
    nn::Tensor big = bilinear_resize_map(small, input.shape[1], input.shape[2]);
    float mx = 0.0f;
    for (float v : big.data) mx = std::max(mx, v);
    if (mx > 0.0f)
        for (float& v : big.data) v = std::clamp(v / mx, 0.0f, 1.0f);
    cam.heatmap = std::move(big);
    return cam;
}

CamMap grad_cam(const TrainedModel& model, const cv::Mat& rgb,
                const PreprocessConfig& preprocess_config,
                const std::optional<std::string>& target_class) {
    nn::Network net = instantiate_network(model);
    nn::Tensor input = preprocess(rgb, preprocess_config);
    return grad_cam(net, model.labels, input, target_class);
}

namespace {

// Classic jet ramp; only ever sampled at heat > 0, and scaled by the blend
// weight, so its value at zero heat never reaches the output.
void jet_color(float v, float rgb[3]) {
    auto band = [](float x) { return std::clamp(x, 0.0f, 1.0f); };
    rgb[0] = band(1.5f - std::abs(4.0f * v - 3.0f));
    rgb[1] = band(1.5f - std::abs(4.0f * v - 2.0f));
    rgb[2] = band(1.5f - std::abs(4.0f * v - 1.0f));
}

} // namespace

cv::Mat overlay(const CamMap& cam, const cv::Mat& original, double alpha) {
    require(original.type() == CV_8UC3 && !original.empty(), Errc::invalid_argument,
            "overlay: expected an 8-bit 3-channel image");
    require(alpha >= 0.0 && alpha <= 1.0, Errc::invalid_argument, "overlay: alpha must be in [0,1]");

    nn::Tensor heat = bilinear_resize_map(cam.heatmap, original.rows, original.cols);
    cv::Mat out(original.size(), CV_8UC3);
    for (int y = 0; y < original.rows; ++y) {
        const cv::Vec3b* src = original.ptr<cv::Vec3b>(y);
        cv::Vec3b* dst = out.ptr<cv::Vec3b>(y);
        for (int x = 0; x < original.cols; ++x) {
            float v = std::clamp(heat.data[static_cast<size_t>(y) * original.cols + x], 0.0f, 1.0f);
            float mix = static_cast<float>(alpha) * v;
            float color[3];
            jet_color(v, color);
            for (int c = 0; c < 3; ++c) {
                float blended = (1.0f - mix) * static_cast<float>(src[x][c]) + mix * color[c] * 255.0f;
                dst[x][c] = static_cast<unsigned char>(std::lround(std::clamp(blended, 0.0f, 255.0f)));
            }
        }
    }
    return out;
}

json eval_report_to_json(const EvalReport& report) {
    std::vector<int> zero_rows(report.zero_rows.begin(), report.zero_rows.end());
    return json{{"accuracy", report.accuracy},
                {"confusion_counts", report.confusion_counts},
                {"confusion_normalized", report.confusion_normalized},
                {"per_class_recall", report.per_class_recall},
                {"zero_rows", zero_rows},
                {"n_samples", report.n_samples},
                {"label_order", report.label_order}};
}

EvalReport eval_report_from_json(const json& j) {
    EvalReport r;
    r.accuracy = j.at("accuracy").get<double>();
    r.confusion_counts = j.at("confusion_counts").get<std::vector<std::vector<int64_t>>>();
    r.confusion_normalized = j.at("confusion_normalized").get<std::vector<std::vector<double>>>();
    r.per_class_recall = j.at("per_class_recall").get<std::vector<double>>();
    for (int v : j.at("zero_rows").get<std::vector<int>>()) r.zero_rows.push_back(v != 0);
    r.n_samples = j.at("n_samples").get<int64_t>();
    r.label_order = j.at("label_order").get<std::vector<std::string>>();
    return r;
}

std::string render_confusion_table(const EvalReport& report) {
    size_t name_w = 4;
    for (const auto& l : report.label_order) name_w = std::max(name_w, l.size());

    std::ostringstream os;
    os << std::string(name_w, ' ');
    for (const auto& l : report.label_order) {
        std::string head = l.size() > 8 ? l.substr(0, 8) : l;
        os << "  " << std::string(8 - head.size(), ' ') << head;
    }
    os << "\n";
    for (size_t r = 0; r < report.label_order.size(); ++r) {
        const auto& l = report.label_order[r];
        os << l << std::string(name_w - l.size(), ' ');
        for (size_t c = 0; c < report.label_order.size(); ++c) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%8.2f", report.confusion_normalized[r][c]);
            os << "  " << buf;
        }
        if (report.zero_rows[r]) os << "  (no samples)";
        os << "\n";
    }
    return os.str();
}

} // namespace dermgen
