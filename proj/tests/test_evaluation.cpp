#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dermgen/data.hpp"
#include "dermgen/error.hpp"
#include "dermgen/evaluation.hpp"
#include "dermgen/image.hpp"
#include "dermgen/rng.hpp"
#include "dermgen/training.hpp"

#include "test_support.hpp"

#include <opencv2/core.hpp>

using namespace dermgen;
using namespace dermgen::test;

namespace {

void write_solid(const std::string& path, int w, int h, cv::Vec3b rgb) {
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(rgb[0], rgb[1], rgb[2]));
    save_png(path, img);
}

// Channel-picking classifier: class 0 scores mean red, class 1 mean blue.
TrainedModel red_vs_blue_model() {
    TrainConfig cfg;
    cfg.architecture = "meanpool_linear";
    cfg.pretrained = false;
    cfg.seed = 1;
    TrainedModel model = make_untrained_model({"aaa", "bbb"}, cfg);
    for (auto& [name, tensor] : model.params.entries) {
        if (name == "fc.weight") tensor.data = {1.0f, 0.0f, 0.0f, 0.0f, 0.0f, 1.0f};
        if (name == "fc.bias") tensor.data = {0.0f, 0.0f};
    }
    return model;
}

PreprocessConfig small_preprocess() {
    PreprocessConfig pre;
    pre.target_width = 16;
    pre.target_height = 16;
    return pre;
}

} // namespace

TEST_CASE("confusion normalization is row-stochastic") {
    std::vector<std::vector<int64_t>> counts = {{2, 0}, {1, 1}};
    auto norm = normalize_confusion(counts);
    CHECK(norm[0][0] == doctest::Approx(1.0));
    CHECK(norm[0][1] == doctest::Approx(0.0));
    CHECK(norm[1][0] == doctest::Approx(0.5));
    CHECK(norm[1][1] == doctest::Approx(0.5));

    std::vector<std::vector<int64_t>> with_hole = {{0, 0}, {3, 1}};
    auto norm2 = normalize_confusion(with_hole);
    CHECK(norm2[0][0] == 0.0);
    CHECK(norm2[0][1] == 0.0);
    auto flags = zero_row_flags(with_hole);
    CHECK(flags[0]);
    CHECK(!flags[1]);

    std::vector<std::vector<int64_t>> bad = {{1, -2}};
    CHECK_THROWS_AS(normalize_confusion(bad), Error);
}

TEST_CASE("random count matrices normalize to unit rows") {
    Rng rng(1234);
    for (int trial = 0; trial < 1000; ++trial) {
        int k = 2 + static_cast<int>(rng.bounded(5));
        std::vector<std::vector<int64_t>> counts(static_cast<size_t>(k),
                                                 std::vector<int64_t>(static_cast<size_t>(k), 0));
        for (auto& row : counts)
            for (auto& v : row) v = static_cast<int64_t>(rng.bounded(50));
        auto norm = normalize_confusion(counts);
        for (size_t r = 0; r < norm.size(); ++r) {
            double sum = 0.0;
            int64_t count_sum = 0;
            for (size_t c = 0; c < norm[r].size(); ++c) {
                sum += norm[r][c];
                count_sum += counts[r][c];
            }
            if (count_sum == 0)
                CHECK(sum == 0.0);
            else
                CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("run aggregation reports sample statistics") {
    RunAggregate agg = aggregate_runs({63.0, 61.0, 65.0});
    CHECK(agg.mean == doctest::Approx(63.0));
    CHECK(agg.std_dev == doctest::Approx(2.0));
    CHECK(agg.n_runs == 3);
    CHECK(format_mean_std(agg) == "63.0 ± 2.0");

    RunAggregate one = aggregate_runs({41.0});
    CHECK(one.mean == doctest::Approx(41.0));
    CHECK(one.std_dev == 0.0);
    CHECK(format_mean_std(one) == "41.0 ± 0.0");

    CHECK_THROWS_AS(aggregate_runs({}), Error);
}

TEST_CASE("evaluate counts argmax predictions per true class") {
    TempDir dir("eval");
    fs::create_directories(dir.sub("aaa"));
    fs::create_directories(dir.sub("bbb"));
    cv::Vec3b red(220, 10, 10), blue(10, 10, 220);
    write_solid(dir.sub("aaa/r1.png"), 24, 24, red);
    write_solid(dir.sub("aaa/r2.png"), 24, 24, red);
    write_solid(dir.sub("aaa/r3.png"), 24, 24, red);
    write_solid(dir.sub("bbb/oops_red.png"), 24, 24, red); // will be predicted aaa
    write_solid(dir.sub("bbb/b1.png"), 24, 24, blue);
    write_solid(dir.sub("bbb/b2.png"), 24, 24, blue);

    RealDatasetSource source;
    source.root = dir.str();
    DatasetManifest data = ingest_real(source);
    TrainedModel model = red_vs_blue_model();

    EvalReport report = evaluate(model, data, small_preprocess());
    CHECK(report.n_samples == 6);
    CHECK(report.label_order == std::vector<std::string>{"aaa", "bbb"});
    CHECK(report.confusion_counts[0][0] == 3);
    CHECK(report.confusion_counts[0][1] == 0);
    CHECK(report.confusion_counts[1][0] == 1);
    CHECK(report.confusion_counts[1][1] == 2);
    CHECK(report.accuracy == doctest::Approx(5.0 / 6.0));
    CHECK(report.confusion_normalized[1][0] == doctest::Approx(1.0 / 3.0));
    CHECK(report.per_class_recall[0] == doctest::Approx(1.0));
    CHECK(report.per_class_recall[1] == doctest::Approx(2.0 / 3.0));
    CHECK(!report.zero_rows[0]);
    CHECK(!report.zero_rows[1]);

    // round-trips through json unchanged
    EvalReport back = eval_report_from_json(eval_report_to_json(report));
    CHECK(back.accuracy == report.accuracy);
    CHECK(back.confusion_counts == report.confusion_counts);
    CHECK(back.confusion_normalized == report.confusion_normalized);
    CHECK(back.label_order == report.label_order);
    CHECK(back.n_samples == report.n_samples);

    std::string table = render_confusion_table(report);
    CHECK(table.find("aaa") != std::string::npos);
    CHECK(table.find("0.33") != std::string::npos);
    CHECK(table.find("(no samples)") == std::string::npos);
}

TEST_CASE("evaluate refuses labels the model does not know") {
    TempDir dir("eval-alien");
    fs::create_directories(dir.sub("aaa"));
    fs::create_directories(dir.sub("ccc"));
    write_solid(dir.sub("aaa/a.png"), 16, 16, {200, 0, 0});
    write_solid(dir.sub("ccc/c.png"), 16, 16, {0, 0, 200});
    RealDatasetSource source;
    source.root = dir.str();
    DatasetManifest data = ingest_real(source);

    try {
        evaluate(red_vs_blue_model(), data, small_preprocess());
        FAIL("expected label mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::label_mismatch);
    }

    DatasetManifest empty;
    CHECK_THROWS_AS(evaluate(red_vs_blue_model(), empty, small_preprocess()), Error);
}

TEST_CASE("zero ground-truth rows render a marker") {
    EvalReport report;
    report.label_order = {"aaa", "bbb"};
    report.confusion_counts = {{4, 1}, {0, 0}};
    report.confusion_normalized = normalize_confusion(report.confusion_counts);
    report.zero_rows = zero_row_flags(report.confusion_counts);
    std::string table = render_confusion_table(report);
    CHECK(table.find("(no samples)") != std::string::npos);
}

TEST_CASE("cam arithmetic on a hand fixture") {
    nn::Tensor feats({2, 2, 2});
    feats.data = {1, 0, 0, 0, /* channel 2 */ 0, 0, 0, 1};
    nn::Tensor grads({2, 2, 2});
    grads.data = {0.5f, 0.5f, 0.5f, 0.5f, -0.5f, -0.5f, -0.5f, -0.5f};

    nn::Tensor cam = cam_from_features(feats, grads);
    REQUIRE(cam.shape == std::vector<int>{2, 2});
    CHECK(cam.data[0] == doctest::Approx(1.0f).epsilon(1e-6));
    CHECK(cam.data[1] == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(cam.data[2] == doctest::Approx(0.0f).epsilon(1e-6));
    CHECK(cam.data[3] == doctest::Approx(0.0f).epsilon(1e-6)); // negative channel rectified away
}

TEST_CASE("cam of zero gradients is identically zero") {
    nn::Tensor feats({3, 4, 4});
    Rng rng(5);
    for (float& v : feats.data) v = rng.uniform();
    nn::Tensor grads({3, 4, 4}); // all zero
    nn::Tensor cam = cam_from_features(feats, grads);
    for (float v : cam.data) CHECK(v == 0.0f);

    nn::Tensor bad({3, 3, 3});
    CHECK_THROWS_AS(cam_from_features(feats, bad), Error);
}

TEST_CASE("map resize preserves corners and interpolates linearly") {
    nn::Tensor map({2, 2});
    map.data = {0, 1, 2, 3};
    nn::Tensor up = bilinear_resize_map(map, 4, 4);
    REQUIRE(up.shape == std::vector<int>{4, 4});
    // the bilinear surface through these corners is exactly 2*y + x (unit grid)
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(up.data[static_cast<size_t>(y) * 4 + x] ==
                  doctest::Approx((2.0 * y + x) / 3.0).epsilon(1e-6));

    Rng rng(6);
    nn::Tensor noise({5, 7});
    for (float& v : noise.data) v = rng.uniform();
    nn::Tensor big = bilinear_resize_map(noise, 13, 9);
    CHECK(big.data.front() == noise.data.front());
    CHECK(big.data[8] == noise.data[6]);                       // top-right
    CHECK(big.data[static_cast<size_t>(12) * 9] == noise.data[static_cast<size_t>(4) * 7]);
    CHECK(big.data.back() == noise.data.back());

    CHECK_THROWS_AS(bilinear_resize_map(noise, 0, 4), Error);
}

TEST_CASE("saliency channel weights match finite differences") {
    TrainConfig cfg;
    cfg.architecture = "smallcnn";
    cfg.pretrained = false;
    cfg.seed = 31;
    TrainedModel model = make_untrained_model({"aaa", "bbb", "ccc"}, cfg);
    nn::Network net = instantiate_network(model);

    nn::Tensor input({3, 16, 16});
    Rng rng(77);
    for (float& v : input.data) v = rng.normal();

    CamMap cam = grad_cam(net, model.labels, input);
    int target = 0;
    for (size_t i = 0; i < model.labels.size(); ++i)
        if (model.labels[i] == cam.target_class) target = static_cast<int>(i);

    // baseline score and tap activation from a fresh pass
    nn::Tensor batch({1, 3, 16, 16});
    batch.data = input.data;
    nn::Tensor logits = net.forward(batch, false);
    float s0 = logits.data[static_cast<size_t>(target)];
    nn::Tensor tap = net.activation(net.tap_index);
    const int C = tap.dim(1);
    const size_t hw = static_cast<size_t>(tap.dim(2)) * tap.dim(3);

    // the tap-to-score map is linear (pool + affine head), so a uniform bump
    // of one channel recovers the mean gradient exactly up to float noise
    const float h = 0.5f;
    for (int c = 0; c < C; ++c) {
        nn::Tensor bumped = tap;
        for (size_t i = 0; i < hw; ++i) bumped.data[static_cast<size_t>(c) * hw + i] += h;
        nn::Tensor out = net.forward_range(bumped, net.tap_index + 1, net.size(), false);
        float fd = (out.data[static_cast<size_t>(target)] - s0) / (h * static_cast<float>(hw));
        float ana = cam.channel_weights[static_cast<size_t>(c)];
        CHECK(std::abs(fd - ana) <= 1e-3f * std::max({std::abs(fd), std::abs(ana), 1e-3f}));
    }
}

TEST_CASE("saliency maps are normalized, input-sized, and label-aware") {
    TrainConfig cfg;
    cfg.architecture = "smallcnn";
    cfg.pretrained = false;
    cfg.seed = 32;
    TrainedModel model = make_untrained_model({"aaa", "bbb"}, cfg);
    nn::Network net = instantiate_network(model);

    Rng rng(88);
    for (int trial = 0; trial < 20; ++trial) {
        nn::Tensor input({3, 16, 16});
        for (float& v : input.data) v = rng.normal();
        CamMap cam = grad_cam(net, model.labels, input);
        REQUIRE(cam.heatmap.shape == std::vector<int>{16, 16});
        float mx = 0.0f;
        for (float v : cam.heatmap.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
            mx = std::max(mx, v);
        }
        CHECK((mx == 0.0f || mx == doctest::Approx(1.0f).epsilon(1e-6)));
        CHECK((cam.target_class == "aaa" || cam.target_class == "bbb"));
    }

    nn::Tensor input({3, 16, 16});
    for (float& v : input.data) v = rng.normal();
    CamMap forced = grad_cam(net, model.labels, input, std::string("bbb"));
    CHECK(forced.target_class == "bbb");
    try {
        grad_cam(net, model.labels, input, std::string("nope"));
        FAIL("expected unknown class");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unknown_class);
    }

    nn::Tensor flat({3, 16});
    CHECK_THROWS_AS(grad_cam(net, model.labels, flat), Error);
}

TEST_CASE("overlay blends by alpha times heat") {
    cv::Mat original(8, 8, CV_8UC3);
    Rng rng(99);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            original.at<cv::Vec3b>(y, x) = {static_cast<unsigned char>(rng.bounded(256)),
                                            static_cast<unsigned char>(rng.bounded(256)),
                                            static_cast<unsigned char>(rng.bounded(256))};

    CamMap cold;
    cold.heatmap = nn::Tensor({8, 8}); // zeros
    cv::Mat out = overlay(cold, original, 0.8);
    CHECK(cv::countNonZero(cv::Mat(out != original).reshape(1)) == 0);

    CamMap hot;
    hot.heatmap = nn::Tensor({8, 8});
    hot.heatmap.fill(1.0f);
    cv::Mat untouched = overlay(hot, original, 0.0);
    CHECK(cv::countNonZero(cv::Mat(untouched != original).reshape(1)) == 0);

    // full heat at alpha one is pure colormap: the source image drops out
    cv::Mat other(8, 8, CV_8UC3, cv::Scalar(5, 250, 125));
    cv::Mat a = overlay(hot, original, 1.0);
    cv::Mat b = overlay(hot, other, 1.0);
    CHECK(cv::countNonZero(cv::Mat(a != b).reshape(1)) == 0);

    CHECK_THROWS_AS(overlay(hot, original, 1.5), Error);
    cv::Mat gray(8, 8, CV_8UC1, cv::Scalar(0));
    CHECK_THROWS_AS(overlay(hot, gray, 0.5), Error);
}
