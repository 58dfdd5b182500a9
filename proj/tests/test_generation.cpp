#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dermgen/backend.hpp"
#include "dermgen/error.hpp"
#include "dermgen/generation.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/image.hpp"
#include "dermgen/manifest.hpp"
#include "dermgen/rng.hpp"

#include "test_support.hpp"

#include <opencv2/core.hpp>

#include <map>
#include <set>

using namespace dermgen;
using namespace dermgen::test;

namespace {

GenerationRequest request_for(const std::string& label, uint64_t seed, int size = 32) {
    ConditionSpec spec = make_condition(label);
    GenerationRequest req;
    req.instantiation = enumerate_instantiations(spec, 1, 5)[0];
    req.seed = seed;
    req.width = size;
    req.height = size;
    return req;
}

// Backend that fails the first `fail_first` calls, then delegates to a mock.
class FlakyBackend : public GenerationBackend {
public:
    FlakyBackend(int fail_first, Errc code) : inner_(1.0), remaining_(fail_first), code_(code) {}
    std::string id() const override { return "flaky"; }
    std::vector<unsigned char> generate(const GenerationRequest& request) override {
        if (remaining_ > 0) {
            --remaining_;
            raise(code_, "injected failure");
        }
        return inner_.generate(request);
    }

private:
    MockBackend inner_;
    int remaining_;
    Errc code_;
};

} // namespace

TEST_CASE("mock backend is a pure function of its request") {
    MockBackend backend(0.7);
    auto a = backend.generate(request_for("scabies", 11));
    auto b = backend.generate(request_for("scabies", 11));
    CHECK(a == b);
    CHECK(backend.generate(request_for("scabies", 12)) != a); // new seed, new texture
}

TEST_CASE("at strength zero the class leaves no pixel trace") {
    MockBackend backend(0.0);
    auto a = backend.generate(request_for("scabies", 21));
    auto b = backend.generate(request_for("warts", 21)); // same seed/tone, other class
    CHECK(a == b);
    MockBackend strong(1.0);
    CHECK(strong.generate(request_for("scabies", 21)) != strong.generate(request_for("warts", 21)));
}

TEST_CASE("generated bytes decode to the requested dimensions") {
    MockBackend backend(1.0);
    cv::Mat img = decode_image(backend.generate(request_for("eczema", 3, 48)));
    CHECK(img.cols == 48);
    CHECK(img.rows == 48);
    CHECK(img.type() == CV_8UC3);
}

TEST_CASE("strength one separates classes by simple pixel statistics") {
    // nearest-centroid on 4x4-block means, trained on half the samples
    const std::vector<std::string> labels = {"c0", "c1", "c2", "c3"};
    MockBackend backend(1.0);
    const int per_class = 24, size = 32;
    auto features = [&](const cv::Mat& img) {
        // block means relative to the whole-image mean: the per-tone base
        // brightness cancels and the class pattern remains
        cv::Scalar whole = cv::mean(img);
        std::vector<double> f;
        int cell = size / 4;
        for (int by = 0; by < 4; ++by)
            for (int bx = 0; bx < 4; ++bx) {
                cv::Scalar mean = cv::mean(img(cv::Rect(bx * cell, by * cell, cell, cell)));
                f.push_back(mean[0] - whole[0]);
                f.push_back(mean[1] - whole[1]);
                f.push_back(mean[2] - whole[2]);
            }
        return f;
    };
    std::map<std::string, std::vector<std::vector<double>>> all;
    for (const auto& label : labels) {
        ConditionSpec spec = make_condition(label);
        auto prompts = enumerate_instantiations(spec, per_class, 17);
        for (int i = 0; i < per_class; ++i) {
            GenerationRequest req;
            req.instantiation = prompts[i];
            req.seed = derive_seed(90, label, static_cast<uint64_t>(i));
            req.width = size;
            req.height = size;
            all[label].push_back(features(decode_image(backend.generate(req))));
        }
    }
    std::map<std::string, std::vector<double>> centroid;
    size_t dim = all[labels[0]][0].size();
    for (const auto& label : labels) {
        centroid[label].assign(dim, 0.0);
        for (int i = 0; i < per_class / 2; ++i) // first half trains
            for (size_t d = 0; d < dim; ++d) centroid[label][d] += all[label][i][d] * 2.0 / per_class;
    }
    int correct = 0, total = 0;
    for (const auto& label : labels)
        for (int i = per_class / 2; i < per_class; ++i) { // second half tests
            double best = 1e300;
            std::string pick;
            for (const auto& [cl, c] : centroid) {
                double d2 = 0;
                for (size_t d = 0; d < dim; ++d) {
                    double diff = all[label][i][d] - c[d];
                    d2 += diff * diff;
                }
                if (d2 < best) {
                    best = d2;
                    pick = cl;
                }
            }
            correct += (pick == label);
            ++total;
        }
    CHECK(static_cast<double>(correct) / total >= 0.90);
}

TEST_CASE("dataset build writes a balanced, sorted, checksummed manifest") {
    TempDir dir("gen");
    MockBackend backend(0.8);
    BuildOptions options;
    options.width = 32;
    options.height = 32;
    auto specs = make_conditions({"aaa", "bbb"});
    DatasetManifest m = build_synthetic_dataset(specs, 13, backend, dir.str(), 5, options);
    CHECK(m.records.size() == 26);
    CHECK(m.class_labels == std::vector<std::string>{"aaa", "bbb"});
    CHECK(m.complete);
    auto tone_counts = per_class_tone_counts(m);
    for (const auto& [label, counts] : tone_counts) {
        int lo = 1 << 30, hi = 0;
        for (const auto& [grade, n] : counts) {
            lo = std::min(lo, n);
            hi = std::max(hi, n);
        }
        CHECK(hi - lo <= 1); // 13 across 6 tones
    }
    for (const auto& r : m.records) {
        CHECK(r.source == ImageSource::synthetic);
        CHECK(!r.prompt_rendered.empty());
        CHECK(r.seed.has_value());
        CHECK(r.backend_id == "mock");
        CHECK(sha256_file(m.resolve(r)) == r.checksum);
    }
    // canonical order: (label, filename)
    for (size_t i = 1; i < m.records.size(); ++i) {
        auto key = [](const ImageRecord& r) { return std::tie(r.condition_label, r.relative_path); };
        CHECK(key(m.records[i - 1]) < key(m.records[i]));
    }
}

TEST_CASE("rebuilding with identical arguments reproduces every byte") {
    TempDir a("gen-a"), b("gen-b");
    auto specs = make_conditions({"aaa", "bbb"});
    BuildOptions options;
    options.width = 32;
    options.height = 32;
    MockBackend backend(0.8);
    DatasetManifest ma = build_synthetic_dataset(specs, 6, backend, a.str(), 42, options);
    DatasetManifest mb = build_synthetic_dataset(specs, 6, backend, b.str(), 42, options);
    REQUIRE(ma.records.size() == mb.records.size());
    for (size_t i = 0; i < ma.records.size(); ++i) {
        CHECK(ma.records[i].checksum == mb.records[i].checksum);
        CHECK(ma.records[i].relative_path == mb.records[i].relative_path);
        CHECK(ma.records[i].prompt_rendered == mb.records[i].prompt_rendered);
    }
    CHECK(manifest_checksum(ma) == manifest_checksum(mb));
    DatasetManifest mc = build_synthetic_dataset(specs, 6, backend, a.sub("other"), 43, options);
    CHECK(manifest_checksum(mc) != manifest_checksum(ma)); // seed is part of the identity
}

TEST_CASE("manifest round-trips through its jsonl file") {
    TempDir dir("gen-rt");
    MockBackend backend(0.5);
    BuildOptions options;
    options.width = 32;
    options.height = 32;
    DatasetManifest m = build_synthetic_dataset(make_conditions({"aaa"}), 4, backend, dir.str(), 1,
                                                options);
    DatasetManifest loaded = load_manifest(dir.sub("manifest.jsonl"));
    CHECK(loaded.records == m.records);
    CHECK(loaded.class_labels == m.class_labels);
    CHECK(manifest_checksum(loaded) == manifest_checksum(m));
    CHECK(load_image(loaded.resolve(loaded.records[0])).rows == 32);
}

TEST_CASE("transient backend failures are retried within budget") {
    TempDir dir("gen-retry");
    FlakyBackend flaky(3, Errc::backend_unavailable);
    BuildOptions options;
    options.width = 32;
    options.height = 32;
    DatasetManifest m = build_synthetic_dataset(make_conditions({"aaa"}), 5, flaky, dir.str(), 2,
                                                options);
    CHECK(m.records.size() == 5);
    CHECK(m.complete);
}

TEST_CASE("a backend that never recovers exhausts the retry budget") {
    TempDir dir("gen-fail");
    FlakyBackend dead(1 << 20, Errc::backend_unavailable);
    BuildOptions options;
    options.width = 32;
    options.height = 32;
    options.item_retries = 2;
    options.seed_advance_rounds = 2;
    options.global_retry_budget = 8;
    try {
        build_synthetic_dataset(make_conditions({"aaa"}), 3, dead, dir.str(), 2, options);
        FAIL("expected the build to give up");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::backend_unavailable);
    }
}

TEST_CASE("invalid build arguments are rejected up front") {
    TempDir dir("gen-args");
    MockBackend backend(1.0);
    CHECK_THROWS_AS(build_synthetic_dataset({}, 4, backend, dir.str(), 1, {}), Error);
    CHECK_THROWS_AS(build_synthetic_dataset(make_conditions({"aaa"}), 0, backend, dir.str(), 1, {}),
                    Error);
}
