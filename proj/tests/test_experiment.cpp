#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dermgen/error.hpp"
#include "dermgen/experiment.hpp"

#include "test_support.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <set>

using namespace dermgen;
using namespace dermgen::test;
using nlohmann::json;

namespace {

void write_spec_file(const std::string& path, const std::vector<std::string>& labels) {
    json conditions = json::array();
    for (const auto& label : labels) {
        conditions.push_back(json{
            {"label", label},
            {"display_name", label},
            {"visual_cues", {label + " with raised red patches", label + " with scaly plaques"}},
            {"sensations", {"intense itching"}},
            {"locations", {"on the forearm", "behind the knee"}},
        });
    }
    std::ofstream out(path, std::ios::trunc);
    out << json{{"conditions", conditions}}.dump(2);
}

// Everything tiny: two classes, a handful of images, one training epoch.
ExperimentConfig mini_config(const TempDir& dir) {
    const std::vector<std::string> labels = {"aaa", "bbb"};
    write_spec_file(dir.sub("spec.json"), labels);
    write_real_tree(dir.sub("real"), labels, 12, 555, 32); // seed disjoint from synthetic

    ExperimentConfig cfg;
    cfg.spec_file = dir.sub("spec.json");
    cfg.backend.kind = "mock";
    cfg.backend.class_signal_strength = 1.0;
    cfg.generation.per_class = 8;
    cfg.generation.width = 32;
    cfg.generation.height = 32;
    cfg.real_root = dir.sub("real");
    cfg.split.finetune_fraction = 0.25;
    cfg.split.min_per_class = 1;
    cfg.split.seed = 0;
    cfg.preprocess.target_width = 32;
    cfg.preprocess.target_height = 32;
    cfg.train.architecture = "smallcnn";
    cfg.train.pretrained = false;
    cfg.train.epochs = 1;
    cfg.train.learning_rate = 0.05;
    cfg.train.batch_size = 8;
    cfg.finetune.per_class_count = 2;
    cfg.finetune.epochs = 2;
    cfg.finetune.learning_rate = 0.05;
    cfg.n_runs = 2;
    cfg.base_seed = 4242;
    cfg.output_dir = dir.sub("out");
    cfg.cam_per_class = 1;
    return cfg;
}

const ProtocolResult& result_for(const ExperimentResult& exp, ProtocolId p, int run) {
    for (const auto& r : exp.results)
        if (r.protocol == p && r.run_index == run) return r;
    REQUIRE(false);
    return exp.results.front();
}

bool has_input_prefix(const json& provenance, const std::string& prefix) {
    for (const auto& entry : provenance.at("inputs"))
        if (entry.get<std::string>().rfind(prefix, 0) == 0) return true;
    return false;
}

} // namespace

TEST_CASE("protocol names round-trip and accept shorthand") {
    for (ProtocolId p : {ProtocolId::p1_pretrained_lti, ProtocolId::p2_pretrained_finetune,
                         ProtocolId::p3_pretrained_lti_finetune})
        CHECK(parse_protocol(protocol_name(p)) == p);
    CHECK(parse_protocol("P1") == ProtocolId::p1_pretrained_lti);
    CHECK(parse_protocol("p2") == ProtocolId::p2_pretrained_finetune);
    CHECK(parse_protocol("P3") == ProtocolId::p3_pretrained_lti_finetune);
    CHECK(std::string(protocol_name(ProtocolId::p1_pretrained_lti)) == "P1_pretrained_lti");
    CHECK_THROWS_AS(parse_protocol("P4"), Error);
}

TEST_CASE("experiment config survives a json round-trip") {
    ExperimentConfig cfg;
    cfg.spec_file = "spec.json";
    cfg.backend.kind = "http";
    cfg.backend.http.endpoint = "http://localhost:9999/gen";
    cfg.backend.http.timeout_ms = 5000;
    cfg.backend.http.retries = 7;
    cfg.backend.http.retry_backoff_ms = 123;
    cfg.backend.auth_token_env = "SOME_TOKEN_VAR";
    cfg.backend.extra_params = {{"guidance", "7.5"}};
    cfg.generation.per_class = 11;
    cfg.generation.width = 48;
    cfg.generation.height = 56;
    cfg.real_root = "data/real";
    cfg.split.finetune_fraction = 0.2;
    cfg.split.seed = 3;
    cfg.split.min_per_class = 2;
    cfg.preprocess.target_width = 40;
    cfg.preprocess.target_height = 44;
    cfg.preprocess.logo_removal = LogoRemoval::mask_inpaint;
    cfg.preprocess.logo_mask = MaskRegion{1, 2, 3, 4};
    cfg.train.architecture = "resnet10";
    cfg.train.pretrained = false;
    cfg.train.epochs = 9;
    cfg.finetune.per_class_count = 5;
    cfg.protocols = {ProtocolId::p3_pretrained_lti_finetune, ProtocolId::p1_pretrained_lti};
    cfg.n_runs = 4;
    cfg.base_seed = 99;
    cfg.output_dir = "somewhere";
    cfg.cam_per_class = 2;

    json j = experiment_config_to_json(cfg);
    ExperimentConfig back = experiment_config_from_json(j);
    CHECK(back.spec_file == cfg.spec_file);
    CHECK(back.backend.kind == cfg.backend.kind);
    CHECK(back.backend.http.endpoint == cfg.backend.http.endpoint);
    CHECK(back.backend.http.timeout_ms == cfg.backend.http.timeout_ms);
    CHECK(back.backend.http.retries == cfg.backend.http.retries);
    CHECK(back.backend.http.retry_backoff_ms == cfg.backend.http.retry_backoff_ms);
    CHECK(back.backend.auth_token_env == cfg.backend.auth_token_env);
    CHECK(back.backend.extra_params == cfg.backend.extra_params);
    CHECK(back.generation.per_class == cfg.generation.per_class);
    CHECK(back.generation.width == cfg.generation.width);
    CHECK(back.generation.height == cfg.generation.height);
    CHECK(back.real_root == cfg.real_root);
    CHECK(back.split.finetune_fraction == cfg.split.finetune_fraction);
    CHECK(back.split.seed == cfg.split.seed);
    CHECK(back.split.min_per_class == cfg.split.min_per_class);
    CHECK(back.preprocess.target_width == cfg.preprocess.target_width);
    CHECK(back.preprocess.target_height == cfg.preprocess.target_height);
    CHECK(back.preprocess.logo_removal == cfg.preprocess.logo_removal);
    REQUIRE(back.preprocess.logo_mask.has_value());
    CHECK(back.preprocess.logo_mask->x == 1);
    CHECK(back.preprocess.logo_mask->height == 4);
    CHECK(back.train.architecture == cfg.train.architecture);
    CHECK(back.train.epochs == cfg.train.epochs);
    CHECK(back.finetune.per_class_count == cfg.finetune.per_class_count);
    CHECK(back.protocols == cfg.protocols);
    CHECK(back.n_runs == cfg.n_runs);
    CHECK(back.base_seed == cfg.base_seed);
    CHECK(back.output_dir == cfg.output_dir);
    CHECK(back.cam_per_class == cfg.cam_per_class);
}

TEST_CASE("serialized configs never carry token values") {
    ExperimentConfig cfg;
    cfg.backend.kind = "http";
    cfg.backend.http.endpoint = "http://localhost:9/g";
    cfg.backend.http.auth_token = "super-secret-token-value"; // set in memory only
    cfg.backend.auth_token_env = "MY_TOKEN_ENV";
    std::string dumped = experiment_config_to_json(cfg).dump();
    CHECK(dumped.find("super-secret-token-value") == std::string::npos);
    CHECK(dumped.find("MY_TOKEN_ENV") != std::string::npos); // the *name* is config
}

TEST_CASE("config loading distinguishes missing from malformed") {
    TempDir dir("cfg");
    try {
        load_experiment_config(dir.sub("absent.json"));
        FAIL("expected io error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::io_error);
    }

    std::ofstream(dir.sub("broken.json")) << "{ not json";
    try {
        load_experiment_config(dir.sub("broken.json"));
        FAIL("expected malformed file");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::malformed_file);
    }
}

TEST_CASE("validation rejects bad wiring before any work") {
    TempDir dir("val");
    ExperimentConfig cfg = mini_config(dir);
    validate_experiment_config(cfg); // the baseline passes

    ExperimentConfig no_spec = cfg;
    no_spec.spec_file = dir.sub("nope.json");
    CHECK_THROWS_AS(validate_experiment_config(no_spec), Error);

    ExperimentConfig no_root = cfg;
    no_root.real_root = dir.sub("nope-dir");
    CHECK_THROWS_AS(validate_experiment_config(no_root), Error);

    ExperimentConfig no_runs = cfg;
    no_runs.n_runs = 0;
    CHECK_THROWS_AS(validate_experiment_config(no_runs), Error);

    ExperimentConfig no_protocols = cfg;
    no_protocols.protocols.clear();
    CHECK_THROWS_AS(validate_experiment_config(no_protocols), Error);

    ExperimentConfig bad_fraction = cfg;
    bad_fraction.split.finetune_fraction = 1.0;
    CHECK_THROWS_AS(validate_experiment_config(bad_fraction), Error);

    ExperimentConfig bad_arch = cfg;
    bad_arch.train.architecture = "meganet";
    CHECK_THROWS_AS(validate_experiment_config(bad_arch), Error);

    ExperimentConfig needs_ckpt = cfg;
    needs_ckpt.train.pretrained = true;
    needs_ckpt.train.pretrained_checkpoint.clear();
    CHECK_THROWS_AS(validate_experiment_config(needs_ckpt), Error);
}

TEST_CASE("backend selection builds the right client") {
    BackendSelection mock;
    mock.kind = "mock";
    mock.class_signal_strength = 0.5;
    CHECK(make_backend(mock)->id() == "mock");

    BackendSelection too_strong = mock;
    too_strong.class_signal_strength = 1.5;
    CHECK_THROWS_AS(make_backend(too_strong), Error);

    BackendSelection unknown;
    unknown.kind = "quantum";
    CHECK_THROWS_AS(make_backend(unknown), Error);

    BackendSelection http;
    http.kind = "http";
    CHECK_THROWS_AS(make_backend(http), Error); // endpoint required

    http.http.endpoint = "http://127.0.0.1:9/generate";
    http.auth_token_env = "DERMGEN_TEST_TOKEN_UNSET";
    ::unsetenv("DERMGEN_TEST_TOKEN_UNSET");
    try {
        make_backend(http);
        FAIL("expected invalid config for the unset token variable");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::invalid_config);
    }

    ::setenv("DERMGEN_TEST_TOKEN_UNSET", "sekrit", 1);
    auto client = make_backend(http);
    CHECK(client->id().rfind("http:", 0) == 0);
    ::unsetenv("DERMGEN_TEST_TOKEN_UNSET");

    // no token variable configured at all: anonymous access is fine
    http.auth_token_env.clear();
    CHECK(make_backend(http)->id().rfind("http:", 0) == 0);
}

TEST_CASE("a small full comparison produces every artifact") {
    TempDir dir("exp");
    ExperimentConfig cfg = mini_config(dir);

    ExperimentResult exp = run_experiment(cfg);
    CHECK(exp.failures.empty());
    REQUIRE(exp.results.size() == 6); // 3 protocols x 2 runs

    // directory layout
    const fs::path run_dir(exp.run_dir);
    CHECK(fs::exists(run_dir / "config.json"));
    CHECK(fs::exists(run_dir / "comparison.json"));
    CHECK(fs::exists(run_dir / "comparison.txt"));
    CHECK(fs::exists(run_dir / "inputs" / "real.jsonl"));
    CHECK(fs::exists(run_dir / "inputs" / "finetune_pool.jsonl"));
    CHECK(fs::exists(run_dir / "inputs" / "eval.jsonl"));
    CHECK(fs::exists(run_dir / "inputs" / "finetune_subset.jsonl"));
    CHECK(fs::exists(run_dir / "synthetic" / "manifest.jsonl"));
    for (int run = 0; run < 2; ++run) {
        fs::path sub = run_dir / "runs" / ("run" + std::to_string(run));
        for (const char* tag : {"p1", "p2", "p3"}) {
            CHECK(fs::exists(sub / (std::string(tag) + ".ckpt")));
            CHECK(fs::exists(sub / (std::string(tag) + "_report.json")));
        }
        // one saliency overlay per class per protocol, assembled into panels
        CHECK(fs::exists(sub / "cams" / "P1_pretrained_lti" / "aaa"));
        CHECK(fs::exists(sub / "panels"));
        int panels = 0;
        for (const auto& entry : fs::directory_iterator(sub / "panels")) {
            ++panels;
            cv::Mat panel = load_image(entry.path().string());
            CHECK(panel.rows == 32);
            CHECK(panel.cols == 4 * 32 + 3 * 4); // original + 3 overlays + gutters
        }
        CHECK(panels == 2);
    }

    // aggregates: one entry per protocol, two runs each, percent scale
    REQUIRE(exp.aggregates.size() == 3);
    for (const auto& [name, agg] : exp.aggregates) {
        CHECK(agg.n_runs == 2);
        REQUIRE(agg.values.size() == 2);
        for (double v : agg.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 100.0);
        }
    }

    // each run's P3 started from that run's P1 model, not a fresh one
    for (int run = 0; run < 2; ++run) {
        const auto& p1 = result_for(exp, ProtocolId::p1_pretrained_lti, run);
        const auto& p3 = result_for(exp, ProtocolId::p3_pretrained_lti_finetune, run);
        CHECK(p3.provenance.at("base_model_digest") == p1.provenance.at("model_digest"));
    }
    // and the two runs trained distinct synthetic models
    CHECK(result_for(exp, ProtocolId::p1_pretrained_lti, 0).provenance.at("model_digest") !=
          result_for(exp, ProtocolId::p1_pretrained_lti, 1).provenance.at("model_digest"));

    // data isolation between regimes
    for (int run = 0; run < 2; ++run) {
        const auto& p1 = result_for(exp, ProtocolId::p1_pretrained_lti, run);
        const auto& p2 = result_for(exp, ProtocolId::p2_pretrained_finetune, run);
        const auto& p3 = result_for(exp, ProtocolId::p3_pretrained_lti_finetune, run);
        CHECK(has_input_prefix(p1.provenance, "synthetic:"));
        CHECK(!has_input_prefix(p1.provenance, "finetune_subset:"));
        CHECK(has_input_prefix(p2.provenance, "finetune_subset:"));
        CHECK(!has_input_prefix(p2.provenance, "synthetic:"));
        CHECK(has_input_prefix(p3.provenance, "synthetic:"));
        CHECK(has_input_prefix(p3.provenance, "finetune_subset:"));
        for (const auto* r : {&p1, &p2, &p3}) CHECK(has_input_prefix(r->provenance, "eval:"));
    }

    // the stored human-readable report re-renders identically
    std::ifstream txt(run_dir / "comparison.txt");
    std::string stored((std::istreambuf_iterator<char>(txt)), {});
    CHECK(rerender_report(exp.run_dir) == stored);
    CHECK(stored.find("P1_pretrained_lti") != std::string::npos);
    CHECK(stored.find("±") != std::string::npos);

    // a second full pass lands on identical numbers
    ExperimentResult again = run_experiment(cfg);
    CHECK(again.run_dir != exp.run_dir);
    REQUIRE(again.results.size() == exp.results.size());
    for (const auto& [name, agg] : exp.aggregates) {
        const auto& other = again.aggregates.at(name);
        CHECK(other.values == agg.values);
        CHECK(other.mean == agg.mean);
        CHECK(other.std_dev == agg.std_dev);
    }
    for (size_t i = 0; i < exp.results.size(); ++i) {
        CHECK(again.results[i].report.accuracy == exp.results[i].report.accuracy);
        CHECK(again.results[i].provenance.at("model_digest") ==
              exp.results[i].provenance.at("model_digest"));
    }
}

TEST_CASE("one regime failing does not sink the others") {
    TempDir dir("exp-fail");
    ExperimentConfig cfg = mini_config(dir);
    cfg.n_runs = 1;
    cfg.cam_per_class = 0;
    cfg.finetune.learning_rate = -1.0; // passes validation, rejected at finetune time

    ExperimentResult exp = run_experiment(cfg);
    REQUIRE(exp.results.size() == 1); // only P1 has no finetune stage
    CHECK(exp.results[0].protocol == ProtocolId::p1_pretrained_lti);
    REQUIRE(exp.failures.size() == 2);
    for (const auto& f : exp.failures) {
        CHECK(f.stage == "finetune");
        CHECK(!f.message.empty());
    }
    CHECK(exp.aggregates.count("P1_pretrained_lti") == 1);
    CHECK(exp.aggregates.size() == 1);
    CHECK(!exp.comparison.at("failures").empty());
    std::string rendered = rerender_report(exp.run_dir);
    CHECK(rendered.find("failed") != std::string::npos);
}

TEST_CASE("a single protocol runs standalone") {
    TempDir dir("proto");
    ExperimentConfig cfg = mini_config(dir);
    cfg.cam_per_class = 0;

    ProtocolResult r = run_protocol(ProtocolId::p2_pretrained_finetune, cfg, 0);
    CHECK(r.run_index == 0);
    CHECK(r.run_seed == cfg.base_seed);
    CHECK(r.report.n_samples > 0);
    CHECK(!has_input_prefix(r.provenance, "synthetic:")); // P2 never sees synthetic data
    CHECK(fs::exists(fs::path(r.provenance.at("checkpoint").get<std::string>())));
}
