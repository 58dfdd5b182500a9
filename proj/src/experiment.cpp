#include "dermgen/experiment.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/image.hpp"
#include "dermgen/log.hpp"
#include "dermgen/rng.hpp"
#include "dermgen/version.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace dermgen {

const char* protocol_name(ProtocolId p) {
    switch (p) {
    case ProtocolId::p1_pretrained_lti:
        return "P1_pretrained_lti";
    case ProtocolId::p2_pretrained_finetune:
        return "P2_pretrained_finetune";
    case ProtocolId::p3_pretrained_lti_finetune:
        return "P3_pretrained_lti_finetune";
    }
    return "?";
}

ProtocolId parse_protocol(const std::string& name) {
    for (ProtocolId p : {ProtocolId::p1_pretrained_lti, ProtocolId::p2_pretrained_finetune,
                         ProtocolId::p3_pretrained_lti_finetune}) {
        if (name == protocol_name(p)) return p;
    }
    // short aliases accepted on the command line
    if (name == "P1" || name == "p1") return ProtocolId::p1_pretrained_lti;
    if (name == "P2" || name == "p2") return ProtocolId::p2_pretrained_finetune;
    if (name == "P3" || name == "p3") return ProtocolId::p3_pretrained_lti_finetune;
    raise(Errc::invalid_config, "unknown protocol '" + name +
                                    "' (expected P1_pretrained_lti, P2_pretrained_finetune, or "
                                    "P3_pretrained_lti_finetune)");
}

// ---------------------------------------------------------------------------
// config serialization

namespace {

json split_to_json(const SplitSpec& s) {
    return json{{"finetune_fraction", s.finetune_fraction},
                {"seed", s.seed},
                {"stratified", s.stratified},
                {"min_per_class", s.min_per_class}};
}

SplitSpec split_from_json(const json& j) {
    SplitSpec s;
    s.finetune_fraction = j.value("finetune_fraction", s.finetune_fraction);
    s.seed = j.value("seed", s.seed);
    s.stratified = j.value("stratified", s.stratified);
    s.min_per_class = j.value("min_per_class", s.min_per_class);
    return s;
}

json preprocess_to_json(const PreprocessConfig& p) {
    json j{{"target_width", p.target_width},
           {"target_height", p.target_height},
           {"channel_means", p.channel_means},
           {"channel_stds", p.channel_stds},
           {"logo_removal", p.logo_removal == LogoRemoval::mask_inpaint ? "mask_inpaint" : "none"}};
    if (p.logo_mask) {
        j["logo_mask"] = json{{"x", p.logo_mask->x},
                              {"y", p.logo_mask->y},
                              {"width", p.logo_mask->width},
                              {"height", p.logo_mask->height}};
    }
    return j;
}

PreprocessConfig preprocess_from_json(const json& j) {
    PreprocessConfig p;
    p.target_width = j.value("target_width", p.target_width);
    p.target_height = j.value("target_height", p.target_height);
    if (j.contains("channel_means")) p.channel_means = j.at("channel_means").get<std::array<float, 3>>();
    if (j.contains("channel_stds")) p.channel_stds = j.at("channel_stds").get<std::array<float, 3>>();
    std::string mode = j.value("logo_removal", "none");
    if (mode == "none") {
        p.logo_removal = LogoRemoval::none;
    } else if (mode == "mask_inpaint") {
        p.logo_removal = LogoRemoval::mask_inpaint;
    } else {
        raise(Errc::invalid_config, "preprocess: unknown logo_removal '" + mode + "'");
    }
    if (j.contains("logo_mask") && !j.at("logo_mask").is_null()) {
        const json& m = j.at("logo_mask");
        p.logo_mask = MaskRegion{m.value("x", 0), m.value("y", 0), m.value("width", 0),
                                 m.value("height", 0)};
    }
    return p;
}

json backend_to_json(const BackendSelection& b) {
    // The bearer token itself is resolved from the environment at run time
    // and is deliberately absent here.
    return json{{"kind", b.kind},
                {"class_signal_strength", b.class_signal_strength},
                {"endpoint", b.http.endpoint},
                {"timeout_ms", b.http.timeout_ms},
                {"retries", b.http.retries},
                {"retry_backoff_ms", b.http.retry_backoff_ms},
                {"auth_token_env", b.auth_token_env},
                {"extra_params", b.extra_params}};
}

BackendSelection backend_from_json(const json& j) {
    BackendSelection b;
    b.kind = j.value("kind", b.kind);
    b.class_signal_strength = j.value("class_signal_strength", b.class_signal_strength);
    b.http.endpoint = j.value("endpoint", b.http.endpoint);
    b.http.timeout_ms = j.value("timeout_ms", b.http.timeout_ms);
    b.http.retries = j.value("retries", b.http.retries);
    b.http.retry_backoff_ms = j.value("retry_backoff_ms", b.http.retry_backoff_ms);
    b.auth_token_env = j.value("auth_token_env", b.auth_token_env);
    if (j.contains("extra_params"))
        b.extra_params = j.at("extra_params").get<std::map<std::string, std::string>>();
    return b;
}

} // namespace

json experiment_config_to_json(const ExperimentConfig& c) {
    std::vector<std::string> protos;
    for (ProtocolId p : c.protocols) protos.push_back(protocol_name(p));
    return json{{"spec_file", c.spec_file},
                {"backend", backend_to_json(c.backend)},
                {"generation",
                 json{{"per_class", c.generation.per_class},
                      {"width", c.generation.width},
                      {"height", c.generation.height}}},
                {"real_root", c.real_root},
                {"split", split_to_json(c.split)},
                {"preprocess", preprocess_to_json(c.preprocess)},
                {"train", train_config_to_json(c.train)},
                {"finetune", finetune_config_to_json(c.finetune)},
                {"protocols", protos},
                {"n_runs", c.n_runs},
                {"base_seed", c.base_seed},
                {"output_dir", c.output_dir},
                {"cam_per_class", c.cam_per_class}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig c;
    c.spec_file = j.value("spec_file", c.spec_file);
    if (j.contains("backend")) c.backend = backend_from_json(j.at("backend"));
    if (j.contains("generation")) {
        const json& g = j.at("generation");
        c.generation.per_class = g.value("per_class", c.generation.per_class);
        c.generation.width = g.value("width", c.generation.width);
        c.generation.height = g.value("height", c.generation.height);
    }
    c.real_root = j.value("real_root", c.real_root);
    if (j.contains("split")) c.split = split_from_json(j.at("split"));
    if (j.contains("preprocess")) c.preprocess = preprocess_from_json(j.at("preprocess"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("finetune")) c.finetune = finetune_config_from_json(j.at("finetune"));
    if (j.contains("protocols")) {
        c.protocols.clear();
        for (const auto& name : j.at("protocols"))
            c.protocols.push_back(parse_protocol(name.get<std::string>()));
    }
    c.n_runs = j.value("n_runs", c.n_runs);
    c.base_seed = j.value("base_seed", c.base_seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.cam_per_class = j.value("cam_per_class", c.cam_per_class);
    return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), Errc::io_error, "cannot open config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        raise(Errc::malformed_file, "config " + path + ": " + e.what());
    }
    try {
        return experiment_config_from_json(j);
    } catch (const json::exception& e) {
        raise(Errc::malformed_file, "config " + path + ": " + e.what());
    }
}

void validate_experiment_config(const ExperimentConfig& c) {
    require(!c.spec_file.empty(), Errc::invalid_config, "experiment: spec_file is required");
    require(fs::exists(c.spec_file), Errc::invalid_config,
            "experiment: spec_file does not exist: " + c.spec_file);
    require(!c.real_root.empty(), Errc::invalid_config, "experiment: real_root is required");
    require(fs::is_directory(c.real_root), Errc::invalid_config,
            "experiment: real_root is not a directory: " + c.real_root);
    require(!c.protocols.empty(), Errc::invalid_config, "experiment: no protocols selected");
    require(c.n_runs >= 1, Errc::invalid_config, "experiment: n_runs must be >= 1");
    require(c.generation.per_class >= 1, Errc::invalid_config,
            "experiment: generation.per_class must be >= 1");
    require(c.generation.width >= 1 && c.generation.height >= 1, Errc::invalid_config,
            "experiment: generation size must be positive");
    require(c.cam_per_class >= 0, Errc::invalid_config,
            "experiment: cam_per_class must be >= 0");
    require(c.backend.kind == "mock" || c.backend.kind == "http", Errc::invalid_config,
            "experiment: backend.kind must be 'mock' or 'http'");
    if (c.backend.kind == "mock") {
        require(c.backend.class_signal_strength >= 0.0 && c.backend.class_signal_strength <= 1.0,
                Errc::invalid_config, "experiment: class_signal_strength must be in [0, 1]");
    } else {
        require(!c.backend.http.endpoint.empty(), Errc::invalid_config,
                "experiment: http backend needs an endpoint");
    }
    require(nn::known_architecture(c.train.architecture), Errc::invalid_config,
            "experiment: unknown architecture '" + c.train.architecture + "'");
    if (c.train.pretrained) {
        require(!c.train.pretrained_checkpoint.empty(), Errc::invalid_config,
                "experiment: train.pretrained=true requires train.pretrained_checkpoint "
                "(no weights ship with this tool); set pretrained=false to start from "
                "a seeded initialization");
    }
    require(c.train.epochs >= 1 && c.finetune.epochs >= 1, Errc::invalid_config,
            "experiment: epochs must be >= 1");
    require(c.train.learning_rate > 0.0, Errc::invalid_config,
            "experiment: train.learning_rate must be > 0");
    require(c.finetune.per_class_count >= 1, Errc::invalid_config,
            "experiment: finetune.per_class_count must be >= 1");
    require(c.split.finetune_fraction > 0.0 && c.split.finetune_fraction < 1.0,
            Errc::invalid_config, "experiment: split fraction must be in (0, 1)");
}

std::unique_ptr<GenerationBackend> make_backend(const BackendSelection& selection) {
    if (selection.kind == "mock") {
        require(selection.class_signal_strength >= 0.0 && selection.class_signal_strength <= 1.0,
                Errc::invalid_config, "mock backend: class_signal_strength must be in [0, 1]");
        return make_mock_backend(selection.class_signal_strength);
    }
    if (selection.kind == "http") {
        require(!selection.http.endpoint.empty(), Errc::invalid_config,
                "http backend: endpoint is required");
        HttpBackendConfig cfg = selection.http;
        if (!selection.auth_token_env.empty()) {
            const char* token = std::getenv(selection.auth_token_env.c_str());
            require(token != nullptr && token[0] != '\0', Errc::invalid_config,
                    "http backend: environment variable " + selection.auth_token_env +
                        " is not set");
            cfg.auth_token = token; // lives only in memory from here on
        }
        return make_http_backend(std::move(cfg));
    }
    raise(Errc::invalid_config, "unknown backend kind '" + selection.kind + "'");
}

// ---------------------------------------------------------------------------
// orchestration

namespace {

// An Error caught mid-protocol, tagged with the stage that raised it so the
// failure report can say where things went wrong.
struct StagedError {
    std::string stage;
    std::string message;
};

template <typename F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        throw StagedError{name, e.what()};
    } catch (const std::exception& e) {
        throw StagedError{name, e.what()};
    }
}

// Everything the protocols consume, prepared once per experiment.
struct PreparedInputs {
    std::vector<std::string> labels;
    DatasetManifest synthetic; // empty when neither P1 nor P3 is selected
    std::string synthetic_digest;
    DatasetManifest eval_split;
    std::string eval_digest;
    DatasetManifest finetune_subset;
    std::string subset_digest;
};

bool wants_synthetic(const ExperimentConfig& c) {
    for (ProtocolId p : c.protocols)
        if (p != ProtocolId::p2_pretrained_finetune) return true;
    return false;
}

std::string make_run_dir(const std::string& output_dir) {
    std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm_utc);
    fs::path base = fs::path(output_dir) / stamp;
    fs::path dir = base;
    for (int i = 2; fs::exists(dir); ++i) dir = base.string() + "-" + std::to_string(i);
    fs::create_directories(dir);
    return dir.string();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write: " + path);
    out << text;
}

void write_json_file(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

PreparedInputs prepare_inputs(const ExperimentConfig& config, const std::string& run_dir) {
    PreparedInputs inputs;
    fs::path inputs_dir = fs::path(run_dir) / "inputs";
    fs::create_directories(inputs_dir);

    std::vector<ConditionSpec> specs =
        run_stage("parse-spec", [&] { return parse_spec_file(config.spec_file); });
    std::set<std::string> spec_labels;
    for (const auto& s : specs) spec_labels.insert(s.label);

    if (wants_synthetic(config)) {
        inputs.synthetic = run_stage("generate", [&] {
            auto backend = make_backend(config.backend);
            BuildOptions options;
            options.width = config.generation.width;
            options.height = config.generation.height;
            for (const auto& [k, v] : config.backend.extra_params) options.backend_params[k] = v;
            fs::path synth_dir = fs::path(run_dir) / "synthetic";
            return build_synthetic_dataset(specs, config.generation.per_class, *backend,
                                           synth_dir.string(), derive_seed(config.base_seed, "synthetic"),
                                           options);
        });
        inputs.synthetic_digest = manifest_checksum(inputs.synthetic);
    }

    DatasetManifest real = run_stage("ingest", [&] {
        RealDatasetSource source;
        source.root = fs::absolute(config.real_root).string();
        return ingest_real(source);
    });
    std::set<std::string> real_labels(real.class_labels.begin(), real.class_labels.end());
    require(real_labels == spec_labels, Errc::label_mismatch,
            "real dataset classes differ from the condition set in " + config.spec_file);
    inputs.labels = real.class_labels; // sorted by ingest

    auto [finetune_pool, eval_split] = run_stage("split", [&] {
        SplitSpec eff = config.split;
        eff.seed = derive_seed(config.base_seed, "split", config.split.seed);
        return split_real(real, eff);
    });
    inputs.eval_split = std::move(eval_split);
    inputs.eval_digest = manifest_checksum(inputs.eval_split);

    inputs.finetune_subset = run_stage("finetune-subset", [&] {
        return select_finetune_subset(finetune_pool, config.finetune.per_class_count,
                                      derive_seed(config.base_seed, "finetune-subset"));
    });
    inputs.subset_digest = manifest_checksum(inputs.finetune_subset);

    save_manifest(real, (inputs_dir / "real.jsonl").string());
    save_manifest(finetune_pool, (inputs_dir / "finetune_pool.jsonl").string());
    save_manifest(inputs.eval_split, (inputs_dir / "eval.jsonl").string());
    save_manifest(inputs.finetune_subset, (inputs_dir / "finetune_subset.jsonl").string());
    return inputs;
}

// Cache of the synthetic-trained model, shared by P1 and P3 within a run.
// Keyed on data digest + full training config so any change invalidates it.
using ModelCache = std::map<std::string, TrainedModel>;

std::string synth_model_key(const std::string& synthetic_digest, const TrainConfig& tc) {
    std::string cfg = train_config_to_json(tc).dump();
    return synthetic_digest + "|" + sha256_hex(cfg.data(), cfg.size());
}

TrainedModel& synthetic_model_for_run(const ExperimentConfig& config, const PreparedInputs& inputs,
                                      uint64_t run_seed, ModelCache& cache) {
    require(!inputs.synthetic.records.empty(), Errc::invalid_config,
            "protocol needs synthetic training data but none was generated");
    TrainConfig tc = config.train;
    tc.num_classes = static_cast<int>(inputs.labels.size());
    tc.seed = derive_seed(run_seed, "train");
    std::string key = synth_model_key(inputs.synthetic_digest, tc);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    TrainedModel model = run_stage(
        "train", [&] { return train(inputs.synthetic, config.preprocess, tc); });
    return cache.emplace(key, std::move(model)).first->second;
}

void write_cams(const TrainedModel& model, const DatasetManifest& eval_split,
                const PreprocessConfig& pre, const std::string& cam_dir, int per_class) {
    if (per_class <= 0) return;
    std::map<std::string, int> taken;
    for (const auto& record : eval_split.records) {
        int& n = taken[record.condition_label];
        if (n >= per_class) continue;
        ++n;
        cv::Mat rgb = load_image(eval_split.resolve(record));
        CamMap cam = grad_cam(model, rgb, pre, record.condition_label);
        cv::Mat blended = overlay(cam, rgb, 0.5);
        fs::path dir = fs::path(cam_dir) / record.condition_label;
        fs::create_directories(dir);
        std::string stem = fs::path(record.relative_path).stem().string();
        save_png((dir / (stem + "__cam_" + record.condition_label + ".png")).string(), blended);
    }
}

json seeds_json(const ExperimentConfig& config, uint64_t run_seed) {
    return json{{"base", config.base_seed}, {"run", run_seed}};
}

ProtocolResult execute_protocol(const ExperimentConfig& config, const PreparedInputs& inputs,
                                const std::string& run_dir, ProtocolId protocol, int run_index,
                                ModelCache& cache) {
    ProtocolResult result;
    result.protocol = protocol;
    result.run_index = run_index;
    result.run_seed = config.base_seed + static_cast<uint64_t>(run_index);

    fs::path proto_dir = fs::path(run_dir) / "runs" / ("run" + std::to_string(run_index));
    fs::create_directories(proto_dir);
    std::string tag;
    TrainedModel model;
    json provenance;
    provenance["protocol"] = protocol_name(protocol);
    provenance["run_index"] = run_index;
    json seeds = seeds_json(config, result.run_seed);

    switch (protocol) {
    case ProtocolId::p1_pretrained_lti: {
        tag = "p1";
        model = synthetic_model_for_run(config, inputs, result.run_seed, cache);
        seeds["train"] = derive_seed(result.run_seed, "train");
        provenance["inputs"] = {"synthetic:" + inputs.synthetic_digest,
                                "eval:" + inputs.eval_digest};
        break;
    }
    case ProtocolId::p2_pretrained_finetune: {
        tag = "p2";
        TrainConfig bc = config.train;
        bc.num_classes = static_cast<int>(inputs.labels.size());
        bc.seed = derive_seed(result.run_seed, "p2-base");
        TrainedModel base =
            run_stage("base-model", [&] { return make_untrained_model(inputs.labels, bc); });
        FinetuneConfig fc = config.finetune;
        fc.seed = derive_seed(result.run_seed, "p2-finetune");
        model = run_stage("finetune", [&] {
            return finetune_logits(base, inputs.finetune_subset, config.preprocess, fc);
        });
        seeds["base"] = bc.seed;
        seeds["finetune"] = fc.seed;
        provenance["base_model_digest"] = model_digest(base);
        provenance["inputs"] = {"finetune_subset:" + inputs.subset_digest,
                                "eval:" + inputs.eval_digest};
        break;
    }
    case ProtocolId::p3_pretrained_lti_finetune: {
        tag = "p3";
        TrainedModel& base = synthetic_model_for_run(config, inputs, result.run_seed, cache);
        FinetuneConfig fc = config.finetune;
        fc.seed = derive_seed(result.run_seed, "p3-finetune");
        model = run_stage("finetune", [&] {
            return finetune_logits(base, inputs.finetune_subset, config.preprocess, fc);
        });
        seeds["train"] = derive_seed(result.run_seed, "train");
        seeds["finetune"] = fc.seed;
        provenance["base_model_digest"] = model_digest(base);
        provenance["inputs"] = {"synthetic:" + inputs.synthetic_digest,
                                "finetune_subset:" + inputs.subset_digest,
                                "eval:" + inputs.eval_digest};
        break;
    }
    }

    std::string ckpt = (proto_dir / (tag + ".ckpt")).string();
    run_stage("checkpoint", [&] { save_model(model, ckpt); });
    result.report = run_stage(
        "evaluate", [&] { return evaluate(model, inputs.eval_split, config.preprocess); });
    write_json_file((proto_dir / (tag + "_report.json")).string(),
                    eval_report_to_json(result.report));
    run_stage("cam", [&] {
        write_cams(model, inputs.eval_split, config.preprocess,
                   (proto_dir / "cams" / protocol_name(protocol)).string(), config.cam_per_class);
    });

    provenance["seeds"] = seeds;
    provenance["model_digest"] = model_digest(model);
    provenance["checkpoint"] = ckpt;
    result.provenance = std::move(provenance);

    log_info(std::string(protocol_name(protocol)) + " run " + std::to_string(run_index) +
             ": accuracy " + std::to_string(result.report.accuracy));
    return result;
}

// Side-by-side saliency panel per class: original, then each protocol's
// overlay in comparison order P2, P1, P3.
void write_panels(const ExperimentConfig& config, const PreparedInputs& inputs,
                  const std::string& run_dir, int run_index) {
    if (config.cam_per_class <= 0) return;
    const std::vector<ProtocolId> order = {ProtocolId::p2_pretrained_finetune,
                                           ProtocolId::p1_pretrained_lti,
                                           ProtocolId::p3_pretrained_lti_finetune};
    fs::path run_sub = fs::path(run_dir) / "runs" / ("run" + std::to_string(run_index));
    std::set<std::string> done;
    for (const auto& record : inputs.eval_split.records) {
        if (!done.insert(record.condition_label).second) continue; // first per class
        std::string stem = fs::path(record.relative_path).stem().string();
        std::string cam_name = stem + "__cam_" + record.condition_label + ".png";

        std::vector<cv::Mat> cells;
        cv::Mat original = load_image(inputs.eval_split.resolve(record));
        cv::Size cell(config.preprocess.target_width, config.preprocess.target_height);
        cv::Mat resized;
        cv::resize(original, resized, cell, 0.0, 0.0, cv::INTER_LINEAR);
        cells.push_back(resized);
        bool complete = true;
        for (ProtocolId p : order) {
            fs::path cam_path =
                run_sub / "cams" / protocol_name(p) / record.condition_label / cam_name;
            if (!fs::exists(cam_path)) {
                complete = false;
                break;
            }
            cv::Mat cam_img = load_image(cam_path.string());
            cv::Mat cam_resized;
            cv::resize(cam_img, cam_resized, cell, 0.0, 0.0, cv::INTER_LINEAR);
            cells.push_back(cam_resized);
        }
        if (!complete) continue; // needs every protocol's overlay for this image

        const int gutter = 4;
        int width = static_cast<int>(cells.size()) * cell.width +
                    (static_cast<int>(cells.size()) - 1) * gutter;
        cv::Mat panel(cell.height, width, CV_8UC3, cv::Scalar(255, 255, 255));
        int x = 0;
        for (const cv::Mat& c : cells) {
            c.copyTo(panel(cv::Rect(x, 0, cell.width, cell.height)));
            x += cell.width + gutter;
        }
        fs::path panel_dir = run_sub / "panels";
        fs::create_directories(panel_dir);
        save_png((panel_dir / (record.condition_label + "_" + stem + ".png")).string(), panel);
    }
}

EvalReport mean_normalized_report(const std::vector<const EvalReport*>& reports) {
    EvalReport mean = *reports.front();
    size_t k = mean.label_order.size();
    mean.confusion_normalized.assign(k, std::vector<double>(k, 0.0));
    for (const EvalReport* r : reports)
        for (size_t i = 0; i < k; ++i)
            for (size_t j = 0; j < k; ++j)
                mean.confusion_normalized[i][j] += r->confusion_normalized[i][j] / reports.size();
    return mean;
}

std::string render_comparison(const json& comparison) {
    std::ostringstream out;
    out << "== protocol comparison ==\n";
    out << "runs: " << comparison.value("n_runs", 0)
        << "   base seed: " << comparison.value("base_seed", 0ull) << "\n\n";
    out << "accuracy, percent (mean over runs, sample std dev):\n";
    for (const auto& [name, agg] : comparison.at("aggregates").items()) {
        out << "  " << name << ": " << agg.value("formatted", std::string("-")) << "  (runs:";
        for (const auto& v : agg.at("values_pct")) {
            char buf[16];
            std::snprintf(buf, sizeof(buf), " %.1f", v.get<double>());
            out << buf;
        }
        out << ")\n";
    }
    if (comparison.contains("confusion") && !comparison.at("confusion").empty()) {
        out << "\nrow-normalized confusion (rows truth, cols prediction; mean over runs):\n";
        for (const auto& [name, table] : comparison.at("confusion").items()) {
            out << "\n[" << name << "]\n" << table.get<std::string>();
        }
    }
    if (comparison.contains("failures") && !comparison.at("failures").empty()) {
        out << "\nfailed protocol runs:\n";
        for (const auto& f : comparison.at("failures")) {
            out << "  " << f.value("protocol", std::string("?")) << " run "
                << f.value("run_index", -1) << " at stage '" << f.value("stage", std::string("?"))
                << "': " << f.value("message", std::string()) << "\n";
        }
    }
    const json& ref = comparison.at("reference");
    out << "\nfull-scale reference (hosted generation backend, complete corpus, "
        << ref.value("architecture", std::string("resnet50")) << "):\n";
    for (const auto& [name, v] : ref.at("accuracy_pct").items()) {
        char buf[64];
        if (v.contains("std")) {
            std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", v.value("mean", 0.0),
                          v.at("std").get<double>());
        } else {
            std::snprintf(buf, sizeof(buf), "%.1f", v.value("mean", 0.0));
        }
        out << "  " << name << ": " << buf << "\n";
    }
    out << "desk-scale runs are not expected to reproduce these numbers.\n";
    return out.str();
}

} // namespace

ProtocolResult run_protocol(ProtocolId protocol, const ExperimentConfig& config, int run_index) {
    validate_experiment_config(config);
    require(run_index >= 0, Errc::invalid_argument, "run_index must be >= 0");
    ExperimentConfig local = config;
    local.protocols = {protocol};
    std::string run_dir = make_run_dir(local.output_dir);
    write_json_file(run_dir + "/config.json", experiment_config_to_json(local));
    try {
        PreparedInputs inputs = prepare_inputs(local, run_dir);
        ModelCache cache;
        ProtocolResult result =
            execute_protocol(local, inputs, run_dir, protocol, run_index, cache);
        write_json_file(run_dir + "/provenance.json", result.provenance);
        return result;
    } catch (const StagedError& e) {
        raise(Errc::io_error, "stage '" + e.stage + "' failed: " + e.message);
    }
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    validate_experiment_config(config);
    ExperimentResult exp;
    exp.run_dir = make_run_dir(config.output_dir);
    log_info("experiment output: " + exp.run_dir);
    write_json_file(exp.run_dir + "/config.json", experiment_config_to_json(config));

    PreparedInputs inputs;
    try {
        inputs = prepare_inputs(config, exp.run_dir);
    } catch (const StagedError& e) {
        // nothing can run without inputs; surface as a hard error
        raise(Errc::io_error, "stage '" + e.stage + "' failed: " + e.message);
    }

    ModelCache cache;
    for (int run = 0; run < config.n_runs; ++run) {
        for (ProtocolId protocol : config.protocols) {
            try {
                exp.results.push_back(
                    execute_protocol(config, inputs, exp.run_dir, protocol, run, cache));
            } catch (const StagedError& e) {
                log_error(std::string(protocol_name(protocol)) + " run " + std::to_string(run) +
                          " failed at stage '" + e.stage + "': " + e.message);
                exp.failures.push_back({protocol, run, e.stage, e.message});
            }
        }
        write_panels(config, inputs, exp.run_dir, run);
    }

    // aggregate accuracies (percent) per protocol, in run order
    std::map<std::string, std::vector<double>> values;
    std::map<std::string, std::vector<const EvalReport*>> reports;
    json runs_json = json::array();
    for (const ProtocolResult& r : exp.results) {
        values[protocol_name(r.protocol)].push_back(r.report.accuracy * 100.0);
        reports[protocol_name(r.protocol)].push_back(&r.report);
        runs_json.push_back(json{{"protocol", protocol_name(r.protocol)},
                                 {"run_index", r.run_index},
                                 {"run_seed", r.run_seed},
                                 {"accuracy", r.report.accuracy},
                                 {"provenance", r.provenance}});
    }

    json aggregates_json;
    for (const auto& [name, vals] : values) {
        RunAggregate agg = aggregate_runs(vals);
        exp.aggregates[name] = agg;
        aggregates_json[name] = json{{"values_pct", agg.values},
                                     {"mean_pct", agg.mean},
                                     {"std_pct", agg.std_dev},
                                     {"n_runs", agg.n_runs},
                                     {"formatted", format_mean_std(agg)}};
    }

    json confusion_json;
    for (const auto& [name, list] : reports) {
        EvalReport mean = mean_normalized_report(list);
        confusion_json[name] = render_confusion_table(mean);
    }

    json failures_json = json::array();
    for (const ProtocolFailure& f : exp.failures) {
        failures_json.push_back(json{{"protocol", protocol_name(f.protocol)},
                                     {"run_index", f.run_index},
                                     {"stage", f.stage},
                                     {"message", f.message}});
    }

    exp.comparison = json{{"tool", kToolId},
                          {"n_runs", config.n_runs},
                          {"base_seed", config.base_seed},
                          {"labels", inputs.labels},
                          {"aggregates", aggregates_json},
                          {"confusion", confusion_json},
                          {"runs", runs_json},
                          {"failures", failures_json},
                          {"inputs",
                           json{{"synthetic", inputs.synthetic_digest},
                                {"eval", inputs.eval_digest},
                                {"finetune_subset", inputs.subset_digest}}},
                          {"reference", reference_results()},
                          {"notes",
                           json::array({"std dev is the sample estimate (n-1); 0.0 for one run",
                                        "run seeds are base_seed + run_index"})}};
    write_json_file(exp.run_dir + "/comparison.json", exp.comparison);
    write_text(exp.run_dir + "/comparison.txt", render_comparison(exp.comparison));

    if (!exp.failures.empty())
        log_warn(std::to_string(exp.failures.size()) + " protocol run(s) failed; see comparison");
    return exp;
}

std::string rerender_report(const std::string& run_dir) {
    std::string path = (fs::path(run_dir) / "comparison.json").string();
    std::ifstream in(path);
    require(in.good(), Errc::io_error, "no comparison.json under " + run_dir);
    json comparison;
    try {
        comparison = json::parse(in);
    } catch (const json::exception& e) {
        raise(Errc::malformed_file, path + ": " + e.what());
    }
    try {
        return render_comparison(comparison);
    } catch (const json::exception& e) {
        raise(Errc::malformed_file, path + ": " + e.what());
    }
}

json reference_results() {
    // Published full-scale numbers for this comparison; kept in reports as
    // reading context next to desk-scale results.
    return json{
        {"architecture", "resnet50"},
        {"runs_reported", 5},
        {"accuracy_pct",
         json{{"P1_pretrained_lti", json{{"mean", 42.0}}},
              {"P2_pretrained_finetune", json{{"mean", 56.0}, {"std", 0.6}}},
              {"P3_pretrained_lti_finetune", json{{"mean", 63.0}, {"std", 2.8}}}}},
        {"confusion_labels",
         json::array({"atopic_dermatitis", "urticaria_hives", "scabies", "warts"})},
        // row-normalized confusion of the synthetic-only (P1) model
        {"confusion_row_normalized_P1",
         json::array({json::array({0.64, 0.05, 0.27, 0.04}), json::array({0.37, 0.47, 0.14, 0.02}),
                      json::array({0.36, 0.04, 0.48, 0.12}),
                      json::array({0.53, 0.01, 0.32, 0.14})})}};
}

} // namespace dermgen
