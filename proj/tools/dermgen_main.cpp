// Command-line front end. Subcommands mirror the pipeline stages; `run`
// drives the whole experiment from one config file.

#include "dermgen/data.hpp"
#include "dermgen/error.hpp"
#include "dermgen/evaluation.hpp"
#include "dermgen/experiment.hpp"
#include "dermgen/generation.hpp"
#include "dermgen/image.hpp"
#include "dermgen/log.hpp"
#include "dermgen/prompt.hpp"
#include "dermgen/rng.hpp"
#include "dermgen/training.hpp"
#include "dermgen/version.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace dermgen;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    bool deterministic = false; // execution is deterministic regardless; kept for scripts
    std::string out;
};

ExperimentConfig effective_config(const GlobalArgs& g) {
    ExperimentConfig c;
    if (!g.config_path.empty()) c = load_experiment_config(g.config_path);
    if (g.seed) c.base_seed = *g.seed;
    if (!g.out.empty()) c.output_dir = g.out;
    return c;
}

std::string out_or(const GlobalArgs& g, const std::string& fallback) {
    return g.out.empty() ? fallback : g.out;
}

int cmd_compile_prompts(const GlobalArgs& g, const std::string& spec_path, int per_class) {
    ExperimentConfig cfg = effective_config(g);
    std::string path = spec_path.empty() ? cfg.spec_file : spec_path;
    require(!path.empty(), Errc::invalid_config, "compile-prompts: no spec file (use --spec or --config)");
    auto specs = parse_spec_file(path);
    json lines = json::array();
    for (const auto& spec : specs) {
        auto prompts = enumerate_instantiations(spec, per_class, cfg.base_seed);
        for (const auto& p : prompts) {
            lines.push_back(json{{"label", p.condition_label},
                                 {"prompt", p.rendered},
                                 {"skin_tone", grade_name(p.slots.skin_tone.grade)}});
        }
    }
    if (g.out.empty()) {
        for (const auto& l : lines) std::cout << l.dump() << "\n";
    } else {
        std::ofstream f(g.out, std::ios::trunc);
        require(f.good(), Errc::io_error, "cannot write: " + g.out);
        for (const auto& l : lines) f << l.dump() << "\n";
        log_info("wrote " + std::to_string(lines.size()) + " prompts to " + g.out);
    }
    return 0;
}

int cmd_generate(const GlobalArgs& g) {
    ExperimentConfig cfg = effective_config(g);
    require(!cfg.spec_file.empty(), Errc::invalid_config, "generate: config needs spec_file");
    auto specs = parse_spec_file(cfg.spec_file);
    auto backend = make_backend(cfg.backend);
    BuildOptions options;
    options.width = cfg.generation.width;
    options.height = cfg.generation.height;
    for (const auto& [k, v] : cfg.backend.extra_params) options.backend_params[k] = v;
    std::string out_dir = out_or(g, (fs::path(cfg.output_dir) / "synthetic").string());
    DatasetManifest m = build_synthetic_dataset(specs, cfg.generation.per_class, *backend, out_dir,
                                                derive_seed(cfg.base_seed, "synthetic"), options);
    log_info("generated " + std::to_string(m.records.size()) + " images under " + out_dir);
    std::cout << out_dir << "/manifest.jsonl\n";
    return 0;
}

int cmd_ingest(const GlobalArgs& g, const std::string& root, bool skip_unreadable) {
    ExperimentConfig cfg = effective_config(g);
    RealDatasetSource source;
    source.root = root.empty() ? cfg.real_root : root;
    require(!source.root.empty(), Errc::invalid_config, "ingest: no dataset root (use --root or --config)");
    source.skip_unreadable = skip_unreadable;
    DatasetManifest m = ingest_real(source);
    std::string path = out_or(g, "real_manifest.jsonl");
    save_manifest(m, path);
    log_info("ingested " + std::to_string(m.records.size()) + " images, " +
             std::to_string(m.class_labels.size()) + " classes");
    std::cout << path << "\n";
    return 0;
}

int cmd_split(const GlobalArgs& g, const std::string& manifest_path) {
    ExperimentConfig cfg = effective_config(g);
    DatasetManifest m = load_manifest(manifest_path);
    SplitSpec eff = cfg.split;
    eff.seed = derive_seed(cfg.base_seed, "split", cfg.split.seed);
    auto [finetune_pool, eval_split] = split_real(m, eff);
    fs::path dir = g.out.empty() ? fs::path(".") : fs::path(g.out);
    fs::create_directories(dir);
    save_manifest(finetune_pool, (dir / "finetune_pool.jsonl").string());
    save_manifest(eval_split, (dir / "eval.jsonl").string());
    log_info("split " + std::to_string(m.records.size()) + " -> finetune pool " +
             std::to_string(finetune_pool.records.size()) + ", eval " +
             std::to_string(eval_split.records.size()));
    std::cout << (dir / "finetune_pool.jsonl").string() << "\n"
              << (dir / "eval.jsonl").string() << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& g, const std::string& data_path) {
    ExperimentConfig cfg = effective_config(g);
    DatasetManifest m = load_manifest(data_path);
    TrainConfig tc = cfg.train;
    tc.num_classes = static_cast<int>(m.class_labels.size());
    tc.seed = derive_seed(cfg.base_seed, "train");
    TrainedModel model = train(m, cfg.preprocess, tc);
    std::string path = out_or(g, "model.ckpt");
    save_model(model, path);
    std::cout << path << "\n";
    return 0;
}

int cmd_finetune(const GlobalArgs& g, const std::string& model_path, const std::string& data_path) {
    ExperimentConfig cfg = effective_config(g);
    TrainedModel model = load_model(model_path);
    DatasetManifest pool = load_manifest(data_path);
    DatasetManifest subset = select_finetune_subset(pool, cfg.finetune.per_class_count,
                                                    derive_seed(cfg.base_seed, "finetune-subset"));
    log_info("selected " + std::to_string(subset.records.size()) + " of " +
             std::to_string(pool.records.size()) + " pool images for the logit finetune");
    FinetuneConfig fc = cfg.finetune;
    fc.seed = derive_seed(cfg.base_seed, "finetune");
    TrainedModel tuned = finetune_logits(model, subset, cfg.preprocess, fc);
    std::string path = out_or(g, "finetuned.ckpt");
    save_model(tuned, path);
    std::cout << path << "\n";
    return 0;
}

int cmd_evaluate(const GlobalArgs& g, const std::string& model_path, const std::string& data_path) {
    ExperimentConfig cfg = effective_config(g);
    TrainedModel model = load_model(model_path);
    DatasetManifest m = load_manifest(data_path);
    EvalReport report = evaluate(model, m, cfg.preprocess);
    std::cout << "accuracy: " << report.accuracy << " on " << report.n_samples << " images\n";
    std::cout << render_confusion_table(report);
    if (!g.out.empty()) {
        std::ofstream f(g.out, std::ios::trunc);
        require(f.good(), Errc::io_error, "cannot write: " + g.out);
        f << eval_report_to_json(report).dump(2) << "\n";
        log_info("report written to " + g.out);
    }
    return 0;
}

int cmd_cam(const GlobalArgs& g, const std::string& model_path, const std::string& image_path,
            const std::string& target, double alpha) {
    ExperimentConfig cfg = effective_config(g);
    TrainedModel model = load_model(model_path);
    cv::Mat rgb = load_image(image_path);
    std::optional<std::string> target_class;
    if (!target.empty()) target_class = target;
    CamMap cam = grad_cam(model, rgb, cfg.preprocess, target_class);
    cv::Mat blended = overlay(cam, rgb, alpha);
    std::string path = out_or(g, fs::path(image_path).stem().string() + "_cam.png");
    save_png(path, blended);
    log_info("saliency target: " + cam.target_class);
    std::cout << path << "\n";
    return 0;
}

int cmd_run(const GlobalArgs& g) {
    require(!g.config_path.empty(), Errc::invalid_config, "run: --config is required");
    ExperimentConfig cfg = effective_config(g);
    ExperimentResult result = run_experiment(cfg);
    std::cout << rerender_report(result.run_dir);
    std::cout << "artifacts: " << result.run_dir << "\n";
    return result.failures.empty() ? 0 : 2; // partial results are on disk either way
}

int cmd_report(const std::string& run_dir) {
    std::cout << rerender_report(run_dir);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-driven synthetic image training for skin-condition classification"};
    app.set_version_flag("--version", std::string(kToolId));
    app.require_subcommand(1);

    GlobalArgs g;
    uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "base seed override");
    app.add_option("--config", g.config_path, "experiment config (json)");
    app.add_flag("--deterministic", g.deterministic,
                 "accepted for interface stability; execution is always deterministic");
    app.add_option("--out", g.out, "output path override (meaning depends on the subcommand)");

    auto* compile = app.add_subcommand("compile-prompts", "expand a condition spec into prompts");
    std::string spec_path;
    int per_class = 10;
    compile->add_option("--spec", spec_path, "condition spec file (defaults to config spec_file)");
    compile->add_option("--per-class", per_class, "prompts per condition")->check(CLI::PositiveNumber);

    auto* generate = app.add_subcommand("generate", "build the synthetic dataset");

    auto* ingest = app.add_subcommand("ingest", "walk a class-per-folder image tree into a manifest");
    std::string ingest_root;
    bool skip_unreadable = false;
    ingest->add_option("--root", ingest_root, "dataset root (defaults to config real_root)");
    ingest->add_flag("--skip-unreadable", skip_unreadable, "skip undecodable files with a warning");

    auto* split = app.add_subcommand("split", "stratified finetune/eval split of a manifest");
    std::string split_manifest;
    split->add_option("--manifest", split_manifest, "dataset manifest")->required();

    auto* train_cmd = app.add_subcommand("train", "train a classifier on a manifest");
    std::string train_data;
    train_cmd->add_option("--data", train_data, "training manifest")->required();

    auto* finetune_cmd = app.add_subcommand("finetune", "logit-layer finetune on a real subset");
    std::string ft_model, ft_data;
    finetune_cmd->add_option("--model", ft_model, "checkpoint to start from")->required();
    finetune_cmd->add_option("--data", ft_data, "finetune pool manifest")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "accuracy and confusion on a manifest");
    std::string eval_model, eval_data;
    eval_cmd->add_option("--model", eval_model, "checkpoint")->required();
    eval_cmd->add_option("--data", eval_data, "evaluation manifest")->required();

    auto* cam_cmd = app.add_subcommand("cam", "saliency overlay for one image");
    std::string cam_model, cam_image, cam_target;
    double cam_alpha = 0.5;
    cam_cmd->add_option("--model", cam_model, "checkpoint")->required();
    cam_cmd->add_option("--image", cam_image, "input image")->required();
    cam_cmd->add_option("--target", cam_target, "class to explain (default: prediction)");
    cam_cmd->add_option("--alpha", cam_alpha, "overlay strength")->check(CLI::Range(0.0, 1.0));

    auto* run_cmd = app.add_subcommand("run", "full experiment from a config file");

    auto* report_cmd = app.add_subcommand("report", "re-render a stored comparison");
    std::string report_dir;
    report_cmd->add_option("--run-dir", report_dir, "experiment output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1; // bad usage is a validation failure
    }
    if (*seed_opt) g.seed = seed_value;

    try {
        if (app.got_subcommand(compile)) return cmd_compile_prompts(g, spec_path, per_class);
        if (app.got_subcommand(generate)) return cmd_generate(g);
        if (app.got_subcommand(ingest)) return cmd_ingest(g, ingest_root, skip_unreadable);
        if (app.got_subcommand(split)) return cmd_split(g, split_manifest);
        if (app.got_subcommand(train_cmd)) return cmd_train(g, train_data);
        if (app.got_subcommand(finetune_cmd)) return cmd_finetune(g, ft_model, ft_data);
        if (app.got_subcommand(eval_cmd)) return cmd_evaluate(g, eval_model, eval_data);
        if (app.got_subcommand(cam_cmd)) return cmd_cam(g, cam_model, cam_image, cam_target, cam_alpha);
        if (app.got_subcommand(run_cmd)) return cmd_run(g);
        if (app.got_subcommand(report_cmd)) return cmd_report(report_dir);
    } catch (const Error& e) {
        log_error(e.what());
        return is_validation_error(e.code()) ? 1 : 2;
    } catch (const std::exception& e) {
        log_error(e.what());
        return 2;
    }
    return 0;
}
