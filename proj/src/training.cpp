#include "dermgen/training.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"
#include "dermgen/log.hpp"
#include "dermgen/nn/optim.hpp"
#include "dermgen/rng.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace dermgen {

using nlohmann::json;

json train_config_to_json(const TrainConfig& c) {
    return json{{"architecture", c.architecture},
                {"pretrained", c.pretrained},
                {"pretrained_checkpoint", c.pretrained_checkpoint},
                {"num_classes", c.num_classes},
                {"epochs", c.epochs},
                {"learning_rate", c.learning_rate},
                {"optimizer", c.optimizer},
                {"loss", c.loss},
                {"batch_size", c.batch_size},
                {"seed", c.seed}};
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.architecture = j.value("architecture", c.architecture);
    c.pretrained = j.value("pretrained", c.pretrained);
    c.pretrained_checkpoint = j.value("pretrained_checkpoint", c.pretrained_checkpoint);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.loss = j.value("loss", c.loss);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    return c;
}

json finetune_config_to_json(const FinetuneConfig& c) {
    return json{{"per_class_count", c.per_class_count},
                {"epochs", c.epochs},
                {"learning_rate", c.learning_rate},
                {"optimizer", c.optimizer},
                {"seed", c.seed}};
}

FinetuneConfig finetune_config_from_json(const json& j) {
    FinetuneConfig c;
    c.per_class_count = j.value("per_class_count", c.per_class_count);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.optimizer = j.value("optimizer", c.optimizer);
    c.seed = j.value("seed", c.seed);
    return c;
}

namespace {

constexpr char kCheckpointMagic[8] = {'D', 'G', 'E', 'N', 'C', 'K', 'P', 'T'};
constexpr int kCheckpointVersion = 1;
constexpr int kFinetuneBatchSize = 32;

void validate_train_config(const TrainConfig& c) {
    require(nn::known_architecture(c.architecture), Errc::invalid_config,
            "train: unknown architecture '" + c.architecture + "'");
    require(c.epochs >= 1, Errc::invalid_config, "train: epochs must be >= 1");
    require(c.learning_rate > 0.0, Errc::invalid_config, "train: learning_rate must be > 0");
    require(c.num_classes >= 2, Errc::invalid_config, "train: num_classes must be >= 2");
    require(c.batch_size >= 1, Errc::invalid_config, "train: batch_size must be >= 1");
    require(c.optimizer == "adam" || c.optimizer == "sgd", Errc::invalid_config,
            "train: unknown optimizer '" + c.optimizer + "'");
    require(c.loss == "cross_entropy", Errc::invalid_config,
            "train: unknown loss '" + c.loss + "'");
}

std::map<std::string, int> label_index_of(const std::vector<std::string>& labels) {
    std::map<std::string, int> idx;
    for (size_t i = 0; i < labels.size(); ++i) idx[labels[i]] = static_cast<int>(i);
    return idx;
}

struct LoadedDataset {
    std::vector<nn::Tensor> items; // each (3, H, W)
    std::vector<int> targets;      // indices into the model's label order
};

LoadedDataset load_dataset(const DatasetManifest& manifest, const PreprocessConfig& pre,
                           const std::vector<std::string>& label_order) {
    auto index = label_index_of(label_order);
    LoadedDataset data;
    data.items.reserve(manifest.records.size());
    data.targets.reserve(manifest.records.size());
    for (const auto& r : manifest.records) {
        auto it = index.find(r.condition_label);
        require(it != index.end(), Errc::label_mismatch,
                "dataset label '" + r.condition_label + "' is unknown to the model");
        data.items.push_back(preprocess_file(manifest.resolve(r), pre));
        data.targets.push_back(it->second);
    }
    return data;
}

nn::Tensor make_batch(const std::vector<nn::Tensor>& items, const std::vector<size_t>& order,
                      size_t begin, size_t end) {
    const nn::Tensor& first = items[order[begin]];
    std::vector<int> shape;
    shape.push_back(static_cast<int>(end - begin));
    shape.insert(shape.end(), first.shape.begin(), first.shape.end());
    nn::Tensor batch(shape);
    size_t stride = first.data.size();
    for (size_t i = begin; i < end; ++i) {
        const nn::Tensor& item = items[order[i]];
        require(item.data.size() == stride, Errc::invalid_argument,
                "batch: inconsistent preprocessed shapes");
        std::copy(item.data.begin(), item.data.end(), batch.data.begin() + (i - begin) * stride);
    }
    return batch;
}

std::vector<int> gather_targets(const std::vector<int>& targets, const std::vector<size_t>& order,
                                size_t begin, size_t end) {
    std::vector<int> out;
    out.reserve(end - begin);
    for (size_t i = begin; i < end; ++i) out.push_back(targets[order[i]]);
    return out;
}

/// Copy every tensor from `store` into `net` except the head layer's own;
/// used when a pretraining checkpoint carries a head of different width.
void import_backbone(nn::Network& net, const nn::ParamStore& store) {
    std::string head_prefix = net.layer_name(net.head_index) + ".";
    auto apply = [&](const std::vector<nn::ParamRef>& refs) {
        for (const auto& r : refs) {
            if (r.name.rfind(head_prefix, 0) == 0) continue;
            const nn::Tensor* t = store.find(r.name);
            require(t != nullptr, Errc::incompatible_checkpoint,
                    "pretraining checkpoint is missing tensor '" + r.name + "'");
            require(t->shape == r.value->shape, Errc::incompatible_checkpoint,
                    "pretraining checkpoint tensor '" + r.name + "' has a different shape");
            *r.value = *t;
        }
    };
    apply(net.parameters());
    apply(net.buffers());
}

} // namespace

nn::Network instantiate_network(const TrainedModel& model) {
    nn::Network net =
        nn::build_network(model.architecture, static_cast<int>(model.labels.size()), 0);
    import_params(net, model.params);
    return net;
}

TrainedModel make_untrained_model(const std::vector<std::string>& labels,
                                  const TrainConfig& config) {
    TrainConfig cfg = config;
    if (cfg.num_classes == 0) cfg.num_classes = static_cast<int>(labels.size());
    require(cfg.num_classes == static_cast<int>(labels.size()), Errc::manifest_mismatch,
            "model: num_classes " + std::to_string(cfg.num_classes) + " != class count " +
                std::to_string(labels.size()));
    require(std::set<std::string>(labels.begin(), labels.end()).size() == labels.size(),
            Errc::duplicate_label, "model: duplicate class labels");
    validate_train_config(cfg);

    nn::Network net =
        nn::build_network(cfg.architecture, cfg.num_classes, derive_seed(cfg.seed, "model"));
    if (cfg.pretrained) {
        require(!cfg.pretrained_checkpoint.empty(), Errc::invalid_config,
                "model: pretrained=true requires pretrained_checkpoint (this build ships no "
                "weights); set pretrained=false to train from scratch");
        TrainedModel base = load_model(cfg.pretrained_checkpoint);
        require(base.architecture == cfg.architecture, Errc::incompatible_checkpoint,
                "pretraining checkpoint is '" + base.architecture + "', config wants '" +
                    cfg.architecture + "'");
        import_backbone(net, base.params); // head stays freshly seeded at num_classes
    }

    TrainedModel model;
    model.architecture = cfg.architecture;
    model.labels = labels;
    model.config = cfg;
    model.params = export_params(net);
    return model;
}

TrainedModel train(const DatasetManifest& manifest, const PreprocessConfig& preprocess_config,
                   const TrainConfig& config) {
    require(!manifest.records.empty(), Errc::invalid_argument, "train: manifest has no records");
    TrainConfig cfg = config;
    if (cfg.num_classes == 0) cfg.num_classes = static_cast<int>(manifest.class_labels.size());
    require(cfg.num_classes == static_cast<int>(manifest.class_labels.size()),
            Errc::manifest_mismatch,
            "train: num_classes " + std::to_string(cfg.num_classes) + " != manifest class count " +
                std::to_string(manifest.class_labels.size()));

    TrainedModel model = make_untrained_model(manifest.class_labels, cfg);
    nn::Network net = instantiate_network(model);
    LoadedDataset data = load_dataset(manifest, preprocess_config, model.labels);

    auto optimizer = nn::make_optimizer(cfg.optimizer, static_cast<float>(cfg.learning_rate));
    auto params = net.parameters();
    const size_t n = data.items.size();
    const size_t batch = static_cast<size_t>(cfg.batch_size);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(derive_seed(cfg.seed, "epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t begin = 0; begin < n; begin += batch) {
            size_t end = std::min(begin + batch, n);
            nn::Tensor x = make_batch(data.items, order, begin, end);
            std::vector<int> y = gather_targets(data.targets, order, begin, end);

            nn::Tensor logits = net.forward(x, true);
            nn::Tensor dlogits;
            float loss = nn::softmax_cross_entropy(logits, y, dlogits);
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);
            for (size_t i = 0; i < y.size(); ++i)
                if (nn::argmax_row(logits, static_cast<int>(i)) == y[i]) ++correct;

            net.zero_grads();
            net.backward(dlogits);
            optimizer->step(params);
        }
        EpochStats stats{epoch + 1, loss_sum / static_cast<double>(n),
                         static_cast<double>(correct) / static_cast<double>(n), "train"};
        model.history.push_back(stats);
        log_info("epoch " + std::to_string(stats.epoch) + "/" + std::to_string(cfg.epochs) +
                 " loss " + std::to_string(stats.loss) + " acc " + std::to_string(stats.accuracy));
    }

    model.params = export_params(net);
    return model;
}

TrainedModel finetune_logits(const TrainedModel& model, const DatasetManifest& subset,
                             const PreprocessConfig& preprocess_config,
                             const FinetuneConfig& config) {
    require(config.per_class_count >= 1, Errc::invalid_config,
            "finetune: per_class_count must be >= 1");
    require(config.epochs >= 1, Errc::invalid_config, "finetune: epochs must be >= 1");
    require(config.learning_rate >= 0.0, Errc::invalid_config,
            "finetune: learning_rate must be >= 0");
    require(!subset.records.empty(), Errc::invalid_argument, "finetune: subset has no records");

    auto index = label_index_of(model.labels);
    std::map<std::string, int> counts;
    for (const auto& r : subset.records) {
        require(index.count(r.condition_label) > 0, Errc::label_mismatch,
                "finetune: subset label '" + r.condition_label + "' is unknown to the model");
        ++counts[r.condition_label];
    }
    for (const auto& label : model.labels)
        require(counts.count(label) > 0, Errc::label_mismatch,
                "finetune: subset has no samples for class '" + label + "'");

    nn::Network net = instantiate_network(model);
    LoadedDataset data = load_dataset(subset, preprocess_config, model.labels);

    // Frozen backbone (eval-mode normalization): compute features once, then
    // train the head alone on them. Backbone tensors are never written, so
    // they stay bit-identical by construction.
    std::vector<nn::Tensor> feats;
    feats.reserve(data.items.size());
    {
        std::vector<size_t> ident(data.items.size());
        std::iota(ident.begin(), ident.end(), size_t{0});
        for (size_t begin = 0; begin < data.items.size(); begin += kFinetuneBatchSize) {
            size_t end = std::min(begin + kFinetuneBatchSize, data.items.size());
            nn::Tensor x = make_batch(data.items, ident, begin, end);
            nn::Tensor f = net.forward_range(x, 0, net.head_index, false);
            const int fdim = f.dim(1);
            for (size_t i = begin; i < end; ++i) {
                nn::Tensor one({1, fdim});
                std::copy_n(f.data.begin() + (i - begin) * fdim, fdim, one.data.begin());
                feats.push_back(std::move(one));
            }
        }
    }

    nn::Layer& head = net.layer(net.head_index);
    std::vector<nn::ParamRef> head_params;
    head.collect_params(net.layer_name(net.head_index), head_params);
    auto optimizer = nn::make_optimizer(config.optimizer, static_cast<float>(config.learning_rate));

    TrainedModel out = model;
    const size_t n = feats.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, "finetune-epoch", static_cast<uint64_t>(epoch)));
        rng.shuffle(order);

        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t begin = 0; begin < n; begin += kFinetuneBatchSize) {
            size_t end = std::min(begin + kFinetuneBatchSize, n);
            nn::Tensor x = make_batch(feats, order, begin, end);
            // feature rows are (1, F); flatten the batch dimension
            x.shape = {static_cast<int>(end - begin), x.shape.back()};
            std::vector<int> y = gather_targets(data.targets, order, begin, end);

            nn::Tensor logits = head.forward(x, true);
            nn::Tensor dlogits;
            float loss = nn::softmax_cross_entropy(logits, y, dlogits);
            loss_sum += static_cast<double>(loss) * static_cast<double>(end - begin);
            for (size_t i = 0; i < y.size(); ++i)
                if (nn::argmax_row(logits, static_cast<int>(i)) == y[i]) ++correct;

            for (auto& p : head_params) p.grad->zero();
            head.backward(dlogits);
            optimizer->step(head_params);
        }
        EpochStats stats{epoch + 1, loss_sum / static_cast<double>(n),
                         static_cast<double>(correct) / static_cast<double>(n), "finetune"};
        out.history.push_back(stats);
    }

    out.params = export_params(net);
    return out;
}

DatasetManifest select_finetune_subset(const DatasetManifest& manifest, int per_class_count,
                                       uint64_t seed) {
    require(per_class_count >= 1, Errc::invalid_config,
            "subset: per_class_count must be >= 1");
    auto counts = per_class_counts(manifest);
    for (const auto& label : manifest.class_labels)
        require(counts.count(label) > 0, Errc::empty_class,
                "subset: manifest has no items for class '" + label + "'");

    std::map<std::string, std::vector<const ImageRecord*>> by_class;
    for (const auto& r : manifest.records) by_class[r.condition_label].push_back(&r);

    DatasetManifest out;
    out.class_labels = manifest.class_labels;
    out.created_with = manifest.created_with;
    out.root_hint = manifest.root_hint; // records still live under the parent's root
    out.resolved_root = manifest.resolved_root;
    for (auto& [label, items] : by_class) {
        Rng rng(derive_seed(seed, "subset", fnv1a64(label)));
        rng.shuffle(items);
        size_t take = std::min<size_t>(static_cast<size_t>(per_class_count), items.size());
        for (size_t i = 0; i < take; ++i) out.records.push_back(*items[i]);
    }
    sort_records(out.records);
    return out;
}

void save_model(const TrainedModel& model, const std::string& path) {
    json history = json::array();
    for (const auto& h : model.history)
        history.push_back(
            {{"epoch", h.epoch}, {"loss", h.loss}, {"accuracy", h.accuracy}, {"phase", h.phase}});

    json tensors = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : model.params.entries) {
        tensors.push_back(
            {{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
        offset += static_cast<uint64_t>(t.numel());
    }
    json header{{"format_version", kCheckpointVersion},
                {"architecture", model.architecture},
                {"labels", model.labels},
                {"config", train_config_to_json(model.config)},
                {"history", history},
                {"tensors", tensors}};
    std::string header_bytes = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), Errc::io_error, "cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    uint32_t len = static_cast<uint32_t>(header_bytes.size());
    unsigned char len_le[4] = {static_cast<unsigned char>(len & 0xff),
                               static_cast<unsigned char>((len >> 8) & 0xff),
                               static_cast<unsigned char>((len >> 16) & 0xff),
                               static_cast<unsigned char>((len >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(len_le), 4);
    out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
    for (const auto& [name, t] : model.params.entries)
        out.write(reinterpret_cast<const char*>(t.data.data()),
                  static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    require(out.good(), Errc::io_error, "short write on checkpoint: " + path);
    out.close();

    std::ofstream hist(path + ".history.json", std::ios::trunc);
    require(hist.good(), Errc::io_error, "cannot write history sidecar for: " + path);
    hist << json{{"architecture", model.architecture},
                 {"labels", model.labels},
                 {"history", history}}
                .dump(2)
         << "\n";
}

TrainedModel load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), Errc::io_error, "cannot open checkpoint: " + path);

    char magic[sizeof(kCheckpointMagic)];
    in.read(magic, sizeof(magic));
    require(in.gcount() == sizeof(magic) &&
                std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
            Errc::io_error, "not a checkpoint file: " + path);

    unsigned char len_le[4];
    in.read(reinterpret_cast<char*>(len_le), 4);
    require(in.gcount() == 4, Errc::io_error, "truncated checkpoint header: " + path);
    uint32_t len = static_cast<uint32_t>(len_le[0]) | (static_cast<uint32_t>(len_le[1]) << 8) |
                   (static_cast<uint32_t>(len_le[2]) << 16) |
                   (static_cast<uint32_t>(len_le[3]) << 24);
    std::string header_bytes(len, '\0');
    in.read(header_bytes.data(), static_cast<std::streamsize>(len));
    require(in.gcount() == static_cast<std::streamsize>(len), Errc::io_error,
            "truncated checkpoint header: " + path);

    json header;
    try {
        header = json::parse(header_bytes);
    } catch (const json::exception& e) {
        raise(Errc::io_error, "corrupt checkpoint header in " + path + ": " + e.what());
    }
    require(header.value("format_version", -1) == kCheckpointVersion, Errc::incompatible_checkpoint,
            "unsupported checkpoint format version in " + path);

    TrainedModel model;
    model.architecture = header.at("architecture").get<std::string>();
    require(nn::known_architecture(model.architecture), Errc::incompatible_checkpoint,
            "checkpoint architecture '" + model.architecture + "' is unknown");
    model.labels = header.at("labels").get<std::vector<std::string>>();
    require(model.labels.size() >= 2, Errc::incompatible_checkpoint,
            "checkpoint lists fewer than two classes: " + path);
    model.config = train_config_from_json(header.at("config"));
    for (const auto& h : header.at("history")) {
        EpochStats s;
        s.epoch = h.at("epoch").get<int>();
        s.loss = h.at("loss").get<double>();
        s.accuracy = h.at("accuracy").get<double>();
        s.phase = h.at("phase").get<std::string>();
        model.history.push_back(std::move(s));
    }
    for (const auto& t : header.at("tensors")) {
        std::string name = t.at("name").get<std::string>();
        std::vector<int> shape = t.at("shape").get<std::vector<int>>();
        int64_t count = t.at("count").get<int64_t>();
        require(nn::Tensor::count(shape) == count, Errc::incompatible_checkpoint,
                "checkpoint tensor '" + name + "' shape/count disagree");
        nn::Tensor tensor(shape);
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
        require(in.gcount() == static_cast<std::streamsize>(tensor.data.size() * sizeof(float)),
                Errc::io_error, "truncated checkpoint data for tensor '" + name + "': " + path);
        model.params.entries.emplace_back(std::move(name), std::move(tensor));
    }
    return model;
}

std::string model_digest(const TrainedModel& model) {
    // hash of per-tensor hashes rather than one pass over ~100MB of floats
    std::string acc = model.architecture;
    for (const auto& [name, tensor] : model.params.entries) {
        acc += "\n" + name + ":" +
               sha256_hex(tensor.data.data(), tensor.data.size() * sizeof(float));
    }
    return sha256_hex(acc.data(), acc.size());
}

} // namespace dermgen
