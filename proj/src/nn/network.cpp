#include "dermgen/nn/network.hpp"

#include "dermgen/error.hpp"
#include "dermgen/hashing.hpp"

#include <algorithm>

namespace dermgen::nn {

void Network::add(std::string name, std::unique_ptr<Layer> layer) {
    items_.push_back({std::move(name), std::move(layer)});
    acts_.resize(items_.size());
}

Tensor Network::forward_range(const Tensor& x, int begin, int end, bool train) {
    require(begin >= 0 && end <= size() && begin <= end, Errc::invalid_argument,
            "network forward: bad layer range");
    Tensor cur = x;
    for (int i = begin; i < end; ++i) {
        cur = items_[static_cast<size_t>(i)].layer->forward(cur, train);
        acts_[static_cast<size_t>(i)] = cur;
    }
    return cur;
}

const Tensor& Network::activation(int i) const {
    require(i >= 0 && i < size(), Errc::invalid_argument, "network activation: bad index");
    return acts_[static_cast<size_t>(i)];
}

Tensor Network::backward_range(const Tensor& grad_out, int begin) {
    require(begin >= 0 && begin <= size(), Errc::invalid_argument, "network backward: bad index");
    Tensor g = grad_out;
    for (int i = size() - 1; i >= begin; --i) g = items_[static_cast<size_t>(i)].layer->backward(g);
    return g;
}

std::vector<ParamRef> Network::parameters() {
    std::vector<ParamRef> out;
    for (auto& it : items_) it.layer->collect_params(it.name, out);
    return out;
}

std::vector<ParamRef> Network::buffers() {
    std::vector<ParamRef> out;
    for (auto& it : items_) it.layer->collect_buffers(it.name, out);
    return out;
}

void Network::zero_grads() {
    for (auto& p : parameters())
        if (p.grad) p.grad->zero();
}

void Network::init_all(uint64_t seed) {
    for (int i = 0; i < size(); ++i) init_layer(i, seed);
}

void Network::init_layer(int i, uint64_t seed) {
    require(i >= 0 && i < size(), Errc::invalid_argument, "network init: bad layer index");
    Rng rng(derive_seed(seed, "init", fnv1a64(items_[static_cast<size_t>(i)].name)));
    items_[static_cast<size_t>(i)].layer->init(rng);
}

const Tensor* ParamStore::find(const std::string& name) const {
    for (const auto& [n, t] : entries)
        if (n == name) return &t;
    return nullptr;
}

ParamStore export_params(Network& net) {
    ParamStore store;
    for (const auto& p : net.parameters()) store.entries.emplace_back(p.name, *p.value);
    for (const auto& b : net.buffers()) store.entries.emplace_back(b.name, *b.value);
    return store;
}

void import_params(Network& net, const ParamStore& store) {
    auto apply = [&](const std::vector<ParamRef>& refs) {
        for (const auto& r : refs) {
            const Tensor* t = store.find(r.name);
            require(t != nullptr, Errc::incompatible_checkpoint,
                    "checkpoint is missing tensor '" + r.name + "'");
            require(t->shape == r.value->shape, Errc::incompatible_checkpoint,
                    "checkpoint tensor '" + r.name + "' has a different shape");
            *r.value = *t;
        }
    };
    apply(net.parameters());
    apply(net.buffers());
}

std::map<std::string, std::string> param_checksums(Network& net) {
    std::map<std::string, std::string> out;
    auto digest = [&](const std::vector<ParamRef>& refs) {
        for (const auto& r : refs)
            out[r.name] = sha256_hex(r.value->data.data(), r.value->data.size() * sizeof(float));
    };
    digest(net.parameters());
    digest(net.buffers());
    return out;
}

std::string layer_group(const std::string& param_name) {
    auto pos = param_name.rfind('.');
    return pos == std::string::npos ? param_name : param_name.substr(0, pos);
}

namespace {

// Residual backbone over (stem width, per-stage block counts, block type).
template <typename Block>
void add_residual_stages(Network& net, const std::vector<int>& blocks, int stem_channels,
                         int expansion) {
    int in_c = stem_channels;
    int mid = stem_channels;
    for (size_t stage = 0; stage < blocks.size(); ++stage) {
        int stride = stage == 0 ? 1 : 2;
        for (int b = 0; b < blocks[stage]; ++b) {
            std::string name = "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
            net.add(name, std::make_unique<Block>(in_c, mid, b == 0 ? stride : 1));
            in_c = mid * expansion;
        }
        mid *= 2;
    }
}

Network build_resnet(const std::string& id, const std::vector<int>& blocks, bool bottleneck,
                     int num_classes) {
    Network net;
    net.architecture = id;
    net.add("stem.conv", std::make_unique<Conv2d>(3, 64, 7, 2, 3));
    net.add("stem.bn", std::make_unique<BatchNorm2d>(64));
    net.add("stem.relu", std::make_unique<ReLU>());
    net.add("stem.pool", std::make_unique<MaxPool2d>(3, 2, 1));
    int feature_dim;
    if (bottleneck) {
        add_residual_stages<Bottleneck>(net, blocks, 64, Bottleneck::kExpansion);
        feature_dim = 64 * (1 << (static_cast<int>(blocks.size()) - 1)) * Bottleneck::kExpansion;
    } else {
        add_residual_stages<BasicBlock>(net, blocks, 64, 1);
        feature_dim = 64 * (1 << (static_cast<int>(blocks.size()) - 1));
    }
    net.tap_index = net.size() - 1;
    net.add("gap", std::make_unique<GlobalAvgPool>());
    net.add("fc", std::make_unique<Linear>(feature_dim, num_classes));
    net.head_index = net.size() - 1;
    return net;
}

Network build_smallcnn(int num_classes) {
    Network net;
    net.architecture = "smallcnn";
    int widths[4] = {16, 32, 64, 64};
    int in_c = 3;
    for (int i = 0; i < 4; ++i) {
        std::string p = "block" + std::to_string(i + 1);
        net.add(p + ".conv", std::make_unique<Conv2d>(in_c, widths[i], 3, 1, 1));
        net.add(p + ".bn", std::make_unique<BatchNorm2d>(widths[i]));
        net.add(p + ".relu", std::make_unique<ReLU>());
        if (i < 3) net.add(p + ".pool", std::make_unique<MaxPool2d>(2, 2));
        in_c = widths[i];
    }
    net.tap_index = net.size() - 1;
    net.add("gap", std::make_unique<GlobalAvgPool>());
    net.add("fc", std::make_unique<Linear>(64, num_classes));
    net.head_index = net.size() - 1;
    return net;
}

// Channel-mean probe: no spatial reasoning at all. Useful as a floor
// baseline and as the fastest possible architecture in tests.
Network build_meanpool_linear(int num_classes) {
    Network net;
    net.architecture = "meanpool_linear";
    net.add("input", std::make_unique<Identity>());
    net.tap_index = net.size() - 1;
    net.add("gap", std::make_unique<GlobalAvgPool>());
    net.add("fc", std::make_unique<Linear>(3, num_classes));
    net.head_index = net.size() - 1;
    return net;
}

} // namespace

bool known_architecture(const std::string& id) {
    const auto ids = architecture_ids();
    return std::find(ids.begin(), ids.end(), id) != ids.end();
}

std::vector<std::string> architecture_ids() {
    return {"meanpool_linear", "smallcnn", "resnet10", "resnet18", "resnet50"};
}

Network build_network(const std::string& architecture, int num_classes, uint64_t seed) {
    require(num_classes >= 2, Errc::invalid_config, "network: num_classes must be >= 2");
    Network net;
    if (architecture == "meanpool_linear") {
        net = build_meanpool_linear(num_classes);
    } else if (architecture == "smallcnn") {
        net = build_smallcnn(num_classes);
    } else if (architecture == "resnet10") {
        net = build_resnet("resnet10", {1, 1, 1, 1}, false, num_classes);
    } else if (architecture == "resnet18") {
        net = build_resnet("resnet18", {2, 2, 2, 2}, false, num_classes);
    } else if (architecture == "resnet50") {
        net = build_resnet("resnet50", {3, 4, 6, 3}, true, num_classes);
    } else {
        raise(Errc::invalid_config, "unknown architecture '" + architecture + "'");
    }
    net.init_all(seed);
    return net;
}

} // namespace dermgen::nn
