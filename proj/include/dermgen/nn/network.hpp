#pragma once

#include "dermgen/nn/layers.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dermgen::nn {

/// A sequential stack of named layers with two marked positions: tap_index
/// (the layer whose output is the last convolutional feature map, used for
/// class-activation maps) and head_index (the final classification layer).
///
/// Activations from the most recent forward pass are retained, so an
/// instance serves one pass at a time; clone trained weights via
/// export_params/import_params for concurrent use.
class Network {
public:
    std::string architecture;
    int tap_index = -1;
    int head_index = -1;

    void add(std::string name, std::unique_ptr<Layer> layer);
    int size() const { return static_cast<int>(items_.size()); }
    Layer& layer(int i) { return *items_[static_cast<size_t>(i)].layer; }
    const std::string& layer_name(int i) const { return items_[static_cast<size_t>(i)].name; }

    /// Run layers [begin, end); stores each layer's output for activation().
    Tensor forward_range(const Tensor& x, int begin, int end, bool train);
    Tensor forward(const Tensor& x, bool train) { return forward_range(x, 0, size(), train); }
    /// Output of layer i from the most recent forward pass over it.
    const Tensor& activation(int i) const;

    /// Backpropagate through layers [begin, size()) in reverse; returns the
    /// gradient w.r.t. layer `begin`'s input (== layer begin-1's output).
    /// Parameter gradients accumulate in the layers.
    Tensor backward_range(const Tensor& grad_out, int begin);
    Tensor backward(const Tensor& grad_out) { return backward_range(grad_out, 0); }

    std::vector<ParamRef> parameters(); // trainable
    std::vector<ParamRef> buffers();    // checkpointed non-trainable state
    void zero_grads();

    /// Deterministically (re)initialize every layer: each gets its own
    /// generator derived from (seed, layer name), so adding a layer does not
    /// shift its siblings' draws.
    void init_all(uint64_t seed);
    /// Reinitialize exactly one layer (e.g. a fresh classification head).
    void init_layer(int i, uint64_t seed);

private:
    struct NamedLayer {
        std::string name;
        std::unique_ptr<Layer> layer;
    };
    std::vector<NamedLayer> items_;
    std::vector<Tensor> acts_;
};

/// Ordered name -> tensor snapshot of parameters and buffers.
struct ParamStore {
    std::vector<std::pair<std::string, Tensor>> entries;

    const Tensor* find(const std::string& name) const;
};

ParamStore export_params(Network& net);
/// Strict: every network tensor must be present with a matching shape.
/// Throws IncompatibleCheckpoint otherwise.
void import_params(Network& net, const ParamStore& store);

/// sha256 of each parameter/buffer tensor's raw bytes, keyed by name.
std::map<std::string, std::string> param_checksums(Network& net);
/// "layer3.0.conv1.weight" -> "layer3.0.conv1": the owning-layer prefix.
std::string layer_group(const std::string& param_name);

/// Architecture registry. Known ids: meanpool_linear (input-mean diagnostic
/// probe), smallcnn, resnet10, resnet18, resnet50.
bool known_architecture(const std::string& id);
std::vector<std::string> architecture_ids();
Network build_network(const std::string& architecture, int num_classes, uint64_t seed);

} // namespace dermgen::nn
