#pragma once

#include "dermgen/nn/layers.hpp"
#include "dermgen/nn/tensor.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dermgen::nn {

/// Mean softmax cross-entropy over a batch of logits (N, K). Writes the
/// gradient w.r.t. the logits (already divided by N) into dlogits.
float softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets, Tensor& dlogits);

/// Row-wise softmax probabilities, same shape as logits.
Tensor softmax(const Tensor& logits);

/// Argmax of one row of an (N, K) tensor; ties break toward the lowest index.
int argmax_row(const Tensor& logits, int row);

class Optimizer {
public:
    explicit Optimizer(float lr) : lr_(lr) {}
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<ParamRef>& params) = 0;
    float lr() const { return lr_; }

protected:
    float lr_;
};

class Sgd final : public Optimizer {
public:
    explicit Sgd(float lr) : Optimizer(lr) {}
    void step(const std::vector<ParamRef>& params) override;
};

/// Adam with bias correction; first/second moment state is keyed by
/// parameter name so the same optimizer instance follows its parameters
/// across steps.
class Adam final : public Optimizer {
public:
    explicit Adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f)
        : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(const std::vector<ParamRef>& params) override;

private:
    struct State {
        Tensor m, v;
    };
    float beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, State> state_;
};

/// ids: "adam", "sgd". Throws InvalidConfig on anything else.
std::unique_ptr<Optimizer> make_optimizer(const std::string& id, float lr);

} // namespace dermgen::nn
