#include "dermgen/nn/optim.hpp"

#include "dermgen/error.hpp"

#include <algorithm>
#include <cmath>

namespace dermgen::nn {

float softmax_cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            Tensor& dlogits) {
    require(logits.rank() == 2, Errc::invalid_argument, "cross_entropy: expected (N,K) logits");
    const int N = logits.dim(0), K = logits.dim(1);
    require(static_cast<int>(targets.size()) == N, Errc::invalid_argument,
            "cross_entropy: target count mismatch");

    dlogits = Tensor({N, K});
    double loss = 0.0;
    for (int n = 0; n < N; ++n) {
        const float* row = logits.ptr() + static_cast<size_t>(n) * K;
        float* drow = dlogits.ptr() + static_cast<size_t>(n) * K;
        int t = targets[static_cast<size_t>(n)];
        require(t >= 0 && t < K, Errc::invalid_argument, "cross_entropy: target out of range");

        float mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k]) - mx);
        double log_denom = std::log(denom);
        loss += -(static_cast<double>(row[t]) - mx - log_denom);
        for (int k = 0; k < K; ++k) {
            double p = std::exp(static_cast<double>(row[k]) - mx) / denom;
            drow[k] = static_cast<float>((p - (k == t ? 1.0 : 0.0)) / N);
        }
    }
    return static_cast<float>(loss / N);
}

Tensor softmax(const Tensor& logits) {
    require(logits.rank() == 2, Errc::invalid_argument, "softmax: expected (N,K) logits");
    const int N = logits.dim(0), K = logits.dim(1);
    Tensor out({N, K});
    for (int n = 0; n < N; ++n) {
        const float* row = logits.ptr() + static_cast<size_t>(n) * K;
        float* orow = out.ptr() + static_cast<size_t>(n) * K;
        float mx = row[0];
        for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        double denom = 0.0;
        for (int k = 0; k < K; ++k) denom += std::exp(static_cast<double>(row[k]) - mx);
        for (int k = 0; k < K; ++k)
            orow[k] = static_cast<float>(std::exp(static_cast<double>(row[k]) - mx) / denom);
    }
    return out;
}

int argmax_row(const Tensor& logits, int row) {
    const int K = logits.dim(1);
    const float* p = logits.ptr() + static_cast<size_t>(row) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
        if (p[k] > p[best]) best = k; // strict: ties keep the lowest index
    return best;
}

void Sgd::step(const std::vector<ParamRef>& params) {
    if (lr_ == 0.0f) return; // zero rate means no update, bit-exactly
    for (const auto& p : params) {
        if (!p.grad) continue;
        for (size_t i = 0; i < p.value->data.size(); ++i)
            p.value->data[i] -= lr_ * p.grad->data[i];
    }
}

void Adam::step(const std::vector<ParamRef>& params) {
    if (lr_ == 0.0f) return; // zero rate means no update, bit-exactly
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (const auto& p : params) {
        if (!p.grad) continue;
        State& s = state_[p.name];
        if (s.m.data.empty()) {
            s.m = Tensor(p.value->shape);
            s.v = Tensor(p.value->shape);
        }
        require(s.m.same_shape(*p.value), Errc::invalid_argument,
                "adam: parameter '" + p.name + "' changed shape mid-run");
        for (size_t i = 0; i < p.value->data.size(); ++i) {
            float g = p.grad->data[i];
            s.m.data[i] = beta1_ * s.m.data[i] + (1.0f - beta1_) * g;
            s.v.data[i] = beta2_ * s.v.data[i] + (1.0f - beta2_) * g * g;
            double mhat = s.m.data[i] / bc1;
            double vhat = s.v.data[i] / bc2;
            p.value->data[i] -= static_cast<float>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& id, float lr) {
    require(lr >= 0.0f, Errc::invalid_config, "optimizer: learning rate must be non-negative");
    if (id == "adam") return std::make_unique<Adam>(lr);
    if (id == "sgd") return std::make_unique<Sgd>(lr);
    raise(Errc::invalid_config, "optimizer: unknown id '" + id + "'");
}

} // namespace dermgen::nn
