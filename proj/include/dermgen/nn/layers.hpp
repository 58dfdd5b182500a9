#pragma once

#include "dermgen/nn/tensor.hpp"
#include "dermgen/rng.hpp"

#include <memory>
#include <string>
#include <vector>

namespace dermgen::nn {

/// Handle to one parameter tensor (or buffer, when grad is null).
struct ParamRef {
    std::string name;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
};

/// One computation node. forward() caches whatever backward() needs, so a
/// layer instance is stateful and belongs to exactly one pass at a time;
/// share trained weights by exporting/importing parameters, not layers.
class Layer {
public:
    virtual ~Layer() = default;

    virtual Tensor forward(const Tensor& x, bool train) = 0;

    /// Gradient w.r.t. this layer's input, from the gradient w.r.t. its
    /// output. Parameter gradients accumulate until zero_grads().
    virtual Tensor backward(const Tensor& grad_out) = 0;

    virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {}
    /// Non-trainable state that still belongs in a checkpoint (e.g. running
    /// batch-norm statistics).
    virtual void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {}
    virtual void init(Rng& rng) {}
    virtual const char* kind() const = 0;
};

class Identity final : public Layer {
public:
    Tensor forward(const Tensor& x, bool) override { return x; }
    Tensor backward(const Tensor& g) override { return g; }
    const char* kind() const override { return "identity"; }
};

/// 2-D convolution over (N, C, H, W), implemented as im2col + GEMM.
/// Weight layout: (out_channels, in_channels * k * k).
class Conv2d final : public Layer {
public:
    Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool with_bias = false);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const char* kind() const override { return "conv2d"; }

    Tensor weight, weight_grad;
    Tensor bias, bias_grad;

private:
    int in_c_, out_c_, k_, stride_, pad_;
    bool with_bias_;
    Tensor input_; // cached for backward
};

/// Per-channel batch normalization over (N, C, H, W). Training mode uses
/// batch statistics and updates the running estimates; eval mode uses the
/// running estimates and is differentiable as an affine map (needed when a
/// frozen backbone sits under a trainable head).
class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels, float momentum = 0.1f, float eps = 1e-5f);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const char* kind() const override { return "batchnorm2d"; }

    Tensor gamma, gamma_grad;
    Tensor beta, beta_grad;
    Tensor running_mean, running_var;

private:
    int channels_;
    float momentum_, eps_;
    bool last_train_ = false;
    Tensor xhat_;                // cached normalized input
    std::vector<float> inv_std_; // per channel, batch or running depending on mode
};

class ReLU final : public Layer {
public:
    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    const char* kind() const override { return "relu"; }

private:
    std::vector<char> mask_;
};

class MaxPool2d final : public Layer {
public:
    MaxPool2d(int kernel, int stride, int pad = 0);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    const char* kind() const override { return "maxpool2d"; }

private:
    int k_, stride_, pad_;
    std::vector<int> argmax_; // input offset per output element
    std::vector<int> in_shape_;
};

/// (N, C, H, W) -> (N, C) spatial mean.
class GlobalAvgPool final : public Layer {
public:
    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    const char* kind() const override { return "globalavgpool"; }

private:
    std::vector<int> in_shape_;
};

/// Fully connected (N, F) -> (N, K). Weight layout: (K, F).
class Linear final : public Layer {
public:
    Linear(int in_features, int out_features);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const char* kind() const override { return "linear"; }

    Tensor weight, weight_grad;
    Tensor bias, bias_grad;

private:
    int in_f_, out_f_;
    Tensor input_;
};

/// Two 3x3 convolutions with a residual connection (the resnet18-style
/// block). A strided or channel-changing block projects the skip path
/// through a 1x1 convolution.
class BasicBlock final : public Layer {
public:
    BasicBlock(int in_channels, int out_channels, int stride);

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const char* kind() const override { return "basicblock"; }

private:
    Conv2d conv1_;
    BatchNorm2d bn1_;
    ReLU relu1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
    std::unique_ptr<Conv2d> down_conv_;
    std::unique_ptr<BatchNorm2d> down_bn_;
    std::vector<char> sum_mask_; // sign of (main + skip), for the final ReLU
};

/// 1x1 -> 3x3 -> 1x1 bottleneck residual block (the resnet50-style block).
/// Output channels = 4 * mid_channels.
class Bottleneck final : public Layer {
public:
    Bottleneck(int in_channels, int mid_channels, int stride);

    static constexpr int kExpansion = 4;

    Tensor forward(const Tensor& x, bool train) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) override;
    void init(Rng& rng) override;
    const char* kind() const override { return "bottleneck"; }

private:
    Conv2d conv1_;
    BatchNorm2d bn1_;
    ReLU relu1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
    ReLU relu2_;
    Conv2d conv3_;
    BatchNorm2d bn3_;
    std::unique_ptr<Conv2d> down_conv_;
    std::unique_ptr<BatchNorm2d> down_bn_;
    std::vector<char> sum_mask_;
};

} // namespace dermgen::nn
