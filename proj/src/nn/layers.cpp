#include "dermgen/nn/layers.hpp"

#include "dermgen/error.hpp"

#include <Eigen/Core>
#include <cmath>
#include <limits>

namespace dermgen::nn {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using CVecMap = Eigen::Map<const Eigen::VectorXf>;

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unfold one image plane-stack into a (C*k*k, OH*OW) patch matrix.
void im2col(const float* img, int C, int H, int W, int k, int stride, int pad, int OH, int OW,
            float* col) {
    size_t idx = 0;
    for (int c = 0; c < C; ++c) {
        const float* plane = img + static_cast<size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        for (int ox = 0; ox < OW; ++ox) col[idx++] = 0.0f;
                        continue;
                    }
                    const float* row = plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride - pad + kx;
                        col[idx++] = (ix >= 0 && ix < W) ? row[ix] : 0.0f;
                    }
                }
            }
        }
    }
}

// Transpose of im2col: scatter-add a patch matrix back onto an image.
void col2im(const float* col, int C, int H, int W, int k, int stride, int pad, int OH, int OW,
            float* img) {
    size_t idx = 0;
    for (int c = 0; c < C; ++c) {
        float* plane = img + static_cast<size_t>(c) * H * W;
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                for (int oy = 0; oy < OH; ++oy) {
                    int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        idx += static_cast<size_t>(OW);
                        continue;
                    }
                    float* row = plane + static_cast<size_t>(iy) * W;
                    for (int ox = 0; ox < OW; ++ox) {
                        int ix = ox * stride - pad + kx;
                        float v = col[idx++];
                        if (ix >= 0 && ix < W) row[ix] += v;
                    }
                }
            }
        }
    }
}

void require_nchw(const Tensor& x, int channels, const char* who) {
    require(x.rank() == 4, Errc::invalid_argument, std::string(who) + ": expected a (N,C,H,W) tensor");
    require(x.dim(1) == channels, Errc::invalid_argument,
            std::string(who) + ": expected " + std::to_string(channels) + " channels, got " +
                std::to_string(x.dim(1)));
}

void add_into(Tensor& dst, const Tensor& src) {
    require(dst.same_shape(src), Errc::invalid_argument, "residual add: shape mismatch");
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

} // namespace

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, bool with_bias)
    : weight({out_channels, in_channels * kernel * kernel}),
      weight_grad({out_channels, in_channels * kernel * kernel}),
      in_c_(in_channels),
      out_c_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(pad),
      with_bias_(with_bias) {
    require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && pad >= 0,
            Errc::invalid_argument, "conv2d: bad geometry");
    if (with_bias_) {
        bias = Tensor({out_channels});
        bias_grad = Tensor({out_channels});
    }
}

Tensor Conv2d::forward(const Tensor& x, bool) {
    require_nchw(x, in_c_, "conv2d");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const int OH = conv_out_dim(H, k_, stride_, pad_);
    const int OW = conv_out_dim(W, k_, stride_, pad_);
    require(OH > 0 && OW > 0, Errc::invalid_argument, "conv2d: input too small for kernel");

    input_ = x;
    Tensor out({N, out_c_, OH, OW});
    const int ckk = in_c_ * k_ * k_;
    const int ohw = OH * OW;
    std::vector<float> col(static_cast<size_t>(ckk) * ohw);
    CMapRM wm(weight.ptr(), out_c_, ckk);
    for (int n = 0; n < N; ++n) {
        im2col(x.ptr() + static_cast<size_t>(n) * in_c_ * H * W, in_c_, H, W, k_, stride_, pad_, OH,
               OW, col.data());
        CMapRM cm(col.data(), ckk, ohw);
        MapRM om(out.ptr() + static_cast<size_t>(n) * out_c_ * ohw, out_c_, ohw);
        om.noalias() = wm * cm;
        if (with_bias_) om.colwise() += CVecMap(bias.ptr(), out_c_);
    }
    return out;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    const int N = input_.dim(0), H = input_.dim(2), W = input_.dim(3);
    const int OH = grad_out.dim(2), OW = grad_out.dim(3);
    const int ckk = in_c_ * k_ * k_;
    const int ohw = OH * OW;

    Tensor dx(input_.shape);
    std::vector<float> col(static_cast<size_t>(ckk) * ohw);
    std::vector<float> dcol(col.size());
    CMapRM wm(weight.ptr(), out_c_, ckk);
    MapRM dwm(weight_grad.ptr(), out_c_, ckk);
    for (int n = 0; n < N; ++n) {
        im2col(input_.ptr() + static_cast<size_t>(n) * in_c_ * H * W, in_c_, H, W, k_, stride_,
               pad_, OH, OW, col.data());
        CMapRM cm(col.data(), ckk, ohw);
        CMapRM gm(grad_out.ptr() + static_cast<size_t>(n) * out_c_ * ohw, out_c_, ohw);
        dwm.noalias() += gm * cm.transpose();
        if (with_bias_) VecMap(bias_grad.ptr(), out_c_) += gm.rowwise().sum();
        MapRM dcm(dcol.data(), ckk, ohw);
        dcm.noalias() = wm.transpose() * gm;
        col2im(dcol.data(), in_c_, H, W, k_, stride_, pad_, OH, OW,
               dx.ptr() + static_cast<size_t>(n) * in_c_ * H * W);
    }
    return dx;
}

void Conv2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight, &weight_grad});
    if (with_bias_) out.push_back({prefix + ".bias", &bias, &bias_grad});
}

void Conv2d::init(Rng& rng) {
    // He initialization: suited to the ReLU stacks these convolutions sit in.
    float std_dev = std::sqrt(2.0f / static_cast<float>(in_c_ * k_ * k_));
    for (float& v : weight.data) v = static_cast<float>(rng.normal()) * std_dev;
    if (with_bias_) bias.zero();
    weight_grad.zero();
    if (with_bias_) bias_grad.zero();
}

// ----------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, float momentum, float eps)
    : gamma({channels}),
      gamma_grad({channels}),
      beta({channels}),
      beta_grad({channels}),
      running_mean({channels}),
      running_var({channels}),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
    gamma.fill(1.0f);
    running_var.fill(1.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
    require_nchw(x, channels_, "batchnorm2d");
    const int N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const size_t hw = static_cast<size_t>(H) * W;
    const size_t chw = static_cast<size_t>(channels_) * hw;
    const double m = static_cast<double>(N) * hw;

    last_train_ = train;
    inv_std_.assign(static_cast<size_t>(channels_), 0.0f);
    xhat_ = Tensor(x.shape);
    Tensor out(x.shape);

    for (int c = 0; c < channels_; ++c) {
        double mean, var;
        if (train) {
            double sum = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = x.ptr() + n * chw + c * hw;
                for (size_t i = 0; i < hw; ++i) sum += p[i];
            }
            mean = sum / m;
            double sq = 0.0;
            for (int n = 0; n < N; ++n) {
                const float* p = x.ptr() + n * chw + c * hw;
                for (size_t i = 0; i < hw; ++i) {
                    double d = p[i] - mean;
                    sq += d * d;
                }
            }
            var = sq / m; // biased batch variance, used consistently throughout
            running_mean.data[c] = (1.0f - momentum_) * running_mean.data[c] +
                                   momentum_ * static_cast<float>(mean);
            running_var.data[c] =
                (1.0f - momentum_) * running_var.data[c] + momentum_ * static_cast<float>(var);
        } else {
            mean = running_mean.data[c];
            var = running_var.data[c];
        }
        float inv_std = static_cast<float>(1.0 / std::sqrt(var + eps_));
        inv_std_[static_cast<size_t>(c)] = inv_std;
        float g = gamma.data[c], b = beta.data[c], mu = static_cast<float>(mean);
        for (int n = 0; n < N; ++n) {
            const float* xp = x.ptr() + n * chw + c * hw;
            float* hp = xhat_.ptr() + n * chw + c * hw;
            float* op = out.ptr() + n * chw + c * hw;
            for (size_t i = 0; i < hw; ++i) {
                float xh = (xp[i] - mu) * inv_std;
                hp[i] = xh;
                op[i] = g * xh + b;
            }
        }
    }
    return out;
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    const int N = grad_out.dim(0), H = grad_out.dim(2), W = grad_out.dim(3);
    const size_t hw = static_cast<size_t>(H) * W;
    const size_t chw = static_cast<size_t>(channels_) * hw;
    const double m = static_cast<double>(N) * hw;

    Tensor dx(grad_out.shape);
    for (int c = 0; c < channels_; ++c) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < N; ++n) {
            const float* gp = grad_out.ptr() + n * chw + c * hw;
            const float* hp = xhat_.ptr() + n * chw + c * hw;
            for (size_t i = 0; i < hw; ++i) {
                sum_dy += gp[i];
                sum_dy_xhat += static_cast<double>(gp[i]) * hp[i];
            }
        }
        gamma_grad.data[c] += static_cast<float>(sum_dy_xhat);
        beta_grad.data[c] += static_cast<float>(sum_dy);

        float g = gamma.data[c];
        float inv_std = inv_std_[static_cast<size_t>(c)];
        if (last_train_) {
            // Batch statistics depend on x, so the gradient carries the
            // mean/variance correction terms.
            float k1 = static_cast<float>(g * inv_std / m);
            for (int n = 0; n < N; ++n) {
                const float* gp = grad_out.ptr() + n * chw + c * hw;
                const float* hp = xhat_.ptr() + n * chw + c * hw;
                float* dp = dx.ptr() + n * chw + c * hw;
                for (size_t i = 0; i < hw; ++i)
                    dp[i] = k1 * (static_cast<float>(m) * gp[i] - static_cast<float>(sum_dy) -
                                  hp[i] * static_cast<float>(sum_dy_xhat));
            }
        } else {
            // Running statistics are constants: the layer is a per-channel
            // affine map.
            float k1 = g * inv_std;
            for (int n = 0; n < N; ++n) {
                const float* gp = grad_out.ptr() + n * chw + c * hw;
                float* dp = dx.ptr() + n * chw + c * hw;
                for (size_t i = 0; i < hw; ++i) dp[i] = k1 * gp[i];
            }
        }
    }
    return dx;
}

void BatchNorm2d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".gamma", &gamma, &gamma_grad});
    out.push_back({prefix + ".beta", &beta, &beta_grad});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".running_mean", &running_mean, nullptr});
    out.push_back({prefix + ".running_var", &running_var, nullptr});
}

void BatchNorm2d::init(Rng&) {
    gamma.fill(1.0f);
    beta.zero();
    running_mean.zero();
    running_var.fill(1.0f);
    gamma_grad.zero();
    beta_grad.zero();
}

// ------------------------------------------------------------------ ReLU

Tensor ReLU::forward(const Tensor& x, bool) {
    Tensor out(x.shape);
    mask_.assign(x.data.size(), 0);
    for (size_t i = 0; i < x.data.size(); ++i) {
        bool pos = x.data[i] > 0.0f;
        mask_[i] = pos;
        out.data[i] = pos ? x.data[i] : 0.0f;
    }
    return out;
}

Tensor ReLU::backward(const Tensor& grad_out) {
    require(grad_out.data.size() == mask_.size(), Errc::invalid_argument,
            "relu backward: shape mismatch with cached forward");
    Tensor dx(grad_out.shape);
    for (size_t i = 0; i < grad_out.data.size(); ++i)
        dx.data[i] = mask_[i] ? grad_out.data[i] : 0.0f;
    return dx;
}

// ------------------------------------------------------------- MaxPool2d

MaxPool2d::MaxPool2d(int kernel, int stride, int pad) : k_(kernel), stride_(stride), pad_(pad) {
    require(kernel > 0 && stride > 0 && pad >= 0 && pad < kernel, Errc::invalid_argument,
            "maxpool2d: bad geometry");
}

Tensor MaxPool2d::forward(const Tensor& x, bool) {
    require(x.rank() == 4, Errc::invalid_argument, "maxpool2d: expected (N,C,H,W)");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int OH = conv_out_dim(H, k_, stride_, pad_);
    const int OW = conv_out_dim(W, k_, stride_, pad_);
    require(OH > 0 && OW > 0, Errc::invalid_argument, "maxpool2d: input too small for kernel");

    in_shape_ = x.shape;
    Tensor out({N, C, OH, OW});
    argmax_.assign(out.data.size(), -1);
    size_t o = 0;
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const size_t plane_base = (static_cast<size_t>(n) * C + c) * H * W;
            const float* plane = x.ptr() + plane_base;
            for (int oy = 0; oy < OH; ++oy) {
                for (int ox = 0; ox < OW; ++ox, ++o) {
                    float best = -std::numeric_limits<float>::infinity();
                    int best_idx = -1;
                    for (int ky = 0; ky < k_; ++ky) {
                        int iy = oy * stride_ - pad_ + ky;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            int ix = ox * stride_ - pad_ + kx;
                            if (ix < 0 || ix >= W) continue;
                            float v = plane[iy * W + ix];
                            if (v > best) { // strict: first maximum wins, deterministically
                                best = v;
                                best_idx = iy * W + ix;
                            }
                        }
                    }
                    out.data[o] = best;
                    argmax_[o] = static_cast<int>(plane_base) + best_idx;
                }
            }
        }
    }
    return out;
}

Tensor MaxPool2d::backward(const Tensor& grad_out) {
    require(grad_out.data.size() == argmax_.size(), Errc::invalid_argument,
            "maxpool2d backward: shape mismatch with cached forward");
    Tensor dx(in_shape_);
    for (size_t o = 0; o < grad_out.data.size(); ++o)
        dx.data[static_cast<size_t>(argmax_[o])] += grad_out.data[o];
    return dx;
}

// --------------------------------------------------------- GlobalAvgPool

Tensor GlobalAvgPool::forward(const Tensor& x, bool) {
    require(x.rank() == 4, Errc::invalid_argument, "globalavgpool: expected (N,C,H,W)");
    const int N = x.dim(0), C = x.dim(1);
    const size_t hw = static_cast<size_t>(x.dim(2)) * x.dim(3);
    in_shape_ = x.shape;
    Tensor out({N, C});
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            const float* p = x.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            double sum = 0.0;
            for (size_t i = 0; i < hw; ++i) sum += p[i];
            out.data[static_cast<size_t>(n) * C + c] = static_cast<float>(sum / hw);
        }
    }
    return out;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
    const int N = in_shape_[0], C = in_shape_[1];
    const size_t hw = static_cast<size_t>(in_shape_[2]) * in_shape_[3];
    Tensor dx(in_shape_);
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            float g = grad_out.data[static_cast<size_t>(n) * C + c] / static_cast<float>(hw);
            float* p = dx.ptr() + (static_cast<size_t>(n) * C + c) * hw;
            for (size_t i = 0; i < hw; ++i) p[i] = g;
        }
    }
    return dx;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in_features, int out_features)
    : weight({out_features, in_features}),
      weight_grad({out_features, in_features}),
      bias({out_features}),
      bias_grad({out_features}),
      in_f_(in_features),
      out_f_(out_features) {}

Tensor Linear::forward(const Tensor& x, bool) {
    require(x.rank() == 2 && x.dim(1) == in_f_, Errc::invalid_argument,
            "linear: expected (N, " + std::to_string(in_f_) + ")");
    input_ = x;
    const int N = x.dim(0);
    Tensor out({N, out_f_});
    CMapRM xm(x.ptr(), N, in_f_);
    CMapRM wm(weight.ptr(), out_f_, in_f_);
    MapRM om(out.ptr(), N, out_f_);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += CVecMap(bias.ptr(), out_f_).transpose();
    return out;
}

Tensor Linear::backward(const Tensor& grad_out) {
    const int N = input_.dim(0);
    CMapRM gm(grad_out.ptr(), N, out_f_);
    CMapRM xm(input_.ptr(), N, in_f_);
    CMapRM wm(weight.ptr(), out_f_, in_f_);
    MapRM dwm(weight_grad.ptr(), out_f_, in_f_);
    dwm.noalias() += gm.transpose() * xm;
    VecMap(bias_grad.ptr(), out_f_) += gm.colwise().sum().transpose();
    Tensor dx({N, in_f_});
    MapRM dxm(dx.ptr(), N, in_f_);
    dxm.noalias() = gm * wm;
    return dx;
}

void Linear::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", &weight, &weight_grad});
    out.push_back({prefix + ".bias", &bias, &bias_grad});
}

void Linear::init(Rng& rng) {
    float bound = 1.0f / std::sqrt(static_cast<float>(in_f_));
    for (float& v : weight.data) v = static_cast<float>(rng.uniform(-bound, bound));
    for (float& v : bias.data) v = static_cast<float>(rng.uniform(-bound, bound));
    weight_grad.zero();
    bias_grad.zero();
}

// ------------------------------------------------------------ BasicBlock

BasicBlock::BasicBlock(int in_channels, int out_channels, int stride)
    : conv1_(in_channels, out_channels, 3, stride, 1),
      bn1_(out_channels),
      conv2_(out_channels, out_channels, 3, 1, 1),
      bn2_(out_channels) {
    if (stride != 1 || in_channels != out_channels) {
        down_conv_ = std::make_unique<Conv2d>(in_channels, out_channels, 1, stride, 0);
        down_bn_ = std::make_unique<BatchNorm2d>(out_channels);
    }
}

Tensor BasicBlock::forward(const Tensor& x, bool train) {
    Tensor main = conv1_.forward(x, train);
    main = bn1_.forward(main, train);
    main = relu1_.forward(main, train);
    main = conv2_.forward(main, train);
    main = bn2_.forward(main, train);
    if (down_conv_) {
        Tensor skip = down_conv_->forward(x, train);
        skip = down_bn_->forward(skip, train);
        add_into(main, skip);
    } else {
        add_into(main, x);
    }
    sum_mask_.assign(main.data.size(), 0);
    for (size_t i = 0; i < main.data.size(); ++i) {
        bool pos = main.data[i] > 0.0f;
        sum_mask_[i] = pos;
        if (!pos) main.data[i] = 0.0f;
    }
    return main;
}

Tensor BasicBlock::backward(const Tensor& grad_out) {
    require(grad_out.data.size() == sum_mask_.size(), Errc::invalid_argument,
            "basicblock backward: shape mismatch with cached forward");
    Tensor gsum(grad_out.shape);
    for (size_t i = 0; i < grad_out.data.size(); ++i)
        gsum.data[i] = sum_mask_[i] ? grad_out.data[i] : 0.0f;

    Tensor gmain = bn2_.backward(gsum);
    gmain = conv2_.backward(gmain);
    gmain = relu1_.backward(gmain);
    gmain = bn1_.backward(gmain);
    gmain = conv1_.backward(gmain);

    if (down_conv_) {
        Tensor gskip = down_bn_->backward(gsum);
        gskip = down_conv_->backward(gskip);
        add_into(gmain, gskip);
    } else {
        add_into(gmain, gsum);
    }
    return gmain;
}

void BasicBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    conv1_.collect_params(prefix + ".conv1", out);
    bn1_.collect_params(prefix + ".bn1", out);
    conv2_.collect_params(prefix + ".conv2", out);
    bn2_.collect_params(prefix + ".bn2", out);
    if (down_conv_) {
        down_conv_->collect_params(prefix + ".downsample.conv", out);
        down_bn_->collect_params(prefix + ".downsample.bn", out);
    }
}

void BasicBlock::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
    bn1_.collect_buffers(prefix + ".bn1", out);
    bn2_.collect_buffers(prefix + ".bn2", out);
    if (down_bn_) down_bn_->collect_buffers(prefix + ".downsample.bn", out);
}

void BasicBlock::init(Rng& rng) {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    if (down_conv_) {
        down_conv_->init(rng);
        down_bn_->init(rng);
    }
}

// ------------------------------------------------------------ Bottleneck

Bottleneck::Bottleneck(int in_channels, int mid_channels, int stride)
    : conv1_(in_channels, mid_channels, 1, 1, 0),
      bn1_(mid_channels),
      conv2_(mid_channels, mid_channels, 3, stride, 1),
      bn2_(mid_channels),
      conv3_(mid_channels, mid_channels * kExpansion, 1, 1, 0),
      bn3_(mid_channels * kExpansion) {
    if (stride != 1 || in_channels != mid_channels * kExpansion) {
        down_conv_ = std::make_unique<Conv2d>(in_channels, mid_channels * kExpansion, 1, stride, 0);
        down_bn_ = std::make_unique<BatchNorm2d>(mid_channels * kExpansion);
    }
}

Tensor Bottleneck::forward(const Tensor& x, bool train) {
    Tensor main = conv1_.forward(x, train);
    main = bn1_.forward(main, train);
    main = relu1_.forward(main, train);
    main = conv2_.forward(main, train);
    main = bn2_.forward(main, train);
    main = relu2_.forward(main, train);
    main = conv3_.forward(main, train);
    main = bn3_.forward(main, train);
    if (down_conv_) {
        Tensor skip = down_conv_->forward(x, train);
        skip = down_bn_->forward(skip, train);
        add_into(main, skip);
    } else {
        add_into(main, x);
    }
    sum_mask_.assign(main.data.size(), 0);
    for (size_t i = 0; i < main.data.size(); ++i) {
        bool pos = main.data[i] > 0.0f;
        sum_mask_[i] = pos;
        if (!pos) main.data[i] = 0.0f;
    }
    return main;
}

Tensor Bottleneck::backward(const Tensor& grad_out) {
    require(grad_out.data.size() == sum_mask_.size(), Errc::invalid_argument,
            "bottleneck backward: shape mismatch with cached forward");
    Tensor gsum(grad_out.shape);
    for (size_t i = 0; i < grad_out.data.size(); ++i)
        gsum.data[i] = sum_mask_[i] ? grad_out.data[i] : 0.0f;

    Tensor gmain = bn3_.backward(gsum);
    gmain = conv3_.backward(gmain);
    gmain = relu2_.backward(gmain);
    gmain = bn2_.backward(gmain);
    gmain = conv2_.backward(gmain);
    gmain = relu1_.backward(gmain);
    gmain = bn1_.backward(gmain);
    gmain = conv1_.backward(gmain);

    if (down_conv_) {
        Tensor gskip = down_bn_->backward(gsum);
        gskip = down_conv_->backward(gskip);
        add_into(gmain, gskip);
    } else {
        add_into(gmain, gsum);
    }
    return gmain;
}

void Bottleneck::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
    conv1_.collect_params(prefix + ".conv1", out);
    bn1_.collect_params(prefix + ".bn1", out);
    conv2_.collect_params(prefix + ".conv2", out);
    bn2_.collect_params(prefix + ".bn2", out);
    conv3_.collect_params(prefix + ".conv3", out);
    bn3_.collect_params(prefix + ".bn3", out);
    if (down_conv_) {
        down_conv_->collect_params(prefix + ".downsample.conv", out);
        down_bn_->collect_params(prefix + ".downsample.bn", out);
    }
}

void Bottleneck::collect_buffers(const std::string& prefix, std::vector<ParamRef>& out) {
    bn1_.collect_buffers(prefix + ".bn1", out);
    bn2_.collect_buffers(prefix + ".bn2", out);
    bn3_.collect_buffers(prefix + ".bn3", out);
    if (down_bn_) down_bn_->collect_buffers(prefix + ".downsample.bn", out);
}

void Bottleneck::init(Rng& rng) {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    conv3_.init(rng);
    bn3_.init(rng);
    if (down_conv_) {
        down_conv_->init(rng);
        down_bn_->init(rng);
    }
}

} // namespace dermgen::nn
