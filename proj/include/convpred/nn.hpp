#pragma once

#include <array>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "convpred/common.hpp"
#include "convpred/tensor.hpp"

namespace convpred::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
};

// Output length of a same-padded convolution or pooling window.
inline int same_out(int n, int stride) { return (n + stride - 1) / stride; }

inline std::array<int, 3> same_out3(const std::array<int, 3>& s, int stride) {
    return {same_out(s[0], stride), same_out(s[1], stride), same_out(s[2], stride)};
}

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, bool training) = 0;
    virtual Tensor backward(const Tensor& dy) = 0;
    virtual std::vector<Param*> params() { return {}; }  // trainable parameters
    virtual std::vector<Param*> state() { return params(); }  // + running statistics
    virtual std::string describe() const = 0;
};

class Conv3d : public Layer {
public:
    Conv3d(std::string name, int in_ch, int out_ch, int ksize, int stride, Rng& rng);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string describe() const override;

    int in_channels() const { return in_ch_; }
    int out_channels() const { return out_ch_; }
    int ksize() const { return k_; }
    int stride() const { return stride_; }

private:
    std::string name_;
    int in_ch_, out_ch_, k_, stride_;
    Param weight_;  // (out_ch, in_ch, k, k, k)
    Param bias_;    // (out_ch)
    Tensor cached_input_;
};

class BatchNorm : public Layer {
public:
    BatchNorm(std::string name, int features, double eps = 1e-5, double momentum = 0.1);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::vector<Param*> state() override {
        return {&gamma_, &beta_, &running_mean_, &running_var_};
    }
    std::string describe() const override;

private:
    std::string name_;
    int features_;
    double eps_, momentum_;
    Param gamma_, beta_;
    Param running_mean_, running_var_;  // not trainable
    Tensor xhat_;
    std::vector<double> inv_std_;
    std::vector<int> cached_shape_;
};

class ReLU : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string describe() const override { return "relu"; }

private:
    std::vector<uint8_t> mask_;
};

class MaxPool3d : public Layer {
public:
    explicit MaxPool3d(int ksize, int stride = 0) : k_(ksize), stride_(stride ? stride : ksize) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string describe() const override;

    int ksize() const { return k_; }
    int stride() const { return stride_; }

private:
    int k_, stride_;
    std::vector<int64_t> argmax_;
    std::vector<int> cached_in_shape_;
};

class Dense : public Layer {
public:
    Dense(std::string name, int in_features, int out_features, Rng& rng);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override { return {&weight_, &bias_}; }
    std::string describe() const override;

    int in_features() const { return in_; }
    int out_features() const { return out_; }

private:
    std::string name_;
    int in_, out_;
    Param weight_;  // (out, in)
    Param bias_;    // (out)
    Tensor cached_input_;
};

class Dropout : public Layer {
public:
    Dropout(double p, uint64_t seed) : p_(p), rng_(seed, 0x44524f50ULL) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string describe() const override;

private:
    double p_;
    Rng rng_;
    std::vector<float> mask_;
};

class Flatten : public Layer {
public:
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string describe() const override { return "flatten"; }

private:
    std::vector<int> cached_shape_;
};

// Row-wise x / max(||x||, eps) over (N, F).
class L2Normalize : public Layer {
public:
    explicit L2Normalize(double eps = 1e-8) : eps_(eps) {}
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::string describe() const override { return "l2norm"; }

private:
    double eps_;
    Tensor cached_out_;
    std::vector<double> norms_;
};

// Two 3x3x3 conv+BN stages summed with the identity (1x1x1 projection when
// the channel count changes), ReLU after the sum.
class ResidualBlock : public Layer {
public:
    ResidualBlock(std::string name, int in_ch, int out_ch, Rng& rng);
    Tensor forward(const Tensor& x, bool training) override;
    Tensor backward(const Tensor& dy) override;
    std::vector<Param*> params() override;
    std::vector<Param*> state() override;
    std::string describe() const override;

    bool has_projection() const { return static_cast<bool>(proj_conv_); }

private:
    std::string name_;
    Conv3d conv1_;
    BatchNorm bn1_;
    ReLU relu1_;
    Conv3d conv2_;
    BatchNorm bn2_;
    std::unique_ptr<Conv3d> proj_conv_;
    std::unique_ptr<BatchNorm> proj_bn_;
    ReLU relu_out_;
};

Tensor softmax_rows(const Tensor& logits);

class Net {
public:
    std::vector<std::unique_ptr<Layer>> layers;
    bool softmax_head = false;

    // With softmax_head the returned tensor holds probabilities; the raw
    // logits of the last forward are kept for loss gradients.
    Tensor forward(const Tensor& x, bool training = false);
    // Backpropagates a gradient with respect to the logits (or the last
    // layer's output when there is no softmax head).
    Tensor backward(const Tensor& grad);

    std::vector<Param*> params();
    std::vector<Param*> state();
    int64_t param_count();

    void save_tensors(std::ostream& out);
    void load_tensors(std::istream& in);
    std::string weights_digest();
};

// Nesterov momentum SGD.
class NesterovSgd {
public:
    explicit NesterovSgd(double momentum = 0.9, double weight_decay = 0.0)
        : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(const std::vector<Param*>& params, double lr);
    static void zero_grad(const std::vector<Param*>& params);

private:
    double momentum_, weight_decay_;
    std::vector<std::vector<float>> velocity_;
};

}  // namespace convpred::nn
