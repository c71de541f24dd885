#include "convpred/nn.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <limits>

namespace convpred::nn {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;
using StridedMap = Eigen::Map<MatrixRM, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const MatrixRM, 0, Eigen::OuterStride<>>;

namespace {

void check_rank5(const Tensor& x, const char* who) {
    if (x.rank() != 5)
        throw DataError(std::string(who) + ": expected a (N,C,S0,S1,S2) tensor, got " +
                        x.shape_str());
}

struct ConvGeom {
    std::array<int, 3> in, out;
    std::array<int, 3> pad_lo;
    int stride, k;
};

ConvGeom conv_geometry(const std::vector<int>& shape, int k, int stride) {
    ConvGeom g;
    g.stride = stride;
    g.k = k;
    for (int a = 0; a < 3; ++a) {
        g.in[a] = shape[static_cast<size_t>(a) + 2];
        g.out[a] = same_out(g.in[a], stride);
        int pad = std::max((g.out[a] - 1) * stride + k - g.in[a], 0);
        g.pad_lo[a] = pad / 2;
    }
    return g;
}

// Gathers one output z-slice into a (Cin*k^3, O1*O2) column matrix.
void im2col_slice(const float* x, int n, int cin, const ConvGeom& g, int o0, float* col) {
    const int k = g.k, s = g.stride;
    const int64_t in_plane = static_cast<int64_t>(g.in[1]) * g.in[2];
    const int64_t in_chan = static_cast<int64_t>(g.in[0]) * in_plane;
    const int cols = g.out[1] * g.out[2];
    std::memset(col, 0, static_cast<size_t>(cin) * k * k * k * cols * sizeof(float));

    for (int ci = 0; ci < cin; ++ci) {
        const float* xc = x + (static_cast<int64_t>(n) * cin + ci) * in_chan;
        for (int kd = 0; kd < k; ++kd) {
            int z = o0 * s - g.pad_lo[0] + kd;
            if (z < 0 || z >= g.in[0]) continue;
            const float* xz = xc + static_cast<int64_t>(z) * in_plane;
            for (int kh = 0; kh < k; ++kh) {
                int row = ((ci * k + kd) * k + kh) * k;
                for (int o1 = 0; o1 < g.out[1]; ++o1) {
                    int y = o1 * s - g.pad_lo[1] + kh;
                    if (y < 0 || y >= g.in[1]) continue;
                    const float* xy = xz + static_cast<int64_t>(y) * g.in[2];
                    float* crow_base = col;
                    for (int kw = 0; kw < k; ++kw) {
                        float* crow = crow_base + static_cast<int64_t>(row + kw) * cols +
                                      static_cast<int64_t>(o1) * g.out[2];
                        int off = kw - g.pad_lo[2];
                        if (s == 1) {
                            int lo = std::max(0, -off);
                            int hi = std::min(g.out[2], g.in[2] - off);
                            if (hi > lo)
                                std::memcpy(crow + lo, xy + lo + off,
                                            static_cast<size_t>(hi - lo) * sizeof(float));
                        } else {
                            for (int o2 = 0; o2 < g.out[2]; ++o2) {
                                int xi = o2 * s + off;
                                if (xi >= 0 && xi < g.in[2]) crow[o2] = xy[xi];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Scatter-adds a column matrix back into the input gradient.
void col2im_slice(float* dx, int n, int cin, const ConvGeom& g, int o0, const float* col) {
    const int k = g.k, s = g.stride;
    const int64_t in_plane = static_cast<int64_t>(g.in[1]) * g.in[2];
    const int64_t in_chan = static_cast<int64_t>(g.in[0]) * in_plane;
    const int cols = g.out[1] * g.out[2];

    for (int ci = 0; ci < cin; ++ci) {
        float* xc = dx + (static_cast<int64_t>(n) * cin + ci) * in_chan;
        for (int kd = 0; kd < k; ++kd) {
            int z = o0 * s - g.pad_lo[0] + kd;
            if (z < 0 || z >= g.in[0]) continue;
            float* xz = xc + static_cast<int64_t>(z) * in_plane;
            for (int kh = 0; kh < k; ++kh) {
                int row = ((ci * k + kd) * k + kh) * k;
                for (int o1 = 0; o1 < g.out[1]; ++o1) {
                    int y = o1 * s - g.pad_lo[1] + kh;
                    if (y < 0 || y >= g.in[1]) continue;
                    float* xy = xz + static_cast<int64_t>(y) * g.in[2];
                    for (int kw = 0; kw < k; ++kw) {
                        const float* crow = col + static_cast<int64_t>(row + kw) * cols +
                                            static_cast<int64_t>(o1) * g.out[2];
                        int off = kw - g.pad_lo[2];
                        for (int o2 = 0; o2 < g.out[2]; ++o2) {
                            int xi = o2 * s + off;
                            if (xi >= 0 && xi < g.in[2]) xy[xi] += crow[o2];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv3d
// ---------------------------------------------------------------------------

Conv3d::Conv3d(std::string name, int in_ch, int out_ch, int ksize, int stride, Rng& rng)
    : name_(std::move(name)), in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride) {
    if (in_ch <= 0 || out_ch <= 0 || ksize <= 0 || stride <= 0)
        throw ConfigError("conv '" + name_ + "': invalid geometry");
    weight_.name = name_ + ".weight";
    weight_.value.resize({out_ch, in_ch, ksize, ksize, ksize});
    weight_.grad.resize(weight_.value.shape);
    double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize * ksize));
    for (auto& w : weight_.value.data) w = static_cast<float>(rng.normal(0.0, std));
    bias_.name = name_ + ".bias";
    bias_.value.resize({out_ch});
    bias_.grad.resize({out_ch});
}

std::string Conv3d::describe() const {
    return "conv3d " + std::to_string(in_ch_) + "->" + std::to_string(out_ch_) + " k" +
           std::to_string(k_) + " s" + std::to_string(stride_);
}

Tensor Conv3d::forward(const Tensor& x, bool training) {
    check_rank5(x, "conv3d");
    if (x.dim(1) != in_ch_)
        throw DataError("conv3d '" + name_ + "': expected " + std::to_string(in_ch_) +
                        " channels, got " + std::to_string(x.dim(1)));
    ConvGeom g = conv_geometry(x.shape, k_, stride_);
    const int n_batch = x.dim(0);
    const int cols = g.out[1] * g.out[2];
    const int rows = in_ch_ * k_ * k_ * k_;

    Tensor y({n_batch, out_ch_, g.out[0], g.out[1], g.out[2]});
    std::vector<float> col(static_cast<size_t>(rows) * cols);
    ConstMapRM wm(weight_.value.ptr(), out_ch_, rows);
    Eigen::Map<const Eigen::VectorXf> bm(bias_.value.ptr(), out_ch_);

    const int64_t out_plane = static_cast<int64_t>(cols);
    const int64_t out_stride = static_cast<int64_t>(g.out[0]) * out_plane;
    for (int n = 0; n < n_batch; ++n) {
        for (int o0 = 0; o0 < g.out[0]; ++o0) {
            im2col_slice(x.ptr(), n, in_ch_, g, o0, col.data());
            ConstMapRM cm(col.data(), rows, cols);
            float* base = y.ptr() + (static_cast<int64_t>(n) * out_ch_) * out_stride +
                          static_cast<int64_t>(o0) * out_plane;
            StridedMap ym(base, out_ch_, cols, Eigen::OuterStride<>(out_stride));
            ym.noalias() = wm * cm;
            ym.colwise() += bm;
        }
    }
    if (training) cached_input_ = x;
    return y;
}

Tensor Conv3d::backward(const Tensor& dy) {
    const Tensor& x = cached_input_;
    if (x.rank() != 5) throw std::logic_error("conv3d backward without cached forward");
    ConvGeom g = conv_geometry(x.shape, k_, stride_);
    const int n_batch = x.dim(0);
    const int cols = g.out[1] * g.out[2];
    const int rows = in_ch_ * k_ * k_ * k_;

    Tensor dx(x.shape);
    std::vector<float> col(static_cast<size_t>(rows) * cols);
    std::vector<float> dcol(static_cast<size_t>(rows) * cols);
    ConstMapRM wm(weight_.value.ptr(), out_ch_, rows);
    MapRM dwm(weight_.grad.ptr(), out_ch_, rows);
    Eigen::Map<Eigen::VectorXf> dbm(bias_.grad.ptr(), out_ch_);

    const int64_t out_plane = static_cast<int64_t>(cols);
    const int64_t out_stride = static_cast<int64_t>(g.out[0]) * out_plane;
    for (int n = 0; n < n_batch; ++n) {
        for (int o0 = 0; o0 < g.out[0]; ++o0) {
            im2col_slice(x.ptr(), n, in_ch_, g, o0, col.data());
            ConstMapRM cm(col.data(), rows, cols);
            const float* base = dy.ptr() + (static_cast<int64_t>(n) * out_ch_) * out_stride +
                                static_cast<int64_t>(o0) * out_plane;
            ConstStridedMap dym(base, out_ch_, cols, Eigen::OuterStride<>(out_stride));
            dwm.noalias() += dym * cm.transpose();
            dbm.noalias() += dym.rowwise().sum();
            MapRM dcm(dcol.data(), rows, cols);
            dcm.noalias() = wm.transpose() * dym;
            col2im_slice(dx.ptr(), n, in_ch_, g, o0, dcol.data());
        }
    }
    cached_input_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(std::string name, int features, double eps, double momentum)
    : name_(std::move(name)), features_(features), eps_(eps), momentum_(momentum) {
    gamma_.name = name_ + ".gamma";
    gamma_.value.resize({features});
    std::fill(gamma_.value.data.begin(), gamma_.value.data.end(), 1.0f);
    gamma_.grad.resize({features});
    beta_.name = name_ + ".beta";
    beta_.value.resize({features});
    beta_.grad.resize({features});
    running_mean_.name = name_ + ".running_mean";
    running_mean_.value.resize({features});
    running_mean_.trainable = false;
    running_var_.name = name_ + ".running_var";
    running_var_.value.resize({features});
    std::fill(running_var_.value.data.begin(), running_var_.value.data.end(), 1.0f);
    running_var_.trainable = false;
}

std::string BatchNorm::describe() const {
    return "batchnorm " + std::to_string(features_);
}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
    if (x.rank() < 2 || x.dim(1) != features_)
        throw DataError("batchnorm '" + name_ + "': expected " + std::to_string(features_) +
                        " channels, got " + x.shape_str());
    const int n_batch = x.dim(0);
    const int64_t spatial = x.size() / (static_cast<int64_t>(n_batch) * features_);
    const int64_t count = static_cast<int64_t>(n_batch) * spatial;

    Tensor y(x.shape);
    if (training) {
        xhat_.resize(x.shape);
        inv_std_.assign(static_cast<size_t>(features_), 0.0);
        cached_shape_ = x.shape;
        for (int c = 0; c < features_; ++c) {
            double sum = 0.0, sumsq = 0.0;
            for (int n = 0; n < n_batch; ++n) {
                const float* p = x.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                for (int64_t s = 0; s < spatial; ++s) {
                    sum += p[s];
                    sumsq += static_cast<double>(p[s]) * p[s];
                }
            }
            double mean = sum / static_cast<double>(count);
            double var = std::max(sumsq / static_cast<double>(count) - mean * mean, 0.0);
            double istd = 1.0 / std::sqrt(var + eps_);
            inv_std_[static_cast<size_t>(c)] = istd;

            float g = gamma_.value.data[static_cast<size_t>(c)];
            float b = beta_.value.data[static_cast<size_t>(c)];
            for (int n = 0; n < n_batch; ++n) {
                const float* p = x.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                float* ph = xhat_.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                float* py = y.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                for (int64_t s = 0; s < spatial; ++s) {
                    float xh = static_cast<float>((p[s] - mean) * istd);
                    ph[s] = xh;
                    py[s] = g * xh + b;
                }
            }
            auto& rm = running_mean_.value.data[static_cast<size_t>(c)];
            auto& rv = running_var_.value.data[static_cast<size_t>(c)];
            rm = static_cast<float>((1.0 - momentum_) * rm + momentum_ * mean);
            rv = static_cast<float>((1.0 - momentum_) * rv + momentum_ * var);
        }
    } else {
        for (int c = 0; c < features_; ++c) {
            double mean = running_mean_.value.data[static_cast<size_t>(c)];
            double istd = 1.0 / std::sqrt(running_var_.value.data[static_cast<size_t>(c)] + eps_);
            float g = gamma_.value.data[static_cast<size_t>(c)];
            float b = beta_.value.data[static_cast<size_t>(c)];
            for (int n = 0; n < n_batch; ++n) {
                const float* p = x.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                float* py = y.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
                for (int64_t s = 0; s < spatial; ++s)
                    py[s] = static_cast<float>(g * ((p[s] - mean) * istd) + b);
            }
        }
    }
    return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
    if (xhat_.rank() == 0) throw std::logic_error("batchnorm backward without training forward");
    const int n_batch = cached_shape_[0];
    const int64_t spatial =
        Tensor::numel(cached_shape_) / (static_cast<int64_t>(n_batch) * features_);
    const int64_t count = static_cast<int64_t>(n_batch) * spatial;

    Tensor dx(cached_shape_);
    for (int c = 0; c < features_; ++c) {
        double dsum = 0.0, dxsum = 0.0;
        for (int n = 0; n < n_batch; ++n) {
            const float* pdy = dy.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
            const float* ph = xhat_.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
            for (int64_t s = 0; s < spatial; ++s) {
                dsum += pdy[s];
                dxsum += static_cast<double>(pdy[s]) * ph[s];
            }
        }
        gamma_.grad.data[static_cast<size_t>(c)] += static_cast<float>(dxsum);
        beta_.grad.data[static_cast<size_t>(c)] += static_cast<float>(dsum);

        double g_istd = gamma_.value.data[static_cast<size_t>(c)] * inv_std_[static_cast<size_t>(c)];
        double mean_dy = dsum / static_cast<double>(count);
        double mean_dyxh = dxsum / static_cast<double>(count);
        for (int n = 0; n < n_batch; ++n) {
            const float* pdy = dy.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
            const float* ph = xhat_.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
            float* pdx = dx.ptr() + (static_cast<int64_t>(n) * features_ + c) * spatial;
            for (int64_t s = 0; s < spatial; ++s)
                pdx[s] = static_cast<float>(g_istd * (pdy[s] - mean_dy - ph[s] * mean_dyxh));
        }
    }
    xhat_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x, bool training) {
    Tensor y = x;
    if (training) mask_.assign(x.data.size(), 0);
    for (size_t i = 0; i < y.data.size(); ++i) {
        if (y.data[i] > 0.0f) {
            if (training) mask_[i] = 1;
        } else {
            y.data[i] = 0.0f;
        }
    }
    return y;
}

Tensor ReLU::backward(const Tensor& dy) {
    if (mask_.size() != dy.data.size()) throw std::logic_error("relu backward without forward");
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i)
        if (!mask_[i]) dx.data[i] = 0.0f;
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool3d
// ---------------------------------------------------------------------------

std::string MaxPool3d::describe() const {
    return "maxpool3d k" + std::to_string(k_) + " s" + std::to_string(stride_);
}

Tensor MaxPool3d::forward(const Tensor& x, bool training) {
    check_rank5(x, "maxpool3d");
    const int n_batch = x.dim(0), ch = x.dim(1);
    std::array<int, 3> in{x.dim(2), x.dim(3), x.dim(4)};
    std::array<int, 3> out = same_out3(in, stride_);
    Tensor y({n_batch, ch, out[0], out[1], out[2]});
    argmax_.assign(static_cast<size_t>(y.size()), 0);
    cached_in_shape_ = x.shape;
    (void)training;

    const int64_t in_plane = static_cast<int64_t>(in[1]) * in[2];
    const int64_t in_block = static_cast<int64_t>(in[0]) * in_plane;
    int64_t oi = 0;
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < ch; ++c) {
            const float* px = x.ptr() + (static_cast<int64_t>(n) * ch + c) * in_block;
            for (int o0 = 0; o0 < out[0]; ++o0)
                for (int o1 = 0; o1 < out[1]; ++o1)
                    for (int o2 = 0; o2 < out[2]; ++o2, ++oi) {
                        int z0 = o0 * stride_, y0 = o1 * stride_, x0 = o2 * stride_;
                        int z1 = std::min(z0 + k_, in[0]);
                        int y1 = std::min(y0 + k_, in[1]);
                        int x1 = std::min(x0 + k_, in[2]);
                        float best = -std::numeric_limits<float>::infinity();
                        int64_t best_idx = 0;
                        for (int z = z0; z < z1; ++z)
                            for (int yy = y0; yy < y1; ++yy)
                                for (int xx = x0; xx < x1; ++xx) {
                                    int64_t idx = static_cast<int64_t>(z) * in_plane +
                                                  static_cast<int64_t>(yy) * in[2] + xx;
                                    if (px[idx] > best) {
                                        best = px[idx];
                                        best_idx = idx;
                                    }
                                }
                        y.data[static_cast<size_t>(oi)] = best;
                        argmax_[static_cast<size_t>(oi)] = best_idx;
                    }
        }
    return y;
}

Tensor MaxPool3d::backward(const Tensor& dy) {
    if (cached_in_shape_.empty()) throw std::logic_error("maxpool backward without forward");
    Tensor dx(cached_in_shape_);
    const int n_batch = cached_in_shape_[0], ch = cached_in_shape_[1];
    const int64_t in_block = static_cast<int64_t>(cached_in_shape_[2]) * cached_in_shape_[3] *
                             cached_in_shape_[4];
    const int64_t out_block = dy.size() / (static_cast<int64_t>(n_batch) * ch);
    int64_t oi = 0;
    for (int n = 0; n < n_batch; ++n)
        for (int c = 0; c < ch; ++c) {
            float* pdx = dx.ptr() + (static_cast<int64_t>(n) * ch + c) * in_block;
            for (int64_t s = 0; s < out_block; ++s, ++oi)
                pdx[argmax_[static_cast<size_t>(oi)]] += dy.data[static_cast<size_t>(oi)];
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

Dense::Dense(std::string name, int in_features, int out_features, Rng& rng)
    : name_(std::move(name)), in_(in_features), out_(out_features) {
    if (in_ <= 0 || out_ <= 0) throw ConfigError("dense '" + name_ + "': invalid size");
    weight_.name = name_ + ".weight";
    weight_.value.resize({out_, in_});
    weight_.grad.resize({out_, in_});
    double std = std::sqrt(2.0 / static_cast<double>(in_));
    for (auto& w : weight_.value.data) w = static_cast<float>(rng.normal(0.0, std));
    bias_.name = name_ + ".bias";
    bias_.value.resize({out_});
    bias_.grad.resize({out_});
}

std::string Dense::describe() const {
    return "dense " + std::to_string(in_) + "->" + std::to_string(out_);
}

Tensor Dense::forward(const Tensor& x, bool training) {
    if (x.rank() != 2 || x.dim(1) != in_)
        throw DataError("dense '" + name_ + "': expected (N," + std::to_string(in_) +
                        "), got " + x.shape_str());
    const int n_batch = x.dim(0);
    Tensor y({n_batch, out_});
    ConstMapRM xm(x.ptr(), n_batch, in_);
    ConstMapRM wm(weight_.value.ptr(), out_, in_);
    Eigen::Map<const Eigen::VectorXf> bm(bias_.value.ptr(), out_);
    MapRM ym(y.ptr(), n_batch, out_);
    ym.noalias() = xm * wm.transpose();
    ym.rowwise() += bm.transpose();
    if (training) cached_input_ = x;
    return y;
}

Tensor Dense::backward(const Tensor& dy) {
    const Tensor& x = cached_input_;
    if (x.rank() != 2) throw std::logic_error("dense backward without cached forward");
    const int n_batch = x.dim(0);
    ConstMapRM xm(x.ptr(), n_batch, in_);
    ConstMapRM dym(dy.ptr(), n_batch, out_);
    MapRM dwm(weight_.grad.ptr(), out_, in_);
    Eigen::Map<Eigen::VectorXf> dbm(bias_.grad.ptr(), out_);
    dwm.noalias() += dym.transpose() * xm;
    dbm.noalias() += dym.colwise().sum().transpose();

    Tensor dx({n_batch, in_});
    ConstMapRM wm(weight_.value.ptr(), out_, in_);
    MapRM dxm(dx.ptr(), n_batch, in_);
    dxm.noalias() = dym * wm;
    cached_input_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// Dropout
// ---------------------------------------------------------------------------

std::string Dropout::describe() const {
    return "dropout p=" + std::to_string(p_);
}

Tensor Dropout::forward(const Tensor& x, bool training) {
    if (!training || p_ <= 0.0) {
        mask_.clear();
        return x;
    }
    if (p_ >= 1.0) throw ConfigError("dropout probability must be < 1");
    Tensor y = x;
    mask_.assign(x.data.size(), 0.0f);
    float scale = static_cast<float>(1.0 / (1.0 - p_));
    for (size_t i = 0; i < y.data.size(); ++i) {
        if (rng_.uniform() >= p_) {
            mask_[i] = scale;
            y.data[i] *= scale;
        } else {
            y.data[i] = 0.0f;
        }
    }
    return y;
}

Tensor Dropout::backward(const Tensor& dy) {
    if (mask_.empty()) return dy;  // dropout disabled in this pass
    Tensor dx = dy;
    for (size_t i = 0; i < dx.data.size(); ++i) dx.data[i] *= mask_[i];
    return dx;
}

// ---------------------------------------------------------------------------
// Flatten
// ---------------------------------------------------------------------------

Tensor Flatten::forward(const Tensor& x, bool training) {
    if (training) cached_shape_ = x.shape;
    Tensor y;
    y.shape = {x.dim(0), static_cast<int>(x.size() / x.dim(0))};
    y.data = x.data;
    return y;
}

Tensor Flatten::backward(const Tensor& dy) {
    Tensor dx;
    dx.shape = cached_shape_;
    dx.data = dy.data;
    return dx;
}

// ---------------------------------------------------------------------------
// L2Normalize
// ---------------------------------------------------------------------------

Tensor L2Normalize::forward(const Tensor& x, bool training) {
    if (x.rank() != 2) throw DataError("l2norm: expected (N,F), got " + x.shape_str());
    const int n_batch = x.dim(0), f = x.dim(1);
    Tensor y(x.shape);
    norms_.assign(static_cast<size_t>(n_batch), 0.0);
    for (int n = 0; n < n_batch; ++n) {
        const float* px = x.ptr() + static_cast<int64_t>(n) * f;
        double ss = 0.0;
        for (int i = 0; i < f; ++i) ss += static_cast<double>(px[i]) * px[i];
        double norm = std::sqrt(ss);
        double denom = std::max(norm, eps_);
        norms_[static_cast<size_t>(n)] = denom;
        float* py = y.ptr() + static_cast<int64_t>(n) * f;
        for (int i = 0; i < f; ++i) py[i] = static_cast<float>(px[i] / denom);
    }
    if (training) cached_out_ = y;
    return y;
}

Tensor L2Normalize::backward(const Tensor& dy) {
    if (cached_out_.rank() != 2) throw std::logic_error("l2norm backward without forward");
    const int n_batch = dy.dim(0), f = dy.dim(1);
    Tensor dx(dy.shape);
    for (int n = 0; n < n_batch; ++n) {
        const float* pdy = dy.ptr() + static_cast<int64_t>(n) * f;
        const float* py = cached_out_.ptr() + static_cast<int64_t>(n) * f;
        float* pdx = dx.ptr() + static_cast<int64_t>(n) * f;
        double dot = 0.0;
        for (int i = 0; i < f; ++i) dot += static_cast<double>(pdy[i]) * py[i];
        double denom = norms_[static_cast<size_t>(n)];
        for (int i = 0; i < f; ++i)
            pdx[i] = static_cast<float>((pdy[i] - py[i] * dot) / denom);
    }
    cached_out_ = Tensor();
    return dx;
}

// ---------------------------------------------------------------------------
// ResidualBlock
// ---------------------------------------------------------------------------

ResidualBlock::ResidualBlock(std::string name, int in_ch, int out_ch, Rng& rng)
    : name_(name),
      conv1_(name + ".conv1", in_ch, out_ch, 3, 1, rng),
      bn1_(name + ".bn1", out_ch),
      conv2_(name + ".conv2", out_ch, out_ch, 3, 1, rng),
      bn2_(name + ".bn2", out_ch) {
    if (in_ch != out_ch) {
        proj_conv_ = std::make_unique<Conv3d>(name + ".proj", in_ch, out_ch, 1, 1, rng);
        proj_bn_ = std::make_unique<BatchNorm>(name + ".proj_bn", out_ch);
    }
}

std::string ResidualBlock::describe() const {
    return "residual " + std::to_string(conv1_.in_channels()) + "->" +
           std::to_string(conv1_.out_channels()) + (proj_conv_ ? " (projected skip)" : "");
}

Tensor ResidualBlock::forward(const Tensor& x, bool training) {
    Tensor h = conv1_.forward(x, training);
    h = bn1_.forward(h, training);
    h = relu1_.forward(h, training);
    h = conv2_.forward(h, training);
    h = bn2_.forward(h, training);
    Tensor skip;
    if (proj_conv_) {
        skip = proj_conv_->forward(x, training);
        skip = proj_bn_->forward(skip, training);
    } else {
        skip = x;
    }
    if (!h.same_shape(skip))
        throw DataError("residual '" + name_ + "': branch shapes differ " + h.shape_str() +
                        " vs " + skip.shape_str());
    for (size_t i = 0; i < h.data.size(); ++i) h.data[i] += skip.data[i];
    return relu_out_.forward(h, training);
}

Tensor ResidualBlock::backward(const Tensor& dy) {
    Tensor dsum = relu_out_.backward(dy);
    Tensor dmain = bn2_.backward(dsum);
    dmain = conv2_.backward(dmain);
    dmain = relu1_.backward(dmain);
    dmain = bn1_.backward(dmain);
    dmain = conv1_.backward(dmain);
    Tensor dskip;
    if (proj_conv_) {
        dskip = proj_bn_->backward(dsum);
        dskip = proj_conv_->backward(dskip);
        for (size_t i = 0; i < dmain.data.size(); ++i) dmain.data[i] += dskip.data[i];
        return dmain;
    }
    for (size_t i = 0; i < dmain.data.size(); ++i) dmain.data[i] += dsum.data[i];
    return dmain;
}

std::vector<Param*> ResidualBlock::params() {
    std::vector<Param*> out;
    for (Layer* l : std::initializer_list<Layer*>{&conv1_, &bn1_, &conv2_, &bn2_}) {
        auto p = l->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    if (proj_conv_) {
        auto p = proj_conv_->params();
        out.insert(out.end(), p.begin(), p.end());
        p = proj_bn_->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<Param*> ResidualBlock::state() {
    std::vector<Param*> out;
    for (Layer* l : std::initializer_list<Layer*>{&conv1_, &bn1_, &conv2_, &bn2_}) {
        auto p = l->state();
        out.insert(out.end(), p.begin(), p.end());
    }
    if (proj_conv_) {
        auto p = proj_conv_->state();
        out.insert(out.end(), p.begin(), p.end());
        p = proj_bn_->state();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Net
// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw DataError("softmax: expected (N,K), got " + logits.shape_str());
    const int n_batch = logits.dim(0), k = logits.dim(1);
    Tensor p(logits.shape);
    for (int n = 0; n < n_batch; ++n) {
        const float* pl = logits.ptr() + static_cast<int64_t>(n) * k;
        float* pp = p.ptr() + static_cast<int64_t>(n) * k;
        float mx = pl[0];
        for (int i = 1; i < k; ++i) mx = std::max(mx, pl[i]);
        double sum = 0.0;
        for (int i = 0; i < k; ++i) {
            double e = std::exp(static_cast<double>(pl[i]) - mx);
            pp[i] = static_cast<float>(e);
            sum += e;
        }
        for (int i = 0; i < k; ++i) pp[i] = static_cast<float>(pp[i] / sum);
    }
    return p;
}

Tensor Net::forward(const Tensor& x, bool training) {
    Tensor cur = x;
    for (auto& l : layers) cur = l->forward(cur, training);
    if (softmax_head) return softmax_rows(cur);
    return cur;
}

Tensor Net::backward(const Tensor& grad) {
    Tensor g = grad;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Param*> Net::params() {
    std::vector<Param*> out;
    for (auto& l : layers) {
        auto p = l->params();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

std::vector<Param*> Net::state() {
    std::vector<Param*> out;
    for (auto& l : layers) {
        auto p = l->state();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

int64_t Net::param_count() {
    int64_t n = 0;
    for (Param* p : params()) n += p->value.size();
    return n;
}

namespace {

void write_u32(std::ostream& out, uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw DataError("truncated checkpoint");
    return v;
}

}  // namespace

void Net::save_tensors(std::ostream& out) {
    auto st = state();
    write_u32(out, static_cast<uint32_t>(st.size()));
    for (Param* p : st) {
        write_u32(out, static_cast<uint32_t>(p->name.size()));
        out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        write_u32(out, static_cast<uint32_t>(p->value.shape.size()));
        for (int d : p->value.shape) write_u32(out, static_cast<uint32_t>(d));
        out.write(reinterpret_cast<const char*>(p->value.ptr()),
                  static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
    }
}

void Net::load_tensors(std::istream& in) {
    auto st = state();
    uint32_t count = read_u32(in);
    if (count != st.size())
        throw DataError("checkpoint has " + std::to_string(count) + " tensors, net expects " +
                        std::to_string(st.size()));
    for (Param* p : st) {
        uint32_t name_len = read_u32(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        if (name != p->name)
            throw DataError("checkpoint tensor '" + name + "' does not match net tensor '" +
                            p->name + "'");
        uint32_t rank = read_u32(in);
        std::vector<int> shape(rank);
        for (auto& d : shape) d = static_cast<int>(read_u32(in));
        if (shape != p->value.shape)
            throw DataError("checkpoint tensor '" + name + "' shape mismatch");
        in.read(reinterpret_cast<char*>(p->value.ptr()),
                static_cast<std::streamsize>(p->value.data.size() * sizeof(float)));
        if (!in) throw DataError("truncated checkpoint while reading '" + name + "'");
    }
}

std::string Net::weights_digest() {
    Digest d;
    for (Param* p : state()) {
        d.update(p->name);
        d.update(p->value.ptr(), p->value.data.size() * sizeof(float));
    }
    return d.hex();
}

// ---------------------------------------------------------------------------
// NesterovSgd
// ---------------------------------------------------------------------------

void NesterovSgd::step(const std::vector<Param*>& params, double lr) {
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (Param* p : params) velocity_.emplace_back(p->value.data.size(), 0.0f);
    }
    for (size_t i = 0; i < params.size(); ++i) {
        Param* p = params[i];
        if (!p->trainable) continue;
        auto& v = velocity_[i];
        float mu = static_cast<float>(momentum_);
        float wd = static_cast<float>(weight_decay_);
        float flr = static_cast<float>(lr);
        for (size_t j = 0; j < v.size(); ++j) {
            float g = p->grad.data[j];
            if (wd != 0.0f) g += wd * p->value.data[j];
            v[j] = mu * v[j] + g;
            p->value.data[j] -= flr * (g + mu * v[j]);
        }
    }
}

void NesterovSgd::zero_grad(const std::vector<Param*>& params) {
    for (Param* p : params) std::fill(p->grad.data.begin(), p->grad.data.end(), 0.0f);
}

}  // namespace convpred::nn
