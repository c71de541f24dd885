#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

namespace convpred::nn {

// Dense row-major float tensor. Classifier activations are (N, C, S0, S1, S2)
// with S2 fastest; fully-connected activations are (N, F).
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) { resize(std::move(s)); }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    void resize(std::vector<int> s) {
        shape = std::move(s);
        data.assign(static_cast<size_t>(numel(shape)), 0.0f);
    }

    static int64_t numel(const std::vector<int>& s) {
        int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int dim(size_t i) const { return shape[i]; }
    int rank() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    std::string shape_str() const;
};

std::string shape_to_string(const std::vector<int>& s);

}  // namespace convpred::nn
