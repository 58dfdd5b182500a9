#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

namespace dermgen::nn {

/// Dense float tensor, row-major over an explicit shape. Just enough for
/// this pipeline: contiguous storage plus shape bookkeeping.
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(static_cast<size_t>(count(shape)), 0.0f) {}

    static int64_t count(const std::vector<int>& shape) {
        int64_t n = 1;
        for (int d : shape) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(size_t i) const { return shape[i]; }
    int rank() const { return static_cast<int>(shape.size()); }

    float* ptr() { return data.data(); }
    const float* ptr() const { return data.data(); }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(0.0f); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    bool operator==(const Tensor&) const = default;
};

} // namespace dermgen::nn
