#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tae {

// Dense row-major double tensor. Rank is whatever the shape says; everything
// in this codebase is rank 1 or 2.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::initializer_list<std::size_t> s) : shape(s), data(numel_of(shape), 0.0) {}
    explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)), data(numel_of(shape), 0.0) {}

    static std::size_t numel_of(const std::vector<std::size_t>& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<std::size_t> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor from_vector(std::vector<double> v) {
        Tensor t;
        t.shape = {v.size()};
        t.data = std::move(v);
        return t;
    }

    std::size_t numel() const { return data.size(); }

    // 1-D tensors behave as a single row
    std::size_t rows() const { return shape.size() < 2 ? 1 : shape[0]; }
    std::size_t cols() const {
        if (shape.size() < 2) return shape.empty() ? 1 : shape[0];
        return shape[1];
    }

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols(), cols()}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols(), cols()}; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void check_same_shape(const Tensor& o, const std::string& what) const {
        if (!same_shape(o))
            throw std::invalid_argument(what + ": shape mismatch (" + shape_str() + " vs " +
                                        o.shape_str() + ")");
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }
};

}  // namespace tae
