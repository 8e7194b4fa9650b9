#ifndef EQPROP_TENSOR_HPP
#define EQPROP_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqprop {

// Thrown when tensor arguments disagree on dimensions. The message names the
// offending dimensions so shape bugs surface at the call site.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Dense row-major tensor of doubles. All arithmetic in this library is
// 64-bit; shapes are small (rank <= 4) so they live in a plain vector.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s, double fill = 0.0) : shape(std::move(s)) {
        v.assign(count(shape), fill);
    }

    static std::size_t count(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 0) throw ShapeError("negative dimension " + std::to_string(d));
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double* data() { return v.data(); }
    const double* data() const { return v.data(); }

    double& operator[](std::size_t i) { return v[i]; }
    double operator[](std::size_t i) const { return v[i]; }

    // 2-d access (matrices are [rows, cols])
    double& at(int r, int c) { return v[static_cast<std::size_t>(r) * shape[1] + c]; }
    const double& at(int r, int c) const { return v[static_cast<std::size_t>(r) * shape[1] + c]; }

    // 3-d access (feature maps are [channels, height, width])
    double& at(int c, int h, int w) {
        return v[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }
    const double& at(int c, int h, int w) const {
        return v[(static_cast<std::size_t>(c) * shape[1] + h) * shape[2] + w];
    }

    // 4-d access (conv kernels are [out, in, kh, kw])
    double& at(int o, int i, int kh, int kw) {
        return v[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + kh) * shape[3] + kw];
    }
    const double& at(int o, int i, int kh, int kw) const {
        return v[((static_cast<std::size_t>(o) * shape[1] + i) * shape[2] + kh) * shape[3] + kw];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    Tensor& operator+=(const Tensor& o) {
        check_same(o, "+=");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] += o.v[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        check_same(o, "-=");
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= o.v[i];
        return *this;
    }
    Tensor& operator*=(double a) {
        for (double& x : v) x *= a;
        return *this;
    }

    void fill(double a) { v.assign(v.size(), a); }

    // Reinterprets the buffer with a new shape of identical element count.
    Tensor reshaped(std::vector<int> s) const {
        if (count(s) != v.size())
            throw ShapeError("reshape " + shape_str(shape) + " -> " + shape_str(s) +
                             " changes element count");
        Tensor t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }

    double max_abs() const {
        double m = 0.0;
        for (double x : v) m = std::max(m, std::fabs(x));
        return m;
    }

    double norm2() const {
        double s = 0.0;
        for (double x : v) s += x * x;
        return std::sqrt(s);
    }

    bool all_finite() const {
        for (double x : v)
            if (!std::isfinite(x)) return false;
        return true;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string r = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) r += ",";
            r += std::to_string(s[i]);
        }
        return r + "]";
    }

    void check_same(const Tensor& o, const char* op) const {
        if (!same_shape(o))
            throw ShapeError(std::string(op) + ": shape " + shape_str(shape) +
                             " vs " + shape_str(o.shape));
    }
};

// Argmax bookkeeping for max pooling: for every pooled cell the (row, col)
// offset inside its window that held the maximum. unpool() and the pooled
// adjoint both replay these instead of re-scanning.
struct PoolIndices {
    int channels = 0;
    int out_h = 0;
    int out_w = 0;
    int window = 1;
    std::vector<unsigned char> row_off;
    std::vector<unsigned char> col_off;

    std::size_t cells() const {
        return static_cast<std::size_t>(channels) * out_h * out_w;
    }
};

}  // namespace eqprop

#endif
