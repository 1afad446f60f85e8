#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ssnn {

// Thrown when a caller breaks a documented precondition (shape mismatch,
// index out of range, non-scalar loss, ...).
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Malformed input file.
struct parse_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Structurally valid file with inconsistent content (wrong dims, empty, ...).
struct schema_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A guarded computation would exceed its stated resource bound.
struct resource_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += " x ";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d <= 0) throw contract_error("tensor shape has non-positive dim " + shape_str(s));
        n *= d;
    }
    return n;
}

// Dense row-major 64-bit real tensor. Rank 0 is a scalar.
class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(Shape shape)
        : shape_(std::move(shape)), data_(static_cast<size_t>(shape_numel(shape_)), 0.0) {}

    Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
            throw contract_error("tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        for (double& x : t.data_) x = v;
        return t;
    }
    static Tensor vector(std::vector<double> v) {
        Shape s{static_cast<int>(v.size())};
        return Tensor(std::move(s), std::move(v));
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
    bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    double at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
    double& at(int i, int j, int k) {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
    }

    double value() const {
        if (data_.size() != 1) throw contract_error("value() on non-scalar tensor " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    // For data arriving from outside (files, bindings): NaN/Inf rejected.
    void require_finite(const std::string& what) const {
        if (!all_finite()) throw contract_error(what + " contains non-finite values");
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw contract_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
}

inline constexpr double neg_inf() { return -std::numeric_limits<double>::infinity(); }

// log(sum(exp(v))) without overflow; -inf entries are handled.
inline double log_sum_exp(const double* v, std::int64_t n) {
    double m = neg_inf();
    for (std::int64_t i = 0; i < n; ++i) m = std::max(m, v[i]);
    if (!std::isfinite(m)) return m;
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) s += std::exp(v[i] - m);
    return m + std::log(s);
}

inline double log_sum_exp(const std::vector<double>& v) {
    return log_sum_exp(v.data(), static_cast<std::int64_t>(v.size()));
}

inline double log_add_exp(double a, double b) {
    if (a == neg_inf()) return b;
    if (b == neg_inf()) return a;
    double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// In-place stable softmax over a contiguous range.
inline void softmax_inplace(double* v, std::int64_t n) {
    double m = neg_inf();
    for (std::int64_t i = 0; i < n; ++i) m = std::max(m, v[i]);
    double s = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        v[i] = std::exp(v[i] - m);
        s += v[i];
    }
    for (std::int64_t i = 0; i < n; ++i) v[i] /= s;
}

// In-place log-softmax over a contiguous range.
inline void log_softmax_inplace(double* v, std::int64_t n) {
    double lse = log_sum_exp(v, n);
    for (std::int64_t i = 0; i < n; ++i) v[i] -= lse;
}

}  // namespace ssnn
