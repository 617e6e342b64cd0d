#include "maskmix/tensor.hpp"

#include "maskmix/errors.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace maskmix {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

void require_positive(const Shape& shape) {
    for (auto e : shape) {
        if (e == 0) {
            throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
        }
    }
}

} // namespace

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    require_positive(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require_positive(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw DimensionError("tensor of shape " + shape_str(shape_) + " needs " +
                             std::to_string(shape_numel(shape_)) + " elements, got " +
                             std::to_string(data_.size()));
    }
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, std::vector<double>{value}); }

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(m * n);
    for (const auto& row : rows) {
        if (row.size() != n) throw DimensionError("ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({m, n}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1.0;
    return t;
}

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
}

double Tensor::item() const {
    if (data_.size() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Tensor::check_finite(const std::string& what) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i])) {
            throw NonFiniteError(what + ": non-finite value at flat index " + std::to_string(i));
        }
    }
}

namespace kernels {

std::uint64_t& mac_counter() {
    thread_local std::uint64_t count = 0;
    return count;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() < 2) throw RankError("matmul: left operand must have rank >= 2, got " + shape_str(a.shape()));
    if (b.rank() != 2) throw RankError("matmul: right operand must be a matrix, got " + shape_str(b.shape()));
    const std::size_t k = a.shape().back();
    if (k != b.dim(0)) {
        throw DimensionError("matmul: inner extents disagree for " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.size() / k;
    const std::size_t n = b.dim(1);
    Shape out_shape = a.shape();
    out_shape.back() = n;
    Tensor out(out_shape);
    ConstMatMap am(a.raw(), Eigen::Index(m), Eigen::Index(k));
    ConstMatMap bm(b.raw(), Eigen::Index(k), Eigen::Index(n));
    MatMap cm(out.raw(), Eigen::Index(m), Eigen::Index(n));
    cm.noalias() = am * bm;
    mac_counter() += std::uint64_t(m) * k * n;
    return out;
}

void matmul_at_b_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n) {
    ConstMatMap am(a.data(), Eigen::Index(m), Eigen::Index(k));
    ConstMatMap bm(b.data(), Eigen::Index(m), Eigen::Index(n));
    MatMap cm(c.data(), Eigen::Index(k), Eigen::Index(n));
    cm.noalias() += am.transpose() * bm;
}

void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t n, std::size_t k) {
    ConstMatMap am(a.data(), Eigen::Index(m), Eigen::Index(n));
    ConstMatMap bm(b.data(), Eigen::Index(k), Eigen::Index(n));
    MatMap cm(c.data(), Eigen::Index(m), Eigen::Index(k));
    cm.noalias() += am * bm.transpose();
}

Tensor transpose(const Tensor& a) {
    if (a.rank() < 2) throw RankError("transpose: rank must be >= 2, got " + shape_str(a.shape()));
    const std::size_t rows = a.shape()[a.rank() - 2];
    const std::size_t cols = a.shape()[a.rank() - 1];
    const std::size_t batch = a.size() / (rows * cols);
    Shape out_shape = a.shape();
    std::swap(out_shape[a.rank() - 2], out_shape[a.rank() - 1]);
    Tensor out(out_shape);
    for (std::size_t b = 0; b < batch; ++b) {
        const double* src = a.raw() + b * rows * cols;
        double* dst = out.raw() + b * rows * cols;
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * cols + j];
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        Tensor out = a;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
    }
    // Row broadcast of a vector over the last axis.
    if (b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.dim(0)) {
        Tensor out = a;
        const std::size_t n = b.dim(0);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
        return out;
    }
    throw DimensionError("add: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = a;
    for (auto& x : out.data()) x *= s;
    return out;
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) {
        throw RankError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()));
    }
    const std::size_t n = a.dim(axis);
    std::size_t outer = 1;
    std::size_t inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + std::ptrdiff_t(axis));
    Tensor out(out_shape);
    const double inv = 1.0 / double(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t r = 0; r < n; ++r) {
            const double* src = a.raw() + (o * n + r) * inner;
            double* dst = out.raw() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
        double* dst = out.raw() + o * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] *= inv;
    }
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
    return cdf + x * pdf;
}

} // namespace kernels

} // namespace maskmix
