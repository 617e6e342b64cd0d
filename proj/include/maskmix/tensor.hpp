#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace maskmix {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major tensor of 64-bit floats.
///
/// Extents are strictly positive; rank-0 tensors hold a single scalar.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double value);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor identity(std::size_t n);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t i, std::size_t j, std::size_t k);
    double at(std::size_t i, std::size_t j, std::size_t k) const;

    double item() const;

    /// Same data under a new shape with equal element count.
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool all_finite() const;
    /// Throws NonFiniteError naming `what` if any element is NaN or Inf.
    void check_finite(const std::string& what) const;

    bool operator==(const Tensor& other) const = default;

  private:
    Shape shape_;
    std::vector<double> data_;
};

/// Raw kernels used by the tape primitives and by inference code.
namespace kernels {

/// Per-thread count of multiply-accumulates issued by matmul().
std::uint64_t& mac_counter();

/// [..., k] x [k, n] -> [..., n]; leading axes of `a` are flattened.
Tensor matmul(const Tensor& a, const Tensor& b);
/// C += A^T B for A [m, k], B [m, n] viewed as matrices; C is [k, n].
void matmul_at_b_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t k, std::size_t n);
/// C += A B^T for A [m, n], B [k, n]; C is [m, k].
void matmul_a_bt_acc(std::span<const double> a, std::span<const double> b, std::span<double> c,
                     std::size_t m, std::size_t n, std::size_t k);

/// Swaps the last two axes.
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor mean_axis(const Tensor& a, std::size_t axis);

double gelu(double x);
double gelu_grad(double x);

} // namespace kernels

} // namespace maskmix
