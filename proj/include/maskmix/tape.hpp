#pragma once

#include "maskmix/tensor.hpp"

#include <cstddef>
#include <functional>
#include <string>
#include <deque>
#include <vector>

namespace maskmix {

/// A trainable tensor together with the gradient of the last backward pass.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
  public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }

  private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records primitive operations of one forward pass and replays their
/// backward rules in reverse order.
///
/// A tape supports exactly one backward pass. Recording after backward, or
/// a second backward, throws TapeError.
class Tape {
  public:
    /// Receives the gradient flowing into the node's output.
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var parameter(Parameter& param);

    /// Records an op result. `backward` is only invoked when at least one of
    /// `inputs` requires a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    bool requires_grad(const Var& v) const;
    const Tensor& value(const Var& v) const;
    /// Adds `g` into the gradient slot of `v`; no-op for constants.
    void accumulate(const Var& v, const Tensor& g);
    /// Mutable gradient slot of `v`, zero-initialized on first access.
    Tensor& grad_slot(const Var& v);

    /// Zeroes the gradients of every parameter on the tape, seeds d(loss) = 1
    /// and writes parameter gradients into Parameter::grad.
    void backward(const Var& loss);

    bool consumed() const { return consumed_; }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        Parameter* param = nullptr;
        BackwardFn backward;
    };

    void check_owned(const Var& v) const;
    void check_open() const;

    std::deque<Node> nodes_;
    bool consumed_ = false;
};

/// Differentiable primitives.
namespace ops {

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var add(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var mean(const Var& a, std::size_t axis);
Var sum(const Var& a);
Var reshape(const Var& a, Shape shape);

} // namespace ops

} // namespace maskmix
