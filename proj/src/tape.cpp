#include "maskmix/tape.hpp"

#include "maskmix/errors.hpp"

namespace maskmix {

const Tensor& Var::value() const {
    if (!tape_) throw TapeError("value() on an unbound variable");
    return tape_->value(*this);
}

void Tape::check_owned(const Var& v) const {
    if (&v.tape() != this || v.id() >= nodes_.size()) throw TapeError("variable does not belong to this tape");
}

void Tape::check_open() const {
    if (consumed_) throw TapeError("tape already consumed by backward; run a new forward pass");
}

Var Tape::constant(Tensor value) {
    check_open();
    Node node;
    node.value = std::move(value);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Parameter& param) {
    check_open();
    Node node;
    node.value = param.value;
    node.requires_grad = true;
    node.param = &param;
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    check_open();
    Node node;
    node.value = std::move(value);
    for (const auto& in : inputs) {
        check_owned(in);
        node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

bool Tape::requires_grad(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()].requires_grad;
}

const Tensor& Tape::value(const Var& v) const {
    check_owned(v);
    return nodes_[v.id()].value;
}

Tensor& Tape::grad_slot(const Var& v) {
    check_owned(v);
    Node& node = nodes_[v.id()];
    if (!node.has_grad) {
        node.grad = Tensor(node.value.shape());
        node.has_grad = true;
    }
    return node.grad;
}

void Tape::accumulate(const Var& v, const Tensor& g) {
    check_owned(v);
    if (!nodes_[v.id()].requires_grad) return;
    Tensor& slot = grad_slot(v);
    if (slot.shape() != g.shape()) {
        throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value shape " +
                             shape_str(slot.shape()));
    }
    for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += g[i];
}

void Tape::backward(const Var& loss) {
    check_owned(loss);
    check_open();
    if (nodes_[loss.id()].value.size() != 1) {
        throw DimensionError("backward needs a scalar loss, got " + shape_str(nodes_[loss.id()].value.shape()));
    }
    consumed_ = true;
    for (auto& node : nodes_) {
        if (node.param) node.param->grad = Tensor(node.param->value.shape());
    }
    grad_slot(loss).fill(1.0);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.has_grad || !node.requires_grad) continue;
        if (node.backward) {
            // The closure may touch other nodes; keep the gradient alive locally.
            const Tensor out_grad = node.grad;
            node.backward(*this, out_grad);
        }
        if (node.param) {
            Tensor& pg = node.param->grad;
            for (std::size_t j = 0; j < pg.size(); ++j) pg[j] += node.grad[j];
        }
    }
}

namespace ops {

Var matmul(const Var& a, const Var& b) {
    Tensor out = kernels::matmul(a.value(), b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const std::size_t k = bv.dim(0);
        const std::size_t n = bv.dim(1);
        const std::size_t m = av.size() / k;
        if (t.requires_grad(a)) {
            // dA = dC B^T
            kernels::matmul_a_bt_acc(g.data(), bv.data(), t.grad_slot(a).data(), m, n, k);
        }
        if (t.requires_grad(b)) {
            // dB = A^T dC
            kernels::matmul_at_b_acc(av.data(), g.data(), t.grad_slot(b).data(), m, k, n);
        }
    });
}

Var transpose(const Var& a) {
    Tensor out = kernels::transpose(a.value());
    return a.tape().record(std::move(out), {a},
                           [a](Tape& t, const Tensor& g) { t.accumulate(a, kernels::transpose(g)); });
}

Var add(const Var& a, const Var& b) {
    Tensor out = kernels::add(a.value(), b.value());
    const bool broadcast = a.shape() != b.shape();
    return a.tape().record(std::move(out), {a, b}, [a, b, broadcast](Tape& t, const Tensor& g) {
        t.accumulate(a, g);
        if (!t.requires_grad(b)) return;
        if (!broadcast) {
            t.accumulate(b, g);
            return;
        }
        Tensor& slot = t.grad_slot(b);
        const std::size_t n = slot.size();
        for (std::size_t i = 0; i < g.size(); ++i) slot[i % n] += g[i];
    });
}

Var mul(const Var& a, const Var& b) {
    Tensor out = kernels::mul(a.value(), b.value());
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
        if (t.requires_grad(a)) t.accumulate(a, kernels::mul(g, t.value(b)));
        if (t.requires_grad(b)) t.accumulate(b, kernels::mul(g, t.value(a)));
    });
}

Var scale(const Var& a, double s) {
    Tensor out = kernels::scale(a.value(), s);
    return a.tape().record(std::move(out), {a},
                           [a, s](Tape& t, const Tensor& g) { t.accumulate(a, kernels::scale(g, s)); });
}

Var mean(const Var& a, std::size_t axis) {
    Tensor out = kernels::mean_axis(a.value(), axis);
    return a.tape().record(std::move(out), {a}, [a, axis](Tape& t, const Tensor& g) {
        const Shape& in_shape = t.value(a).shape();
        const std::size_t n = in_shape[axis];
        std::size_t outer = 1;
        std::size_t inner = 1;
        for (std::size_t i = 0; i < axis; ++i) outer *= in_shape[i];
        for (std::size_t i = axis + 1; i < in_shape.size(); ++i) inner *= in_shape[i];
        Tensor& slot = t.grad_slot(a);
        const double inv = 1.0 / double(n);
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t r = 0; r < n; ++r) {
                double* dst = slot.raw() + (o * n + r) * inner;
                const double* src = g.raw() + o * inner;
                for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
            }
        }
    });
}

Var sum(const Var& a) {
    double total = 0.0;
    for (double x : a.value().data()) total += x;
    return a.tape().record(Tensor::scalar(total), {a}, [a](Tape& t, const Tensor& g) {
        Tensor& slot = t.grad_slot(a);
        const double gv = g.item();
        for (auto& x : slot.data()) x += gv;
    });
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [a](Tape& t, const Tensor& g) {
        t.accumulate(a, g.reshaped(t.value(a).shape()));
    });
}

} // namespace ops

} // namespace maskmix
