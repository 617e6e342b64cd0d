#include "maskmix/nn.hpp"

#include "maskmix/errors.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace maskmix {

LinearLayer::LinearLayer(const std::string& name, std::size_t in, std::size_t out, bool has_bias)
    : weight(name + ".weight", Tensor({in, out})) {
    if (has_bias) bias.emplace(name + ".bias", Tensor({out}));
}

void LinearLayer::init(std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(double(in_features()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : weight.value.data()) w = dist(rng);
    if (bias) bias->value.fill(0.0);
}

Var LinearLayer::forward(Tape& tape, const Var& x) {
    if (x.shape().back() != in_features()) {
        throw DimensionError("linear " + weight.name + ": input " + shape_str(x.shape()) + " has last extent " +
                             std::to_string(x.shape().back()) + ", expected " + std::to_string(in_features()));
    }
    Var y = ops::matmul(x, tape.parameter(weight));
    if (bias) y = ops::add(y, tape.parameter(*bias));
    return y;
}

void LinearLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
}

LayerNormLayer::LayerNormLayer(const std::string& name, std::size_t dim, double eps)
    : gain(name + ".gain", Tensor({dim}, 1.0)), shift(name + ".shift", Tensor({dim}, 0.0)), epsilon(eps) {}

Var LayerNormLayer::forward(Tape& tape, const Var& x) {
    return layer_norm(x, tape.parameter(gain), tape.parameter(shift), epsilon);
}

void LayerNormLayer::collect(std::vector<Parameter*>& out) {
    out.push_back(&gain);
    out.push_back(&shift);
}

Var layer_norm(const Var& x, const Var& gain, const Var& shift, double epsilon) {
    const Tensor& xv = x.value();
    if (xv.rank() < 1) throw RankError("layer_norm: input must have rank >= 1");
    const std::size_t d = xv.shape().back();
    if (d < 2) throw DimensionError("layer_norm: normalized axis has degenerate extent " + std::to_string(d));
    if (gain.shape() != Shape{d} || shift.shape() != Shape{d}) {
        throw DimensionError("layer_norm: affine parameters must be [" + std::to_string(d) + "]");
    }
    const std::size_t rows = xv.size() / d;
    const Tensor& gv = gain.value();
    const Tensor& sv = shift.value();

    Tensor normalized(xv.shape());
    std::vector<double> rstd(rows);
    Tensor out(xv.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xv.raw() + r * d;
        double mu = 0.0;
        for (std::size_t i = 0; i < d; ++i) mu += src[i];
        mu /= double(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) var += (src[i] - mu) * (src[i] - mu);
        var /= double(d);
        rstd[r] = 1.0 / std::sqrt(var + epsilon);
        double* xh = normalized.raw() + r * d;
        double* dst = out.raw() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            xh[i] = (src[i] - mu) * rstd[r];
            dst[i] = gv[i] * xh[i] + sv[i];
        }
    }

    return x.tape().record(
        std::move(out), {x, gain, shift},
        [x, gain, shift, d, rows, normalized = std::move(normalized), rstd = std::move(rstd)](Tape& t,
                                                                                             const Tensor& g) {
            const Tensor& gv = t.value(gain);
            if (t.requires_grad(gain) || t.requires_grad(shift)) {
                Tensor dgain({d});
                Tensor dshift({d});
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t i = 0; i < d; ++i) {
                        dgain[i] += g[r * d + i] * normalized[r * d + i];
                        dshift[i] += g[r * d + i];
                    }
                }
                t.accumulate(gain, dgain);
                t.accumulate(shift, dshift);
            }
            if (!t.requires_grad(x)) return;
            Tensor& dx = t.grad_slot(x);
            std::vector<double> dxh(d);
            for (std::size_t r = 0; r < rows; ++r) {
                double mean_dxh = 0.0;
                double mean_dxh_xh = 0.0;
                for (std::size_t i = 0; i < d; ++i) {
                    dxh[i] = g[r * d + i] * gv[i];
                    mean_dxh += dxh[i];
                    mean_dxh_xh += dxh[i] * normalized[r * d + i];
                }
                mean_dxh /= double(d);
                mean_dxh_xh /= double(d);
                for (std::size_t i = 0; i < d; ++i) {
                    dx[r * d + i] += rstd[r] * (dxh[i] - mean_dxh - normalized[r * d + i] * mean_dxh_xh);
                }
            }
        });
}

Var gelu(const Var& x) {
    // Keep Phi(x) for the backward pass; erf dominates the cost otherwise.
    auto cdf = std::make_shared<Tensor>(x.value());
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double c = 0.5 * (1.0 + std::erf(out[i] * std::numbers::sqrt2 / 2.0));
        (*cdf)[i] = c;
        out[i] *= c;
    }
    return x.tape().record(std::move(out), {x}, [x, cdf](Tape& t, const Tensor& g) {
        const Tensor& xv = t.value(x);
        Tensor& dx = t.grad_slot(x);
        constexpr double kInvSqrt2Pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double pdf = std::exp(-0.5 * xv[i] * xv[i]) * kInvSqrt2Pi;
            dx[i] += g[i] * ((*cdf)[i] + xv[i] * pdf);
        }
    });
}

Var global_avg_pool(const Var& x) {
    if (x.shape().size() < 2) throw RankError("global_avg_pool: input must have rank >= 2, got " + shape_str(x.shape()));
    return ops::mean(x, x.shape().size() - 2);
}

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 2) throw RankError("softmax: logits must be [B x K], got " + shape_str(logits.shape()));
    const std::size_t rows = logits.dim(0);
    const std::size_t k = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = logits.raw() + r * k;
        double* dst = out.raw() + r * k;
        const double mx = *std::max_element(src, src + k);
        double z = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            dst[i] = std::exp(src[i] - mx);
            z += dst[i];
        }
        for (std::size_t i = 0; i < k; ++i) dst[i] /= z;
    }
    return out;
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
    const Tensor& lv = logits.value();
    if (lv.rank() != 2) throw RankError("softmax_cross_entropy: logits must be [B x K], got " + shape_str(lv.shape()));
    const std::size_t batch = lv.dim(0);
    const std::size_t k = lv.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(batch));
    }
    for (std::size_t r = 0; r < batch; ++r) {
        if (labels[r] < 0 || std::size_t(labels[r]) >= k) {
            throw LabelError("label " + std::to_string(labels[r]) + " at row " + std::to_string(r) +
                             " outside [0, " + std::to_string(k) + ")");
        }
    }
    double loss = 0.0;
    for (std::size_t r = 0; r < batch; ++r) {
        const double* src = lv.raw() + r * k;
        const double mx = *std::max_element(src, src + k);
        double z = 0.0;
        for (std::size_t i = 0; i < k; ++i) z += std::exp(src[i] - mx);
        loss += std::log(z) + mx - src[labels[r]];
    }
    loss /= double(batch);

    std::vector<int> owned(labels.begin(), labels.end());
    return logits.tape().record(Tensor::scalar(loss), {logits},
                                [logits, owned = std::move(owned)](Tape& t, const Tensor& g) {
                                    Tensor p = softmax(t.value(logits));
                                    const std::size_t b = p.dim(0);
                                    const std::size_t k = p.dim(1);
                                    const double s = g.item() / double(b);
                                    for (std::size_t r = 0; r < b; ++r) p[r * k + std::size_t(owned[r])] -= 1.0;
                                    t.accumulate(logits, kernels::scale(p, s));
                                });
}

} // namespace maskmix
