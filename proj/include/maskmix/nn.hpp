#pragma once

#include "maskmix/tape.hpp"

#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace maskmix {

/// Fully connected layer computing x W (+ b) over the last axis.
///
/// The weight is stored as [in x out] so the forward pass is a plain row-major
/// matmul. Without a bias, no bias term exists in forward or backward.
class LinearLayer {
  public:
    LinearLayer() = default;
    LinearLayer(const std::string& name, std::size_t in, std::size_t out, bool has_bias);

    /// Uniform weights in +-1/sqrt(in); bias zero.
    void init(std::mt19937_64& rng);

    Var forward(Tape& tape, const Var& x);

    std::size_t in_features() const { return weight.value.dim(0); }
    std::size_t out_features() const { return weight.value.dim(1); }
    bool has_bias() const { return bias.has_value(); }

    void collect(std::vector<Parameter*>& out);

    Parameter weight;
    std::optional<Parameter> bias;
};

/// Layer normalization over the last axis with learnable gain and shift.
class LayerNormLayer {
  public:
    static constexpr double kDefaultEpsilon = 1e-5;

    LayerNormLayer() = default;
    LayerNormLayer(const std::string& name, std::size_t dim, double epsilon = kDefaultEpsilon);

    Var forward(Tape& tape, const Var& x);

    std::size_t dim() const { return gain.value.size(); }
    void collect(std::vector<Parameter*>& out);

    Parameter gain;
    Parameter shift;
    double epsilon = kDefaultEpsilon;
};

/// Normalizes each row of `x` over its last axis, then applies gain/shift.
Var layer_norm(const Var& x, const Var& gain, const Var& shift, double epsilon);

/// Exact GELU, x * Phi(x).
Var gelu(const Var& x);

/// Mean over the clip axis: [..., c, h] -> [..., h].
Var global_avg_pool(const Var& x);

/// Mean negative log-likelihood of `labels` under softmax(logits).
///
/// `logits` is [B x K]; labels are zero-based class indices.
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// Row-wise softmax of a [B x K] tensor, max-subtracted.
Tensor softmax(const Tensor& logits);

} // namespace maskmix
