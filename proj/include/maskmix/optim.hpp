#pragma once

#include "maskmix/tape.hpp"

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace maskmix {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
};

/// AdamW with bias-corrected moments and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
  public:
    explicit AdamW(AdamWOptions options = {}) : options_(options) {}

    /// Applies one update using each parameter's stored gradient. Moments are
    /// allocated on the first call; later calls must pass the same parameter
    /// list. Throws NonFiniteError naming the parameter and step when a
    /// gradient holds NaN/Inf, before touching any parameter.
    void step(std::span<Parameter* const> params, double lr);

    std::uint64_t steps() const { return step_; }
    const AdamWOptions& options() const { return options_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }

  private:
    AdamWOptions options_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    std::uint64_t step_ = 0;
};

struct TrainSchedule {
    double initial_lr = 0.0005;
    double decay_factor = 0.5;
    std::size_t decay_every = 40;
    std::size_t max_epochs = 400;
    std::size_t patience = 40;
    /// An epoch improves on the best loss only if lower by more than this.
    double min_improvement = 1e-6;
    std::size_t batch_size = 64;
};

/// Staircase schedule initial_lr * decay_factor^floor(epoch / decay_every).
double lr_at(const TrainSchedule& schedule, std::size_t epoch);

/// Tracks the best monitored loss and signals when `patience` consecutive
/// epochs passed without improvement.
class EarlyStopper {
  public:
    EarlyStopper(std::size_t patience, double min_improvement)
        : patience_(patience), min_improvement_(min_improvement) {}

    /// Feeds the loss of the next epoch; returns true when training must stop.
    bool update(double loss);

    std::size_t best_epoch() const { return best_epoch_; }
    double best_loss() const { return best_loss_; }
    std::size_t epochs_seen() const { return seen_; }

  private:
    std::size_t patience_;
    double min_improvement_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t seen_ = 0;
};

} // namespace maskmix
