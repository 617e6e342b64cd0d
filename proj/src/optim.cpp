#include "maskmix/optim.hpp"

#include "maskmix/errors.hpp"

#include <cmath>

namespace maskmix {

void AdamW::step(std::span<Parameter* const> params, double lr) {
    if (m_.empty()) {
        for (const auto* p : params) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }
    if (m_.size() != params.size()) {
        throw DimensionError("AdamW: parameter list changed size between steps");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Parameter& p = *params[i];
        if (p.grad.shape() != p.value.shape() || m_[i].shape() != p.value.shape()) {
            throw DimensionError("AdamW: shape mismatch for parameter " + p.name);
        }
        if (!p.grad.all_finite()) {
            throw NonFiniteError("AdamW: non-finite gradient in parameter " + p.name + " at step " +
                                 std::to_string(step_ + 1));
        }
    }

    ++step_;
    const double b1 = options_.beta1;
    const double b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, double(step_));
    const double c2 = 1.0 - std::pow(b2, double(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        double* w = p.value.raw();
        const double* g = p.grad.raw();
        double* m = m_[i].raw();
        double* v = v_[i].raw();
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            m[j] = b1 * m[j] + (1.0 - b1) * g[j];
            v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
            const double m_hat = m[j] / c1;
            const double v_hat = v[j] / c2;
            w[j] -= lr * (m_hat / (std::sqrt(v_hat) + options_.epsilon) + options_.weight_decay * w[j]);
        }
    }
}

double lr_at(const TrainSchedule& schedule, std::size_t epoch) {
    const std::size_t steps = schedule.decay_every ? epoch / schedule.decay_every : 0;
    return schedule.initial_lr * std::pow(schedule.decay_factor, double(steps));
}

bool EarlyStopper::update(double loss) {
    const std::size_t epoch = seen_++;
    if (loss < best_loss_ - min_improvement_ || epoch == 0) {
        best_loss_ = loss;
        best_epoch_ = epoch;
        return false;
    }
    return epoch - best_epoch_ >= patience_;
}

} // namespace maskmix
