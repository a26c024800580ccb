// SPDX-License-Identifier: Apache-2.0
#include "svfit/optim.hpp"

#include <cmath>
#include <string>

#include "svfit/errors.hpp"

namespace svfit::optim {

std::string_view to_string(Kind k) {
    return k == Kind::adamw ? "adamw" : "sgd_momentum";
}

Kind kind_from_string(std::string_view name) {
    if (name == "adamw") return Kind::adamw;
    if (name == "sgd_momentum") return Kind::sgd_momentum;
    throw InvalidConfig("unknown optimizer '" + std::string(name) + "'");
}

double schedule_lr(std::size_t step, std::size_t total_steps, double warmup_ratio,
                   double lr_base) {
    if (warmup_ratio < 0.0 || warmup_ratio >= 1.0) {
        throw InvalidRatio("schedule_lr: warmup_ratio must be in [0, 1)");
    }
    if (total_steps == 0 || step > total_steps) {
        throw InvalidInput("schedule_lr: step outside [0, total_steps]");
    }
    const auto warmup =
        static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
    if (warmup > 0 && step <= warmup) {
        return lr_base * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (warmup >= total_steps) return lr_base; // degenerate: ramp fills the whole run
    return lr_base * static_cast<double>(total_steps - step) /
           static_cast<double>(total_steps - warmup);
}

void Optimizer::step(double lr, std::span<ParamSlot> slots) {
    if (m1_.empty() && step_ == 0) {
        m1_.resize(slots.size());
        for (std::size_t i = 0; i < slots.size(); ++i) m1_[i].assign(slots[i].value.size(), 0.0);
        if (kind_ == Kind::adamw) {
            m2_.resize(slots.size());
            for (std::size_t i = 0; i < slots.size(); ++i)
                m2_[i].assign(slots[i].value.size(), 0.0);
        }
    }
    if (slots.size() != m1_.size()) throw DimensionMismatch("optimizer: slot count changed");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].value.size() != m1_[i].size() ||
            slots[i].grad.size() != slots[i].value.size()) {
            throw DimensionMismatch("optimizer: slot " + std::to_string(i) + " shape changed");
        }
        for (double g : slots[i].grad) {
            if (!std::isfinite(g)) throw NonFiniteGradient("optimizer: non-finite gradient");
        }
    }

    double gscale = 1.0;
    if (hp_.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& slot : slots)
            for (double g : slot.grad) sq += g * g;
        const double norm = std::sqrt(sq);
        if (norm > hp_.clip_norm) gscale = hp_.clip_norm / norm;
    }

    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(hp_.beta1, t);
    const double bc2 = 1.0 - std::pow(hp_.beta2, t);

    for (std::size_t i = 0; i < slots.size(); ++i) {
        auto& slot = slots[i];
        const double wd = slot.decay ? hp_.weight_decay : 0.0;
        if (kind_ == Kind::adamw) {
            for (std::size_t j = 0; j < slot.value.size(); ++j) {
                const double g = gscale * slot.grad[j];
                m1_[i][j] = hp_.beta1 * m1_[i][j] + (1.0 - hp_.beta1) * g;
                m2_[i][j] = hp_.beta2 * m2_[i][j] + (1.0 - hp_.beta2) * g * g;
                const double m_hat = m1_[i][j] / bc1;
                const double v_hat = m2_[i][j] / bc2;
                slot.value[j] -= lr * (m_hat / (std::sqrt(v_hat) + hp_.eps) + wd * slot.value[j]);
            }
        } else {
            for (std::size_t j = 0; j < slot.value.size(); ++j) {
                const double g = gscale * slot.grad[j];
                m1_[i][j] = hp_.momentum * m1_[i][j] + g;
                slot.value[j] -= lr * (m1_[i][j] + wd * slot.value[j]);
            }
        }
    }
}

} // namespace svfit::optim
