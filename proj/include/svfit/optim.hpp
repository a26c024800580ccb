// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace svfit::optim {

enum class Kind { sgd_momentum, adamw };

std::string_view to_string(Kind k);
Kind kind_from_string(std::string_view name); // throws InvalidConfig

struct Hyper {
    double lr_base = 1e-3;
    double beta1 = 0.9;        // adamw
    double beta2 = 0.999;      // adamw
    double eps = 1e-8;         // adamw
    double momentum = 0.9;     // sgd_momentum
    double weight_decay = 0.0; // decoupled, applied as p -= lr * wd * p
    double clip_norm = 0.0;    // global-norm gradient clip; 0 disables
};

/// Linear warmup to lr_base over ceil(warmup_ratio * total_steps) steps,
/// then linear decay to 0 at total_steps.
double schedule_lr(std::size_t step, std::size_t total_steps, double warmup_ratio,
                   double lr_base);

/// One trainable buffer paired with its gradient. `decay` exempts a buffer
/// from weight decay when false (e.g. sigma_r when configured so).
struct ParamSlot {
    std::span<double> value;
    std::span<const double> grad;
    bool decay = true;
};

/// Stateful optimizer over a fixed set of buffers. Moment accumulators are
/// sized on the first step; later steps must present the same slot layout.
class Optimizer {
public:
    Optimizer(Kind kind, Hyper hp) : kind_(kind), hp_(hp) {}

    /// Apply one update at the given learning rate. Deterministic; throws
    /// DimensionMismatch on slot layout changes and NonFiniteGradient if any
    /// gradient entry is not finite.
    void step(double lr, std::span<ParamSlot> slots);

    std::size_t step_count() const { return step_; }
    Kind kind() const { return kind_; }
    const Hyper& hyper() const { return hp_; }

private:
    Kind kind_;
    Hyper hp_;
    std::size_t step_ = 0;
    std::vector<std::vector<double>> m1_; // adamw first moment / sgd velocity
    std::vector<std::vector<double>> m2_; // adamw second moment
};

} // namespace svfit::optim
