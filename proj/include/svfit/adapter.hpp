// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <variant>
#include <vector>

#include "svfit/matrix.hpp"

namespace svfit::adapt {

/// Adaptation mode of a linear layer over a frozen pre-trained matrix.
///
///   svfit  — train only the top-r singular values; singular vectors and the
///            residual matrix stay frozen
///   lora   — additive low-rank update a*b on top of the frozen matrix,
///            a Gaussian-initialized, b zero-initialized
///   pissa  — lora-shaped, but a and b start from the principal singular
///            triples and the frozen part is the residual
///   full   — the whole dense matrix is trainable
///   frozen — nothing is trainable
enum class Method { svfit, lora, pissa, full, frozen };

std::string_view to_string(Method m);
Method method_from_string(std::string_view name); // throws InvalidConfig

struct SvfitState {
    Matrix u_r;                  // d1 x r, frozen
    Matrix v_r;                  // d2 x r, frozen
    std::vector<double> sigma_r; // length r, TRAINABLE
    Matrix w_e;                  // d1 x d2, frozen dense residual
};
struct LoraState {
    Matrix w; // frozen
    Matrix a; // d1 x r, TRAINABLE
    Matrix b; // r x d2, TRAINABLE
};
struct PissaState {
    Matrix w_res; // frozen residual
    Matrix a;     // d1 x r, TRAINABLE
    Matrix b;     // r x d2, TRAINABLE
};
struct FullState {
    Matrix w; // TRAINABLE
};
struct FrozenState {
    Matrix w;
};

/// Gradients from one backward pass. Only the buffers matching the layer's
/// trainable state are populated; d_input is always produced.
struct LayerGradients {
    Method method = Method::frozen;
    std::vector<double> d_sigma_r;
    Matrix d_a;
    Matrix d_b;
    Matrix d_w;
    Matrix d_input;

    /// Gradient buffers in the same order as AdapterLayer::trainable_views().
    std::vector<std::span<const double>> trainable() const;
};

/// One linear layer in one of the five adaptation modes, holding its frozen
/// and trainable parts. Forward input is a d2 x n batch, one sample per
/// column; the output is d1 x n.
class AdapterLayer {
public:
    /// Empty frozen placeholder; assign a real layer before use.
    AdapterLayer() = default;

    static AdapterLayer init_svfit(const Matrix& w, std::size_t r);
    static AdapterLayer init_lora(const Matrix& w, std::size_t r, std::uint64_t seed);
    static AdapterLayer init_pissa(const Matrix& w, std::size_t r);
    static AdapterLayer init_full(const Matrix& w);
    static AdapterLayer init_frozen(const Matrix& w);
    /// Dispatch by method; r and seed are ignored where not applicable.
    static AdapterLayer init(Method m, const Matrix& w, std::size_t r, std::uint64_t seed);

    Method method() const { return method_; }
    std::size_t d1() const { return d1_; }
    std::size_t d2() const { return d2_; }
    /// Adapter rank; 0 for full/frozen.
    std::size_t rank() const;

    Matrix forward(const Matrix& x) const;
    LayerGradients backward(const Matrix& x, const Matrix& grad_out) const;

    /// Fold the layer into one dense matrix M with forward(x) == M*x.
    Matrix merge() const;

    /// Number of trainable scalars. svfit: r, lora/pissa: r*(d1+d2),
    /// full: d1*d2, frozen: 0.
    std::size_t param_count() const;

    struct ParamView {
        std::string_view name;
        std::span<double> data;
    };
    /// Mutable views of the trainable buffers, in a fixed per-method order
    /// (svfit: sigma_r; lora/pissa: a, b; full: w). The optimizer writes
    /// through these; frozen buffers are never exposed.
    std::vector<ParamView> trainable_views();
    /// Sizes of those buffers, same order.
    std::vector<std::size_t> trainable_sizes() const;

    const SvfitState& svfit_state() const;
    const LoraState& lora_state() const;
    const PissaState& pissa_state() const;
    const Matrix& dense_weight() const; // full/frozen

    /// Rebuild a layer from serialized state (shape-checked).
    static AdapterLayer from_svfit_state(SvfitState s);
    static AdapterLayer from_lora_state(LoraState s);
    static AdapterLayer from_pissa_state(PissaState s);

private:
    Method method_ = Method::frozen;
    std::size_t d1_ = 0;
    std::size_t d2_ = 0;
    std::variant<SvfitState, LoraState, PissaState, FullState, FrozenState> state_ =
        FrozenState{};
};

/// Trainable-parameter count by method without building a layer.
std::size_t param_count(Method m, std::size_t d1, std::size_t d2, std::size_t r);

} // namespace svfit::adapt
