// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "svfit/adapter.hpp"
#include "svfit/io.hpp"
#include "svfit/matrix.hpp"

namespace svfit::model {

class ToyBlockStack;

/// Activations retained by a traced forward pass. Valid for exactly one
/// backward call on the same stack; consumed (cleared) by backward.
struct ForwardTrace {
    struct BlockRecord {
        Matrix x_in;    // d x T block input
        Matrix q, k, v; // d x T projections
        Matrix p;       // T x T row-softmax attention weights
        Matrix attn;    // d x T attention output before the output projection
    };
    struct SequenceRecord {
        std::vector<BlockRecord> blocks;
        Matrix x_final;
        std::vector<double> pooled; // mean over tokens
    };

    bool valid = false;
    const ToyBlockStack* source = nullptr;
    std::vector<SequenceRecord> sequences;
};

/// Gradients for the stack's trainable buffers, flattened in the order of
/// trainable_views(include_head=true): per block q then v adapter buffers
/// (then the output-projection adapter when adapted), head last.
struct StackGradients {
    std::vector<std::vector<double>> buffers;
};

/// Toy single-head attention stack mirroring the adaptation surface at desk
/// scale: per block, the query and value projections carry AdapterLayers
/// while the key and output projections stay frozen. No layer norm and no
/// biases, so finite-difference checks stay exact. The readout head (d x c)
/// is always trainable and applies to mean-pooled tokens.
class ToyBlockStack {
public:
    struct Block {
        adapt::AdapterLayer q;
        adapt::AdapterLayer v;
        Matrix w_k;
        Matrix w_o;
        // Engaged only when the experimental output-projection toggle is on;
        // replaces w_o in that configuration.
        std::optional<adapt::AdapterLayer> o;
    };

    /// Build from a dense pretrained checkpoint (meta.* + block<i>.w_{q,k,v,o}).
    /// The head is freshly initialized from the seed and a fixed number of
    /// random draws happens for every method, so outputs at init match across
    /// methods for the same seed. `adapt_output_proj` additionally wraps the
    /// output projection (experimental; off by default).
    static ToyBlockStack build(const io::TensorMap& pretrained, adapt::Method method,
                               std::size_t r, std::uint64_t seed,
                               bool adapt_output_proj = false);

    /// Reassemble a stack from deserialized parts.
    static ToyBlockStack from_parts(std::vector<Block> blocks, Matrix head,
                                    adapt::Method method, std::size_t rank);

    std::size_t n_blocks() const { return blocks_.size(); }
    std::size_t d_model() const { return head_.rows(); }
    std::size_t n_classes() const { return head_.cols(); }
    adapt::Method method() const { return method_; }
    std::size_t rank() const { return rank_; }

    /// Batch forward: one d x T token matrix per sequence, output is B x c
    /// (one row per sequence). Throws NonFiniteActivation on divergence.
    Matrix forward(std::span<const Matrix> batch) const;
    Matrix forward(std::span<const Matrix> batch, ForwardTrace& trace) const;

    /// Gradients for adapter trainables and the head. grad_out is B x c.
    /// Consumes the trace; throws StaleTrace on reuse or mismatch.
    StackGradients backward(ForwardTrace& trace, const Matrix& grad_out) const;

    std::vector<adapt::AdapterLayer::ParamView> trainable_views(bool include_head);

    /// Trainable scalars across adapters, excluding the head.
    std::size_t adapter_param_count() const;

    const std::vector<Block>& blocks() const { return blocks_; }
    const Matrix& head() const { return head_; }

private:
    ToyBlockStack() = default;

    std::vector<Block> blocks_;
    Matrix head_;
    adapt::Method method_ = adapt::Method::frozen;
    std::size_t rank_ = 0;
};

} // namespace svfit::model
