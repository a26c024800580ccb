// SPDX-License-Identifier: Apache-2.0
#include "svfit/model.hpp"

#include <cmath>
#include <string>

#include "svfit/errors.hpp"
#include "svfit/rng.hpp"

namespace svfit::model {

namespace {

std::size_t meta_size(const io::TensorMap& tensors, std::string_view name) {
    const Matrix& m = io::require_tensor(tensors, name);
    const double v = m(0, 0);
    if (v < 0 || v != std::floor(v)) {
        throw InvalidConfig("checkpoint meta '" + std::string(name) + "' is not a size");
    }
    return static_cast<std::size_t>(v);
}

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& s) {
    Matrix p(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        auto in = s.row(i);
        auto out = p.row(i);
        double mx = in[0];
        for (double v : in) mx = std::max(mx, v);
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        for (double& v : out) v /= sum;
    }
    return p;
}

} // namespace

ToyBlockStack ToyBlockStack::build(const io::TensorMap& pretrained, adapt::Method method,
                                   std::size_t r, std::uint64_t seed,
                                   bool adapt_output_proj) {
    const std::size_t n_blocks = meta_size(pretrained, "meta.n_blocks");
    const std::size_t d = meta_size(pretrained, "meta.d_model");
    const std::size_t c = meta_size(pretrained, "meta.n_classes");
    if (n_blocks == 0 || d == 0 || c == 0) {
        throw InvalidConfig("build: degenerate stack dimensions");
    }
    if (method != adapt::Method::full && method != adapt::Method::frozen) {
        if (r < 1 || r > d) {
            throw RankOutOfRange("build: rank " + std::to_string(r) + " vs d_model " +
                                 std::to_string(d));
        }
    }

    ToyBlockStack stack;
    stack.method_ = method;
    stack.rank_ = r;

    // One RNG drives per-adapter seeds and then the head. The draws happen
    // for every method so the head comes out identical across methods.
    Rng rng(seed);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        const auto& w_q = io::require_tensor(pretrained, prefix + "w_q");
        const auto& w_k = io::require_tensor(pretrained, prefix + "w_k");
        const auto& w_v = io::require_tensor(pretrained, prefix + "w_v");
        const auto& w_o = io::require_tensor(pretrained, prefix + "w_o");
        for (const Matrix* m : {&w_q, &w_k, &w_v, &w_o}) {
            if (m->rows() != d || m->cols() != d) {
                throw DimensionMismatch("build: block tensor is not d_model x d_model");
            }
        }
        Block block;
        const std::uint64_t seed_q = rng.next_u64();
        const std::uint64_t seed_v = rng.next_u64();
        const std::uint64_t seed_o = rng.next_u64();
        block.q = adapt::AdapterLayer::init(method, w_q, r, seed_q);
        block.v = adapt::AdapterLayer::init(method, w_v, r, seed_v);
        block.w_k = w_k;
        block.w_o = w_o;
        if (adapt_output_proj) {
            block.o = adapt::AdapterLayer::init(method, w_o, r, seed_o);
        }
        stack.blocks_.push_back(std::move(block));
    }
    stack.head_ = gaussian_matrix(d, c, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    return stack;
}

ToyBlockStack ToyBlockStack::from_parts(std::vector<Block> blocks, Matrix head,
                                        adapt::Method method, std::size_t rank) {
    if (blocks.empty()) throw InvalidConfig("from_parts: no blocks");
    const std::size_t d = head.rows();
    for (const Block& b : blocks) {
        if (b.q.d1() != d || b.q.d2() != d || b.v.d1() != d || b.v.d2() != d ||
            b.w_k.rows() != d || b.w_k.cols() != d || b.w_o.rows() != d ||
            b.w_o.cols() != d) {
            throw DimensionMismatch("from_parts: block shape mismatch");
        }
    }
    ToyBlockStack stack;
    stack.blocks_ = std::move(blocks);
    stack.head_ = std::move(head);
    stack.method_ = method;
    stack.rank_ = rank;
    return stack;
}

Matrix ToyBlockStack::forward(std::span<const Matrix> batch) const {
    ForwardTrace trace;
    return forward(batch, trace);
}

Matrix ToyBlockStack::forward(std::span<const Matrix> batch, ForwardTrace& trace) const {
    const std::size_t d = d_model();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    trace.valid = false;
    trace.source = this;
    trace.sequences.clear();
    trace.sequences.resize(batch.size());

    Matrix out(batch.size(), n_classes());
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const Matrix& tokens = batch[s];
        if (tokens.rows() != d || tokens.cols() == 0) {
            throw DimensionMismatch("stack forward: sequence " + std::to_string(s) +
                                    " token dimension mismatch");
        }
        auto& rec = trace.sequences[s];
        Matrix x = tokens;
        for (const Block& block : blocks_) {
            ForwardTrace::BlockRecord br;
            br.x_in = x;
            br.q = block.q.forward(x);
            br.k = matmul(block.w_k, x);
            br.v = block.v.forward(x);
            // scores(i, j) = q_i . k_j / sqrt(d), softmax over keys j
            Matrix scores = matmul_at(br.q, br.k);
            scores *= inv_sqrt_d;
            br.p = softmax_rows(scores);
            br.attn = matmul_bt(br.v, br.p);
            const Matrix o = block.o ? block.o->forward(br.attn) : matmul(block.w_o, br.attn);
            x += o;
            rec.blocks.push_back(std::move(br));
        }
        rec.x_final = x;
        rec.pooled.assign(d, 0.0);
        const double inv_t = 1.0 / static_cast<double>(x.cols());
        for (std::size_t i = 0; i < d; ++i) {
            double sum = 0.0;
            for (std::size_t t = 0; t < x.cols(); ++t) sum += x(i, t);
            rec.pooled[i] = sum * inv_t;
        }
        for (std::size_t j = 0; j < n_classes(); ++j) {
            double v = 0.0;
            for (std::size_t i = 0; i < d; ++i) v += rec.pooled[i] * head_(i, j);
            out(s, j) = v;
        }
    }
    if (!all_finite(out)) throw NonFiniteActivation("stack forward: non-finite output");
    trace.valid = true;
    return out;
}

StackGradients ToyBlockStack::backward(ForwardTrace& trace, const Matrix& grad_out) const {
    if (!trace.valid || trace.source != this) {
        throw StaleTrace("stack backward: trace is stale or from another stack");
    }
    if (grad_out.rows() != trace.sequences.size() || grad_out.cols() != n_classes()) {
        throw DimensionMismatch("stack backward: grad_out shape mismatch");
    }
    const std::size_t d = d_model();
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

    // Buffer layout mirrors trainable_views(include_head=true): per block the
    // q views, then v, then the optional output-projection adapter; head last.
    std::vector<std::size_t> sizes;
    std::vector<std::size_t> block_offset(blocks_.size());
    for (std::size_t bi = 0; bi < blocks_.size(); ++bi) {
        block_offset[bi] = sizes.size();
        for (std::size_t sz : blocks_[bi].q.trainable_sizes()) sizes.push_back(sz);
        for (std::size_t sz : blocks_[bi].v.trainable_sizes()) sizes.push_back(sz);
        if (blocks_[bi].o) {
            for (std::size_t sz : blocks_[bi].o->trainable_sizes()) sizes.push_back(sz);
        }
    }
    sizes.push_back(head_.size());
    StackGradients grads;
    grads.buffers.resize(sizes.size());
    for (std::size_t i = 0; i < sizes.size(); ++i) grads.buffers[i].assign(sizes[i], 0.0);

    // Accumulation is per buffer in ascending batch order: sequences outer,
    // blocks inner, so every += below lands in a fixed order.
    for (std::size_t s = 0; s < trace.sequences.size(); ++s) {
        const auto& rec = trace.sequences[s];
        const std::size_t T = rec.x_final.cols();

        // readout: out_row = pooled^T * head
        auto& d_head = grads.buffers.back();
        std::vector<double> g_pool(d, 0.0);
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < n_classes(); ++j) {
                d_head[i * n_classes() + j] += rec.pooled[i] * grad_out(s, j);
                g_pool[i] += head_(i, j) * grad_out(s, j);
            }
        }
        // mean pooling spreads the gradient uniformly over tokens
        Matrix g_x(d, T);
        const double inv_t = 1.0 / static_cast<double>(T);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t t = 0; t < T; ++t) g_x(i, t) = g_pool[i] * inv_t;

        for (std::size_t bi = blocks_.size(); bi-- > 0;) {
            const Block& block = blocks_[bi];
            const auto& br = rec.blocks[bi];

            // x_out = x_in + o(attn)
            Matrix g_attn(d, T);
            adapt::LayerGradients og;
            if (block.o) {
                og = block.o->backward(br.attn, g_x);
                g_attn = og.d_input;
            } else {
                g_attn = matmul_at(block.w_o, g_x);
            }
            // attn = v * p^T, so dL/dp = g_attn^T v and dL/dv = g_attn p
            const Matrix g_v = matmul(g_attn, br.p);
            const Matrix g_p = matmul_at(g_attn, br.v);
            // p = softmax_rows(scores)
            Matrix g_scores(T, T);
            for (std::size_t i = 0; i < T; ++i) {
                const double row_dot = dot(g_p.row(i), br.p.row(i));
                for (std::size_t j = 0; j < T; ++j) {
                    g_scores(i, j) = br.p(i, j) * (g_p(i, j) - row_dot);
                }
            }
            // scores = q^T k / sqrt(d)
            Matrix g_q = matmul_bt(br.k, g_scores);
            g_q *= inv_sqrt_d;
            Matrix g_k = matmul(br.q, g_scores);
            g_k *= inv_sqrt_d;

            const adapt::LayerGradients qg = block.q.backward(br.x_in, g_q);
            const adapt::LayerGradients vg = block.v.backward(br.x_in, g_v);

            std::size_t cursor = block_offset[bi];
            auto scatter = [&](const adapt::LayerGradients& lg) {
                for (const auto view : lg.trainable()) {
                    auto& dst = grads.buffers[cursor++];
                    for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += view[e];
                }
            };
            scatter(qg);
            scatter(vg);
            if (block.o) scatter(og);

            // residual + all three projection paths
            g_x += qg.d_input;
            g_x += vg.d_input;
            g_x += matmul_at(block.w_k, g_k);
        }
    }

    trace.valid = false;
    trace.sequences.clear();
    return grads;
}

std::vector<adapt::AdapterLayer::ParamView> ToyBlockStack::trainable_views(bool include_head) {
    std::vector<adapt::AdapterLayer::ParamView> views;
    for (Block& block : blocks_) {
        for (auto v : block.q.trainable_views()) views.push_back(v);
        for (auto v : block.v.trainable_views()) views.push_back(v);
        if (block.o) {
            for (auto v : block.o->trainable_views()) views.push_back(v);
        }
    }
    if (include_head) views.push_back({"head", head_.data()});
    return views;
}

std::size_t ToyBlockStack::adapter_param_count() const {
    std::size_t total = 0;
    for (const Block& block : blocks_) {
        total += block.q.param_count() + block.v.param_count();
        if (block.o) total += block.o->param_count();
    }
    return total;
}

} // namespace svfit::model
