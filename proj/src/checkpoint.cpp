// SPDX-License-Identifier: Apache-2.0
#include "svfit/checkpoint.hpp"

#include <cmath>

#include "svfit/errors.hpp"
#include "svfit/rng.hpp"

namespace svfit::ckpt {

namespace {

constexpr double kVersion = 1.0;

Matrix vec_tensor(const std::vector<double>& v) {
    return Matrix(v.size(), 1, v);
}

std::vector<double> tensor_vec(const Matrix& m) {
    if (m.cols() != 1) throw InvalidConfig("checkpoint: expected a column vector tensor");
    return std::vector<double>(m.data().begin(), m.data().end());
}

double method_code(adapt::Method m) { return static_cast<double>(m); }

adapt::Method method_from_code(double code) {
    const int c = static_cast<int>(code);
    if (c < 0 || c > 4 || code != std::floor(code)) {
        throw InvalidConfig("checkpoint: bad method code");
    }
    return static_cast<adapt::Method>(c);
}

void check_version(const io::TensorMap& tensors) {
    if (meta_value(tensors, "meta.version") != kVersion) {
        throw UnsupportedVersion("checkpoint: unsupported meta.version");
    }
}

} // namespace

Kind kind_of(const io::TensorMap& tensors) {
    const double k = meta_value(tensors, "meta.kind");
    if (k != 0.0 && k != 1.0 && k != 2.0) throw InvalidConfig("checkpoint: bad meta.kind");
    return static_cast<Kind>(static_cast<int>(k));
}

void append_meta(io::TensorMap& tensors, const std::string& name, double value) {
    Matrix m(1, 1);
    m(0, 0) = value;
    tensors.emplace_back(name, std::move(m));
}

double meta_value(const io::TensorMap& tensors, const std::string& name) {
    return io::require_tensor(tensors, name)(0, 0);
}

void append_adapter(io::TensorMap& tensors, const std::string& prefix,
                    const adapt::AdapterLayer& layer) {
    using adapt::Method;
    switch (layer.method()) {
        case Method::svfit: {
            const auto& s = layer.svfit_state();
            tensors.emplace_back(prefix + "u_r", s.u_r);
            tensors.emplace_back(prefix + "v_r", s.v_r);
            tensors.emplace_back(prefix + "sigma_r", vec_tensor(s.sigma_r));
            tensors.emplace_back(prefix + "w_e", s.w_e);
            break;
        }
        case Method::lora: {
            const auto& s = layer.lora_state();
            tensors.emplace_back(prefix + "w", s.w);
            tensors.emplace_back(prefix + "a", s.a);
            tensors.emplace_back(prefix + "b", s.b);
            break;
        }
        case Method::pissa: {
            const auto& s = layer.pissa_state();
            tensors.emplace_back(prefix + "w_res", s.w_res);
            tensors.emplace_back(prefix + "a", s.a);
            tensors.emplace_back(prefix + "b", s.b);
            break;
        }
        case Method::full:
        case Method::frozen:
            tensors.emplace_back(prefix + "w", layer.dense_weight());
            break;
    }
}

adapt::AdapterLayer read_adapter(const io::TensorMap& tensors, const std::string& prefix,
                                 adapt::Method method) {
    using adapt::AdapterLayer;
    using adapt::Method;
    switch (method) {
        case Method::svfit: {
            adapt::SvfitState s;
            s.u_r = io::require_tensor(tensors, prefix + "u_r");
            s.v_r = io::require_tensor(tensors, prefix + "v_r");
            s.sigma_r = tensor_vec(io::require_tensor(tensors, prefix + "sigma_r"));
            s.w_e = io::require_tensor(tensors, prefix + "w_e");
            return AdapterLayer::from_svfit_state(std::move(s));
        }
        case Method::lora: {
            adapt::LoraState s;
            s.w = io::require_tensor(tensors, prefix + "w");
            s.a = io::require_tensor(tensors, prefix + "a");
            s.b = io::require_tensor(tensors, prefix + "b");
            return AdapterLayer::from_lora_state(std::move(s));
        }
        case Method::pissa: {
            adapt::PissaState s;
            s.w_res = io::require_tensor(tensors, prefix + "w_res");
            s.a = io::require_tensor(tensors, prefix + "a");
            s.b = io::require_tensor(tensors, prefix + "b");
            return AdapterLayer::from_pissa_state(std::move(s));
        }
        case Method::full:
            return AdapterLayer::init_full(io::require_tensor(tensors, prefix + "w"));
        case Method::frozen:
            return AdapterLayer::init_frozen(io::require_tensor(tensors, prefix + "w"));
    }
    throw InvalidConfig("read_adapter: bad method");
}

io::TensorMap pack_single(const adapt::AdapterLayer& layer) {
    io::TensorMap tensors;
    append_meta(tensors, "meta.version", kVersion);
    append_meta(tensors, "meta.kind", static_cast<double>(Kind::adapter_single));
    append_meta(tensors, "meta.method", method_code(layer.method()));
    append_meta(tensors, "meta.rank", static_cast<double>(layer.rank()));
    append_adapter(tensors, "layer.", layer);
    return tensors;
}

adapt::AdapterLayer unpack_single(const io::TensorMap& tensors) {
    check_version(tensors);
    if (kind_of(tensors) != Kind::adapter_single) {
        throw InvalidConfig("checkpoint: not a single-layer checkpoint");
    }
    return read_adapter(tensors, "layer.", method_from_code(meta_value(tensors, "meta.method")));
}

io::TensorMap pack_stack(const model::ToyBlockStack& stack) {
    io::TensorMap tensors;
    append_meta(tensors, "meta.version", kVersion);
    append_meta(tensors, "meta.kind", static_cast<double>(Kind::adapter_stack));
    append_meta(tensors, "meta.method", method_code(stack.method()));
    append_meta(tensors, "meta.rank", static_cast<double>(stack.rank()));
    append_meta(tensors, "meta.n_blocks", static_cast<double>(stack.n_blocks()));
    append_meta(tensors, "meta.d_model", static_cast<double>(stack.d_model()));
    append_meta(tensors, "meta.n_classes", static_cast<double>(stack.n_classes()));
    for (std::size_t i = 0; i < stack.n_blocks(); ++i) {
        const auto& block = stack.blocks()[i];
        const std::string prefix = "block" + std::to_string(i) + ".";
        tensors.emplace_back(prefix + "w_k", block.w_k);
        tensors.emplace_back(prefix + "w_o", block.w_o);
        append_adapter(tensors, prefix + "q.", block.q);
        append_adapter(tensors, prefix + "v.", block.v);
        if (block.o) append_adapter(tensors, prefix + "o.", *block.o);
    }
    tensors.emplace_back("head", stack.head());
    return tensors;
}

model::ToyBlockStack unpack_stack(const io::TensorMap& tensors) {
    check_version(tensors);
    if (kind_of(tensors) != Kind::adapter_stack) {
        throw InvalidConfig("checkpoint: not an adapter-stack checkpoint");
    }
    const auto method = method_from_code(meta_value(tensors, "meta.method"));
    const auto rank = static_cast<std::size_t>(meta_value(tensors, "meta.rank"));
    const auto n_blocks = static_cast<std::size_t>(meta_value(tensors, "meta.n_blocks"));
    std::vector<model::ToyBlockStack::Block> blocks;
    for (std::size_t i = 0; i < n_blocks; ++i) {
        const std::string prefix = "block" + std::to_string(i) + ".";
        model::ToyBlockStack::Block block;
        block.w_k = io::require_tensor(tensors, prefix + "w_k");
        block.w_o = io::require_tensor(tensors, prefix + "w_o");
        block.q = read_adapter(tensors, prefix + "q.", method);
        block.v = read_adapter(tensors, prefix + "v.", method);
        if (io::find_tensor(tensors, prefix + "o.w") ||
            io::find_tensor(tensors, prefix + "o.w_e") ||
            io::find_tensor(tensors, prefix + "o.w_res")) {
            block.o = read_adapter(tensors, prefix + "o.", method);
        }
        blocks.push_back(std::move(block));
    }
    return model::ToyBlockStack::from_parts(std::move(blocks), io::require_tensor(tensors, "head"),
                                            method, rank);
}

io::TensorMap pack_dense_stack(std::size_t n_blocks, std::size_t d_model,
                               std::size_t n_classes, const io::TensorMap& block_tensors) {
    io::TensorMap tensors;
    append_meta(tensors, "meta.version", kVersion);
    append_meta(tensors, "meta.kind", static_cast<double>(Kind::dense_stack));
    append_meta(tensors, "meta.n_blocks", static_cast<double>(n_blocks));
    append_meta(tensors, "meta.d_model", static_cast<double>(d_model));
    append_meta(tensors, "meta.n_classes", static_cast<double>(n_classes));
    for (const auto& [name, m] : block_tensors) tensors.emplace_back(name, m);
    return tensors;
}

namespace {

// Probe one folded layer against its adapter on seeded inputs.
double probe_discrepancy(const adapt::AdapterLayer& layer, const Matrix& merged,
                         std::size_t probes, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix x = gaussian_matrix(layer.d2(), probes, rng);
    const Matrix via_adapter = layer.forward(x);
    const Matrix via_dense = matmul(merged, x);
    return max_abs(via_adapter - via_dense);
}

constexpr double kMergeTolerance = 1e-9;
constexpr std::uint64_t kProbeSeed = 0x5EEDFACE;

} // namespace

io::TensorMap merge_all(const io::TensorMap& tensors, double* max_discrepancy,
                        std::size_t probes) {
    double worst = 0.0;
    io::TensorMap out;
    switch (kind_of(tensors)) {
        case Kind::dense_stack:
            out = tensors; // nothing to fold
            break;
        case Kind::adapter_single: {
            const adapt::AdapterLayer layer = unpack_single(tensors);
            const Matrix merged = layer.merge();
            worst = probe_discrepancy(layer, merged, probes, kProbeSeed);
            append_meta(out, "meta.version", kVersion);
            append_meta(out, "meta.kind", static_cast<double>(Kind::adapter_single));
            append_meta(out, "meta.method", method_code(adapt::Method::frozen));
            append_meta(out, "meta.rank", 0.0);
            out.emplace_back("layer.w", merged);
            break;
        }
        case Kind::adapter_stack: {
            const model::ToyBlockStack stack = unpack_stack(tensors);
            io::TensorMap block_tensors;
            for (std::size_t i = 0; i < stack.n_blocks(); ++i) {
                const auto& block = stack.blocks()[i];
                const std::string prefix = "block" + std::to_string(i) + ".";
                const Matrix q = block.q.merge();
                const Matrix v = block.v.merge();
                worst = std::max(worst,
                                 probe_discrepancy(block.q, q, probes, kProbeSeed + 2 * i));
                worst = std::max(worst,
                                 probe_discrepancy(block.v, v, probes, kProbeSeed + 2 * i + 1));
                Matrix w_o = block.w_o;
                if (block.o) {
                    w_o = block.o->merge();
                    worst = std::max(worst, probe_discrepancy(*block.o, w_o, probes,
                                                              kProbeSeed + 1000 + i));
                }
                block_tensors.emplace_back(prefix + "w_q", q);
                block_tensors.emplace_back(prefix + "w_k", block.w_k);
                block_tensors.emplace_back(prefix + "w_v", v);
                block_tensors.emplace_back(prefix + "w_o", w_o);
            }
            out = pack_dense_stack(stack.n_blocks(), stack.d_model(), stack.n_classes(),
                                   block_tensors);
            out.emplace_back("head", stack.head());
            break;
        }
    }
    if (max_discrepancy) *max_discrepancy = worst;
    if (worst > kMergeTolerance) {
        throw MergeDiscrepancy("merge: forward discrepancy " + std::to_string(worst) +
                               " exceeds 1e-9");
    }
    return out;
}

} // namespace svfit::ckpt
