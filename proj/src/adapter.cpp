// SPDX-License-Identifier: Apache-2.0
#include "svfit/adapter.hpp"

#include <cmath>
#include <string>

#include "svfit/errors.hpp"
#include "svfit/linalg.hpp"
#include "svfit/rng.hpp"

namespace svfit::adapt {

namespace {

void check_rank(std::size_t r, std::size_t d1, std::size_t d2, const char* who) {
    const std::size_t d = std::min(d1, d2);
    if (r < 1 || r > d) {
        throw RankOutOfRange(std::string(who) + ": r=" + std::to_string(r) + " not in [1, " +
                             std::to_string(d) + "]");
    }
}

void check_forward_shapes(std::size_t d2, const Matrix& x) {
    if (x.rows() != d2) {
        throw DimensionMismatch("forward: input has " + std::to_string(x.rows()) +
                                " rows, layer expects " + std::to_string(d2));
    }
}

void check_backward_shapes(std::size_t d1, std::size_t d2, const Matrix& x, const Matrix& g) {
    check_forward_shapes(d2, x);
    if (g.rows() != d1 || g.cols() != x.cols()) {
        throw DimensionMismatch("backward: grad_out shape mismatch");
    }
}

} // namespace

std::string_view to_string(Method m) {
    switch (m) {
        case Method::svfit: return "svfit";
        case Method::lora: return "lora";
        case Method::pissa: return "pissa";
        case Method::full: return "full";
        case Method::frozen: return "frozen";
    }
    return "?";
}

Method method_from_string(std::string_view name) {
    if (name == "svfit") return Method::svfit;
    if (name == "lora") return Method::lora;
    if (name == "pissa") return Method::pissa;
    if (name == "full") return Method::full;
    if (name == "frozen") return Method::frozen;
    throw InvalidConfig("unknown adapter method '" + std::string(name) + "'");
}

std::vector<std::span<const double>> LayerGradients::trainable() const {
    switch (method) {
        case Method::svfit: return {std::span<const double>(d_sigma_r)};
        case Method::lora:
        case Method::pissa: return {d_a.data(), d_b.data()};
        case Method::full: return {d_w.data()};
        case Method::frozen: return {};
    }
    return {};
}

AdapterLayer AdapterLayer::init_svfit(const Matrix& w, std::size_t r) {
    check_rank(r, w.rows(), w.cols(), "init_svfit");
    const linalg::SvdFactors f = linalg::svd(w);
    SvfitState s;
    s.u_r = f.u.columns(0, r);
    s.v_r = f.vt.transposed().columns(0, r);
    s.sigma_r.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(r));
    // Residual by subtraction, so w == merge() holds to rounding at init.
    s.w_e = w - matmul_bt(scale_columns(s.u_r, s.sigma_r), s.v_r);
    return from_svfit_state(std::move(s));
}

AdapterLayer AdapterLayer::init_lora(const Matrix& w, std::size_t r, std::uint64_t seed) {
    check_rank(r, w.rows(), w.cols(), "init_lora");
    Rng rng(seed);
    LoraState s;
    s.w = w;
    // a ~ N(0, 1/r): the scale of a*b stays rank-independent once b moves.
    s.a = gaussian_matrix(w.rows(), r, rng, 1.0 / std::sqrt(static_cast<double>(r)));
    s.b = Matrix(r, w.cols());
    return from_lora_state(std::move(s));
}

AdapterLayer AdapterLayer::init_pissa(const Matrix& w, std::size_t r) {
    check_rank(r, w.rows(), w.cols(), "init_pissa");
    const linalg::SvdFactors f = linalg::svd(w);
    std::vector<double> sqrt_sigma(r);
    for (std::size_t i = 0; i < r; ++i) sqrt_sigma[i] = std::sqrt(f.sigma[i]);
    PissaState s;
    s.a = scale_columns(f.u.columns(0, r), sqrt_sigma);
    Matrix vt_r(r, w.cols());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) vt_r(i, j) = f.vt(i, j);
    s.b = scale_rows(vt_r, sqrt_sigma);
    s.w_res = w - matmul(s.a, s.b);
    return from_pissa_state(std::move(s));
}

AdapterLayer AdapterLayer::init_full(const Matrix& w) {
    AdapterLayer layer;
    layer.method_ = Method::full;
    layer.d1_ = w.rows();
    layer.d2_ = w.cols();
    layer.state_ = FullState{w};
    return layer;
}

AdapterLayer AdapterLayer::init_frozen(const Matrix& w) {
    AdapterLayer layer;
    layer.method_ = Method::frozen;
    layer.d1_ = w.rows();
    layer.d2_ = w.cols();
    layer.state_ = FrozenState{w};
    return layer;
}

AdapterLayer AdapterLayer::init(Method m, const Matrix& w, std::size_t r, std::uint64_t seed) {
    switch (m) {
        case Method::svfit: return init_svfit(w, r);
        case Method::lora: return init_lora(w, r, seed);
        case Method::pissa: return init_pissa(w, r);
        case Method::full: return init_full(w);
        case Method::frozen: return init_frozen(w);
    }
    throw InvalidConfig("init: bad method");
}

AdapterLayer AdapterLayer::from_svfit_state(SvfitState s) {
    if (s.u_r.cols() != s.sigma_r.size() || s.v_r.cols() != s.sigma_r.size() ||
        s.w_e.rows() != s.u_r.rows() || s.w_e.cols() != s.v_r.rows()) {
        throw DimensionMismatch("svfit state: inconsistent shapes");
    }
    AdapterLayer layer;
    layer.method_ = Method::svfit;
    layer.d1_ = s.w_e.rows();
    layer.d2_ = s.w_e.cols();
    layer.state_ = std::move(s);
    return layer;
}

AdapterLayer AdapterLayer::from_lora_state(LoraState s) {
    if (s.a.rows() != s.w.rows() || s.b.cols() != s.w.cols() || s.a.cols() != s.b.rows()) {
        throw DimensionMismatch("lora state: inconsistent shapes");
    }
    AdapterLayer layer;
    layer.method_ = Method::lora;
    layer.d1_ = s.w.rows();
    layer.d2_ = s.w.cols();
    layer.state_ = std::move(s);
    return layer;
}

AdapterLayer AdapterLayer::from_pissa_state(PissaState s) {
    if (s.a.rows() != s.w_res.rows() || s.b.cols() != s.w_res.cols() ||
        s.a.cols() != s.b.rows()) {
        throw DimensionMismatch("pissa state: inconsistent shapes");
    }
    AdapterLayer layer;
    layer.method_ = Method::pissa;
    layer.d1_ = s.w_res.rows();
    layer.d2_ = s.w_res.cols();
    layer.state_ = std::move(s);
    return layer;
}

std::size_t AdapterLayer::rank() const {
    switch (method_) {
        case Method::svfit: return std::get<SvfitState>(state_).sigma_r.size();
        case Method::lora: return std::get<LoraState>(state_).a.cols();
        case Method::pissa: return std::get<PissaState>(state_).a.cols();
        default: return 0;
    }
}

Matrix AdapterLayer::forward(const Matrix& x) const {
    check_forward_shapes(d2_, x);
    switch (method_) {
        case Method::svfit: {
            const auto& s = std::get<SvfitState>(state_);
            // u_r * (diag(sigma) * (v_r^T x)) + w_e x; the merged dense
            // matrix is never materialized.
            const Matrix vtx = matmul_at(s.v_r, x);
            return matmul(s.u_r, scale_rows(vtx, s.sigma_r)) + matmul(s.w_e, x);
        }
        case Method::lora: {
            const auto& s = std::get<LoraState>(state_);
            return matmul(s.w, x) + matmul(s.a, matmul(s.b, x));
        }
        case Method::pissa: {
            const auto& s = std::get<PissaState>(state_);
            return matmul(s.w_res, x) + matmul(s.a, matmul(s.b, x));
        }
        case Method::full: return matmul(std::get<FullState>(state_).w, x);
        case Method::frozen: return matmul(std::get<FrozenState>(state_).w, x);
    }
    throw InvalidConfig("forward: bad method");
}

LayerGradients AdapterLayer::backward(const Matrix& x, const Matrix& grad_out) const {
    check_backward_shapes(d1_, d2_, x, grad_out);
    LayerGradients g;
    g.method = method_;
    switch (method_) {
        case Method::svfit: {
            const auto& s = std::get<SvfitState>(state_);
            // dL/dsigma_i = sum_batch (g . u_i)(v_i . x)
            const Matrix vtx = matmul_at(s.v_r, x);
            const Matrix utg = matmul_at(s.u_r, grad_out);
            g.d_sigma_r.assign(s.sigma_r.size(), 0.0);
            for (std::size_t i = 0; i < g.d_sigma_r.size(); ++i)
                g.d_sigma_r[i] = dot(utg.row(i), vtx.row(i));
            g.d_input = matmul(s.v_r, scale_rows(utg, s.sigma_r)) + matmul_at(s.w_e, grad_out);
            break;
        }
        case Method::lora:
        case Method::pissa: {
            const Matrix& frozen = method_ == Method::lora
                                       ? std::get<LoraState>(state_).w
                                       : std::get<PissaState>(state_).w_res;
            const Matrix& a = method_ == Method::lora ? std::get<LoraState>(state_).a
                                                      : std::get<PissaState>(state_).a;
            const Matrix& b = method_ == Method::lora ? std::get<LoraState>(state_).b
                                                      : std::get<PissaState>(state_).b;
            const Matrix bx = matmul(b, x);       // r x n
            const Matrix atg = matmul_at(a, grad_out); // r x n
            g.d_a = matmul_bt(grad_out, bx);      // d1 x r
            g.d_b = matmul_bt(atg, x);            // r x d2
            g.d_input = matmul_at(frozen, grad_out) + matmul_at(b, atg);
            break;
        }
        case Method::full: {
            const auto& s = std::get<FullState>(state_);
            g.d_w = matmul_bt(grad_out, x);
            g.d_input = matmul_at(s.w, grad_out);
            break;
        }
        case Method::frozen: {
            g.d_input = matmul_at(std::get<FrozenState>(state_).w, grad_out);
            break;
        }
    }
    return g;
}

Matrix AdapterLayer::merge() const {
    switch (method_) {
        case Method::svfit: {
            const auto& s = std::get<SvfitState>(state_);
            return matmul_bt(scale_columns(s.u_r, s.sigma_r), s.v_r) + s.w_e;
        }
        case Method::lora: {
            const auto& s = std::get<LoraState>(state_);
            return s.w + matmul(s.a, s.b);
        }
        case Method::pissa: {
            const auto& s = std::get<PissaState>(state_);
            return s.w_res + matmul(s.a, s.b);
        }
        case Method::full: return std::get<FullState>(state_).w;
        case Method::frozen: return std::get<FrozenState>(state_).w;
    }
    throw InvalidConfig("merge: bad method");
}

std::size_t AdapterLayer::param_count() const { return adapt::param_count(method_, d1_, d2_, rank()); }

std::vector<AdapterLayer::ParamView> AdapterLayer::trainable_views() {
    switch (method_) {
        case Method::svfit: {
            auto& s = std::get<SvfitState>(state_);
            return {{"sigma_r", std::span<double>(s.sigma_r)}};
        }
        case Method::lora: {
            auto& s = std::get<LoraState>(state_);
            return {{"a", s.a.data()}, {"b", s.b.data()}};
        }
        case Method::pissa: {
            auto& s = std::get<PissaState>(state_);
            return {{"a", s.a.data()}, {"b", s.b.data()}};
        }
        case Method::full: {
            auto& s = std::get<FullState>(state_);
            return {{"w", s.w.data()}};
        }
        case Method::frozen: return {};
    }
    return {};
}

std::vector<std::size_t> AdapterLayer::trainable_sizes() const {
    switch (method_) {
        case Method::svfit: return {std::get<SvfitState>(state_).sigma_r.size()};
        case Method::lora: {
            const auto& s = std::get<LoraState>(state_);
            return {s.a.size(), s.b.size()};
        }
        case Method::pissa: {
            const auto& s = std::get<PissaState>(state_);
            return {s.a.size(), s.b.size()};
        }
        case Method::full: return {std::get<FullState>(state_).w.size()};
        case Method::frozen: return {};
    }
    return {};
}

const SvfitState& AdapterLayer::svfit_state() const {
    if (method_ != Method::svfit) throw InvalidInput("svfit_state: wrong method");
    return std::get<SvfitState>(state_);
}
const LoraState& AdapterLayer::lora_state() const {
    if (method_ != Method::lora) throw InvalidInput("lora_state: wrong method");
    return std::get<LoraState>(state_);
}
const PissaState& AdapterLayer::pissa_state() const {
    if (method_ != Method::pissa) throw InvalidInput("pissa_state: wrong method");
    return std::get<PissaState>(state_);
}
const Matrix& AdapterLayer::dense_weight() const {
    if (method_ == Method::full) return std::get<FullState>(state_).w;
    if (method_ == Method::frozen) return std::get<FrozenState>(state_).w;
    throw InvalidInput("dense_weight: wrong method");
}

std::size_t param_count(Method m, std::size_t d1, std::size_t d2, std::size_t r) {
    switch (m) {
        case Method::svfit: return r;
        case Method::lora:
        case Method::pissa: return r * (d1 + d2);
        case Method::full: return d1 * d2;
        case Method::frozen: return 0;
    }
    return 0;
}

} // namespace svfit::adapt
