// SPDX-License-Identifier: Apache-2.0
#include "svfit/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "svfit/errors.hpp"

namespace svfit::linalg {

namespace {

constexpr double kJacobiTol = 1e-14;
constexpr int kMaxSweeps = 60;
// Relative cutoff below which a singular value is treated as zero and its
// left vector is rebuilt by basis completion instead of normalization.
constexpr double kZeroSigmaRel = 1e-13;
// Columns whose norm falls this far below the input's Frobenius norm are
// rounding residue of rank-deficient inputs; rotating them would churn in
// the denormal range without converging.
constexpr double kZeroColumnRel = 1e-15;

// One full cyclic sweep of one-sided Jacobi rotations. The working matrix is
// stored transposed (row i of `at` is column i of A) so the dot products and
// rotations run over contiguous memory; `vt` accumulates the rotations the
// same way. Returns true if any rotation was applied.
bool jacobi_sweep(Matrix& at, Matrix& vt, double zero_floor) {
    const std::size_t n = at.rows();
    bool rotated = false;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            auto ai = at.row(i);
            auto aj = at.row(j);
            double alpha = 0.0, beta = 0.0, gamma = 0.0;
            for (std::size_t k = 0; k < ai.size(); ++k) {
                alpha += ai[k] * ai[k];
                beta += aj[k] * aj[k];
                gamma += ai[k] * aj[k];
            }
            const double norm_i = std::sqrt(alpha);
            const double norm_j = std::sqrt(beta);
            if (norm_i <= zero_floor || norm_j <= zero_floor) continue;
            // sqrt separately: the product alpha*beta underflows for columns
            // near the denormal range
            if (std::abs(gamma) <= kJacobiTol * norm_i * norm_j) continue;
            rotated = true;
            const double zeta = (beta - alpha) / (2.0 * gamma);
            const double t =
                (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
            const double c = 1.0 / std::sqrt(1.0 + t * t);
            const double s = c * t;
            for (std::size_t k = 0; k < ai.size(); ++k) {
                const double x = ai[k];
                const double y = aj[k];
                ai[k] = c * x - s * y;
                aj[k] = s * x + c * y;
            }
            auto vi = vt.row(i);
            auto vj = vt.row(j);
            for (std::size_t k = 0; k < n; ++k) {
                const double x = vi[k];
                const double y = vj[k];
                vi[k] = c * x - s * y;
                vj[k] = s * x + c * y;
            }
        }
    }
    return rotated;
}

// Fill every column of u in [filled_from, u.cols()) with unit vectors
// orthogonal to all previous columns, by modified Gram-Schmidt over
// canonical basis vectors. For orthonormal columns the squared projection of
// e_c onto their span is the squared norm of row c, so the candidate with
// the smallest row norm (lowest index on ties) has the largest residual.
void complete_basis(Matrix& u, std::size_t filled_from) {
    const std::size_t m = u.rows();
    for (std::size_t col = filled_from; col < u.cols(); ++col) {
        std::size_t best = 0;
        double best_proj = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < m; ++c) {
            double proj_sq = 0.0;
            for (std::size_t j = 0; j < col; ++j) proj_sq += u(c, j) * u(c, j);
            if (proj_sq < best_proj) {
                best_proj = proj_sq;
                best = c;
            }
        }
        std::vector<double> w(m, 0.0);
        w[best] = 1.0;
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t prev = 0; prev < col; ++prev) {
                double proj = 0.0;
                for (std::size_t k = 0; k < m; ++k) proj += w[k] * u(k, prev);
                for (std::size_t k = 0; k < m; ++k) w[k] -= proj * u(k, prev);
            }
        }
        const double nrm = norm2(w);
        if (nrm < 0.1) {
            throw ConvergenceFailure("svd: orthonormal basis completion failed");
        }
        for (std::size_t k = 0; k < m; ++k) u(k, col) = w[k] / nrm;
    }
}

// SVD of a tall matrix (m >= n), producing the full m x m left factor and
// the n x n right factor already transposed.
void svd_tall(const Matrix& input, Matrix& u, std::vector<double>& sigma, Matrix& vt) {
    const std::size_t m = input.rows();
    const std::size_t n = input.cols();
    Matrix at = input.transposed(); // row i holds column i of the working matrix
    Matrix vt_work = Matrix::identity(n);

    bool converged = false;
    for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
        if (!jacobi_sweep(at, vt_work)) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        throw ConvergenceFailure("svd: no clean Jacobi sweep within " +
                                 std::to_string(kMaxSweeps) + " sweeps");
    }

    std::vector<double> norms(n);
    for (std::size_t j = 0; j < n; ++j) norms[j] = norm2(at.row(j));

    // Stable descending order: ties keep pre-sort column order. Below the
    // zero cutoff the rotated columns are rounding noise, so their left
    // vectors come from basis completion instead; sorting guarantees those
    // sit in one trailing block.
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

    sigma.resize(n);
    u = Matrix(m, m);
    vt = Matrix(n, n);
    const double zero_cut = kZeroSigmaRel * (n ? norms[order[0]] : 0.0);
    std::size_t normalized = 0;
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        sigma[j] = norms[src];
        auto vt_row = vt.row(j);
        auto src_row = vt_work.row(src);
        std::copy(src_row.begin(), src_row.end(), vt_row.begin());
        if (norms[src] > zero_cut && norms[src] > 0.0) {
            auto a_row = at.row(src);
            for (std::size_t k = 0; k < m; ++k) u(k, j) = a_row[k] / norms[src];
            ++normalized;
        }
    }
    complete_basis(u, normalized);
}

void apply_sign_convention(SvdFactors& f) {
    const std::size_t d1 = f.u.rows();
    const std::size_t d2 = f.vt.cols();
    const std::size_t d = std::min(d1, d2);
    for (std::size_t j = 0; j < d1; ++j) {
        std::size_t imax = 0;
        double best = -1.0;
        for (std::size_t i = 0; i < d1; ++i) {
            const double v = std::abs(f.u(i, j));
            if (v > best) {
                best = v;
                imax = i;
            }
        }
        if (f.u(imax, j) < 0.0) {
            for (std::size_t i = 0; i < d1; ++i) f.u(i, j) = -f.u(i, j);
            if (j < d) {
                for (std::size_t i = 0; i < d2; ++i) f.vt(j, i) = -f.vt(j, i);
            }
        }
    }
}

} // namespace

SvdFactors svd(const Matrix& w) {
    if (w.rows() == 0 || w.cols() == 0) throw InvalidInput("svd: empty matrix");
    if (!all_finite(w)) throw InvalidInput("svd: non-finite entries");

    SvdFactors f;
    if (w.rows() >= w.cols()) {
        svd_tall(w, f.u, f.sigma, f.vt);
    } else {
        // Work on w^T, then swap roles: w = (u' s v'^T)^T = v' s u'^T.
        Matrix u_work, vt_work;
        std::vector<double> s;
        svd_tall(w.transposed(), u_work, s, vt_work);
        f.u = vt_work.transposed();
        f.sigma = std::move(s);
        f.vt = u_work.transposed();
    }
    apply_sign_convention(f);
    return f;
}

FundamentalSubspaces split_subspaces(const SvdFactors& f, std::size_t r) {
    const std::size_t d1 = f.d1();
    const std::size_t d2 = f.d2();
    const std::size_t d = std::min(d1, d2);
    if (r < 1 || r > d) {
        throw RankOutOfRange("split_subspaces: r=" + std::to_string(r) + " not in [1, " +
                             std::to_string(d) + "]");
    }
    FundamentalSubspaces s;
    s.cut_rank = r;
    s.u_r = f.u.columns(0, r);
    s.u_e = f.u.columns(r, d1 - r);
    s.sigma_r.assign(f.sigma.begin(), f.sigma.begin() + static_cast<std::ptrdiff_t>(r));
    s.sigma_e.assign(f.sigma.begin() + static_cast<std::ptrdiff_t>(r), f.sigma.end());
    const Matrix v = f.vt.transposed();
    s.v_r = v.columns(0, r);
    s.v_e = v.columns(r, d2 - r);
    return s;
}

Matrix rank_r_approx(const SvdFactors& f, std::size_t r) {
    const std::size_t d = std::min(f.d1(), f.d2());
    if (r < 1 || r > d) {
        throw RankOutOfRange("rank_r_approx: r=" + std::to_string(r) + " not in [1, " +
                             std::to_string(d) + "]");
    }
    const Matrix u_r = f.u.columns(0, r);
    std::span<const double> s_r(f.sigma.data(), r);
    Matrix vt_r(r, f.d2());
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < f.d2(); ++j) vt_r(i, j) = f.vt(i, j);
    return matmul(scale_columns(u_r, s_r), vt_r);
}

Matrix rank_r_approx(const Matrix& w, std::size_t r) { return rank_r_approx(svd(w), r); }

EnergyRatios energy_ratio(std::span<const double> sigma, std::size_t r) {
    if (r < 1 || r > sigma.size()) {
        throw RankOutOfRange("energy_ratio: r=" + std::to_string(r) + " not in [1, " +
                             std::to_string(sigma.size()) + "]");
    }
    double nuc_top = 0.0, nuc_all = 0.0, fro_top = 0.0, fro_all = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        nuc_all += sigma[i];
        fro_all += sigma[i] * sigma[i];
        if (i < r) {
            nuc_top = nuc_all;
            fro_top = fro_all;
        }
    }
    if (nuc_all == 0.0) return {1.0, 1.0}; // zero spectrum, by convention
    return {nuc_top / nuc_all, fro_top / fro_all};
}

Matrix reconstruct(const SvdFactors& f) {
    // diag(sigma) is d1 x d2; only the first min(d1, d2) columns of u and
    // rows of vt contribute.
    const std::size_t d = std::min(f.d1(), f.d2());
    const Matrix u_d = f.u.columns(0, d);
    Matrix vt_d(d, f.d2());
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < f.d2(); ++j) vt_d(i, j) = f.vt(i, j);
    return matmul(scale_columns(u_d, f.sigma), vt_d);
}

} // namespace svfit::linalg
