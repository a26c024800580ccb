// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "svfit/matrix.hpp"

namespace svfit::linalg {

/// Full SVD of a d1 x d2 matrix: w = u * diag(sigma) * vt with u d1 x d1,
/// vt d2 x d2 and sigma of length min(d1, d2), descending.
///
/// Sign convention: in every column of u the entry of largest absolute value
/// (lowest index on ties) is non-negative; the paired column of v carries the
/// compensating flip.
struct SvdFactors {
    Matrix u;
    std::vector<double> sigma;
    Matrix vt;

    std::size_t d1() const { return u.rows(); }
    std::size_t d2() const { return vt.cols(); }
};

/// Column partition of the SVD factors at a cut rank r: (u_r, sigma_r, v_r)
/// span the range of w / w^T, (u_e, sigma_e, v_e) its orthogonal complement
/// (the null spaces of w^T and w once the trailing singular values vanish).
struct FundamentalSubspaces {
    std::size_t cut_rank = 0;
    Matrix u_r;                  // d1 x r
    std::vector<double> sigma_r; // r
    Matrix v_r;                  // d2 x r
    Matrix u_e;                  // d1 x (d1 - r)
    std::vector<double> sigma_e; // min(d1, d2) - r
    Matrix v_e;                  // d2 x (d2 - r)
};

struct EnergyRatios {
    double nuclear = 0.0;    // sum of top-r sigma over sum of all sigma
    double frobenius = 0.0;  // sum of top-r sigma^2 over sum of all sigma^2
};

/// Deterministic full SVD by one-sided Jacobi (cyclic sweeps) on the taller
/// orientation. Singular vectors for zero singular values (and the extra
/// columns of the full square factor) are completed to an orthonormal basis
/// by modified Gram-Schmidt against canonical basis vectors in index order.
///
/// Throws InvalidInput on non-finite entries, ConvergenceFailure if a clean
/// sweep is not reached within 60 sweeps.
SvdFactors svd(const Matrix& w);

/// Partition the factors at cut rank r (1 <= r <= min(d1, d2)).
FundamentalSubspaces split_subspaces(const SvdFactors& f, std::size_t r);

/// Best rank-r approximation u_r * diag(sigma_r) * v_r^T (Eckart-Young).
Matrix rank_r_approx(const Matrix& w, std::size_t r);
Matrix rank_r_approx(const SvdFactors& f, std::size_t r);

/// Spectral mass captured by the top-r singular values. sigma must be
/// descending and non-negative. An all-zero spectrum returns (1, 1).
EnergyRatios energy_ratio(std::span<const double> sigma, std::size_t r);

/// u * diag(sigma) * vt, accepting full factors.
Matrix reconstruct(const SvdFactors& f);

} // namespace svfit::linalg
