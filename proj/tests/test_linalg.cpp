// SPDX-License-Identifier: Apache-2.0
#include "svfit/linalg.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "svfit/errors.hpp"
#include "svfit/matrix.hpp"
#include "test_support.hpp"

using svfit::Matrix;
using namespace svfit::linalg;
namespace ts = test_support;

namespace {

double reconstruction_error(const Matrix& w, const SvdFactors& f) {
    return svfit::frobenius_norm(reconstruct(f) - w) /
           std::max(1.0, svfit::frobenius_norm(w));
}

} // namespace

TEST_CASE("svd of 2x2 identity") {
    const Matrix w = Matrix::identity(2);
    const SvdFactors f = svd(w);
    CHECK(f.sigma[0] == 1.0);
    CHECK(f.sigma[1] == 1.0);
    CHECK(f.u == Matrix::identity(2));
    CHECK(f.vt == Matrix::identity(2));
}

TEST_CASE("svd of diag(3,-2) absorbs the sign into a vector flip") {
    const Matrix w = Matrix::from_rows({{3.0, 0.0}, {0.0, -2.0}});
    const SvdFactors f = svd(w);
    CHECK(f.sigma[0] == doctest::Approx(3.0).epsilon(1e-14));
    CHECK(f.sigma[1] == doctest::Approx(2.0).epsilon(1e-14));
    // largest-abs entry of every u column is non-negative
    CHECK(f.u(0, 0) >= 0.0);
    CHECK(f.u(1, 1) >= 0.0);
    CHECK(reconstruction_error(w, f) < 1e-12);
}

TEST_CASE("svd sigma matches power-iteration oracle on seeded 4x3") {
    const Matrix w = ts::seeded_matrix(4, 3, 2024);
    const SvdFactors f = svd(w);
    const std::vector<double> oracle = oracles::power_iteration_sigmas(w);
    REQUIRE(oracle.size() == f.sigma.size());
    for (std::size_t i = 0; i < oracle.size(); ++i)
        CHECK(ts::rel_close(f.sigma[i], oracle[i], 1e-8));
    CHECK(reconstruction_error(w, f) < 1e-10);
}

TEST_CASE("svd orthogonality and reconstruction over seeded shapes") {
    const std::pair<std::size_t, std::size_t> shapes[] = {
        {1, 1}, {2, 5}, {5, 2}, {8, 8}, {17, 9}, {9, 17}, {33, 64}, {64, 64}};
    std::uint64_t seed = 100;
    for (auto [m, n] : shapes) {
        const Matrix w = ts::seeded_matrix(m, n, seed++);
        const SvdFactors f = svd(w);
        CHECK(ts::max_orthogonality_defect(f.u) < 1e-10);
        CHECK(ts::max_orthogonality_defect(f.vt.transposed()) < 1e-10);
        CHECK(reconstruction_error(w, f) < 1e-10);
        for (std::size_t i = 0; i + 1 < f.sigma.size(); ++i) {
            CHECK(f.sigma[i] >= f.sigma[i + 1]);
            CHECK(f.sigma[i + 1] >= 0.0);
        }
    }
}

TEST_CASE("svd is bitwise deterministic") {
    const Matrix w = ts::seeded_matrix(12, 7, 555);
    const SvdFactors a = svd(w);
    const SvdFactors b = svd(w);
    CHECK(std::memcmp(a.u.data().data(), b.u.data().data(),
                      a.u.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.vt.data().data(), b.vt.data().data(),
                      a.vt.size() * sizeof(double)) == 0);
    CHECK(a.sigma == b.sigma);
}

TEST_CASE("svd rejects non-finite input") {
    Matrix w(2, 2);
    w(0, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(svd(w), svfit::InvalidInput);
    w(0, 0) = std::nan("");
    CHECK_THROWS_AS(svd(w), svfit::InvalidInput);
}

TEST_CASE("svd of the zero matrix completes a deterministic basis") {
    const Matrix w(3, 2);
    const SvdFactors f = svd(w);
    CHECK(f.sigma[0] == 0.0);
    CHECK(f.sigma[1] == 0.0);
    CHECK(f.u == Matrix::identity(3));
    CHECK(ts::max_orthogonality_defect(f.vt.transposed()) < 1e-12);
}

TEST_CASE("split_subspaces of diag(3,2,1)") {
    const Matrix w = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
    const FundamentalSubspaces s = split_subspaces(svd(w), 2);
    CHECK(s.u_r.rows() == 3);
    CHECK(s.u_r.cols() == 2);
    CHECK(s.u_r(0, 0) == 1.0);
    CHECK(s.u_r(1, 1) == 1.0);
    CHECK(s.u_r(2, 0) == 0.0);
    REQUIRE(s.sigma_e.size() == 1);
    CHECK(s.sigma_e[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("split_subspaces at full rank leaves empty residual blocks") {
    const Matrix w = ts::seeded_matrix(5, 5, 9);
    const FundamentalSubspaces s = split_subspaces(svd(w), 5);
    CHECK(s.u_e.cols() == 0);
    CHECK(s.v_e.cols() == 0);
    CHECK(s.sigma_e.empty());
    CHECK(s.sigma_r.size() == 5);
}

TEST_CASE("split_subspaces rank bounds") {
    const SvdFactors f = svd(ts::seeded_matrix(4, 3, 1));
    CHECK_THROWS_AS(split_subspaces(f, 0), svfit::RankOutOfRange);
    CHECK_THROWS_AS(split_subspaces(f, 4), svfit::RankOutOfRange);
}

TEST_CASE("v_e annihilates an exact rank-2 6x4 matrix") {
    const Matrix w = ts::exact_rank_matrix(6, 4, 2, 77);
    const FundamentalSubspaces s = split_subspaces(svd(w), 2);
    const Matrix wv = svfit::matmul(w, s.v_e);
    CHECK(svfit::max_abs(wv) <= 1e-10 * svfit::frobenius_norm(w));
}

TEST_CASE("annihilation holds on both sides for exact-rank constructions") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const std::size_t d1 = 5 + seed % 4;
        const std::size_t d2 = 4 + seed % 5;
        const std::size_t k = 1 + seed % 3;
        const Matrix w = ts::exact_rank_matrix(d1, d2, k, 1000 + seed);
        const FundamentalSubspaces s = split_subspaces(svd(w), k);
        const double scale = svfit::frobenius_norm(w);
        if (s.v_e.cols() > 0)
            CHECK(svfit::max_abs(svfit::matmul(w, s.v_e)) <= 1e-10 * scale);
        if (s.u_e.cols() > 0)
            CHECK(svfit::max_abs(svfit::matmul_at(s.u_e, w)) <= 1e-10 * scale);
    }
}

TEST_CASE("rank_r_approx reproduces a rank-1 matrix exactly") {
    svfit::Rng rng(31);
    const Matrix u = svfit::gaussian_matrix(6, 1, rng);
    const Matrix v = svfit::gaussian_matrix(5, 1, rng);
    const Matrix w = svfit::matmul_bt(u, v);
    CHECK(ts::max_diff(rank_r_approx(w, 1), w) < 1e-12);
}

TEST_CASE("rank_r_approx of diag(3,2,1) at r=2") {
    const Matrix w = Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 1}});
    const Matrix wr = rank_r_approx(w, 2);
    CHECK(ts::max_diff(wr, Matrix::from_rows({{3, 0, 0}, {0, 2, 0}, {0, 0, 0}})) < 1e-12);
    CHECK(svfit::frobenius_norm(w - wr) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("rank_r_approx beats 1000 random rank-3 competitors") {
    const Matrix w = ts::seeded_matrix(16, 12, 4242);
    const Matrix wr = rank_r_approx(w, 3);
    const double best = svfit::frobenius_norm(w - wr);
    svfit::Rng rng(4243);
    for (int trial = 0; trial < 1000; ++trial) {
        const Matrix a = svfit::gaussian_matrix(16, 3, rng);
        const Matrix b = svfit::gaussian_matrix(3, 12, rng);
        CHECK(svfit::frobenius_norm(w - svfit::matmul(a, b)) >= best);
    }
}

TEST_CASE("reconstruction error equals the tail norm") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const Matrix w = ts::seeded_matrix(10 + seed, 6 + seed, 900 + seed);
        const SvdFactors f = svd(w);
        const double scale = std::max(1.0, svfit::frobenius_norm(w));
        for (std::size_t r = 1; r <= f.sigma.size(); r += 2) {
            double tail = 0.0;
            for (std::size_t i = r; i < f.sigma.size(); ++i) tail += f.sigma[i] * f.sigma[i];
            const double err = svfit::frobenius_norm(w - rank_r_approx(f, r));
            CHECK(std::abs(err - std::sqrt(tail)) <= 1e-10 * scale);
        }
    }
}

TEST_CASE("additive split recomposes the matrix") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const Matrix w = ts::seeded_matrix(9, 7, 50 + seed);
        const SvdFactors f = svd(w);
        const std::size_t r = 1 + seed % 6;
        const FundamentalSubspaces s = split_subspaces(f, r);
        Matrix tail(w.rows(), w.cols());
        if (!s.sigma_e.empty()) {
            // u_e may be wider than sigma_e (full square factor); only the
            // first sigma_e.size() columns carry singular triples.
            const Matrix u_tail = s.u_e.columns(0, s.sigma_e.size());
            const Matrix v_tail = s.v_e.columns(0, s.sigma_e.size());
            tail = svfit::matmul_bt(scale_columns(u_tail, s.sigma_e), v_tail);
        }
        const Matrix sum = rank_r_approx(f, r) + tail;
        CHECK(svfit::frobenius_norm(sum - w) <= 1e-10 * std::max(1.0, svfit::frobenius_norm(w)));
    }
}

TEST_CASE("energy_ratio basics") {
    const double sig[] = {4.0, 3.0};
    const EnergyRatios e = energy_ratio(sig, 1);
    CHECK(e.nuclear == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
    CHECK(e.frobenius == doctest::Approx(16.0 / 25.0).epsilon(1e-15));
    CHECK_THROWS_AS(energy_ratio(sig, 0), svfit::RankOutOfRange);
    CHECK_THROWS_AS(energy_ratio(sig, 3), svfit::RankOutOfRange);
}

TEST_CASE("energy_ratio of an all-equal spectrum is r/n") {
    const std::vector<double> sig(10, 2.5);
    for (std::size_t r = 1; r <= 10; ++r) {
        const EnergyRatios e = energy_ratio(sig, r);
        CHECK(e.nuclear == doctest::Approx(r / 10.0).epsilon(1e-14));
        CHECK(e.frobenius == doctest::Approx(r / 10.0).epsilon(1e-14));
    }
}

TEST_CASE("energy ratios are monotone and reach one") {
    const Matrix w = ts::seeded_matrix(12, 8, 321);
    const SvdFactors f = svd(w);
    double prev_nuc = 0.0, prev_fro = 0.0;
    for (std::size_t r = 1; r <= f.sigma.size(); ++r) {
        const EnergyRatios e = energy_ratio(f.sigma, r);
        CHECK(e.nuclear >= prev_nuc);
        CHECK(e.frobenius >= prev_fro);
        prev_nuc = e.nuclear;
        prev_fro = e.frobenius;
    }
    CHECK(prev_nuc == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(prev_fro == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("energy_ratio zero-spectrum convention") {
    const std::vector<double> sig(4, 0.0);
    const EnergyRatios e = energy_ratio(sig, 2);
    CHECK(e.nuclear == 1.0);
    CHECK(e.frobenius == 1.0);
}

TEST_CASE("sign convention fixes every u column") {
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const Matrix w = ts::seeded_matrix(3 + seed % 6, 3 + (seed * 7) % 6, 7000 + seed);
        const SvdFactors f = svd(w);
        for (std::size_t j = 0; j < f.u.cols(); ++j) {
            std::size_t imax = 0;
            for (std::size_t i = 0; i < f.u.rows(); ++i)
                if (std::abs(f.u(i, j)) > std::abs(f.u(imax, j))) imax = i;
            CHECK(f.u(imax, j) >= 0.0);
        }
    }
}

TEST_CASE("stable ordering keeps tied singular values in pre-sort order") {
    // diag(2,2) has a tied spectrum; columns must come out in index order.
    const Matrix w = Matrix::from_rows({{2.0, 0.0}, {0.0, 2.0}});
    const SvdFactors f = svd(w);
    CHECK(f.u == Matrix::identity(2));
    CHECK(f.vt == Matrix::identity(2));
}
