// SPDX-License-Identifier: Apache-2.0
#pragma once

// Independent oracles used to check the library. Nothing here touches the
// implementation paths under test: singular values come from power iteration
// with deflation on W^T W, gradients from central finite differences.

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "svfit/matrix.hpp"
#include "svfit/rng.hpp"

namespace oracles {

// Singular values of w, descending, via power iteration + deflation on the
// Gram matrix W^T W (eigenvalues are the squared singular values).
inline std::vector<double> power_iteration_sigmas(const svfit::Matrix& w,
                                                  int max_iters = 200000) {
    const std::size_t n = w.cols();
    svfit::Matrix b = svfit::matmul_at(w, w); // n x n symmetric PSD
    std::vector<double> sigmas;
    svfit::Rng rng(0xBEEF);
    for (std::size_t k = 0; k < n; ++k) {
        std::vector<double> v(n);
        for (double& x : v) x = rng.normal();
        double nrm = svfit::norm2(v);
        for (double& x : v) x /= nrm;
        double lambda = 0.0;
        for (int it = 0; it < max_iters; ++it) {
            std::vector<double> bv(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double vi = v[i];
                auto row = b.row(i);
                for (std::size_t j = 0; j < n; ++j) bv[j] += vi * row[j];
            }
            const double next = svfit::dot(v, bv);
            nrm = svfit::norm2(bv);
            if (nrm == 0.0) {
                lambda = 0.0;
                break;
            }
            for (std::size_t j = 0; j < n; ++j) v[j] = bv[j] / nrm;
            if (it > 4 && std::abs(next - lambda) <= 1e-15 * std::max(1.0, std::abs(next))) {
                lambda = next;
                break;
            }
            lambda = next;
        }
        sigmas.push_back(std::sqrt(std::max(lambda, 0.0)));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) b(i, j) -= lambda * v[i] * v[j];
    }
    return sigmas; // deflation removes the dominant pair each round: descending
}

// Central finite-difference gradient of `loss` with respect to `params`.
inline std::vector<double> central_diff(std::span<double> params,
                                        const std::function<double()>& loss,
                                        double h = 1e-6) {
    std::vector<double> grad(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double saved = params[i];
        params[i] = saved + h;
        const double up = loss();
        params[i] = saved - h;
        const double down = loss();
        params[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

} // namespace oracles
