// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "svfit/matrix.hpp"

namespace svfit {

/// Grayscale image with pixels in [0, 1], row-major.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<double> pixels;

    double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

    /// height x width matrix of the pixel values.
    Matrix to_matrix() const {
        return Matrix(height, width, pixels);
    }

    /// Image from a matrix, clamping entries into [0, 1].
    static GrayImage from_matrix_clamped(const Matrix& m) {
        GrayImage img;
        img.width = m.cols();
        img.height = m.rows();
        img.pixels.assign(m.data().begin(), m.data().end());
        for (double& p : img.pixels) p = std::clamp(p, 0.0, 1.0);
        return img;
    }
};

} // namespace svfit
