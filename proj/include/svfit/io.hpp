// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "svfit/image.hpp"
#include "svfit/matrix.hpp"

namespace svfit::io {

// Binary matrix file (v1), fixed little-endian:
//   magic "SVFM" | version u8 = 1 | dtype u8 = 1 (f64 LE) | reserved u16 = 0
//   | rows u64 | cols u64 | payload rows*cols f64, row-major
// Round-trips are bitwise, including negative zeros and subnormals.
void write_matrix(std::ostream& out, const Matrix& m);
Matrix read_matrix(std::istream& in);
void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

using NamedTensor = std::pair<std::string, Matrix>;
using TensorMap = std::vector<NamedTensor>;

const Matrix* find_tensor(const TensorMap& tensors, std::string_view name);
/// Throws MissingTensor.
const Matrix& require_tensor(const TensorMap& tensors, std::string_view name);

// Checkpoint file (v1), fixed little-endian:
//   magic "SVFC" | version u8 = 1 | tensor_count u32
//   | per tensor: name_len u16, UTF-8 name, embedded matrix record
//   | crc32 u32 (IEEE) over all preceding bytes
// Tensor order is preserved; names must be unique.
void write_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap read_checkpoint(const std::filesystem::path& path);

// Binary PGM ("P5"), maxval <= 65535 (two bytes per sample, big-endian,
// above 255). Comments after the magic line are accepted on read; writes
// emit maxval 255 and no comments.
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& img);

/// CRC32, IEEE polynomial (reflected 0xEDB88320), init/xorout 0xFFFFFFFF.
std::uint32_t crc32(std::span<const unsigned char> bytes);

} // namespace svfit::io
