// SPDX-License-Identifier: Apache-2.0
#include "svfit/io.hpp"

#include <cstring>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "svfit/errors.hpp"
#include "svfit/rng.hpp"
#include "test_support.hpp"

using svfit::Matrix;
namespace io = svfit::io;
namespace ts = test_support;

namespace {

bool bitwise_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

void flip_byte(const std::filesystem::path& path, std::size_t offset) {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(static_cast<std::streamoff>(offset));
    char c = 0;
    f.get(c);
    f.seekp(static_cast<std::streamoff>(offset));
    f.put(static_cast<char>(c ^ 0x01));
}

} // namespace

TEST_CASE("matrix file: 1x1 zero is exactly 32 bytes") {
    ts::TempDir dir("mat");
    Matrix m(1, 1);
    io::write_matrix(dir.file("z.svfm"), m);
    CHECK(std::filesystem::file_size(dir.file("z.svfm")) == 32);
}

TEST_CASE("matrix round-trip is bitwise, including -0.0 and subnormals") {
    ts::TempDir dir("mat");
    Matrix m = ts::seeded_matrix(16, 16, 1234);
    m(0, 0) = -0.0;
    m(0, 1) = std::numeric_limits<double>::denorm_min();
    m(1, 0) = -std::numeric_limits<double>::denorm_min();
    m(1, 1) = std::numeric_limits<double>::max();
    io::write_matrix(dir.file("m.svfm"), m);
    const Matrix back = io::read_matrix(dir.file("m.svfm"));
    CHECK(bitwise_equal(m, back));
    CHECK(std::signbit(back(0, 0)));
}

TEST_CASE("matrix file error taxonomy") {
    ts::TempDir dir("materr");
    const Matrix m = ts::seeded_matrix(3, 2, 5);
    const auto path = dir.file("m.svfm");
    io::write_matrix(path, m);

    SUBCASE("bad magic") {
        flip_byte(path, 0);
        CHECK_THROWS_AS(io::read_matrix(path), svfit::BadMagic);
    }
    SUBCASE("unsupported version") {
        flip_byte(path, 4);
        CHECK_THROWS_AS(io::read_matrix(path), svfit::UnsupportedVersion);
    }
    SUBCASE("unsupported dtype") {
        flip_byte(path, 5);
        CHECK_THROWS_AS(io::read_matrix(path), svfit::UnsupportedVersion);
    }
    SUBCASE("truncated payload") {
        std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
        CHECK_THROWS_AS(io::read_matrix(path), svfit::TruncatedPayload);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(io::read_matrix(dir.file("nope.svfm")), svfit::IoError);
    }
    SUBCASE("non-finite write rejected") {
        Matrix bad(1, 1);
        bad(0, 0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(io::write_matrix(dir.file("bad.svfm"), bad), svfit::InvalidInput);
    }
}

TEST_CASE("checkpoint: empty set round-trips with a valid CRC") {
    ts::TempDir dir("ckpt");
    io::write_checkpoint(dir.file("empty.ckpt"), {});
    const auto back = io::read_checkpoint(dir.file("empty.ckpt"));
    CHECK(back.empty());
    // magic(4) + version(1) + count(4) + crc(4)
    CHECK(std::filesystem::file_size(dir.file("empty.ckpt")) == 13);
}

TEST_CASE("checkpoint preserves tensor order and content") {
    ts::TempDir dir("ckpt");
    io::TensorMap tensors;
    tensors.emplace_back("second.later", ts::seeded_matrix(4, 5, 7));
    tensors.emplace_back("alpha", ts::seeded_matrix(2, 2, 8));
    io::write_checkpoint(dir.file("two.ckpt"), tensors);
    const auto back = io::read_checkpoint(dir.file("two.ckpt"));
    REQUIRE(back.size() == 2);
    CHECK(back[0].first == "second.later");
    CHECK(back[1].first == "alpha");
    CHECK(bitwise_equal(back[0].second, tensors[0].second));
    CHECK(bitwise_equal(back[1].second, tensors[1].second));
}

TEST_CASE("checkpoint detects a single flipped payload bit") {
    ts::TempDir dir("ckpt");
    io::TensorMap tensors;
    tensors.emplace_back("w", ts::seeded_matrix(6, 6, 9));
    const auto path = dir.file("w.ckpt");
    io::write_checkpoint(path, tensors);
    // flip one bit deep inside the payload region
    flip_byte(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(io::read_checkpoint(path), svfit::ChecksumError);
}

TEST_CASE("checkpoint rejects duplicate names on write") {
    ts::TempDir dir("ckpt");
    io::TensorMap tensors;
    tensors.emplace_back("w", ts::seeded_matrix(2, 2, 1));
    tensors.emplace_back("w", ts::seeded_matrix(2, 2, 2));
    CHECK_THROWS_AS(io::write_checkpoint(dir.file("dup.ckpt"), tensors), svfit::DuplicateName);
}

TEST_CASE("checkpoint bad magic takes precedence over CRC") {
    ts::TempDir dir("ckpt");
    const auto path = dir.file("m.ckpt");
    io::write_checkpoint(path, {{"w", ts::seeded_matrix(2, 2, 3)}});
    flip_byte(path, 1);
    CHECK_THROWS_AS(io::read_checkpoint(path), svfit::BadMagic);
}

TEST_CASE("crc32 matches the standard check vector") {
    const char* s = "123456789";
    CHECK(io::crc32({reinterpret_cast<const unsigned char*>(s), 9}) == 0xCBF43926u);
}

TEST_CASE("pgm: 2x2 maxval-255 sample normalization") {
    ts::TempDir dir("pgm");
    const auto path = dir.file("tiny.pgm");
    std::ofstream out(path, std::ios::binary);
    out << "P5\n2 2\n255\n";
    const unsigned char px[4] = {0, 255, 128, 64};
    out.write(reinterpret_cast<const char*>(px), 4);
    out.close();

    const svfit::GrayImage img = io::read_pgm(path);
    CHECK(img.width == 2);
    CHECK(img.height == 2);
    CHECK(img.pixels[0] == 0.0);
    CHECK(img.pixels[1] == 1.0);
    CHECK(img.pixels[2] == doctest::Approx(128.0 / 255.0).epsilon(1e-15));
    CHECK(img.pixels[3] == doctest::Approx(64.0 / 255.0).epsilon(1e-15));
}

TEST_CASE("pgm write/read is stable after one round trip") {
    ts::TempDir dir("pgm");
    svfit::GrayImage img;
    img.width = 9;
    img.height = 5;
    svfit::Rng rng(77);
    img.pixels.resize(45);
    for (double& p : img.pixels) p = rng.uniform();

    io::write_pgm(dir.file("a.pgm"), img);
    const svfit::GrayImage once = io::read_pgm(dir.file("a.pgm"));
    io::write_pgm(dir.file("b.pgm"), once);
    const svfit::GrayImage twice = io::read_pgm(dir.file("b.pgm"));
    CHECK(once.pixels == twice.pixels); // quantization fixed point
}

TEST_CASE("pgm parser handles comments and 16-bit samples") {
    ts::TempDir dir("pgm");
    const auto path = dir.file("c.pgm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n# a comment\n2 1\n# another\n65535\n";
        const unsigned char px[4] = {0xFF, 0xFF, 0x00, 0x01}; // 65535, 1 big-endian
        out.write(reinterpret_cast<const char*>(px), 4);
    }
    const svfit::GrayImage img = io::read_pgm(path);
    CHECK(img.pixels[0] == 1.0);
    CHECK(img.pixels[1] == doctest::Approx(1.0 / 65535.0).epsilon(1e-15));
}

TEST_CASE("pgm error taxonomy") {
    ts::TempDir dir("pgmerr");
    SUBCASE("ascii P2 rejected") {
        const auto path = dir.file("p2.pgm");
        std::ofstream(path) << "P2\n2 2\n255\n0 1 2 3\n";
        CHECK_THROWS_AS(io::read_pgm(path), svfit::BadFormat);
    }
    SUBCASE("maxval over 65535") {
        const auto path = dir.file("mv.pgm");
        std::ofstream(path, std::ios::binary) << "P5\n2 2\n70000\n\0\0\0\0";
        CHECK_THROWS_AS(io::read_pgm(path), svfit::UnsupportedMaxval);
    }
    SUBCASE("truncated raster") {
        const auto path = dir.file("tr.pgm");
        std::ofstream out(path, std::ios::binary);
        out << "P5\n4 4\n255\n";
        out.write("\0\0", 2);
        out.close();
        CHECK_THROWS_AS(io::read_pgm(path), svfit::BadFormat);
    }
}

TEST_CASE("property: matrix and checkpoint round trips over random shapes") {
    ts::TempDir dir("prop");
    svfit::Rng shape_rng(2025);
    for (int trial = 0; trial < 60; ++trial) {
        const std::size_t rows = 1 + shape_rng.index(9);
        const std::size_t cols = 1 + shape_rng.index(9);
        Matrix m = svfit::gaussian_matrix(rows, cols, shape_rng);
        if (trial % 3 == 0) m(0, 0) = -0.0;
        if (trial % 5 == 0) m.data()[m.size() - 1] = 5e-324; // smallest subnormal
        const auto path = dir.file("m" + std::to_string(trial) + ".svfm");
        io::write_matrix(path, m);
        CHECK(bitwise_equal(io::read_matrix(path), m));
    }
    for (int trial = 0; trial < 20; ++trial) {
        io::TensorMap tensors;
        const std::size_t count = shape_rng.index(5);
        for (std::size_t t = 0; t < count; ++t) {
            tensors.emplace_back("t" + std::to_string(t),
                                 svfit::gaussian_matrix(1 + shape_rng.index(6),
                                                        1 + shape_rng.index(6), shape_rng));
        }
        const auto path = dir.file("c" + std::to_string(trial) + ".ckpt");
        io::write_checkpoint(path, tensors);
        const auto back = io::read_checkpoint(path);
        REQUIRE(back.size() == tensors.size());
        for (std::size_t t = 0; t < back.size(); ++t) {
            CHECK(back[t].first == tensors[t].first);
            CHECK(bitwise_equal(back[t].second, tensors[t].second));
        }
    }
}
