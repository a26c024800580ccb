// SPDX-License-Identifier: Apache-2.0
#include "svfit/io.hpp"

#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "svfit/errors.hpp"

namespace svfit::io {

namespace {

constexpr std::array<char, 4> kMatrixMagic = {'S', 'V', 'F', 'M'};
constexpr std::array<char, 4> kCheckpointMagic = {'S', 'V', 'F', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put_le(std::string& out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
    }
}

void put_f64_le(std::string& out, double value) {
    put_le(out, std::bit_cast<std::uint64_t>(value));
}

class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    void bytes(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw TruncatedPayload(std::string("read: truncated ") + what);
        }
    }

    template <typename T>
    T le(const char* what) {
        char buf[sizeof(T)];
        bytes(buf, sizeof(T), what);
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) {
            v |= static_cast<T>(static_cast<unsigned char>(buf[i])) << (8 * i);
        }
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }

private:
    std::istream& in_;
};

std::string encode_matrix(const Matrix& m) {
    std::string out;
    out.reserve(24 + m.size() * 8);
    out.append(kMatrixMagic.data(), kMatrixMagic.size());
    out.push_back(static_cast<char>(kVersion));
    out.push_back(static_cast<char>(kDtypeF64));
    put_le<std::uint16_t>(out, 0); // reserved
    put_le<std::uint64_t>(out, m.rows());
    put_le<std::uint64_t>(out, m.cols());
    for (double v : m.data()) put_f64_le(out, v);
    return out;
}

Matrix decode_matrix(Reader& r) {
    char magic[4];
    r.bytes(magic, 4, "matrix magic");
    if (std::memcmp(magic, kMatrixMagic.data(), 4) != 0) {
        throw BadMagic("matrix file: bad magic");
    }
    const auto version = r.le<std::uint8_t>("version");
    if (version != kVersion) {
        throw UnsupportedVersion("matrix file: version " + std::to_string(version));
    }
    const auto dtype = r.le<std::uint8_t>("dtype");
    if (dtype != kDtypeF64) {
        throw UnsupportedVersion("matrix file: dtype " + std::to_string(dtype));
    }
    const auto reserved = r.le<std::uint16_t>("reserved");
    if (reserved != 0) {
        throw UnsupportedVersion("matrix file: nonzero reserved field");
    }
    const auto rows = r.le<std::uint64_t>("rows");
    const auto cols = r.le<std::uint64_t>("cols");
    if (rows == 0 || cols == 0 || rows > (1u << 24) || cols > (1u << 24)) {
        throw BadFormat("matrix file: implausible dimensions");
    }
    Matrix m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (double& v : m.data()) v = r.f64("payload");
    if (!all_finite(m)) throw BadFormat("matrix file: non-finite payload");
    return m;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

} // namespace

void write_matrix(std::ostream& out, const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("write_matrix: empty matrix");
    if (!all_finite(m)) throw InvalidInput("write_matrix: non-finite entries");
    const std::string bytes = encode_matrix(m);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write_matrix: stream failure");
}

Matrix read_matrix(std::istream& in) {
    Reader r(in);
    return decode_matrix(r);
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    if (m.rows() == 0 || m.cols() == 0) throw InvalidInput("write_matrix: empty matrix");
    if (!all_finite(m)) throw InvalidInput("write_matrix: non-finite entries");
    write_file(path, encode_matrix(m));
}

Matrix read_matrix(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    return read_matrix(in);
}

const Matrix* find_tensor(const TensorMap& tensors, std::string_view name) {
    for (const auto& [n, m] : tensors) {
        if (n == name) return &m;
    }
    return nullptr;
}

const Matrix& require_tensor(const TensorMap& tensors, std::string_view name) {
    const Matrix* m = find_tensor(tensors, name);
    if (!m) throw MissingTensor("missing tensor '" + std::string(name) + "'");
    return *m;
}

std::uint32_t crc32(std::span<const unsigned char> bytes) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char b : bytes) crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

void write_checkpoint(const std::filesystem::path& path, const TensorMap& tensors) {
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        for (std::size_t j = i + 1; j < tensors.size(); ++j) {
            if (tensors[i].first == tensors[j].first) {
                throw DuplicateName("checkpoint: duplicate tensor '" + tensors[i].first + "'");
            }
        }
        if (tensors[i].first.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw InvalidInput("checkpoint: tensor name too long");
        }
    }
    std::string out;
    out.append(kCheckpointMagic.data(), kCheckpointMagic.size());
    out.push_back(static_cast<char>(kVersion));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, m] : tensors) {
        put_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.append(name);
        out.append(encode_matrix(m));
    }
    const auto crc = crc32({reinterpret_cast<const unsigned char*>(out.data()), out.size()});
    put_le<std::uint32_t>(out, crc);
    write_file(path, out);
}

TensorMap read_checkpoint(const std::filesystem::path& path) {
    const std::string bytes = read_file(path);
    if (bytes.size() < 4) throw TruncatedPayload("checkpoint: shorter than magic");
    if (std::memcmp(bytes.data(), kCheckpointMagic.data(), 4) != 0) {
        throw BadMagic("checkpoint: bad magic");
    }
    if (bytes.size() < 4 + 1 + 4 + 4) throw TruncatedPayload("checkpoint: shorter than header");
    const std::size_t body = bytes.size() - 4;
    const auto stored_crc = [&] {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[body + i])) << (8 * i);
        return v;
    }();
    const auto actual_crc =
        crc32({reinterpret_cast<const unsigned char*>(bytes.data()), body});
    if (stored_crc != actual_crc) throw ChecksumError("checkpoint: CRC mismatch");

    std::istringstream in(bytes.substr(0, body));
    in.ignore(4); // magic
    Reader r(in);
    const auto version = r.le<std::uint8_t>("version");
    if (version != kVersion) {
        throw UnsupportedVersion("checkpoint: version " + std::to_string(version));
    }
    const auto count = r.le<std::uint32_t>("tensor count");
    TensorMap tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.le<std::uint16_t>("name length");
        std::string name(name_len, '\0');
        r.bytes(name.data(), name_len, "tensor name");
        if (find_tensor(tensors, name)) {
            throw DuplicateName("checkpoint: duplicate tensor '" + name + "'");
        }
        tensors.emplace_back(std::move(name), decode_matrix(r));
    }
    return tensors;
}

namespace {

// Skip PGM whitespace and '#' comments; returns the next non-space byte.
int pgm_next_token_char(std::istream& in) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    return c;
}

std::size_t pgm_read_uint(std::istream& in, const char* what) {
    int c = pgm_next_token_char(in);
    if (c == EOF || !std::isdigit(c)) {
        throw BadFormat(std::string("pgm: expected integer for ") + what);
    }
    std::size_t value = 0;
    while (c != EOF && std::isdigit(c)) {
        value = value * 10 + static_cast<std::size_t>(c - '0');
        if (value > 1u << 30) throw BadFormat(std::string("pgm: absurd ") + what);
        c = in.get();
    }
    if (c != EOF) in.unget();
    return value;
}

} // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P') throw BadFormat("pgm: not a PNM file");
    if (m1 != '5') {
        throw BadFormat(std::string("pgm: only binary P5 supported, got P") + m1);
    }
    const std::size_t width = pgm_read_uint(in, "width");
    const std::size_t height = pgm_read_uint(in, "height");
    const std::size_t maxval = pgm_read_uint(in, "maxval");
    if (maxval == 0 || maxval > 65535) {
        throw UnsupportedMaxval("pgm: maxval " + std::to_string(maxval));
    }
    if (width == 0 || height == 0) throw BadFormat("pgm: zero dimensions");
    const int sep = in.get();
    if (sep == EOF || !std::isspace(sep)) throw BadFormat("pgm: missing raster separator");

    GrayImage img;
    img.width = width;
    img.height = height;
    img.pixels.resize(width * height);
    const std::size_t bytes_per_sample = maxval < 256 ? 1 : 2;
    std::vector<char> raw(width * height * bytes_per_sample);
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
        throw BadFormat("pgm: truncated raster");
    }
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        std::size_t v;
        if (bytes_per_sample == 1) {
            v = static_cast<unsigned char>(raw[i]);
        } else { // two bytes per sample, most significant first
            v = (static_cast<std::size_t>(static_cast<unsigned char>(raw[2 * i])) << 8) |
                static_cast<unsigned char>(raw[2 * i + 1]);
        }
        if (v > maxval) throw BadFormat("pgm: sample exceeds maxval");
        img.pixels[i] = static_cast<double>(v) / static_cast<double>(maxval);
    }
    return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
    if (img.width == 0 || img.height == 0 || img.pixels.size() != img.width * img.height) {
        throw InvalidInput("write_pgm: inconsistent image");
    }
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.reserve(out.size() + img.pixels.size());
    for (double p : img.pixels) {
        const double clamped = std::clamp(p, 0.0, 1.0);
        const int q = static_cast<int>(std::lround(clamped * 255.0));
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    write_file(path, out);
}

} // namespace svfit::io
