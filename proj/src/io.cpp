#include "clab/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace clab::io {

namespace {

constexpr char kMagic[4] = {'V', 'C', 'T', '1'};

template <class T>
void put_le(std::vector<unsigned char> &out, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((value >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::vector<unsigned char> &in, std::size_t &pos) {
    if (pos + sizeof(T) > in.size()) throw FormatError("vct: truncated header");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return v;
}

}  // namespace

std::vector<unsigned char> encode_vct(const Tensor &t) {
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    out.reserve(out.size() + 4 * t.size());
    for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

Tensor decode_vct(const std::vector<unsigned char> &bytes) {
    if (bytes.size() < 8 || !std::equal(kMagic, kMagic + 4, bytes.begin())) throw FormatError("vct: bad magic");
    std::size_t pos = 4;
    const auto rank = get_le<std::uint32_t>(bytes, pos);
    if (rank > 16) throw FormatError("vct: implausible rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto &e : shape) {
        e = get_le<std::uint64_t>(bytes, pos);
        if (e == 0) throw FormatError("vct: zero extent");
    }
    const std::size_t n = numel(shape);
    if (bytes.size() - pos != 4 * n) {
        throw FormatError("vct: payload has " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                          std::to_string(4 * n));
    }
    std::vector<float> data(n);
    for (auto &v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(bytes, pos));
    return Tensor(std::move(shape), std::move(data));
}

void write_vct(const std::filesystem::path &path, const Tensor &t) {
    const auto bytes = encode_vct(t);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

Tensor read_vct(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    try {
        return decode_vct(bytes);
    } catch (const FormatError &e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_pgm(const std::filesystem::path &path, const Tensor &image) {
    if (image.rank() < 2) throw ShapeError("pgm: need at least 2 dims, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(image.rank() - 2);
    const std::size_t w = image.dim(image.rank() - 1);
    if (h * w != image.size()) throw ShapeError("pgm: not a single image " + shape_str(image.shape()));
    float peak = 0.0f;
    for (float v : image.data()) peak = std::max(peak, v);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << "P5\n" << w << ' ' << h << "\n255\n";
    for (float v : image.data()) {
        const float s = peak > 0.0f ? std::clamp(v / peak, 0.0f, 1.0f) : 0.0f;
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(s * 255.0f))));
    }
}

void write_text(const std::filesystem::path &path, const std::string &text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << text;
}

std::string read_text(const std::filesystem::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

}  // namespace clab::io
