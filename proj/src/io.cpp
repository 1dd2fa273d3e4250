#include "roma/io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace roma {

namespace binary {

void write_magic(std::ostream& os, std::string_view magic) {
    os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

void expect_magic(std::istream& is, std::string_view magic) {
    std::string buf(magic.size(), '\0');
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!is || buf != magic) throw FormatError("bad magic, expected " + std::string(magic));
}

void write_u32(std::ostream& os, std::uint32_t v) {
    std::array<char, 4> b{};
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    os.write(b.data(), 4);
}

std::uint32_t read_u32(std::istream& is) {
    std::array<unsigned char, 4> b{};
    is.read(reinterpret_cast<char*>(b.data()), 4);
    if (!is) throw FormatError("truncated u32");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

float read_f32(std::istream& is) { return std::bit_cast<float>(read_u32(is)); }

}  // namespace binary

namespace {

constexpr std::string_view kGridMagic = "RMGRID1";

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ofstream os(path, std::ios::out | std::ios::trunc | mode);
    if (!os) throw Error("cannot open " + path.string() + " for writing");
    return os;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode = {}) {
    std::ifstream is(path, std::ios::in | mode);
    if (!is) throw Error("cannot open " + path.string());
    return is;
}

}  // namespace

std::size_t Tensor::element_count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Tensor make_tensor(std::vector<std::uint32_t> shape, std::span<const double> values) {
    Tensor t{std::move(shape), {}};
    require(t.element_count() == values.size(), "make_tensor: shape does not match value count");
    t.data.reserve(values.size());
    for (double v : values) t.data.push_back(static_cast<float>(v));
    return t;
}

void write_rmgrid(std::ostream& os, const Tensor& t) {
    require(t.element_count() == t.data.size(), "write_rmgrid: shape does not match payload");
    binary::write_magic(os, kGridMagic);
    binary::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) binary::write_u32(os, d);
    for (float v : t.data) binary::write_f32(os, v);
}

Tensor read_rmgrid(std::istream& is) {
    binary::expect_magic(is, kGridMagic);
    Tensor t;
    const auto rank = binary::read_u32(is);
    if (rank > 8) throw FormatError("RMGRID1: unsupported rank " + std::to_string(rank));
    for (std::uint32_t i = 0; i < rank; ++i) t.shape.push_back(binary::read_u32(is));
    const std::size_t n = t.element_count();
    t.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.data[i] = binary::read_f32(is);
    return t;
}

void write_rmgrid(const std::filesystem::path& path, const Tensor& t) {
    auto os = open_out(path, std::ios::binary);
    write_rmgrid(os, t);
}

Tensor read_rmgrid(const std::filesystem::path& path) {
    auto is = open_in(path, std::ios::binary);
    return read_rmgrid(is);
}

Tensor warp_to_tensor(const WarpField& w) {
    const auto& g = w.grid();
    std::vector<double> v;
    v.reserve(g.cells() * 3);
    for (std::size_t i = 0; i < g.cells(); ++i) {
        v.push_back(w.target_coords()[i].x);
        v.push_back(w.target_coords()[i].y);
        v.push_back(w.certainty()[i]);
    }
    return make_tensor({static_cast<std::uint32_t>(g.height()), static_cast<std::uint32_t>(g.width()), 3},
                       v);
}

WarpField warp_from_tensor(const Tensor& t) {
    if (t.shape.size() != 3 || t.shape[2] != 3) {
        throw FormatError("warp tensor must have shape [H, W, 3]");
    }
    GridSpec g(t.shape[0], t.shape[1]);
    std::vector<Vec2> coords(g.cells());
    std::vector<double> cert(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) {
        coords[i] = {t.data[3 * i], t.data[3 * i + 1]};
        cert[i] = t.data[3 * i + 2];
    }
    return {g, std::move(coords), std::move(cert)};
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    if (ec != std::errc{}) throw Error("format_double: conversion failed");
    return std::string(buf.data(), end);
}

void write_correspondences_csv(std::ostream& os, const CorrespondenceSet& set) {
    os << "xa,ya,xb,yb,weight\n";
    for (const auto& p : set.pairs()) {
        os << format_double(p.a.x) << ',' << format_double(p.a.y) << ',' << format_double(p.b.x)
           << ',' << format_double(p.b.y) << ',' << format_double(p.weight) << '\n';
    }
}

namespace {

double parse_double(std::string_view s, std::size_t line) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw FormatError("CSV line " + std::to_string(line) + ": bad number '" + std::string(s) +
                          "'");
    }
    return v;
}

}  // namespace

CorrespondenceSet read_correspondences_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("correspondence CSV: missing header");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "xa,ya,xb,yb,weight") {
        throw FormatError("correspondence CSV: expected header xa,ya,xb,yb,weight");
    }
    std::vector<Correspondence> pairs;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::array<double, 5> f{};
        std::size_t start = 0;
        for (std::size_t k = 0; k < 5; ++k) {
            const auto comma = line.find(',', start);
            const bool last = k == 4;
            if (last != (comma == std::string::npos)) {
                throw FormatError("correspondence CSV line " + std::to_string(lineno) +
                                  ": expected 5 fields");
            }
            const auto end = last ? line.size() : comma;
            f[k] = parse_double(std::string_view(line).substr(start, end - start), lineno);
            start = end + 1;
        }
        pairs.push_back({{f[0], f[1]}, {f[2], f[3]}, f[4]});
    }
    return CorrespondenceSet(std::move(pairs));
}

void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceSet& set) {
    auto os = open_out(path);
    write_correspondences_csv(os, set);
}

CorrespondenceSet read_correspondences_csv(const std::filesystem::path& path) {
    auto is = open_in(path);
    return read_correspondences_csv(is);
}

namespace {

unsigned char to_byte(double v, double lo, double hi) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    return static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_pgm(const std::filesystem::path& path, const GridSpec& g,
               std::span<const double> values, double lo, double hi) {
    require(values.size() == g.cells(), "write_pgm: value array does not match grid");
    auto os = open_out(path, std::ios::binary);
    os << "P5\n" << g.width() << ' ' << g.height() << "\n255\n";
    for (double v : values) os.put(static_cast<char>(to_byte(v, lo, hi)));
}

void write_warp_ppm(const std::filesystem::path& path, const WarpField& w) {
    const auto& g = w.grid();
    auto os = open_out(path, std::ios::binary);
    os << "P6\n" << g.width() << ' ' << g.height() << "\n255\n";
    for (std::size_t i = 0; i < g.cells(); ++i) {
        os.put(static_cast<char>(to_byte(w.target_coords()[i].x, -1.0, 1.0)));
        os.put(static_cast<char>(to_byte(w.target_coords()[i].y, -1.0, 1.0)));
        os.put(static_cast<char>(to_byte(w.certainty()[i], 0.0, 1.0)));
    }
}

}  // namespace roma
