#pragma once

// File formats.
//
// RMGRID1: 7-byte magic "RMGRID1", u32 rank, rank x u32 dims, then a
// row-major float32 payload. All integers and floats are little-endian.
//
// Correspondence CSV: header `xa,ya,xb,yb,weight`, one pair per row.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "roma/grid.hpp"

namespace roma {

struct Tensor {
    std::vector<std::uint32_t> shape;
    std::vector<float> data;

    std::size_t element_count() const;
    friend bool operator==(const Tensor&, const Tensor&) = default;
};

Tensor make_tensor(std::vector<std::uint32_t> shape, std::span<const double> values);

void write_rmgrid(std::ostream& os, const Tensor& t);
Tensor read_rmgrid(std::istream& is);
void write_rmgrid(const std::filesystem::path& path, const Tensor& t);
Tensor read_rmgrid(const std::filesystem::path& path);

// Warp fields use the 3-channel layout [height, width, (x, y, certainty)].
Tensor warp_to_tensor(const WarpField& w);
WarpField warp_from_tensor(const Tensor& t);

void write_correspondences_csv(std::ostream& os, const CorrespondenceSet& set);
CorrespondenceSet read_correspondences_csv(std::istream& is);
void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceSet& set);
CorrespondenceSet read_correspondences_csv(const std::filesystem::path& path);

// Binary PGM of a scalar field scaled from [lo, hi] to [0, 255].
void write_pgm(const std::filesystem::path& path, const GridSpec& g,
               std::span<const double> values, double lo, double hi);
// Binary PPM color-coding a warp: target x -> red, y -> green, certainty -> blue.
void write_warp_ppm(const std::filesystem::path& path, const WarpField& w);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

namespace binary {

void write_magic(std::ostream& os, std::string_view magic);
void expect_magic(std::istream& is, std::string_view magic);
void write_u32(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32(std::istream& is);
void write_f32(std::ostream& os, float v);
float read_f32(std::istream& is);

}  // namespace binary

}  // namespace roma
