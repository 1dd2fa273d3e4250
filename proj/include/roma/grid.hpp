#pragma once

// Coordinate conventions and the containers shared by every module.
//
// All continuous coordinates live in the normalized extent [-1,1]x[-1,1].
// A grid with `height` rows and `width` columns tiles the extent; the center
// of cell (row i, col j) is
//     x = -1 + (j + 0.5) * 2 / width,   y = -1 + (i + 0.5) * 2 / height.
// Cell indices are always (row, col); coordinates are always (x, y).

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "roma/error.hpp"

namespace roma {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline bool is_finite(Vec2 a) { return std::isfinite(a.x) && std::isfinite(a.y); }
inline bool in_extent(Vec2 a) {
    return a.x >= -1.0 && a.x <= 1.0 && a.y >= -1.0 && a.y <= 1.0;
}

struct CellIndex {
    std::size_t row = 0;
    std::size_t col = 0;
    friend bool operator==(CellIndex, CellIndex) = default;
};

class GridSpec {
public:
    GridSpec() : GridSpec(1, 1) {}
    GridSpec(std::size_t height, std::size_t width);

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    std::size_t cells() const { return height_ * width_; }
    double cell_width() const { return 2.0 / static_cast<double>(width_); }
    double cell_height() const { return 2.0 / static_cast<double>(height_); }
    double cell_area() const { return cell_width() * cell_height(); }

    std::size_t flat(CellIndex c) const { return c.row * width_ + c.col; }
    CellIndex unflat(std::size_t i) const { return {i / width_, i % width_}; }

    // Center of a cell by flat index; no range check.
    Vec2 center(std::size_t flat_index) const;

    friend bool operator==(const GridSpec&, const GridSpec&) = default;

private:
    std::size_t height_;
    std::size_t width_;
};

Vec2 pixel_to_normalized(CellIndex p, const GridSpec& g);

// Cell containing x. Points on a shared edge go to the higher cell, except
// the outer edge +1 which belongs to the last cell. Errors outside the extent.
CellIndex normalized_to_pixel(Vec2 x, const GridSpec& g);

// Rows are source cells, columns target cells; each row sums to 1.
class ConditionalMatchDistribution {
public:
    // Normalizes each row of `values`. Errors on negative entries or rows
    // without positive mass.
    static ConditionalMatchDistribution from_rows(GridSpec source, GridSpec target,
                                                  std::vector<double> values);

    const GridSpec& source() const { return source_; }
    const GridSpec& target() const { return target_; }
    std::span<const double> row(std::size_t source_cell) const;
    std::span<const double> probs() const { return probs_; }

private:
    ConditionalMatchDistribution(GridSpec s, GridSpec t, std::vector<double> p)
        : source_(s), target_(t), probs_(std::move(p)) {}

    GridSpec source_;
    GridSpec target_;
    std::vector<double> probs_;
};

// Joint p(x_A, x_B) over (source cells x target cells), total mass 1.
class JointMatchDistribution {
public:
    const GridSpec& source() const { return source_; }
    const GridSpec& target() const { return target_; }
    std::span<const double> probs() const { return probs_; }
    std::span<const double> row(std::size_t source_cell) const;
    double at(std::size_t source_cell, std::size_t target_cell) const {
        return probs_[source_cell * target_.cells() + target_cell];
    }

    friend JointMatchDistribution normalize_joint(GridSpec, GridSpec, std::vector<double>);

private:
    JointMatchDistribution(GridSpec s, GridSpec t, std::vector<double> p)
        : source_(s), target_(t), probs_(std::move(p)) {}

    GridSpec source_;
    GridSpec target_;
    std::vector<double> probs_;
};

// Scales a nonnegative tensor to unit mass. Errors if any entry is negative
// or non-finite, or if there is no positive entry.
JointMatchDistribution normalize_joint(GridSpec source, GridSpec target,
                                       std::vector<double> values);

// Per-cell target coordinate and certainty.
class WarpField {
public:
    WarpField(GridSpec grid, std::vector<Vec2> target_coords, std::vector<double> certainty);

    // Identity warp with the given constant certainty.
    static WarpField identity(GridSpec grid, double certainty = 1.0);

    const GridSpec& grid() const { return grid_; }
    std::span<const Vec2> target_coords() const { return target_; }
    std::span<const double> certainty() const { return certainty_; }

    friend bool operator==(const WarpField&, const WarpField&) = default;

private:
    GridSpec grid_;
    std::vector<Vec2> target_;
    std::vector<double> certainty_;
};

struct WarpSample {
    Vec2 target;
    double certainty = 0.0;
};

// Up to four (flat cell index, weight) pairs; weights sum to 1.
struct BilinearStencil {
    std::array<std::size_t, 4> cells{};
    std::array<double, 4> weights{};
};

// Bilinear stencil over the cell centers enclosing x. Queries outside the
// hull of cell centers clamp to the edge values.
BilinearStencil bilinear_stencil(const GridSpec& g, Vec2 x);

WarpSample bilinear_sample(const WarpField& field, Vec2 x);
double bilinear_sample(const GridSpec& g, std::span<const double> values, Vec2 x);

// Resamples a warp onto another grid by evaluating it at the new cell centers.
WarpField resample(const WarpField& field, const GridSpec& to);

struct Correspondence {
    Vec2 a;
    Vec2 b;
    double weight = 1.0;
    friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

class CorrespondenceSet {
public:
    CorrespondenceSet() = default;
    explicit CorrespondenceSet(std::vector<Correspondence> pairs);

    std::span<const Correspondence> pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    const Correspondence& operator[](std::size_t i) const { return pairs_[i]; }

    friend bool operator==(const CorrespondenceSet&, const CorrespondenceSet&) = default;

private:
    std::vector<Correspondence> pairs_;
};

}  // namespace roma
