#include "roma/grid.hpp"

#include <algorithm>
#include <string>

namespace roma {

GridSpec::GridSpec(std::size_t height, std::size_t width) : height_(height), width_(width) {
    require(height >= 1 && width >= 1, "GridSpec: dimensions must be >= 1");
}

Vec2 GridSpec::center(std::size_t flat_index) const {
    const auto c = unflat(flat_index);
    return {-1.0 + (static_cast<double>(c.col) + 0.5) * cell_width(),
            -1.0 + (static_cast<double>(c.row) + 0.5) * cell_height()};
}

Vec2 pixel_to_normalized(CellIndex p, const GridSpec& g) {
    if (p.row >= g.height() || p.col >= g.width()) {
        throw Error("pixel_to_normalized: index (" + std::to_string(p.row) + "," +
                    std::to_string(p.col) + ") outside " + std::to_string(g.height()) + "x" +
                    std::to_string(g.width()) + " grid");
    }
    return g.center(g.flat(p));
}

namespace {

std::size_t axis_cell(double v, std::size_t n) {
    const double u = (v + 1.0) * static_cast<double>(n) / 2.0;
    const auto i = static_cast<std::size_t>(std::max(0.0, std::floor(u)));
    return std::min(i, n - 1);
}

}  // namespace

CellIndex normalized_to_pixel(Vec2 x, const GridSpec& g) {
    require(is_finite(x) && in_extent(x), "normalized_to_pixel: coordinate outside [-1,1]^2");
    return {axis_cell(x.y, g.height()), axis_cell(x.x, g.width())};
}

ConditionalMatchDistribution ConditionalMatchDistribution::from_rows(GridSpec source,
                                                                     GridSpec target,
                                                                     std::vector<double> values) {
    require(values.size() == source.cells() * target.cells(),
            "ConditionalMatchDistribution: tensor size does not match grids");
    const std::size_t n = target.cells();
    for (std::size_t r = 0; r < source.cells(); ++r) {
        double sum = 0.0;
        for (std::size_t t = 0; t < n; ++t) {
            const double v = values[r * n + t];
            require(std::isfinite(v) && v >= 0.0,
                    "ConditionalMatchDistribution: negative or non-finite entry");
            sum += v;
        }
        require(sum > 0.0, "ConditionalMatchDistribution: source row " + std::to_string(r) +
                               " has no mass");
        for (std::size_t t = 0; t < n; ++t) values[r * n + t] /= sum;
    }
    return {source, target, std::move(values)};
}

std::span<const double> ConditionalMatchDistribution::row(std::size_t source_cell) const {
    require(source_cell < source_.cells(), "ConditionalMatchDistribution: row out of range");
    return std::span<const double>(probs_).subspan(source_cell * target_.cells(),
                                                   target_.cells());
}

std::span<const double> JointMatchDistribution::row(std::size_t source_cell) const {
    require(source_cell < source_.cells(), "JointMatchDistribution: row out of range");
    return std::span<const double>(probs_).subspan(source_cell * target_.cells(),
                                                   target_.cells());
}

JointMatchDistribution normalize_joint(GridSpec source, GridSpec target,
                                       std::vector<double> values) {
    require(values.size() == source.cells() * target.cells(),
            "normalize_joint: tensor size does not match grids");
    double sum = 0.0;
    for (double v : values) {
        require(std::isfinite(v) && v >= 0.0, "normalize_joint: negative or non-finite entry");
        sum += v;
    }
    require(sum > 0.0, "normalize_joint: tensor has no positive entry");
    for (double& v : values) v /= sum;
    return {source, target, std::move(values)};
}

WarpField::WarpField(GridSpec grid, std::vector<Vec2> target_coords,
                     std::vector<double> certainty)
    : grid_(grid), target_(std::move(target_coords)), certainty_(std::move(certainty)) {
    require(target_.size() == grid_.cells() && certainty_.size() == grid_.cells(),
            "WarpField: per-cell arrays do not match grid");
    for (const auto& t : target_) require(is_finite(t), "WarpField: non-finite target coordinate");
    for (double c : certainty_) {
        require(c >= 0.0 && c <= 1.0, "WarpField: certainty outside [0,1]");
    }
}

WarpField WarpField::identity(GridSpec grid, double certainty) {
    std::vector<Vec2> t(grid.cells());
    for (std::size_t i = 0; i < grid.cells(); ++i) t[i] = grid.center(i);
    return {grid, std::move(t), std::vector<double>(grid.cells(), certainty)};
}

namespace {

// Fractional cell-center coordinate along one axis, clamped to the hull.
void axis_stencil(double v, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
    double u = (v + 1.0) * static_cast<double>(n) / 2.0 - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(u));
    if (i0 >= n - 1) {
        i0 = n - 1;
        i1 = n - 1;
        t = 0.0;
        return;
    }
    i1 = i0 + 1;
    t = u - static_cast<double>(i0);
}

}  // namespace

BilinearStencil bilinear_stencil(const GridSpec& g, Vec2 x) {
    require(is_finite(x), "bilinear_sample: non-finite query");
    std::size_t c0, c1, r0, r1;
    double tx, ty;
    axis_stencil(x.x, g.width(), c0, c1, tx);
    axis_stencil(x.y, g.height(), r0, r1, ty);
    BilinearStencil s;
    s.cells = {g.flat({r0, c0}), g.flat({r0, c1}), g.flat({r1, c0}), g.flat({r1, c1})};
    s.weights = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    return s;
}

WarpSample bilinear_sample(const WarpField& field, Vec2 x) {
    const auto s = bilinear_stencil(field.grid(), x);
    WarpSample out{{0.0, 0.0}, 0.0};
    for (std::size_t k = 0; k < 4; ++k) {
        const double w = s.weights[k];
        out.target = out.target + w * field.target_coords()[s.cells[k]];
        out.certainty += w * field.certainty()[s.cells[k]];
    }
    out.certainty = std::clamp(out.certainty, 0.0, 1.0);
    return out;
}

double bilinear_sample(const GridSpec& g, std::span<const double> values, Vec2 x) {
    require(values.size() == g.cells(), "bilinear_sample: value array does not match grid");
    const auto s = bilinear_stencil(g, x);
    double out = 0.0;
    for (std::size_t k = 0; k < 4; ++k) out += s.weights[k] * values[s.cells[k]];
    return out;
}

WarpField resample(const WarpField& field, const GridSpec& to) {
    std::vector<Vec2> t(to.cells());
    std::vector<double> c(to.cells());
    for (std::size_t i = 0; i < to.cells(); ++i) {
        const auto s = bilinear_sample(field, to.center(i));
        t[i] = s.target;
        c[i] = s.certainty;
    }
    return {to, std::move(t), std::move(c)};
}

CorrespondenceSet::CorrespondenceSet(std::vector<Correspondence> pairs) : pairs_(std::move(pairs)) {
    for (const auto& p : pairs_) {
        require(is_finite(p.a) && is_finite(p.b) && in_extent(p.a) && in_extent(p.b),
                "CorrespondenceSet: coordinate outside [-1,1]^2");
        require(std::isfinite(p.weight) && p.weight >= 0.0,
                "CorrespondenceSet: weight must be finite and nonnegative");
    }
}

}  // namespace roma
