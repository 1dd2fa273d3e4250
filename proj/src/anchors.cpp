#include "roma/anchors.hpp"

#include <algorithm>
#include <cmath>

namespace roma {

AnchorGrid::AnchorGrid(std::size_t rows, std::size_t cols) : cells_(rows, cols) {
    anchors_.reserve(cells_.cells());
    for (std::size_t k = 0; k < cells_.cells(); ++k) anchors_.push_back(cells_.center(k));
}

namespace {

void check_matchability(std::span<const double> m, std::size_t n) {
    require(m.size() == n, "AnchorProbs: matchability size does not match source grid");
    for (double v : m) require(v >= 0.0 && v <= 1.0, "AnchorProbs: matchability outside [0,1]");
}

}  // namespace

AnchorProbs::AnchorProbs(GridSpec source, std::size_t anchor_count, std::vector<double> pi,
                         std::vector<double> matchability)
    : source_(source), k_(anchor_count), pi_(std::move(pi)), matchability_(std::move(matchability)) {
    require(k_ >= 1, "AnchorProbs: need at least one anchor");
    require(pi_.size() == source_.cells() * k_, "AnchorProbs: pi size does not match grid x K");
    check_matchability(matchability_, source_.cells());
    for (std::size_t r = 0; r < source_.cells(); ++r) {
        double sum = 0.0;
        for (double v : row(r)) {
            require(std::isfinite(v) && v >= 0.0, "AnchorProbs: negative or non-finite probability");
            sum += v;
        }
        require(std::abs(sum - 1.0) <= 1e-9, "AnchorProbs: row does not sum to 1");
    }
}

AnchorProbs AnchorProbs::normalized(GridSpec source, std::size_t anchor_count,
                                    std::vector<double> weights, std::vector<double> matchability) {
    require(anchor_count >= 1 && weights.size() == source.cells() * anchor_count,
            "AnchorProbs: weight size does not match grid x K");
    for (std::size_t r = 0; r < source.cells(); ++r) {
        const auto first = weights.begin() + static_cast<std::ptrdiff_t>(r * anchor_count);
        const auto last = first + static_cast<std::ptrdiff_t>(anchor_count);
        double sum = 0.0;
        for (auto it = first; it != last; ++it) {
            require(std::isfinite(*it) && *it >= 0.0, "AnchorProbs: negative or non-finite weight");
            sum += *it;
        }
        require(sum > 0.0, "AnchorProbs: all-zero row");
        for (auto it = first; it != last; ++it) *it /= sum;
    }
    return {source, anchor_count, std::move(weights), std::move(matchability)};
}

double mixture_density(const AnchorProbs& probs, const AnchorGrid& grid, std::size_t source_cell,
                       Vec2 x_b) {
    require(probs.anchor_count() == grid.size(), "mixture_density: K does not match anchor grid");
    require(source_cell < probs.source().cells(), "mixture_density: source cell out of range");
    require(is_finite(x_b) && in_extent(x_b), "mixture_density: x_b outside [-1,1]^2");
    const auto k = grid.cells().flat(normalized_to_pixel(x_b, grid.cells()));
    return probs.row(source_cell)[k] / grid.cell_area();
}

namespace {

double axis_center(std::size_t i, std::size_t n) {
    return -1.0 + (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(n);
}

// Nearest anchor index along one axis; ties resolve to the lower index.
std::size_t nearest_on_axis(double v, std::size_t n) {
    const double u = (v + 1.0) * static_cast<double>(n) / 2.0 - 0.5;
    const double lo = std::clamp(std::floor(u), 0.0, static_cast<double>(n - 1));
    const auto i = static_cast<std::size_t>(lo);
    if (i + 1 >= n) return i;
    const double d0 = std::abs(v - axis_center(i, n));
    const double d1 = std::abs(v - axis_center(i + 1, n));
    return d1 < d0 ? i + 1 : i;
}

}  // namespace

std::size_t closest_anchor(const AnchorGrid& grid, Vec2 x) {
    require(is_finite(x), "closest_anchor: non-finite coordinate");
    // Squared distance separates over axes, so the row-major-lowest argmin is
    // the pair of per-axis lowest argmins.
    const auto r = nearest_on_axis(x.y, grid.rows());
    const auto c = nearest_on_axis(x.x, grid.cols());
    return r * grid.cols() + c;
}

std::vector<std::size_t> four_neighborhood(const AnchorGrid& grid, std::size_t k) {
    const std::size_t r = k / grid.cols();
    const std::size_t c = k % grid.cols();
    std::vector<std::size_t> out{k};
    if (c > 0) out.push_back(k - 1);
    if (c + 1 < grid.cols()) out.push_back(k + 1);
    if (r > 0) out.push_back(k - grid.cols());
    if (r + 1 < grid.rows()) out.push_back(k + grid.cols());
    return out;
}

WarpField to_warp(const AnchorProbs& probs, const AnchorGrid& grid) {
    require(probs.anchor_count() == grid.size(), "to_warp: K does not match anchor grid");
    const auto& src = probs.source();
    std::vector<Vec2> coords(src.cells());
    for (std::size_t i = 0; i < src.cells(); ++i) {
        const auto row = probs.row(i);
        const auto k_star = static_cast<std::size_t>(
            std::distance(row.begin(), std::max_element(row.begin(), row.end())));
        Vec2 acc{0.0, 0.0};
        double mass = 0.0;
        for (auto k : four_neighborhood(grid, k_star)) {
            acc = acc + row[k] * grid.anchor(k);
            mass += row[k];
        }
        coords[i] = (1.0 / mass) * acc;
    }
    return {src, std::move(coords),
            std::vector<double>(probs.matchability().begin(), probs.matchability().end())};
}

WarpField to_warp_regression(const GridSpec& source, std::span<const Vec2> coords,
                             std::span<const double> matchability) {
    return {source, std::vector<Vec2>(coords.begin(), coords.end()),
            std::vector<double>(matchability.begin(), matchability.end())};
}

AnchorProbs gaussian_anchor_probs(const GridSpec& source, std::span<const Vec2> means,
                                  double sigma, std::span<const double> matchability,
                                  const AnchorGrid& grid) {
    require(sigma > 0.0, "gaussian_anchor_probs: sigma must be positive");
    require(means.size() == source.cells(), "gaussian_anchor_probs: one mean per source cell");
    const std::size_t K = grid.size();
    std::vector<double> w(source.cells() * K);
    for (std::size_t i = 0; i < source.cells(); ++i) {
        // Log-domain so very sharp Gaussians keep a positive argmax.
        double best = -INFINITY;
        for (std::size_t k = 0; k < K; ++k) {
            const Vec2 d = grid.anchor(k) - means[i];
            w[i * K + k] = -dot(d, d) / (2.0 * sigma * sigma);
            best = std::max(best, w[i * K + k]);
        }
        for (std::size_t k = 0; k < K; ++k) w[i * K + k] = std::exp(w[i * K + k] - best);
    }
    return AnchorProbs::normalized(source, K, std::move(w),
                                   std::vector<double>(matchability.begin(), matchability.end()));
}

Tensor anchor_probs_to_tensor(const AnchorProbs& p) {
    const auto& g = p.source();
    const std::size_t K = p.anchor_count();
    std::vector<double> v;
    v.reserve(g.cells() * (K + 1));
    for (std::size_t i = 0; i < g.cells(); ++i) {
        const auto row = p.row(i);
        v.insert(v.end(), row.begin(), row.end());
        v.push_back(p.matchability()[i]);
    }
    return make_tensor({static_cast<std::uint32_t>(g.height()), static_cast<std::uint32_t>(g.width()),
                        static_cast<std::uint32_t>(K + 1)},
                       v);
}

AnchorProbs anchor_probs_from_tensor(const Tensor& t) {
    if (t.shape.size() != 3 || t.shape[2] < 2) {
        throw FormatError("anchor probabilities must have shape [H, W, K + 1]");
    }
    GridSpec g(t.shape[0], t.shape[1]);
    const std::size_t K = t.shape[2] - 1;
    std::vector<double> pi(g.cells() * K);
    std::vector<double> m(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) {
        for (std::size_t k = 0; k < K; ++k) pi[i * K + k] = t.data[i * (K + 1) + k];
        m[i] = std::clamp(static_cast<double>(t.data[i * (K + 1) + K]), 0.0, 1.0);
    }
    // float32 storage loses the exact unit row sum; renormalize on load.
    return AnchorProbs::normalized(g, K, std::move(pi), std::move(m));
}

}  // namespace roma
