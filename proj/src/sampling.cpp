#include "roma/sampling.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace roma {

std::vector<double> kde_density(const Eigen::MatrixXd& points, double h) {
    require(h > 0.0, "kde_density: bandwidth must be positive");
    require(points.rows() >= 1, "kde_density: need at least one point");
    const auto m = points.rows();
    const double d = static_cast<double>(points.cols());
    const double norm = static_cast<double>(m) * std::pow(2.0 * std::numbers::pi * h * h, d / 2.0);
    const double inv = 1.0 / (2.0 * h * h);
    std::vector<double> out(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < m; ++j) s += std::exp(-(points.row(i) - points.row(j)).squaredNorm() * inv);
        out[static_cast<std::size_t>(i)] = s / norm;
    }
    return out;
}

namespace {

std::vector<std::size_t> candidates(const WarpField& warp) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < warp.grid().cells(); ++i) {
        if (warp.certainty()[i] > 0.0 && in_extent(warp.target_coords()[i])) idx.push_back(i);
    }
    return idx;
}

}  // namespace

std::size_t candidate_count(const WarpField& warp) { return candidates(warp).size(); }

CorrespondenceSet balanced_sample(const WarpField& warp, std::size_t n, double h, std::uint64_t seed,
                                  const SamplingOptions& opt) {
    require(h > 0.0, "balanced_sample: bandwidth must be positive");
    const auto idx = candidates(warp);
    if (n > idx.size()) {
        throw Error("balanced_sample: requested " + std::to_string(n) + " matches but only " +
                    std::to_string(idx.size()) + " candidates have positive certainty");
    }
    const auto& g = warp.grid();
    std::vector<double> weight(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) weight[i] = warp.certainty()[idx[i]];
    if (opt.reweight && !idx.empty()) {
        const Eigen::Index cols = opt.space == KdeSpace::joint ? 4 : 2;
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(idx.size()), cols);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const Vec2 a = g.center(idx[i]);
            const auto r = static_cast<Eigen::Index>(i);
            pts(r, 0) = a.x;
            pts(r, 1) = a.y;
            if (cols == 4) {
                pts(r, 2) = warp.target_coords()[idx[i]].x;
                pts(r, 3) = warp.target_coords()[idx[i]].y;
            }
        }
        const auto kde = kde_density(pts, h);
        for (std::size_t i = 0; i < idx.size(); ++i) weight[i] /= std::max(kde[i], kDensityFloor);
    }

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Correspondence> out;
    out.reserve(n);
    for (std::size_t t = 0; t < n; ++t) {
        double total = 0.0;
        for (double w : weight) total += w;
        const double u = unit(rng) * total;
        double acc = 0.0;
        std::size_t pick = weight.size();
        std::size_t last_live = weight.size();
        for (std::size_t i = 0; i < weight.size(); ++i) {
            if (weight[i] <= 0.0) continue;
            last_live = i;
            acc += weight[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        if (pick == weight.size()) pick = last_live;  // rounding at the top end
        const std::size_t cell = idx[pick];
        out.push_back({g.center(cell), warp.target_coords()[cell], warp.certainty()[cell]});
        weight[pick] = 0.0;
    }
    return CorrespondenceSet(std::move(out));
}

}  // namespace roma
