#pragma once

// Coarse regression-by-classification loss and the fine generalized
// Charbonnier loss, with analytic gradients.

#include <cstddef>
#include <map>
#include <vector>

#include "roma/anchors.hpp"
#include "roma/grid.hpp"

namespace roma {

inline constexpr double kLogClamp = 1e-12;

struct CoarseLossConfig {
    double lambda = 1.0;
    AnchorGrid anchor_grid{64, 64};
};

struct CoarseLossResult {
    double loss = 0.0;
    double conditional = 0.0;  // weighted mean of -log pi_{k-dagger}
    double marginal = 0.0;     // mean BCE over source cells, before lambda
    std::vector<double> grad_pi;            // same layout as AnchorProbs::pi
    std::vector<double> grad_matchability;  // per source cell
};

// Binary cross-entropy with the probability clamped to [eps, 1 - eps].
double bce(double p, bool label);
// d bce / d p; zero where the clamp is active.
double bce_grad(double p, bool label);

CoarseLossResult coarse_loss(const AnchorProbs& probs, const std::vector<bool>& matchable_mask,
                             const CorrespondenceSet& corr, const CoarseLossConfig& cfg);

// (|mu - x|^2 + s)^(1/4)
double charbonnier_nll(Vec2 mu, Vec2 x, double s);
// (1/2)(|mu - x|^2 + s)^(-3/4) (mu - x)
Vec2 charbonnier_grad(Vec2 mu, Vec2 x, double s);

struct FineLossConfig {
    double c = 0.03;
    std::vector<int> scales{0, 1, 2, 3};

    double scale_value(int exponent) const;  // s = 2^i c
};

struct FineScaleTerm {
    int exponent = 0;
    double s = 0.0;
    double charbonnier = 0.0;  // weighted mean over correspondences
    double bce = 0.0;          // mean over cells
    std::vector<Vec2> grad_coords;      // per cell of that scale's warp
    std::vector<double> grad_certainty;  // per cell
};

struct FineLossResult {
    double loss = 0.0;
    std::vector<FineScaleTerm> scales;
};

// Sums the per-scale terms. Each scale is differentiated independently; no
// gradient flows between scales.
FineLossResult fine_loss(const std::map<int, WarpField>& warps, const CorrespondenceSet& corr,
                         const std::map<int, std::vector<bool>>& masks, const FineLossConfig& cfg);

inline double total_loss(double coarse, double fine) { return coarse + fine; }

struct LossSweepRow {
    double r = 0.0;
    double loss = 0.0;
    double grad_magnitude = 0.0;
};

// Charbonnier loss and gradient magnitude as a function of residual norm r:
// r = 0 followed by `points` log-spaced values in [r_min, r_max].
std::vector<LossSweepRow> loss_sweep(double s, double r_min, double r_max, std::size_t points);

}  // namespace roma
