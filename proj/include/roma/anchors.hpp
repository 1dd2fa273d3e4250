#pragma once

// Regression-by-classification output representation: the target image is
// tiled by K uniform anchor cells, and for every source cell the decoder
// predicts a probability per anchor plus a matchability score. The implied
// conditional is a mixture of uniform distributions over the anchor cells.

#include <cstddef>
#include <span>
#include <vector>

#include "roma/grid.hpp"
#include "roma/io.hpp"

namespace roma {

class AnchorGrid {
public:
    AnchorGrid(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return cells_.height(); }
    std::size_t cols() const { return cells_.width(); }
    std::size_t size() const { return cells_.cells(); }
    const GridSpec& cells() const { return cells_; }
    double cell_area() const { return cells_.cell_area(); }
    std::span<const Vec2> anchors() const { return anchors_; }
    Vec2 anchor(std::size_t k) const { return anchors_[k]; }

private:
    GridSpec cells_;
    std::vector<Vec2> anchors_;
};

inline AnchorGrid build_anchor_grid(std::size_t rows, std::size_t cols) { return {rows, cols}; }

// pi is (source cells x K), row-major; every row sums to 1.
class AnchorProbs {
public:
    // Validates rows (nonnegative, sum to 1 within 1e-9) and matchability in [0,1].
    AnchorProbs(GridSpec source, std::size_t anchor_count, std::vector<double> pi,
                std::vector<double> matchability);

    // Same as the constructor but rescales each row to unit sum first.
    static AnchorProbs normalized(GridSpec source, std::size_t anchor_count,
                                  std::vector<double> weights, std::vector<double> matchability);

    const GridSpec& source() const { return source_; }
    std::size_t anchor_count() const { return k_; }
    std::span<const double> pi() const { return pi_; }
    std::span<const double> row(std::size_t source_cell) const {
        return std::span<const double>(pi_).subspan(source_cell * k_, k_);
    }
    std::span<const double> matchability() const { return matchability_; }

private:
    GridSpec source_;
    std::size_t k_;
    std::vector<double> pi_;
    std::vector<double> matchability_;
};

// Mixture density at x_b for the given source cell: pi_{cell(x_b)} / cell_area.
double mixture_density(const AnchorProbs& probs, const AnchorGrid& grid, std::size_t source_cell,
                       Vec2 x_b);

// argmin_k |m_k - x|, ties to the lowest row-major index.
std::size_t closest_anchor(const AnchorGrid& grid, Vec2 x);

// Anchor k* and its left/right/top/bottom neighbours that exist in the grid.
std::vector<std::size_t> four_neighborhood(const AnchorGrid& grid, std::size_t k);

// Argmax over anchors followed by a probability-weighted mean of the anchor
// coordinates over the four-neighbourhood of the argmax. Certainty is the
// matchability.
WarpField to_warp(const AnchorProbs& probs, const AnchorGrid& grid);

// Two-output regression head: the decoded warp is the prediction itself.
WarpField to_warp_regression(const GridSpec& source, std::span<const Vec2> coords,
                             std::span<const double> matchability);

// Discretized isotropic Gaussian over the anchor cells around each mean.
AnchorProbs gaussian_anchor_probs(const GridSpec& source, std::span<const Vec2> means,
                                  double sigma, std::span<const double> matchability,
                                  const AnchorGrid& grid);

// RMGRID1 layout [height, width, K + 1]; the last channel is matchability.
Tensor anchor_probs_to_tensor(const AnchorProbs& p);
AnchorProbs anchor_probs_from_tensor(const Tensor& t);

}  // namespace roma
