#pragma once

// Balanced match sampling: candidates drawn from a dense warp are reweighted
// by the reciprocal of a kernel density estimate so that dense regions do not
// dominate the sample.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "roma/grid.hpp"

namespace roma {

inline constexpr double kDensityFloor = 1e-12;
inline constexpr double kDefaultBandwidth = 0.15;
inline constexpr std::size_t kDefaultMatchCount = 10000;

// Gaussian KDE at each of the M rows of `points` (M x d), self-inclusive,
// normalized by M (2 pi h^2)^(d/2).
std::vector<double> kde_density(const Eigen::MatrixXd& points, double h);

enum class KdeSpace { joint, source };

struct SamplingOptions {
    KdeSpace space = KdeSpace::joint;
    bool reweight = true;  // false: weights are the certainties alone
};

// Candidates are cells with positive certainty whose warp target lies in the
// extent. Draws n of them without replacement, one weighted draw at a time.
// Returned weights are the certainties.
CorrespondenceSet balanced_sample(const WarpField& warp, std::size_t n, double h, std::uint64_t seed,
                                  const SamplingOptions& opt = {});

std::size_t candidate_count(const WarpField& warp);

}  // namespace roma
