#pragma once

// Two-view evaluation measures. Thresholds are strict: an error counts as
// correct only when it is below the threshold.

#include <span>
#include <vector>

#include <Eigen/Core>

#include "roma/grid.hpp"

namespace roma {

inline constexpr double kDefaultRefResolution = 448.0;
inline constexpr double kRobustnessThresholdPx = 32.0;

// Pixel error of each index-aligned target point: the extent has width 2 and
// spans ref_resolution pixels.
std::vector<double> pixel_errors(const CorrespondenceSet& pred, const CorrespondenceSet& gt,
                                 double ref_resolution = kDefaultRefResolution);

double epe(const CorrespondenceSet& pred, const CorrespondenceSet& gt,
           double ref_resolution = kDefaultRefResolution);
double pck(const CorrespondenceSet& pred, const CorrespondenceSet& gt, double tau_px,
           double ref_resolution = kDefaultRefResolution);
double pck(std::span<const double> errors_px, double tau_px);
double robustness(const CorrespondenceSet& pred, const CorrespondenceSet& gt,
                  double ref_resolution = kDefaultRefResolution);

struct PoseError {
    double rot_deg = 0.0;
    double trans_deg = 0.0;
};

// Translation angle is sign-invariant unless `signed_translation` is set.
PoseError pose_errors(const Eigen::Matrix3d& r_est, const Eigen::Vector3d& t_est, const Eigen::Matrix3d& r_gt,
                      const Eigen::Vector3d& t_gt, bool signed_translation = false);

// Normalized integral of recall(t) = #{e < t} / n over [0, tau], evaluated
// with the trapezoidal rule on the step function's breakpoints.
double auc(std::span<const double> errors, double tau);

struct MaaThresholds {
    std::vector<double> rot_deg;
    std::vector<double> trans;

    // 10 uniform pairs: rotation 1..10 degrees, translation 0.2..2.0.
    static MaaThresholds defaults();
};

double maa(std::span<const double> rot_errors, std::span<const double> trans_errors,
           const MaaThresholds& thresholds = MaaThresholds::defaults());

}  // namespace roma
