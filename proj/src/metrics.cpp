#include "roma/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace roma {

namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

void check_aligned(const CorrespondenceSet& pred, const CorrespondenceSet& gt) {
    require(pred.size() == gt.size(), "metrics: prediction and ground truth differ in length");
    require(!pred.empty(), "metrics: empty correspondence set");
}

}  // namespace

std::vector<double> pixel_errors(const CorrespondenceSet& pred, const CorrespondenceSet& gt, double ref_resolution) {
    check_aligned(pred, gt);
    require(ref_resolution > 0.0, "metrics: reference resolution must be positive");
    std::vector<double> e(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        e[i] = norm(pred.pairs()[i].b - gt.pairs()[i].b) * ref_resolution / 2.0;
    }
    return e;
}

double epe(const CorrespondenceSet& pred, const CorrespondenceSet& gt, double ref_resolution) {
    const auto e = pixel_errors(pred, gt, ref_resolution);
    double s = 0.0;
    for (double v : e) s += v;
    return s / static_cast<double>(e.size());
}

double pck(std::span<const double> errors_px, double tau_px) {
    require(!errors_px.empty(), "pck: no errors");
    const auto hits = std::count_if(errors_px.begin(), errors_px.end(), [&](double e) { return e < tau_px; });
    return 100.0 * static_cast<double>(hits) / static_cast<double>(errors_px.size());
}

double pck(const CorrespondenceSet& pred, const CorrespondenceSet& gt, double tau_px, double ref_resolution) {
    return pck(pixel_errors(pred, gt, ref_resolution), tau_px);
}

double robustness(const CorrespondenceSet& pred, const CorrespondenceSet& gt, double ref_resolution) {
    return pck(pred, gt, kRobustnessThresholdPx, ref_resolution);
}

PoseError pose_errors(const Eigen::Matrix3d& r_est, const Eigen::Vector3d& t_est, const Eigen::Matrix3d& r_gt,
                      const Eigen::Vector3d& t_gt, bool signed_translation) {
    const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();
    require(r_est.allFinite() && (r_est.transpose() * r_est - I).norm() <= 1e-6,
            "pose_errors: estimated rotation is not orthonormal");
    require(r_gt.allFinite() && (r_gt.transpose() * r_gt - I).norm() <= 1e-6,
            "pose_errors: ground-truth rotation is not orthonormal");
    const double ne = t_est.norm(), ng = t_gt.norm();
    require(std::isfinite(ne) && std::isfinite(ng) && ne > 0.0 && ng > 0.0, "pose_errors: zero translation");
    const double c = std::clamp(((r_est.transpose() * r_gt).trace() - 1.0) / 2.0, -1.0, 1.0);
    double cos_t = t_est.dot(t_gt) / (ne * ng);
    cos_t = signed_translation ? std::clamp(cos_t, -1.0, 1.0) : std::clamp(std::abs(cos_t), 0.0, 1.0);
    return {std::acos(c) * kDegPerRad, std::acos(cos_t) * kDegPerRad};
}

double auc(std::span<const double> errors, double tau) {
    require(!errors.empty(), "auc: empty error list");
    require(tau > 0.0 && std::isfinite(tau), "auc: tau must be positive");
    std::vector<double> e(errors.begin(), errors.end());
    for (double& v : e) {
        require(std::isfinite(v), "auc: non-finite error");
        v = std::max(v, 0.0);
    }
    std::sort(e.begin(), e.end());
    const double n = static_cast<double>(e.size());

    // Vertices of recall(t): at each breakpoint b, recall jumps from
    // #{e < b}/n to #{e <= b}/n.
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    std::size_t below = 0;
    while (below < e.size() && e[below] <= 0.0) ++below;
    pts.push_back({0.0, static_cast<double>(below) / n});
    std::size_t i = below;
    while (i < e.size() && e[i] < tau) {
        const double b = e[i];
        pts.push_back({b, static_cast<double>(i) / n});
        while (i < e.size() && e[i] == b) ++i;
        pts.push_back({b, static_cast<double>(i) / n});
    }
    pts.push_back({tau, static_cast<double>(i) / n});

    double area = 0.0;
    for (std::size_t j = 1; j < pts.size(); ++j) {
        area += (pts[j].first - pts[j - 1].first) * (pts[j].second + pts[j - 1].second) / 2.0;
    }
    return area / tau;
}

MaaThresholds MaaThresholds::defaults() {
    MaaThresholds t;
    for (int i = 1; i <= 10; ++i) {
        t.rot_deg.push_back(static_cast<double>(i));
        t.trans.push_back(0.2 * static_cast<double>(i));
    }
    return t;
}

double maa(std::span<const double> rot_errors, std::span<const double> trans_errors,
           const MaaThresholds& thresholds) {
    require(thresholds.rot_deg.size() == thresholds.trans.size(), "maa: threshold lists differ in length");
    require(!thresholds.rot_deg.empty(), "maa: no thresholds");
    require(rot_errors.size() == trans_errors.size(), "maa: error lists differ in length");
    require(!rot_errors.empty(), "maa: no poses");
    double sum = 0.0;
    for (std::size_t t = 0; t < thresholds.rot_deg.size(); ++t) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < rot_errors.size(); ++i) {
            if (rot_errors[i] < thresholds.rot_deg[t] && trans_errors[i] < thresholds.trans[t]) ++ok;
        }
        sum += static_cast<double>(ok) / static_cast<double>(rot_errors.size());
    }
    return sum / static_cast<double>(thresholds.rot_deg.size());
}

}  // namespace roma
