#pragma once

// Descriptor steering under quarter-turn rotations: descriptions of a rotated
// input are modelled as W^k times the original descriptions.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "roma/grid.hpp"

namespace roma {

struct DescriptorSet {
    std::vector<Vec2> coords;
    Eigen::MatrixXd descs;  // N x D, one description per row

    DescriptorSet() = default;
    DescriptorSet(std::vector<Vec2> coords, Eigen::MatrixXd descs);
    std::size_t size() const { return coords.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(descs.cols()); }
};

struct SteeringMatrix {
    Eigen::MatrixXd w;

    SteeringMatrix() = default;
    explicit SteeringMatrix(Eigen::MatrixXd m);
    std::size_t dim() const { return static_cast<std::size_t>(w.rows()); }
    Eigen::MatrixXd power(int k) const;  // repeated multiplication, k >= 0
};

struct RotationAction {
    int k = 0;  // quarter turns, normalized to [0, 4)
    Vec2 center{};

    static RotationAction quarter_turns(int k, Vec2 center = {});
};

// x -> center + R^k (x - center), R(u, v) = (-v, u).
std::vector<Vec2> rotate_keypoints(const std::vector<Vec2>& coords, const RotationAction& action);

// Block-diagonal 2x2 rotations with angles drawn from {pi/2, pi, 3pi/2}, so
// no block acts as the identity and W^4 = I exactly.
SteeringMatrix default_steering_truth(std::size_t dim, std::uint64_t seed);

enum class NoiseKind { gaussian, laplace };

struct NoiseSpec {
    double sigma = 0.0;
    NoiseKind kind = NoiseKind::gaussian;
    double outlier_fraction = 0.0;  // elements replaced by gross errors
    double outlier_scale = 0.5;     // gross errors ~ uniform(-scale, scale)
};

// Element k holds the k-quarter-turn set. Base descriptors are unit-normalized
// Gaussian vectors; set_k = W set_{k-1} before noise.
std::array<DescriptorSet, 4> synth_equivariant(std::size_t n, std::size_t dim, const SteeringMatrix& w_true,
                                               const NoiseSpec& noise, std::uint64_t seed);

struct LsqFit {
    SteeringMatrix w;
    double residual = 0.0;  // RMS per element
};

// Minimizes sum ||rotated_n - W base_n||^2 with a ridge term. ridge = 0 errors
// on rank deficiency.
LsqFit fit_steering_lsq(const DescriptorSet& base, const DescriptorSet& rotated, double ridge = 1e-8);

struct SteeringPair {
    const DescriptorSet* base = nullptr;
    const DescriptorSet* rotated = nullptr;
};

enum class L1Init { lsq, random, given };

struct L1Options {
    std::size_t iters = 2000;
    double step = 0.05;
    std::size_t patience = 50;
    L1Init init = L1Init::lsq;
    std::optional<SteeringMatrix> init_matrix;  // for L1Init::given
    std::uint64_t seed = 0;                     // k draws and random init
};

struct L1Fit {
    SteeringMatrix w;
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::size_t iterations = 0;
};

// Mean absolute residual per element, averaged over the supplied k.
double steering_l1_loss(const SteeringMatrix& w, const std::map<int, SteeringPair>& sets);

// Subgradient descent with k drawn per iteration from the supplied sets,
// normalized steps, and step halving after `patience` iterations without
// improvement. Returns the best iterate.
L1Fit fit_steering_l1(const std::map<int, SteeringPair>& sets, const L1Options& opt = {});

// Rows of the result are W^k applied to each description.
Eigen::MatrixXd apply_steering(const SteeringMatrix& w, int k, const Eigen::MatrixXd& descs);

struct DescriptorMatch {
    std::size_t a = 0;
    std::size_t b = 0;
    double similarity = 0.0;
};

// Cosine-similarity mutual nearest neighbours; ties resolve to the lower index.
std::vector<DescriptorMatch> mutual_nn_match(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
std::vector<DescriptorMatch> mutual_nn_match(const DescriptorSet& a, const DescriptorSet& b);

// Weights are the similarities clamped at zero.
CorrespondenceSet to_correspondences(const std::vector<DescriptorMatch>& m, const DescriptorSet& a,
                                     const DescriptorSet& b);

struct MatchingAccuracy {
    double without = 0.0;
    double with = 0.0;
};

// Row n of `rotated` corresponds to row n of `base`. Accuracy is the
// fraction of mutual matches pairing equal indices (0 without matches).
MatchingAccuracy rotation_matching_eval(const DescriptorSet& base, const DescriptorSet& rotated,
                                        const SteeringMatrix& w, int k);

void write_descriptors(std::ostream& os, const DescriptorSet& d);
DescriptorSet read_descriptors(std::istream& is);
void write_descriptors(const std::filesystem::path& p, const DescriptorSet& d);
DescriptorSet read_descriptors(const std::filesystem::path& p);

void write_steering(std::ostream& os, const SteeringMatrix& w);
SteeringMatrix read_steering(std::istream& is);
void write_steering(const std::filesystem::path& p, const SteeringMatrix& w);
SteeringMatrix read_steering(const std::filesystem::path& p);

}  // namespace roma
