#pragma once

// Gaussian-process match encoder: kernel regression from source descriptors
// to embedded target coordinates with an exponential-cosine kernel.

#include <cstdint>
#include <optional>
#include <span>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "roma/anchors.hpp"

namespace roma {

struct KernelSpec {
    double beta = 10.0;            // inverse temperature
    double noise_variance = 1e-4;  // sigma^2 added to the kernel diagonal
};

struct SupportSet {
    Eigen::MatrixXd features;    // N x D_f, target-image descriptors
    Eigen::MatrixXd embeddings;  // N x D_e, embedded target coordinates
};

// exp(beta * <f, g> / (|f| |g|)). Errors on zero-norm input.
double exp_cos_kernel(std::span<const double> f, std::span<const double> g, double beta);
double exp_cos_kernel(const Eigen::Ref<const Eigen::VectorXd>& f,
                      const Eigen::Ref<const Eigen::VectorXd>& g, double beta);

// Rows of `a` against rows of `b`.
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double beta);

// Factorized (K_XX + sigma^2 I) for one support set; immutable and shareable.
class PreparedGp {
public:
    // Throws NumericalError when the Cholesky factorization hits a
    // non-positive pivot (e.g. duplicate support features with sigma^2 = 0).
    PreparedGp(SupportSet support, KernelSpec spec);

    // K_*X (K_XX + sigma^2 I)^{-1} E for each query row.
    Eigen::MatrixXd posterior_mean(const Eigen::MatrixXd& queries) const;

    const SupportSet& support() const { return support_; }
    const KernelSpec& spec() const { return spec_; }

private:
    SupportSet support_;
    KernelSpec spec_;
    Eigen::MatrixXd unit_features_;
    Eigen::MatrixXd weights_;  // (K_XX + sigma^2 I)^{-1} E
};

Eigen::MatrixXd gp_posterior_mean(const Eigen::MatrixXd& queries, const SupportSet& support,
                                  const KernelSpec& spec);

// Coordinate embedding. Identity keeps D_e = 2; Fourier maps x to
// [sin(B x), cos(B x)] with a fixed frequency matrix B (D_e/2 x 2).
class CoordinateEmbedding {
public:
    static CoordinateEmbedding identity();
    static CoordinateEmbedding fourier(std::size_t dim, std::uint64_t seed, double scale = 3.0);
    static CoordinateEmbedding fourier(Eigen::MatrixXd frequencies);

    bool is_identity() const { return !frequencies_.has_value(); }
    std::size_t dim() const;
    Eigen::MatrixXd embed(const Eigen::MatrixXd& coords) const;  // M x 2 -> M x D_e

    // Nearest embedded anchor center for each row (Euclidean in embedding
    // space). Identity mode returns the rows unchanged.
    Eigen::MatrixXd decode(const Eigen::MatrixXd& embedded, const AnchorGrid& anchors) const;

private:
    std::optional<Eigen::MatrixXd> frequencies_;
};

inline Eigen::MatrixXd embed_coords(const Eigen::MatrixXd& coords, const CoordinateEmbedding& mode) {
    return mode.embed(coords);
}

}  // namespace roma
