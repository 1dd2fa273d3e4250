#include "roma/gp.hpp"

#include <cmath>
#include <random>

namespace roma {

double exp_cos_kernel(const Eigen::Ref<const Eigen::VectorXd>& f,
                      const Eigen::Ref<const Eigen::VectorXd>& g, double beta) {
    require(f.size() == g.size(), "exp_cos_kernel: dimension mismatch");
    const double nf = f.norm();
    const double ng = g.norm();
    require(nf > 0.0 && ng > 0.0, "exp_cos_kernel: zero-norm feature");
    return std::exp(beta * f.dot(g) / (nf * ng));
}

double exp_cos_kernel(std::span<const double> f, std::span<const double> g, double beta) {
    using Map = Eigen::Map<const Eigen::VectorXd>;
    return exp_cos_kernel(Map(f.data(), static_cast<Eigen::Index>(f.size())),
                          Map(g.data(), static_cast<Eigen::Index>(g.size())), beta);
}

namespace {

Eigen::MatrixXd unit_rows(const Eigen::MatrixXd& m) {
    Eigen::MatrixXd out = m;
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const double n = m.row(i).norm();
        require(n > 0.0, "GP: zero-norm feature row");
        out.row(i) /= n;
    }
    return out;
}

Eigen::MatrixXd exp_of_scaled(const Eigen::MatrixXd& cosines, double beta) {
    return (beta * cosines.array()).exp().matrix();
}

}  // namespace

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double beta) {
    require(a.cols() == b.cols(), "kernel_matrix: dimension mismatch");
    return exp_of_scaled(unit_rows(a) * unit_rows(b).transpose(), beta);
}

PreparedGp::PreparedGp(SupportSet support, KernelSpec spec)
    : support_(std::move(support)), spec_(spec) {
    require(spec_.beta > 0.0, "KernelSpec: beta must be positive");
    require(spec_.noise_variance >= 0.0, "KernelSpec: noise variance must be nonnegative");
    require(support_.features.rows() >= 1, "SupportSet: empty");
    require(support_.features.rows() == support_.embeddings.rows(),
            "SupportSet: feature and embedding row counts differ");
    unit_features_ = unit_rows(support_.features);

    Eigen::MatrixXd k = exp_of_scaled(unit_features_ * unit_features_.transpose(), spec_.beta);
    k.diagonal().array() += spec_.noise_variance;
    Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) {
        throw NumericalError(
            "GP: kernel matrix is not positive definite (duplicate support features with zero "
            "noise variance?)");
    }
    // Eigen's LLT only rejects exactly non-positive pivots; a pivot at rounding
    // level means the system is singular in practice.
    const Eigen::VectorXd pivots = llt.matrixLLT().diagonal();
    const double scale = std::sqrt(k.diagonal().maxCoeff());
    if (pivots.minCoeff() <= 1e-7 * scale) {
        throw NumericalError("GP: kernel matrix is numerically singular (ill-conditioned support)");
    }
    weights_ = llt.solve(support_.embeddings);
}

Eigen::MatrixXd PreparedGp::posterior_mean(const Eigen::MatrixXd& queries) const {
    require(queries.cols() == support_.features.cols(), "GP: query dimension mismatch");
    const Eigen::MatrixXd kq = exp_of_scaled(unit_rows(queries) * unit_features_.transpose(), spec_.beta);
    return kq * weights_;
}

Eigen::MatrixXd gp_posterior_mean(const Eigen::MatrixXd& queries, const SupportSet& support,
                                  const KernelSpec& spec) {
    return PreparedGp(support, spec).posterior_mean(queries);
}

CoordinateEmbedding CoordinateEmbedding::identity() { return {}; }

CoordinateEmbedding CoordinateEmbedding::fourier(std::size_t dim, std::uint64_t seed, double scale) {
    require(dim >= 2 && dim % 2 == 0, "fourier embedding: dimension must be even and >= 2");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Eigen::MatrixXd b(static_cast<Eigen::Index>(dim / 2), 2);
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
        b(i, 0) = normal(rng);
        b(i, 1) = normal(rng);
    }
    return fourier(std::move(b));
}

CoordinateEmbedding CoordinateEmbedding::fourier(Eigen::MatrixXd frequencies) {
    require(frequencies.cols() == 2 && frequencies.rows() >= 1,
            "fourier embedding: frequency matrix must be (D_e/2) x 2");
    CoordinateEmbedding e;
    e.frequencies_ = std::move(frequencies);
    return e;
}

std::size_t CoordinateEmbedding::dim() const {
    return frequencies_ ? static_cast<std::size_t>(2 * frequencies_->rows()) : 2;
}

Eigen::MatrixXd CoordinateEmbedding::embed(const Eigen::MatrixXd& coords) const {
    require(coords.cols() == 2, "embed_coords: coordinates must be M x 2");
    if (!frequencies_) return coords;
    const Eigen::MatrixXd phase = coords * frequencies_->transpose();
    Eigen::MatrixXd out(coords.rows(), 2 * phase.cols());
    out.leftCols(phase.cols()) = phase.array().sin().matrix();
    out.rightCols(phase.cols()) = phase.array().cos().matrix();
    return out;
}

Eigen::MatrixXd CoordinateEmbedding::decode(const Eigen::MatrixXd& embedded,
                                            const AnchorGrid& anchors) const {
    require(static_cast<std::size_t>(embedded.cols()) == dim(), "decode: embedding dimension mismatch");
    if (!frequencies_) return embedded;
    Eigen::MatrixXd centers(static_cast<Eigen::Index>(anchors.size()), 2);
    for (std::size_t k = 0; k < anchors.size(); ++k) {
        centers(static_cast<Eigen::Index>(k), 0) = anchors.anchor(k).x;
        centers(static_cast<Eigen::Index>(k), 1) = anchors.anchor(k).y;
    }
    const Eigen::MatrixXd table = embed(centers);
    Eigen::MatrixXd out(embedded.rows(), 2);
    for (Eigen::Index i = 0; i < embedded.rows(); ++i) {
        Eigen::Index best = 0;
        (table.rowwise() - embedded.row(i)).rowwise().squaredNorm().minCoeff(&best);
        out.row(i) = centers.row(best);
    }
    return out;
}

}  // namespace roma
