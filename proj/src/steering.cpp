#include "roma/steering.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include "roma/io.hpp"

namespace roma {

namespace {

constexpr std::string_view kDescMagic = "RMDESC1";
constexpr std::string_view kSteerMagic = "RMSTEER1";

void require_finite(const Eigen::MatrixXd& m, const std::string& what) {
    require(m.allFinite(), what + ": non-finite entries");
}

}  // namespace

DescriptorSet::DescriptorSet(std::vector<Vec2> c, Eigen::MatrixXd d) : coords(std::move(c)), descs(std::move(d)) {
    require(!coords.empty(), "DescriptorSet: need at least one keypoint");
    require(static_cast<std::size_t>(descs.rows()) == coords.size(), "DescriptorSet: coords and descs disagree on N");
    require(descs.cols() >= 1, "DescriptorSet: zero descriptor dimension");
    require(std::all_of(coords.begin(), coords.end(), [](Vec2 v) { return is_finite(v); }),
            "DescriptorSet: non-finite coordinate");
    require_finite(descs, "DescriptorSet");
}

SteeringMatrix::SteeringMatrix(Eigen::MatrixXd m) : w(std::move(m)) {
    require(w.rows() == w.cols() && w.rows() >= 1, "SteeringMatrix: must be square and nonempty");
    require_finite(w, "SteeringMatrix");
}

Eigen::MatrixXd SteeringMatrix::power(int k) const {
    require(k >= 0, "SteeringMatrix::power: negative exponent");
    Eigen::MatrixXd p = Eigen::MatrixXd::Identity(w.rows(), w.cols());
    for (int i = 0; i < k; ++i) p = p * w;
    return p;
}

RotationAction RotationAction::quarter_turns(int k, Vec2 center) {
    return {((k % 4) + 4) % 4, center};
}

std::vector<Vec2> rotate_keypoints(const std::vector<Vec2>& coords, const RotationAction& action) {
    require(action.k >= 0 && action.k < 4, "rotate_keypoints: k must be in [0, 4)");
    std::vector<Vec2> out;
    out.reserve(coords.size());
    for (Vec2 x : coords) {
        Vec2 d = x - action.center;
        for (int i = 0; i < action.k; ++i) d = {-d.y, d.x};
        out.push_back(action.center + d);
    }
    return out;
}

SteeringMatrix default_steering_truth(std::size_t dim, std::uint64_t seed) {
    require(dim >= 2 && dim % 2 == 0, "default_steering_truth: dimension must be even");
    // cos and sin of pi/2, pi, 3pi/2, written exactly.
    constexpr std::array<std::array<double, 2>, 3> cs{{{0.0, 1.0}, {-1.0, 0.0}, {0.0, -1.0}}};
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pick(0, 2);
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(dim); b += 2) {
        const auto [c, s] = cs[static_cast<std::size_t>(pick(rng))];
        w(b, b) = c;
        w(b, b + 1) = -s;
        w(b + 1, b) = s;
        w(b + 1, b + 1) = c;
    }
    return SteeringMatrix(std::move(w));
}

std::array<DescriptorSet, 4> synth_equivariant(std::size_t n, std::size_t dim, const SteeringMatrix& w_true,
                                               const NoiseSpec& noise, std::uint64_t seed) {
    require(n >= 1, "synth_equivariant: need at least one keypoint");
    require(w_true.dim() == dim, "synth_equivariant: steering matrix dimension mismatch");
    require(noise.sigma >= 0.0, "synth_equivariant: noise sigma must be nonnegative");
    require(noise.outlier_fraction >= 0.0 && noise.outlier_fraction <= 1.0,
            "synth_equivariant: outlier fraction must be in [0, 1]");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> coord(-1.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const auto N = static_cast<Eigen::Index>(n);
    const auto D = static_cast<Eigen::Index>(dim);
    std::vector<Vec2> coords(n);
    for (auto& c : coords) c = {coord(rng), coord(rng)};
    Eigen::MatrixXd base(N, D);
    for (Eigen::Index i = 0; i < N; ++i) {
        for (Eigen::Index j = 0; j < D; ++j) base(i, j) = normal(rng);
        base.row(i).normalize();
    }

    auto noise_sample = [&]() {
        if (noise.outlier_fraction > 0.0 && unit(rng) < noise.outlier_fraction) {
            return noise.outlier_scale * (2.0 * unit(rng) - 1.0);
        }
        if (noise.sigma == 0.0) return 0.0;
        if (noise.kind == NoiseKind::gaussian) return noise.sigma * normal(rng);
        // Laplace with standard deviation sigma.
        const double u = unit(rng) - 0.5;
        const double b = noise.sigma / std::sqrt(2.0);
        return -b * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
    };

    std::array<DescriptorSet, 4> out;
    Eigen::MatrixXd clean = base;
    for (int k = 0; k < 4; ++k) {
        if (k > 0) clean = clean * w_true.w.transpose();
        Eigen::MatrixXd noisy = clean;
        if (k > 0) {
            for (Eigen::Index i = 0; i < N; ++i) {
                for (Eigen::Index j = 0; j < D; ++j) noisy(i, j) += noise_sample();
            }
        }
        out[static_cast<std::size_t>(k)] =
            DescriptorSet(rotate_keypoints(coords, RotationAction::quarter_turns(k)), std::move(noisy));
    }
    return out;
}

LsqFit fit_steering_lsq(const DescriptorSet& base, const DescriptorSet& rotated, double ridge) {
    require(base.size() == rotated.size(), "fit_steering_lsq: sets differ in size");
    require(base.dim() == rotated.dim(), "fit_steering_lsq: sets differ in dimension");
    require(ridge >= 0.0, "fit_steering_lsq: ridge must be nonnegative");
    const Eigen::MatrixXd& G = base.descs;
    const Eigen::MatrixXd& R = rotated.descs;
    const auto D = G.cols();
    Eigen::MatrixXd gram = G.transpose() * G;
    const Eigen::MatrixXd rhs = G.transpose() * R;
    Eigen::MatrixXd wt;
    if (ridge > 0.0) {
        gram.diagonal().array() += ridge;
        Eigen::LLT<Eigen::MatrixXd> llt(gram);
        if (llt.info() != Eigen::Success) throw NumericalError("fit_steering_lsq: normal equations not positive definite");
        wt = llt.solve(rhs);
    } else {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(G);
        if (qr.rank() < D) {
            throw NumericalError("fit_steering_lsq: descriptors are rank deficient (rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(D) + ")");
        }
        wt = qr.solve(R);
    }
    LsqFit fit{SteeringMatrix(wt.transpose()), 0.0};
    const Eigen::MatrixXd res = R - G * wt;
    fit.residual = std::sqrt(res.squaredNorm() / static_cast<double>(res.size()));
    return fit;
}

double steering_l1_loss(const SteeringMatrix& w, const std::map<int, SteeringPair>& sets) {
    require(!sets.empty(), "steering_l1_loss: no sets");
    double total = 0.0;
    for (const auto& [k, pair] : sets) {
        const Eigen::MatrixXd res = pair.rotated->descs - pair.base->descs * w.power(k).transpose();
        total += res.cwiseAbs().sum() / static_cast<double>(res.size());
    }
    return total / static_cast<double>(sets.size());
}

namespace {

// Subgradient of the mean absolute residual of the k-term with respect to W,
// through the product rule on W^k.
Eigen::MatrixXd l1_subgradient(const Eigen::MatrixXd& w, int k, const SteeringPair& pair) {
    std::vector<Eigen::MatrixXd> pows{Eigen::MatrixXd::Identity(w.rows(), w.cols())};
    for (int i = 1; i <= k; ++i) pows.push_back(pows.back() * w);
    const Eigen::MatrixXd res = pair.rotated->descs - pair.base->descs * pows[static_cast<std::size_t>(k)].transpose();
    const Eigen::MatrixXd sign = res.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    const Eigen::MatrixXd upstream = -(sign.transpose() * pair.base->descs) / static_cast<double>(res.size());
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    for (int i = 0; i < k; ++i) {
        g += pows[static_cast<std::size_t>(i)].transpose() * upstream *
             pows[static_cast<std::size_t>(k - 1 - i)].transpose();
    }
    return g;
}

}  // namespace

L1Fit fit_steering_l1(const std::map<int, SteeringPair>& sets, const L1Options& opt) {
    require(!sets.empty(), "fit_steering_l1: no sets");
    require(opt.step > 0.0 && opt.patience >= 1, "fit_steering_l1: step and patience must be positive");
    std::size_t dim = 0;
    for (const auto& [k, pair] : sets) {
        require(k >= 1 && k <= 3, "fit_steering_l1: k must be in {1, 2, 3}");
        require(pair.base && pair.rotated, "fit_steering_l1: null set");
        require(pair.base->size() == pair.rotated->size() && pair.base->dim() == pair.rotated->dim(),
                "fit_steering_l1: paired sets disagree in shape");
        require(dim == 0 || pair.base->dim() == dim, "fit_steering_l1: sets disagree in dimension");
        dim = pair.base->dim();
    }
    const auto D = static_cast<Eigen::Index>(dim);
    std::mt19937_64 rng(opt.seed);

    SteeringMatrix w;
    switch (opt.init) {
    case L1Init::lsq: {
        const auto it = sets.find(1);
        require(it != sets.end(), "fit_steering_l1: lsq initialization needs k = 1 data");
        w = fit_steering_lsq(*it->second.base, *it->second.rotated).w;
        break;
    }
    case L1Init::random: {
        std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
        Eigen::MatrixXd m(D, D);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
        w = SteeringMatrix(std::move(m));
        break;
    }
    case L1Init::given:
        require(opt.init_matrix.has_value() && opt.init_matrix->dim() == dim,
                "fit_steering_l1: given initialization missing or wrong dimension");
        w = *opt.init_matrix;
        break;
    }

    std::vector<int> ks;
    for (const auto& [k, pair] : sets) ks.push_back(k);
    std::uniform_int_distribution<std::size_t> draw(0, ks.size() - 1);

    L1Fit fit{w, steering_l1_loss(w, sets), 0.0, 0};
    fit.final_loss = fit.initial_loss;
    Eigen::MatrixXd cur = w.w;
    double step = opt.step;
    std::size_t since_best = 0;
    for (std::size_t it = 0; it < opt.iters && fit.final_loss > 0.0; ++it) {
        const int k = ks[draw(rng)];
        const Eigen::MatrixXd g = l1_subgradient(cur, k, sets.at(k));
        const double gn = g.norm();
        fit.iterations = it + 1;
        if (gn > 0.0) cur -= (step / gn) * g;
        const double loss = steering_l1_loss(SteeringMatrix(cur), sets);
        if (!std::isfinite(loss) || loss > 1e6 * std::max(fit.initial_loss, 1e-300)) {
            throw NumericalError("fit_steering_l1: diverged at step size " + format_double(step));
        }
        if (loss < fit.final_loss) {
            fit.final_loss = loss;
            fit.w = SteeringMatrix(cur);
            since_best = 0;
        } else if (++since_best >= opt.patience) {
            step *= 0.5;
            cur = fit.w.w;
            since_best = 0;
        }
    }
    return fit;
}

Eigen::MatrixXd apply_steering(const SteeringMatrix& w, int k, const Eigen::MatrixXd& descs) {
    require(k >= 0 && k <= 3, "apply_steering: k must be in {0, 1, 2, 3}");
    require(static_cast<std::size_t>(descs.cols()) == w.dim(), "apply_steering: dimension mismatch");
    return descs * w.power(k).transpose();
}

std::vector<DescriptorMatch> mutual_nn_match(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    require(a.rows() >= 1 && b.rows() >= 1, "mutual_nn_match: empty descriptor set");
    require(a.cols() == b.cols(), "mutual_nn_match: dimension mismatch");
    auto normalized = [](const Eigen::MatrixXd& m) {
        const Eigen::VectorXd n = m.rowwise().norm();
        require((n.array() > 0.0).all(), "mutual_nn_match: zero-norm descriptor");
        return Eigen::MatrixXd(n.cwiseInverse().asDiagonal() * m);
    };
    const Eigen::MatrixXd sim = normalized(a) * normalized(b).transpose();
    std::vector<Eigen::Index> best_b(static_cast<std::size_t>(sim.rows()));
    std::vector<Eigen::Index> best_a(static_cast<std::size_t>(sim.cols()));
    for (Eigen::Index i = 0; i < sim.rows(); ++i) sim.row(i).maxCoeff(&best_b[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < sim.cols(); ++j) sim.col(j).maxCoeff(&best_a[static_cast<std::size_t>(j)]);
    std::vector<DescriptorMatch> out;
    for (Eigen::Index i = 0; i < sim.rows(); ++i) {
        const Eigen::Index j = best_b[static_cast<std::size_t>(i)];
        if (best_a[static_cast<std::size_t>(j)] == i) {
            out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j), sim(i, j)});
        }
    }
    return out;
}

std::vector<DescriptorMatch> mutual_nn_match(const DescriptorSet& a, const DescriptorSet& b) {
    return mutual_nn_match(a.descs, b.descs);
}

CorrespondenceSet to_correspondences(const std::vector<DescriptorMatch>& m, const DescriptorSet& a,
                                     const DescriptorSet& b) {
    std::vector<Correspondence> pairs;
    pairs.reserve(m.size());
    for (const auto& x : m) {
        require(x.a < a.size() && x.b < b.size(), "to_correspondences: index out of range");
        pairs.push_back({a.coords[x.a], b.coords[x.b], std::max(x.similarity, 0.0)});
    }
    return CorrespondenceSet(std::move(pairs));
}

MatchingAccuracy rotation_matching_eval(const DescriptorSet& base, const DescriptorSet& rotated,
                                        const SteeringMatrix& w, int k) {
    require(base.size() == rotated.size(), "rotation_matching_eval: sets differ in size");
    auto accuracy = [&](const Eigen::MatrixXd& a) {
        const auto m = mutual_nn_match(a, rotated.descs);
        if (m.empty()) return 0.0;
        const auto hits = std::count_if(m.begin(), m.end(), [](const DescriptorMatch& x) { return x.a == x.b; });
        return static_cast<double>(hits) / static_cast<double>(m.size());
    };
    return {accuracy(base.descs), accuracy(apply_steering(w, k, base.descs))};
}

void write_descriptors(std::ostream& os, const DescriptorSet& d) {
    binary::write_magic(os, kDescMagic);
    binary::write_u32(os, static_cast<std::uint32_t>(d.size()));
    binary::write_u32(os, static_cast<std::uint32_t>(d.dim()));
    for (std::size_t i = 0; i < d.size(); ++i) {
        binary::write_f32(os, static_cast<float>(d.coords[i].x));
        binary::write_f32(os, static_cast<float>(d.coords[i].y));
        for (Eigen::Index j = 0; j < d.descs.cols(); ++j) {
            binary::write_f32(os, static_cast<float>(d.descs(static_cast<Eigen::Index>(i), j)));
        }
    }
    if (!os) throw Error("write_descriptors: stream error");
}

DescriptorSet read_descriptors(std::istream& is) {
    binary::expect_magic(is, kDescMagic);
    const std::uint32_t n = binary::read_u32(is);
    const std::uint32_t dim = binary::read_u32(is);
    if (n == 0 || dim == 0) throw FormatError("RMDESC1: empty descriptor set");
    if (static_cast<std::uint64_t>(n) * (dim + 2u) > (1ull << 30)) throw FormatError("RMDESC1: implausible size");
    std::vector<Vec2> coords(n);
    Eigen::MatrixXd descs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    for (std::uint32_t i = 0; i < n; ++i) {
        coords[i].x = binary::read_f32(is);
        coords[i].y = binary::read_f32(is);
        for (std::uint32_t j = 0; j < dim; ++j) descs(i, j) = binary::read_f32(is);
    }
    try {
        return DescriptorSet(std::move(coords), std::move(descs));
    } catch (const Error& e) {
        throw FormatError(std::string("RMDESC1: ") + e.what());
    }
}

void write_descriptors(const std::filesystem::path& p, const DescriptorSet& d) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + p.string() + " for writing");
    write_descriptors(os, d);
}

DescriptorSet read_descriptors(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error("cannot open " + p.string());
    return read_descriptors(is);
}

void write_steering(std::ostream& os, const SteeringMatrix& w) {
    binary::write_magic(os, kSteerMagic);
    binary::write_u32(os, static_cast<std::uint32_t>(w.dim()));
    for (Eigen::Index i = 0; i < w.w.rows(); ++i) {
        for (Eigen::Index j = 0; j < w.w.cols(); ++j) binary::write_f32(os, static_cast<float>(w.w(i, j)));
    }
    if (!os) throw Error("write_steering: stream error");
}

SteeringMatrix read_steering(std::istream& is) {
    binary::expect_magic(is, kSteerMagic);
    const std::uint32_t dim = binary::read_u32(is);
    if (dim == 0 || dim > 16384) throw FormatError("RMSTEER1: implausible dimension");
    Eigen::MatrixXd w(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
    for (std::uint32_t i = 0; i < dim; ++i) {
        for (std::uint32_t j = 0; j < dim; ++j) w(i, j) = binary::read_f32(is);
    }
    if (!w.allFinite()) throw FormatError("RMSTEER1: non-finite entries");
    return SteeringMatrix(std::move(w));
}

void write_steering(const std::filesystem::path& p, const SteeringMatrix& w) {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open " + p.string() + " for writing");
    write_steering(os, w);
}

SteeringMatrix read_steering(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error("cannot open " + p.string());
    return read_steering(is);
}

}  // namespace roma
