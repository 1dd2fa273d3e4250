#include "roma/cascade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace roma {

std::vector<RefinerSpec> default_refiners() {
    return {{14, 15}, {8, 7}, {4, 5}, {2, 0}, {1, 0}};
}

const PyramidLevel& FeaturePyramid::level(int stride) const {
    const auto it = levels.find(stride);
    if (it == levels.end()) throw Error("FeaturePyramid: no level at stride " + std::to_string(stride));
    return it->second;
}

FeaturePyramid pool_pyramid(const GridSpec& base, const Eigen::MatrixXd& base_features,
                            std::span<const int> strides) {
    require(static_cast<std::size_t>(base_features.rows()) == base.cells(),
            "pool_pyramid: feature rows do not match base grid");
    FeaturePyramid pyr{base, {}};
    for (int stride : strides) {
        require(stride >= 1, "pool_pyramid: stride must be positive");
        const auto s = static_cast<std::size_t>(stride);
        require(base.height() % s == 0 && base.width() % s == 0,
                "pool_pyramid: base resolution not divisible by stride " + std::to_string(stride));
        const GridSpec g(base.height() / s, base.width() / s);
        Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g.cells()), base_features.cols());
        for (std::size_t r = 0; r < base.height(); ++r) {
            for (std::size_t c = 0; c < base.width(); ++c) {
                f.row(static_cast<Eigen::Index>(g.flat({r / s, c / s}))) +=
                    base_features.row(static_cast<Eigen::Index>(base.flat({r, c})));
            }
        }
        f /= static_cast<double>(s * s);
        pyr.levels.emplace(stride, PyramidLevel{g, std::move(f)});
    }
    return pyr;
}

FeatureField::FeatureField(const FeatureFieldSpec& spec, std::uint64_t seed) : dim_(spec.dim) {
    require(spec.dim >= 2, "FeatureField: need at least two channels");
    require(spec.wavelength_min > 0.0 && spec.wavelength_max >= spec.wavelength_min,
            "FeatureField: invalid wavelength range");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto m = static_cast<Eigen::Index>(dim_ / 2);
    freq_x_.resize(m);
    freq_y_.resize(m);
    phase_.resize(m);
    const double log_lo = std::log(spec.wavelength_min);
    const double log_hi = std::log(spec.wavelength_max);
    for (Eigen::Index j = 0; j < m; ++j) {
        const double wavelength = std::exp(log_lo + unit(rng) * (log_hi - log_lo));
        const double angle = 2.0 * std::numbers::pi * unit(rng);
        const double k = 2.0 * std::numbers::pi / wavelength;
        freq_x_(j) = k * std::cos(angle);
        freq_y_(j) = k * std::sin(angle);
        phase_(j) = 2.0 * std::numbers::pi * unit(rng);
    }
    amplitude_ = 1.0 / std::sqrt(static_cast<double>(m));
}

Eigen::VectorXd FeatureField::operator()(Vec2 y) const {
    const Eigen::ArrayXd arg = freq_x_ * y.x + freq_y_ * y.y + phase_;
    Eigen::VectorXd f(static_cast<Eigen::Index>(dim_));
    for (Eigen::Index j = 0; j < arg.size(); ++j) {
        f(2 * j) = amplitude_ * std::cos(arg(j));
        f(2 * j + 1) = amplitude_ * std::sin(arg(j));
    }
    if (dim_ % 2 == 1) f(f.size() - 1) = amplitude_;
    return f;
}

SyntheticPyramids synth_pyramid(const SceneSpec& scene, const GridSpec& base, std::size_t dim,
                                std::uint64_t seed, FeatureFieldSpec field) {
    require(dim >= 4, "synth_pyramid: feature dimension must be >= 4");
    field.dim = dim;
    const FeatureField f(field, seed);
    const auto n = static_cast<Eigen::Index>(base.cells());
    const auto d = static_cast<Eigen::Index>(dim);
    Eigen::MatrixXd src(n, d), tgt(n, d);
    for (std::size_t i = 0; i < base.cells(); ++i) {
        const Vec2 x = base.center(i);
        tgt.row(static_cast<Eigen::Index>(i)) = f(x).transpose();
        src.row(static_cast<Eigen::Index>(i)) = f(scene.warp(x)).transpose();
    }
    return {pool_pyramid(base, src, kRefinerStrides), pool_pyramid(base, tgt, kRefinerStrides)};
}

namespace {

long containing_index(double v, std::size_t n) {
    return static_cast<long>(std::floor((v + 1.0) * static_cast<double>(n) / 2.0));
}

double axis_center(long i, std::size_t n) {
    return -1.0 + (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(n);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double logit(double p) {
    const double q = std::clamp(p, 1e-6, 1.0 - 1e-6);
    return std::log(q / (1.0 - q));
}

WarpField warp_with_logits(const GridSpec& g, std::vector<Vec2> coords, const std::vector<double>& logits) {
    std::vector<double> cert(logits.size());
    std::transform(logits.begin(), logits.end(), cert.begin(), sigmoid);
    return {g, std::move(coords), std::move(cert)};
}

}  // namespace

std::vector<double> local_correlation(const Eigen::VectorXd& fa, const PyramidLevel& target,
                                      Vec2 center, int window) {
    require(window >= 1 && window % 2 == 1, "local_correlation: window must be odd and >= 1");
    require(is_finite(center), "local_correlation: non-finite center");
    const double na = fa.norm();
    require(na > 0.0, "local_correlation: zero-norm source feature");
    const auto& g = target.grid;
    const long r0 = containing_index(center.y, g.height());
    const long c0 = containing_index(center.x, g.width());
    const long half = window / 2;
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(window * window));
    for (long dr = -half; dr <= half; ++dr) {
        for (long dc = -half; dc <= half; ++dc) {
            const long r = r0 + dr, c = c0 + dc;
            if (r < 0 || c < 0 || r >= static_cast<long>(g.height()) || c >= static_cast<long>(g.width())) {
                out.push_back(-1.0);
                continue;
            }
            const auto fb = target.features.row(static_cast<Eigen::Index>(g.flat(
                {static_cast<std::size_t>(r), static_cast<std::size_t>(c)})));
            const double nb = fb.norm();
            require(nb > 0.0, "local_correlation: zero-norm target feature");
            out.push_back(fb.dot(fa) / (na * nb));
        }
    }
    return out;
}

RefinerState state_from_warp(const WarpField& w) {
    std::vector<double> logits(w.certainty().size());
    std::transform(w.certainty().begin(), w.certainty().end(), logits.begin(), logit);
    return {w, std::move(logits)};
}

namespace {

// Like bilinear_stencil, but beyond the outermost cell centers the nearest
// pair of cells is extrapolated linearly instead of clamped, so affine warps
// are reproduced on the whole extent.
BilinearStencil extrapolating_stencil(const GridSpec& g, Vec2 x) {
    auto axis = [](double v, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
        if (n == 1) {
            i0 = i1 = 0;
            t = 0.0;
            return;
        }
        const double u = (v + 1.0) * static_cast<double>(n) / 2.0 - 0.5;
        i0 = static_cast<std::size_t>(std::clamp(std::floor(u), 0.0, static_cast<double>(n - 2)));
        i1 = i0 + 1;
        t = u - static_cast<double>(i0);
    };
    std::size_t c0, c1, r0, r1;
    double tx, ty;
    axis(x.x, g.width(), c0, c1, tx);
    axis(x.y, g.height(), r0, r1, ty);
    BilinearStencil s;
    s.cells = {g.flat({r0, c0}), g.flat({r0, c1}), g.flat({r1, c0}), g.flat({r1, c1})};
    s.weights = {(1 - tx) * (1 - ty), tx * (1 - ty), (1 - tx) * ty, tx * ty};
    return s;
}

}  // namespace

RefinerState upsample_state(const RefinerState& s, const GridSpec& to) {
    const auto& from = s.warp.grid();
    std::vector<Vec2> coords(to.cells());
    std::vector<double> logits(to.cells());
    for (std::size_t i = 0; i < to.cells(); ++i) {
        const auto st = extrapolating_stencil(from, to.center(i));
        Vec2 t{};
        double z = 0.0;
        for (std::size_t q = 0; q < 4; ++q) {
            t = t + st.weights[q] * s.warp.target_coords()[st.cells[q]];
            z += st.weights[q] * s.logits[st.cells[q]];
        }
        coords[i] = t;
        logits[i] = z;
    }
    return {warp_with_logits(to, std::move(coords), logits), std::move(logits)};
}

RefinerState analytic_refiner(const RefinerState& state, const FeaturePyramid& source,
                              const FeaturePyramid& target, const RefinerSpec& spec, double temperature) {
    require(temperature > 0.0, "analytic_refiner: temperature must be positive");
    require(spec.corr_window == 0 || spec.corr_window % 2 == 1, "analytic_refiner: window must be odd or 0");
    const auto& src_level = source.level(spec.stride);
    const auto& tgt_level = target.level(spec.stride);
    const auto& g = src_level.grid;
    if (!(state.warp.grid() == g)) {
        throw Error("analytic_refiner: state is not on the stride-" + std::to_string(spec.stride) + " grid");
    }
    if (spec.corr_window == 0) return state;

    const auto& tg = tgt_level.grid;
    const long half = spec.corr_window / 2;
    std::vector<Vec2> coords(g.cells());
    std::vector<double> logits(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) {
        const Vec2 center = state.warp.target_coords()[i];
        const Eigen::VectorXd fa = src_level.features.row(static_cast<Eigen::Index>(i)).transpose();
        const auto corr = local_correlation(fa, tgt_level, center, spec.corr_window);
        const auto best = static_cast<long>(std::max_element(corr.begin(), corr.end()) - corr.begin());
        const double peak = corr[static_cast<std::size_t>(best)];
        const long r0 = containing_index(center.y, tg.height());
        const long c0 = containing_index(center.x, tg.width());
        // Softargmax over the largest box centered on the peak that stays
        // inside both the window and the grid, so truncation cannot bias it.
        const long pr = best / spec.corr_window - half, pc = best % spec.corr_window - half;
        const long ry = std::min({half - std::abs(pr), r0 + pr, static_cast<long>(tg.height()) - 1 - (r0 + pr)});
        const long rx = std::min({half - std::abs(pc), c0 + pc, static_cast<long>(tg.width()) - 1 - (c0 + pc)});
        Vec2 acc{};
        double mass = 0.0;
        for (long dr = pr - std::max(ry, 0L); dr <= pr + std::max(ry, 0L); ++dr) {
            for (long dc = pc - std::max(rx, 0L); dc <= pc + std::max(rx, 0L); ++dc) {
                const auto j = static_cast<std::size_t>((dr + half) * spec.corr_window + (dc + half));
                const double w = std::exp((corr[j] - peak) / temperature);
                acc = acc + w * Vec2{axis_center(c0 + dc, tg.width()), axis_center(r0 + dr, tg.height())};
                mass += w;
            }
        }
        coords[i] = (1.0 / mass) * acc;
        logits[i] = state.logits[i] + peak;
    }
    return {warp_with_logits(g, std::move(coords), logits), std::move(logits)};
}

CascadeResult run_cascade(const FeaturePyramid& source, const FeaturePyramid& target,
                          const WarpField& coarse_warp, const CascadeConfig& cfg) {
    require(!cfg.refiners.empty(), "run_cascade: no refiners configured");
    if (!(coarse_warp.grid() == source.level(cfg.refiners.front().stride).grid)) {
        throw Error("run_cascade: coarse warp is not on the stride-" + std::to_string(cfg.refiners.front().stride) +
                    " grid");
    }
    require(source.base == target.base, "run_cascade: source and target pyramids differ in resolution");
    RefinerState state = state_from_warp(coarse_warp);
    CascadeResult out{state, {}};
    for (const auto& spec : cfg.refiners) {
        const auto& g = source.level(spec.stride).grid;
        if (!(state.warp.grid() == g)) state = upsample_state(state, g);
        state = analytic_refiner(state, source, target, spec, cfg.temperature);
        out.stages.push_back({spec, state});
    }
    return out;
}

double warp_epe(const WarpField& w, const SceneSpec& scene, double unit) {
    require(unit > 0.0, "warp_epe: unit must be positive");
    const auto& g = w.grid();
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < g.cells(); ++i) {
        const Vec2 truth = scene.warp(g.center(i));
        if (!in_extent(truth)) continue;
        sum += norm(w.target_coords()[i] - truth);
        ++n;
    }
    require(n > 0, "warp_epe: no cell has its true target inside the extent");
    return sum / static_cast<double>(n) / unit;
}

std::vector<double> cascade_stage_epe(const CascadeResult& r, const SceneSpec& scene, const GridSpec& base) {
    const double unit = base.cell_width();
    auto full_res_epe = [&](RefinerState s, std::size_t next_stage) {
        for (std::size_t j = next_stage; j < r.stages.size(); ++j) {
            const auto st = static_cast<std::size_t>(r.stages[j].spec.stride);
            require(base.height() % st == 0 && base.width() % st == 0,
                    "cascade_stage_epe: base resolution not divisible by stride");
            const GridSpec g(base.height() / st, base.width() / st);
            if (!(s.warp.grid() == g)) s = upsample_state(s, g);
        }
        if (!(s.warp.grid() == base)) s = upsample_state(s, base);
        return warp_epe(s.warp, scene, unit);
    };
    std::vector<double> out{full_res_epe(r.input, 0)};
    for (std::size_t i = 0; i < r.stages.size(); ++i) out.push_back(full_res_epe(r.stages[i].state, i + 1));
    return out;
}

Affine2 random_motion(std::uint64_t seed, bool affine, const RandomSceneOptions& opt) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    if (!affine) return Affine2::translation({opt.max_translation * u(rng), opt.max_translation * u(rng)});
    const double th = opt.max_rotation * u(rng);
    const double sc = 1.0 + opt.max_scale * u(rng);
    const Vec2 t{opt.affine_translation * u(rng), opt.affine_translation * u(rng)};
    return {sc * std::cos(th), -sc * std::sin(th), sc * std::sin(th), sc * std::cos(th), t};
}

WarpField perturbed_warp(const SceneSpec& scene, const GridSpec& grid, double max_offset_cells,
                         std::uint64_t seed, double certainty) {
    require(max_offset_cells >= 0.0, "perturbed_warp: offset must be nonnegative");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec2> coords(grid.cells());
    for (std::size_t i = 0; i < grid.cells(); ++i) {
        const double dx = max_offset_cells * grid.cell_width() * u(rng);
        const double dy = max_offset_cells * grid.cell_height() * u(rng);
        coords[i] = scene.warp(grid.center(i)) + Vec2{dx, dy};
    }
    return {grid, std::move(coords), std::vector<double>(grid.cells(), certainty)};
}

}  // namespace roma
