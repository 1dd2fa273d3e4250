#include "roma/scale_space.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>

namespace roma {

std::size_t SceneSpec::region_of(Vec2 x) const {
    std::size_t found = regions.size();
    for (std::size_t r = 0; r < regions.size(); ++r) {
        if (!regions[r].contains(x)) continue;
        require(found == regions.size(), "SceneSpec: overlapping regions");
        found = r;
    }
    require(found < regions.size(), "SceneSpec: regions do not cover the source extent");
    return found;
}

SceneSpec SceneSpec::single(Affine2 map) {
    return {{Region{[](Vec2) { return true; }, map}}};
}

SceneSpec SceneSpec::two_translation(Vec2 left, Vec2 right) {
    return {{Region{[](Vec2 x) { return x.x < 0.0; }, Affine2::translation(left)},
             Region{[](Vec2 x) { return x.x >= 0.0; }, Affine2::translation(right)}}};
}

SceneSpec canonical_two_translation_scene() {
    return SceneSpec::two_translation({1.0, 0.0}, {-1.0, 0.0});
}

JointMatchDistribution rasterize_scene(const SceneSpec& spec, const GridSpec& src, const GridSpec& tgt) {
    require(!spec.regions.empty(), "rasterize_scene: scene has no regions");
    std::vector<double> mass(src.cells() * tgt.cells(), 0.0);
    for (std::size_t i = 0; i < src.cells(); ++i) {
        const Vec2 y = spec.warp(src.center(i));
        if (!in_extent(y)) continue;
        mass[i * tgt.cells() + tgt.flat(normalized_to_pixel(y, tgt))] += 1.0;
    }
    return normalize_joint(src, tgt, std::move(mass));
}

std::vector<double> gaussian_kernel_1d(double s, double spacing) {
    require(s >= 0.0, "gaussian_kernel_1d: scale must be nonnegative");
    require(spacing > 0.0, "gaussian_kernel_1d: spacing must be positive");
    // Tiny slack so that 4s landing exactly on a cell offset keeps that tap.
    const auto r = static_cast<long>(std::floor(4.0 * s / spacing + 1e-9));
    if (s == 0.0 || r == 0) return {1.0};
    std::vector<double> w(static_cast<std::size_t>(2 * r + 1));
    double sum = 0.0;
    for (long k = -r; k <= r; ++k) {
        const double d = static_cast<double>(k) * spacing;
        w[static_cast<std::size_t>(k + r)] = std::exp(-d * d / (2.0 * s * s));
        sum += w[static_cast<std::size_t>(k + r)];
    }
    for (double& v : w) v /= sum;
    return w;
}

namespace {

// Half-sample symmetric index reflection; keeps the 1D operator doubly
// stochastic, so no mass leaves the grid.
long reflect(long j, long n) {
    const long period = 2 * n;
    j %= period;
    if (j < 0) j += period;
    return j < n ? j : period - 1 - j;
}

// Convolution along one axis of a row-major 4D array with reflecting borders.
void convolve_axis(std::vector<double>& data, const std::array<std::size_t, 4>& dims, std::size_t axis,
                   const std::vector<double>& kernel) {
    if (kernel.size() == 1) return;
    const long r = static_cast<long>(kernel.size() / 2);
    std::size_t stride = 1;
    for (std::size_t a = axis + 1; a < 4; ++a) stride *= dims[a];
    const std::size_t n = dims[axis];
    const std::size_t outer = data.size() / (n * stride);
    std::vector<double> line(n), out(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < stride; ++in) {
            const std::size_t base = o * n * stride + in;
            for (std::size_t i = 0; i < n; ++i) line[i] = data[base + i * stride];
            for (std::size_t i = 0; i < n; ++i) {
                double acc = 0.0;
                for (long k = -r; k <= r; ++k) {
                    const long j = reflect(static_cast<long>(i) + k, static_cast<long>(n));
                    acc += kernel[static_cast<std::size_t>(k + r)] * line[static_cast<std::size_t>(j)];
                }
                out[i] = acc;
            }
            for (std::size_t i = 0; i < n; ++i) data[base + i * stride] = out[i];
        }
    }
}

}  // namespace

DiffusedJoint diffuse(const JointMatchDistribution& j, double s, DiffusionAxes axes) {
    require(s >= 0.0, "diffuse: scale must be nonnegative");
    const auto& src = j.source();
    const auto& tgt = j.target();
    std::vector<double> data(j.probs().begin(), j.probs().end());
    if (s > 0.0) {
        const std::array<std::size_t, 4> dims{src.height(), src.width(), tgt.height(), tgt.width()};
        const std::array<double, 4> spacing{src.cell_height(), src.cell_width(), tgt.cell_height(),
                                            tgt.cell_width()};
        for (std::size_t a = 0; a < 4; ++a) {
            const bool source_axis = a < 2;
            if (axes == DiffusionAxes::source_only && !source_axis) continue;
            if (axes == DiffusionAxes::target_only && source_axis) continue;
            convolve_axis(data, dims, a, gaussian_kernel_1d(s, spacing[a]));
        }
    }
    return {normalize_joint(src, tgt, std::move(data)), s};
}

ConditionalRow conditional_of(const DiffusedJoint& q, std::size_t source_cell) {
    const auto row = q.joint.row(source_cell);
    const double mass = std::accumulate(row.begin(), row.end(), 0.0);
    if (!(mass > 0.0)) {
        throw Error("conditional_of: source cell " + std::to_string(source_cell) +
                    " has no mass (fully occluded)");
    }
    ConditionalRow out{q.joint.target(), std::vector<double>(row.begin(), row.end())};
    for (double& v : out.probs) v /= mass;
    return out;
}

double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    return h;
}

std::vector<Mode> find_modes(const GridSpec& g, std::span<const double> values, double rel_threshold) {
    require(values.size() == g.cells(), "find_modes: value array does not match grid");
    require(rel_threshold > 0.0 && rel_threshold < 1.0, "find_modes: threshold must lie in (0,1)");
    const double vmax = *std::max_element(values.begin(), values.end());
    const long h = static_cast<long>(g.height());
    const long w = static_cast<long>(g.width());
    std::vector<long> label(g.cells(), -1);
    std::vector<Mode> modes;
    std::vector<std::size_t> stack, members;
    for (std::size_t start = 0; start < g.cells(); ++start) {
        if (label[start] >= 0) continue;
        const double v = values[start];
        // Flood-fill the equal-valued plateau and check its outer neighbours.
        label[start] = static_cast<long>(start);
        stack.assign(1, start);
        members.clear();
        bool is_max = true;
        while (!stack.empty()) {
            const std::size_t c = stack.back();
            stack.pop_back();
            members.push_back(c);
            const long r = static_cast<long>(c) / w;
            const long col = static_cast<long>(c) % w;
            for (long dr = -1; dr <= 1; ++dr) {
                for (long dc = -1; dc <= 1; ++dc) {
                    if (dr == 0 && dc == 0) continue;
                    const long rr = r + dr, cc = col + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    const auto n = static_cast<std::size_t>(rr * w + cc);
                    if (values[n] == v) {
                        if (label[n] < 0) {
                            label[n] = static_cast<long>(start);
                            stack.push_back(n);
                        }
                    } else if (values[n] > v) {
                        is_max = false;
                    }
                }
            }
        }
        if (is_max && v > 0.0 && v >= rel_threshold * vmax) {
            modes.push_back({*std::min_element(members.begin(), members.end()), v});
        }
    }
    return modes;
}

std::size_t count_modes(const GridSpec& g, std::span<const double> values, double rel_threshold) {
    return find_modes(g, values, rel_threshold).size();
}

std::vector<double> boundary_distances(const SceneSpec& spec, const GridSpec& src) {
    std::vector<std::size_t> region(src.cells());
    for (std::size_t i = 0; i < src.cells(); ++i) region[i] = spec.region_of(src.center(i));
    std::vector<Vec2> boundary;
    for (std::size_t r = 0; r < src.height(); ++r) {
        for (std::size_t c = 0; c < src.width(); ++c) {
            const std::size_t i = src.flat({r, c});
            if (c + 1 < src.width() && region[i] != region[i + 1]) {
                boundary.push_back(0.5 * (src.center(i) + src.center(i + 1)));
            }
            if (r + 1 < src.height() && region[i] != region[i + src.width()]) {
                boundary.push_back(0.5 * (src.center(i) + src.center(i + src.width())));
            }
        }
    }
    std::vector<double> dist(src.cells(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < src.cells(); ++i) {
        for (const auto& b : boundary) dist[i] = std::min(dist[i], norm(src.center(i) - b));
    }
    return dist;
}

SweepReport multimodality_sweep(const SceneSpec& spec, std::span<const double> scales,
                                const SweepConfig& cfg) {
    const auto base = rasterize_scene(spec, cfg.source, cfg.target);
    const auto dist = boundary_distances(spec, cfg.source);
    const double bin_width = cfg.source.cell_width();
    SweepReport report;
    for (double s : scales) {
        const auto q = diffuse(base, s, cfg.axes);
        std::map<long, std::pair<std::size_t, std::size_t>> bins;  // bin -> (multimodal, total)
        for (std::size_t i = 0; i < cfg.source.cells(); ++i) {
            CellModeRecord rec{s, i, dist[i], 0, false};
            const auto row = q.joint.row(i);
            if (std::accumulate(row.begin(), row.end(), 0.0) <= 0.0) {
                rec.occluded = true;
                report.cells.push_back(rec);
                continue;
            }
            const auto cond = conditional_of(q, i);
            rec.modes = count_modes(cond.target, cond.probs, cfg.rel_threshold);
            report.cells.push_back(rec);
            const long bin = std::isinf(dist[i]) ? -1 : static_cast<long>(std::floor(dist[i] / bin_width));
            auto& slot = bins[bin];
            slot.first += rec.modes > 1 ? 1 : 0;
            slot.second += 1;
        }
        for (const auto& [bin, counts] : bins) {
            report.rows.push_back({s, bin,
                                   static_cast<double>(counts.first) / static_cast<double>(counts.second),
                                   counts.second});
        }
    }
    return report;
}

namespace {

double interval_overlap(double a0, double a1, double b0, double b1) {
    return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

bool nests(std::size_t a, std::size_t b) { return a % b == 0 || b % a == 0; }

double kl_divergence(std::span<const double> p, std::span<const double> log_q) {
    double kl = 0.0;
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (p[t] > 0.0) kl += p[t] * (std::log(p[t]) - log_q[t]);
    }
    return kl;
}

// KL against discretized isotropic Gaussians. The Gaussian factorizes over
// the axes, so only the row and column marginals of the conditional matter.
class GaussianKl {
public:
    explicit GaussianKl(const ConditionalRow& cond) : g_(cond.target) {
        cols_.assign(g_.width(), 0.0);
        rows_.assign(g_.height(), 0.0);
        for (std::size_t t = 0; t < g_.cells(); ++t) {
            const auto c = g_.unflat(t);
            cols_[c.col] += cond.probs[t];
            rows_[c.row] += cond.probs[t];
            if (cond.probs[t] > 0.0) neg_entropy_ += cond.probs[t] * std::log(cond.probs[t]);
        }
    }

    double operator()(Vec2 mean, double sigma) const {
        const double inv = 1.0 / (2.0 * sigma * sigma);
        return neg_entropy_ - axis_term(cols_, g_.width(), mean.x, inv) - axis_term(rows_, g_.height(), mean.y, inv);
    }

private:
    // Expected log-probability of a 1D discretized Gaussian under `marginal`.
    static double axis_term(const std::vector<double>& marginal, std::size_t n, double mu, double inv) {
        double mx = -INFINITY;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = -1.0 + (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(n) - mu;
            mx = std::max(mx, -d * d * inv);
        }
        double z = 0.0, e = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = -1.0 + (static_cast<double>(i) + 0.5) * 2.0 / static_cast<double>(n) - mu;
            const double l = -d * d * inv;
            z += std::exp(l - mx);
            e += marginal[i] * l;
        }
        return e - (mx + std::log(z));
    }

    GridSpec g_;
    std::vector<double> cols_, rows_;
    double neg_entropy_ = 0.0;
};

}  // namespace

FitComparison fit_comparison(const ConditionalRow& cond, const AnchorGrid& anchors) {
    const auto& g = cond.target;
    require(cond.probs.size() == g.cells(), "fit_comparison: conditional does not match grid");
    const double total = std::accumulate(cond.probs.begin(), cond.probs.end(), 0.0);
    require(std::abs(total - 1.0) <= 1e-9, "fit_comparison: conditional is not normalized");
    require(nests(g.height(), anchors.rows()) && nests(g.width(), anchors.cols()),
            "fit_comparison: anchor and target grids must nest along each axis");

    FitComparison out;

    // Best anchor mixture: the mass of each anchor cell spread uniformly over it.
    const auto& ag = anchors.cells();
    std::vector<double> anchor_mass(anchors.size(), 0.0);
    std::vector<std::vector<std::pair<std::size_t, double>>> overlaps(g.cells());
    for (std::size_t t = 0; t < g.cells(); ++t) {
        const Vec2 tc = g.center(t);
        const double tx0 = tc.x - g.cell_width() / 2, tx1 = tc.x + g.cell_width() / 2;
        const double ty0 = tc.y - g.cell_height() / 2, ty1 = tc.y + g.cell_height() / 2;
        for (std::size_t k = 0; k < anchors.size(); ++k) {
            const Vec2 ac = anchors.anchor(k);
            const double ov =
                interval_overlap(tx0, tx1, ac.x - ag.cell_width() / 2, ac.x + ag.cell_width() / 2) *
                interval_overlap(ty0, ty1, ac.y - ag.cell_height() / 2, ac.y + ag.cell_height() / 2);
            if (ov <= 0.0) continue;
            overlaps[t].emplace_back(k, ov);
            anchor_mass[k] += cond.probs[t] * ov / g.cell_area();
        }
    }
    std::vector<double> log_model(g.cells());
    for (std::size_t t = 0; t < g.cells(); ++t) {
        double m = 0.0;
        for (const auto& [k, ov] : overlaps[t]) m += anchor_mass[k] * ov / ag.cell_area();
        log_model[t] = m > 0.0 ? std::log(m) : -INFINITY;
    }
    out.kl_mixture = std::max(0.0, kl_divergence(cond.probs, log_model));

    // Best single Gaussian: grid search over cell-center means and 16 log-spaced
    // sigmas, then coordinate descent in (mean x, mean y, log sigma).
    constexpr int kSigmaSteps = 16;
    const double log_lo = std::log(0.01);
    const double log_hi = std::log(1.0);
    const double dlog = (log_hi - log_lo) / (kSigmaSteps - 1);
    const GaussianKl kl_gaussian(cond);
    double best = INFINITY;
    Vec2 best_mean{};
    double best_log_sigma = log_lo;
    for (std::size_t t = 0; t < g.cells(); ++t) {
        for (int k = 0; k < kSigmaSteps; ++k) {
            const double ls = log_lo + k * dlog;
            const double kl = kl_gaussian(g.center(t), std::exp(ls));
            if (kl < best) {
                best = kl;
                best_mean = g.center(t);
                best_log_sigma = ls;
            }
        }
    }
    std::array<double, 3> x{best_mean.x, best_mean.y, best_log_sigma};
    std::array<double, 3> step{g.cell_width() / 2, g.cell_height() / 2, dlog / 2};
    auto eval = [&](const std::array<double, 3>& p) {
        return kl_gaussian({p[0], p[1]}, std::exp(p[2]));
    };
    for (int sweep = 0; sweep < 400 && step[2] > 1e-7; ++sweep) {
        bool improved = false;
        for (std::size_t d = 0; d < 3; ++d) {
            for (double sign : {1.0, -1.0}) {
                auto trial = x;
                trial[d] += sign * step[d];
                const double kl = eval(trial);
                if (kl < best) {
                    best = kl;
                    x = trial;
                    improved = true;
                    break;
                }
            }
        }
        if (!improved) {
            for (double& s : step) s /= 2;
        }
    }
    out.kl_unimodal = std::max(0.0, best);
    out.unimodal_mean = {x[0], x[1]};
    out.unimodal_sigma = std::exp(x[2]);
    return out;
}

}  // namespace roma
