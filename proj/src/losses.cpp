#include "roma/losses.hpp"

#include <algorithm>
#include <cmath>

namespace roma {

double bce(double p, bool label) {
    const double q = std::clamp(p, kLogClamp, 1.0 - kLogClamp);
    return label ? -std::log(q) : -std::log1p(-q);
}

double bce_grad(double p, bool label) {
    if (p < kLogClamp || p > 1.0 - kLogClamp) return 0.0;
    return label ? -1.0 / p : 1.0 / (1.0 - p);
}

CoarseLossResult coarse_loss(const AnchorProbs& probs, const std::vector<bool>& matchable_mask,
                             const CorrespondenceSet& corr, const CoarseLossConfig& cfg) {
    require(cfg.lambda > 0.0, "coarse_loss: lambda must be positive");
    require(!corr.empty(), "coarse_loss: empty correspondence set");
    require(probs.anchor_count() == cfg.anchor_grid.size(), "coarse_loss: K does not match anchor grid");
    const auto& src = probs.source();
    require(matchable_mask.size() == src.cells(), "coarse_loss: mask does not match source grid");

    const std::size_t K = probs.anchor_count();
    CoarseLossResult out;
    out.grad_pi.assign(probs.pi().size(), 0.0);
    out.grad_matchability.assign(src.cells(), 0.0);

    double total_weight = 0.0;
    for (const auto& p : corr.pairs()) total_weight += p.weight;
    require(total_weight > 0.0, "coarse_loss: correspondence weights sum to zero");

    for (const auto& p : corr.pairs()) {
        const std::size_t cell = src.flat(normalized_to_pixel(p.a, src));
        const std::size_t k = closest_anchor(cfg.anchor_grid, p.b);
        const double pi = probs.pi()[cell * K + k];
        const double w = p.weight / total_weight;
        out.conditional += -w * std::log(std::max(pi, kLogClamp));
        if (pi >= kLogClamp) out.grad_pi[cell * K + k] += -w / pi;
    }

    const double n = static_cast<double>(src.cells());
    for (std::size_t i = 0; i < src.cells(); ++i) {
        const double m = probs.matchability()[i];
        out.marginal += bce(m, matchable_mask[i]) / n;
        out.grad_matchability[i] = cfg.lambda * bce_grad(m, matchable_mask[i]) / n;
    }
    out.loss = out.conditional + cfg.lambda * out.marginal;
    return out;
}

double charbonnier_nll(Vec2 mu, Vec2 x, double s) {
    require(s > 0.0, "charbonnier_nll: s must be positive");
    const Vec2 d = mu - x;
    return std::pow(dot(d, d) + s, 0.25);
}

Vec2 charbonnier_grad(Vec2 mu, Vec2 x, double s) {
    require(s > 0.0, "charbonnier_grad: s must be positive");
    const Vec2 d = mu - x;
    return (0.5 * std::pow(dot(d, d) + s, -0.75)) * d;
}

double FineLossConfig::scale_value(int exponent) const {
    return std::ldexp(c, exponent);
}

FineLossResult fine_loss(const std::map<int, WarpField>& warps, const CorrespondenceSet& corr,
                         const std::map<int, std::vector<bool>>& masks, const FineLossConfig& cfg) {
    require(cfg.c > 0.0, "fine_loss: c must be positive");
    require(!corr.empty(), "fine_loss: empty correspondence set");
    double total_weight = 0.0;
    for (const auto& p : corr.pairs()) total_weight += p.weight;
    require(total_weight > 0.0, "fine_loss: correspondence weights sum to zero");

    FineLossResult out;
    for (int i : cfg.scales) {
        require(i >= 0, "fine_loss: scale exponents must be nonnegative");
        const auto w_it = warps.find(i);
        const auto m_it = masks.find(i);
        if (w_it == warps.end() || m_it == masks.end()) {
            throw Error("fine_loss: missing warp or mask for scale " + std::to_string(i));
        }
        const WarpField& warp = w_it->second;
        const auto& mask = m_it->second;
        const auto& g = warp.grid();
        require(mask.size() == g.cells(), "fine_loss: mask does not match warp grid");

        FineScaleTerm term;
        term.exponent = i;
        term.s = cfg.scale_value(i);
        term.grad_coords.assign(g.cells(), Vec2{});
        term.grad_certainty.assign(g.cells(), 0.0);

        for (const auto& p : corr.pairs()) {
            const double w = p.weight / total_weight;
            const auto st = bilinear_stencil(g, p.a);
            Vec2 mu{};
            for (std::size_t q = 0; q < 4; ++q) mu = mu + st.weights[q] * warp.target_coords()[st.cells[q]];
            term.charbonnier += w * charbonnier_nll(mu, p.b, term.s);
            const Vec2 gmu = w * charbonnier_grad(mu, p.b, term.s);
            for (std::size_t q = 0; q < 4; ++q) {
                term.grad_coords[st.cells[q]] = term.grad_coords[st.cells[q]] + st.weights[q] * gmu;
            }
        }
        const double n = static_cast<double>(g.cells());
        for (std::size_t c = 0; c < g.cells(); ++c) {
            term.bce += bce(warp.certainty()[c], mask[c]) / n;
            term.grad_certainty[c] = bce_grad(warp.certainty()[c], mask[c]) / n;
        }
        out.loss += term.charbonnier + term.bce;
        out.scales.push_back(std::move(term));
    }
    return out;
}

std::vector<LossSweepRow> loss_sweep(double s, double r_min, double r_max, std::size_t points) {
    require(s > 0.0, "loss_sweep: s must be positive");
    require(r_min > 0.0 && r_max > r_min && points >= 2, "loss_sweep: need 0 < r_min < r_max, points >= 2");
    std::vector<LossSweepRow> rows;
    rows.reserve(points + 1);
    const Vec2 origin{0.0, 0.0};
    auto add = [&](double r) {
        const Vec2 mu{r, 0.0};
        rows.push_back({r, charbonnier_nll(mu, origin, s), norm(charbonnier_grad(mu, origin, s))});
    };
    add(0.0);
    const double lo = std::log(r_min);
    const double hi = std::log(r_max);
    for (std::size_t i = 0; i < points; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(points - 1);
        add(i + 1 == points ? r_max : std::exp(lo + t * (hi - lo)));
    }
    return rows;
}

}  // namespace roma
