#pragma once

// Independent reference implementations used only by tests. They are written
// from the definitions, deliberately naive, and share no code with the
// library beyond its plain data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <Eigen/Core>

#include "roma/grid.hpp"

namespace roma::oracle {

using HighPrecision = boost::multiprecision::cpp_bin_float_50;

// Central difference of a scalar function of one variable.
inline double central_difference(const std::function<double(double)>& f, double x, double h = 1e-5) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

// Max-norm relative error of an analytic gradient against a reference.
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& reference) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff = std::max(diff, std::abs(analytic[i] - reference[i]));
        scale = std::max(scale, std::abs(reference[i]));
    }
    return diff / std::max(scale, 1e-12);
}

// Decoding straight from the definition: argmax (first maximum wins), then
// the probability-weighted mean of anchor centers over the argmax and its
// in-grid left/right/up/down neighbours.
inline Vec2 literal_decode(const std::vector<double>& pi_row, std::size_t rows, std::size_t cols) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < pi_row.size(); ++k) {
        if (pi_row[k] > pi_row[best]) best = k;
    }
    const auto anchor = [&](std::size_t r, std::size_t c) {
        return Vec2{-1.0 + (2.0 * static_cast<double>(c) + 1.0) / static_cast<double>(cols),
                    -1.0 + (2.0 * static_cast<double>(r) + 1.0) / static_cast<double>(rows)};
    };
    const std::size_t r0 = best / cols, c0 = best % cols;
    std::vector<std::pair<std::size_t, std::size_t>> hood{{r0, c0}};
    if (c0 > 0) hood.push_back({r0, c0 - 1});
    if (c0 + 1 < cols) hood.push_back({r0, c0 + 1});
    if (r0 > 0) hood.push_back({r0 - 1, c0});
    if (r0 + 1 < rows) hood.push_back({r0 + 1, c0});
    double wsum = 0.0, x = 0.0, y = 0.0;
    for (auto [r, c] : hood) {
        const double w = pi_row[r * cols + c];
        const Vec2 m = anchor(r, c);
        wsum += w;
        x += w * m.x;
        y += w * m.y;
    }
    return {x / wsum, y / wsum};
}

// Gauss-Jordan elimination with partial pivoting in 50-digit arithmetic.
inline Eigen::MatrixXd dense_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
    const auto n = static_cast<std::size_t>(a.rows());
    const auto m = static_cast<std::size_t>(b.cols());
    std::vector<std::vector<HighPrecision>> t(n, std::vector<HighPrecision>(n + m));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) t[i][j] = a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        for (std::size_t j = 0; j < m; ++j) t[i][n + j] = b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (abs(t[r][c]) > abs(t[piv][c])) piv = r;
        }
        std::swap(t[c], t[piv]);
        const HighPrecision d = t[c][c];
        for (auto& v : t[c]) v /= d;
        for (std::size_t r = 0; r < n; ++r) {
            if (r == c) continue;
            const HighPrecision f = t[r][c];
            for (std::size_t j = c; j < n + m; ++j) t[r][j] -= f * t[c][j];
        }
    }
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(t[i][n + j]);
        }
    }
    return x;
}

// Gaussian KDE with the normalization written out term by term.
inline double brute_kde(const std::vector<std::vector<double>>& pts, std::size_t i, double h) {
    const double d = static_cast<double>(pts[i].size());
    double s = 0.0;
    for (const auto& q : pts) {
        double d2 = 0.0;
        for (std::size_t c = 0; c < q.size(); ++c) d2 += (pts[i][c] - q[c]) * (pts[i][c] - q[c]);
        s += std::exp(-d2 / (2.0 * h * h));
    }
    const double two_pi = 2.0 * 3.14159265358979323846;
    return s / (static_cast<double>(pts.size()) * std::pow(two_pi * h * h, d / 2.0));
}

// Mutual nearest neighbours by cosine similarity, as (a, b) index pairs in
// increasing a.
inline std::vector<std::pair<std::size_t, std::size_t>> brute_mutual_nn(const Eigen::MatrixXd& a,
                                                                          const Eigen::MatrixXd& b) {
    const auto cosine = [&](Eigen::Index i, Eigen::Index j) {
        return a.row(i).dot(b.row(j)) / (a.row(i).norm() * b.row(j).norm());
    };
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Eigen::Index bj = 0;
        for (Eigen::Index j = 1; j < b.rows(); ++j) {
            if (cosine(i, j) > cosine(i, bj)) bj = j;
        }
        Eigen::Index bi = 0;
        for (Eigen::Index k = 1; k < a.rows(); ++k) {
            if (cosine(k, bj) > cosine(bi, bj)) bi = k;
        }
        if (bi == i) out.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(bj)});
    }
    return out;
}

// Recall curve averaged at `samples` evenly spaced midpoints of [0, tau].
inline double sampled_recall_auc(const std::vector<double>& errors, double tau, std::size_t samples = 100000) {
    std::vector<double> e = errors;
    std::sort(e.begin(), e.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
        const double t = tau * (static_cast<double>(k) + 0.5) / static_cast<double>(samples);
        const auto below = std::lower_bound(e.begin(), e.end(), t) - e.begin();
        sum += static_cast<double>(below) / static_cast<double>(e.size());
    }
    return sum / static_cast<double>(samples);
}

inline double count_below_percent(const std::vector<double>& errors, double tau) {
    std::size_t hits = 0;
    for (double v : errors) hits += v < tau ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(errors.size());
}

inline double count_maa(const std::vector<double>& rot, const std::vector<double>& trans) {
    double acc = 0.0;
    for (int t = 1; t <= 10; ++t) {
        std::size_t ok = 0;
        for (std::size_t i = 0; i < rot.size(); ++i) {
            if (rot[i] < t && trans[i] < 0.2 * t) ++ok;
        }
        acc += static_cast<double>(ok) / static_cast<double>(rot.size());
    }
    return acc / 10.0;
}

}  // namespace roma::oracle
