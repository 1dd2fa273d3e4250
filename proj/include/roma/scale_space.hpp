#pragma once

// Scale-space model of matchability: an exact piecewise-affine scene is
// rasterized into a joint match distribution, diffused with an isotropic
// Gaussian of scale s, and the resulting conditionals are inspected for
// multimodality near motion boundaries.

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "roma/anchors.hpp"
#include "roma/grid.hpp"

namespace roma {

struct Affine2 {
    double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
    Vec2 b{};

    Vec2 apply(Vec2 x) const { return {a11 * x.x + a12 * x.y + b.x, a21 * x.x + a22 * x.y + b.y}; }
    static Affine2 translation(Vec2 t) { return {1.0, 0.0, 0.0, 1.0, t}; }
};

struct Region {
    std::function<bool(Vec2)> contains;
    Affine2 map;
};

struct SceneSpec {
    std::vector<Region> regions;

    // Index of the unique region containing x; errors on overlap or gap.
    std::size_t region_of(Vec2 x) const;
    Vec2 warp(Vec2 x) const { return regions[region_of(x)].map.apply(x); }

    static SceneSpec single(Affine2 map);
    // Left half (x < 0) moves by `left`, right half by `right`.
    static SceneSpec two_translation(Vec2 left, Vec2 right);
};

// Left half moves right by one extent unit and the right half moves left by
// one, so both halves land inside the target and swap places.
SceneSpec canonical_two_translation_scene();

JointMatchDistribution rasterize_scene(const SceneSpec& spec, const GridSpec& src, const GridSpec& tgt);

enum class DiffusionAxes { joint, source_only, target_only };

struct DiffusedJoint {
    JointMatchDistribution joint;
    double sigma = 0.0;
};

// Normalized Gaussian weights at offsets -r..r cells, r = floor(4 s / spacing).
std::vector<double> gaussian_kernel_1d(double s, double spacing);

DiffusedJoint diffuse(const JointMatchDistribution& j, double s,
                      DiffusionAxes axes = DiffusionAxes::joint);

struct ConditionalRow {
    GridSpec target;
    std::vector<double> probs;
};

ConditionalRow conditional_of(const DiffusedJoint& q, std::size_t source_cell);

double entropy(std::span<const double> p);

struct Mode {
    std::size_t cell = 0;  // representative (lowest index) cell of the plateau
    double value = 0.0;
};

// Strict local maxima over the 8-neighbourhood with value >= rel_threshold *
// global max. Equal-valued connected plateaus count once.
std::vector<Mode> find_modes(const GridSpec& g, std::span<const double> values, double rel_threshold);
std::size_t count_modes(const GridSpec& g, std::span<const double> values, double rel_threshold);

// Distance from each source cell center to the nearest midpoint between
// 4-adjacent cells that belong to different regions; +inf if none.
std::vector<double> boundary_distances(const SceneSpec& spec, const GridSpec& src);

struct CellModeRecord {
    double s = 0.0;
    std::size_t cell = 0;
    double boundary_distance = 0.0;
    std::size_t modes = 0;
    bool occluded = false;  // no mass in this source row
};

struct SweepRow {
    double s = 0.0;
    long bin = 0;  // floor(distance / cell width); -1 when there is no boundary
    double fraction_multimodal = 0.0;
    std::size_t n_cells = 0;
};

struct SweepReport {
    std::vector<CellModeRecord> cells;
    std::vector<SweepRow> rows;
};

struct SweepConfig {
    GridSpec source{16, 16};
    GridSpec target{16, 16};
    double rel_threshold = 0.1;
    DiffusionAxes axes = DiffusionAxes::joint;
};

SweepReport multimodality_sweep(const SceneSpec& spec, std::span<const double> scales,
                                const SweepConfig& cfg);

struct FitComparison {
    double kl_mixture = 0.0;
    double kl_unimodal = 0.0;
    Vec2 unimodal_mean{};
    double unimodal_sigma = 0.0;
};

// KL of a conditional against its best anchor mixture and its best single
// discretized isotropic Gaussian. The anchor and target grids must nest
// along each axis (one size divides the other).
FitComparison fit_comparison(const ConditionalRow& cond, const AnchorGrid& anchors);

}  // namespace roma
