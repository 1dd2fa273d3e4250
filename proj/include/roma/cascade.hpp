#pragma once

// Coarse-to-fine warp refinement. Refiners run at strides 14, 8, 4, 2, 1 with
// local correlation windows 15, 7, 5, 0, 0. Each refiner predicts a residual
// offset for the warp and a logit offset for the certainty; here the learned
// ConvNet is replaced by a softargmax over the local correlation window.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "roma/grid.hpp"
#include "roma/scale_space.hpp"

namespace roma {

inline constexpr std::array<int, 5> kRefinerStrides{14, 8, 4, 2, 1};

struct RefinerSpec {
    int stride = 1;
    int corr_window = 0;  // odd, or 0 for no correlation
};

std::vector<RefinerSpec> default_refiners();

struct PyramidLevel {
    GridSpec grid;
    Eigen::MatrixXd features;  // cells x D_f, row-major over the grid
};

struct FeaturePyramid {
    GridSpec base;
    std::map<int, PyramidLevel> levels;  // keyed by stride

    const PyramidLevel& level(int stride) const;
};

// Average-pools stride-1 features into every stride in `strides`. The base
// resolution must be divisible by each stride.
FeaturePyramid pool_pyramid(const GridSpec& base, const Eigen::MatrixXd& base_features,
                            std::span<const int> strides);

// Band-limited random field built from random Fourier features: channel
// pairs (cos, sin) of w.y + phase with random directions and wavelengths drawn
// log-uniformly from [wavelength_min, wavelength_max] (extent units). The
// inner product of two samples depends only on their displacement and is even
// in it, so correlation peaks are symmetric. An odd dim adds a constant channel.
struct FeatureFieldSpec {
    std::size_t dim = 32;
    double wavelength_min = 1.2;
    double wavelength_max = 2.4;
};

class FeatureField {
public:
    FeatureField(const FeatureFieldSpec& spec, std::uint64_t seed);
    Eigen::VectorXd operator()(Vec2 y) const;
    std::size_t dim() const { return dim_; }

private:
    std::size_t dim_;
    Eigen::ArrayXd freq_x_, freq_y_, phase_;  // one entry per channel pair
    double amplitude_;
};

struct SyntheticPyramids {
    FeaturePyramid source;
    FeaturePyramid target;
};

// Target features sample the field at target cell centers; source features
// sample it at each source cell's ground-truth warped location.
SyntheticPyramids synth_pyramid(const SceneSpec& scene, const GridSpec& base, std::size_t dim,
                                std::uint64_t seed, FeatureFieldSpec field = {});

// Cosine similarity between fa and the target features on the window x window
// block centered on the cell containing `center`. Cells outside the grid
// score -1. Row-major over the window.
std::vector<double> local_correlation(const Eigen::VectorXd& fa, const PyramidLevel& target,
                                      Vec2 center, int window);

struct RefinerState {
    WarpField warp;
    std::vector<double> logits;  // certainty logits, per cell
};

RefinerState state_from_warp(const WarpField& w);
// Bilinear resampling of the warp and the certainty logits onto `to`, extended
// linearly past the outermost cell centers.
RefinerState upsample_state(const RefinerState& s, const GridSpec& to);

// One refinement step on the grid of spec.stride. The state must already be
// on that grid.
RefinerState analytic_refiner(const RefinerState& state, const FeaturePyramid& source,
                              const FeaturePyramid& target, const RefinerSpec& spec,
                              double temperature = 0.05);

struct CascadeConfig {
    std::vector<RefinerSpec> refiners = default_refiners();
    double temperature = 0.05;
};

struct CascadeStage {
    RefinerSpec spec;
    RefinerState state;
};

struct CascadeResult {
    RefinerState input;  // the coarse warp the cascade started from
    std::vector<CascadeStage> stages;
    const WarpField& final_warp() const { return stages.back().state.warp; }
};

// Runs the refiners in order, upsampling between levels. Each stage only
// reads the previous stage's output.
CascadeResult run_cascade(const FeaturePyramid& source, const FeaturePyramid& target,
                          const WarpField& coarse_warp, const CascadeConfig& cfg = {});

// Mean end-point error against the scene's ground truth over cells whose true
// target lies in the extent, in units of `unit` (e.g. the fine cell width).
double warp_epe(const WarpField& w, const SceneSpec& scene, double unit);

// Random scenes for refinement experiments: a pure translation with
// components up to max_translation, or a similarity transform with rotation
// up to max_rotation radians, scale within 1 +- max_scale and translation up
// to affine_translation.
struct RandomSceneOptions {
    double max_translation = 0.3;
    double max_rotation = 0.17;
    double max_scale = 0.1;
    double affine_translation = 0.2;
};

Affine2 random_motion(std::uint64_t seed, bool affine, const RandomSceneOptions& opt = {});
inline SceneSpec random_scene(std::uint64_t seed, bool affine, const RandomSceneOptions& opt = {}) {
    return SceneSpec::single(random_motion(seed, affine, opt));
}

// Ground-truth warp on `grid` with each target offset by independent uniform
// noise of up to `max_offset_cells` cells of that grid per axis. Certainty is
// constant.
WarpField perturbed_warp(const SceneSpec& scene, const GridSpec& grid, double max_offset_cells,
                         std::uint64_t seed, double certainty = 0.5);

// EPE of the input followed by every stage, on the stride-1 grid and in fine
// cells. Each warp is carried to full resolution along the cascade's own
// upsampling path, so all entries are scored on the same cells.
std::vector<double> cascade_stage_epe(const CascadeResult& r, const SceneSpec& scene, const GridSpec& base);

}  // namespace roma
