#include "commands.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "acceptance/checks.hpp"
#include "roma/anchors.hpp"
#include "roma/cascade.hpp"
#include "roma/gp.hpp"
#include "roma/io.hpp"
#include "roma/losses.hpp"
#include "roma/metrics.hpp"
#include "roma/sampling.hpp"
#include "roma/scale_space.hpp"
#include "roma/steering.hpp"

namespace roma::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

GridSpec parse_shape(const std::string& s) {
    const auto x = s.find('x');
    try {
        if (x == std::string::npos) throw std::invalid_argument(s);
        std::size_t used = 0;
        const auto rows = std::stoul(s.substr(0, x), &used);
        if (used != x) throw std::invalid_argument(s);
        const auto cols = std::stoul(s.substr(x + 1), &used);
        if (used != s.size() - x - 1 || rows == 0 || cols == 0) throw std::invalid_argument(s);
        return {rows, cols};
    } catch (const std::logic_error&) {
        throw UsageError("expected ROWSxCOLS, got '" + s + "'");
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            if constexpr (std::is_same_v<T, int>) out.push_back(std::stoi(item, &used));
            else out.push_back(std::stod(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw UsageError("bad list element '" + item + "' in '" + s + "'");
        }
    }
    if (out.empty()) throw UsageError("empty list");
    return out;
}

fs::path prepare_out(const std::string& dir) {
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    if (!os) throw Error("cannot write " + p.string());
    os << text;
}

// ---- scenes ---------------------------------------------------------------

struct SceneRecipe {
    std::string kind = "two-translation";  // or "single"
    Affine2 map{};
    Vec2 left{1.0, 0.0};
    Vec2 right{-1.0, 0.0};

    SceneSpec build() const {
        return kind == "single" ? SceneSpec::single(map) : SceneSpec::two_translation(left, right);
    }

    json to_json() const {
        if (kind == "single") {
            return {{"kind", kind}, {"map", {map.a11, map.a12, map.a21, map.a22, map.b.x, map.b.y}}};
        }
        return {{"kind", kind}, {"left", {left.x, left.y}}, {"right", {right.x, right.y}}};
    }

    static SceneRecipe from_json(const json& j) {
        try {
            SceneRecipe r;
            r.kind = j.at("kind").get<std::string>();
            if (r.kind == "single") {
                const auto m = j.at("map").get<std::vector<double>>();
                if (m.size() != 6) throw FormatError("scene: map needs 6 numbers");
                r.map = {m[0], m[1], m[2], m[3], {m[4], m[5]}};
            } else if (r.kind == "two-translation") {
                const auto l = j.at("left").get<std::vector<double>>();
                const auto rt = j.at("right").get<std::vector<double>>();
                if (l.size() != 2 || rt.size() != 2) throw FormatError("scene: translations need 2 numbers");
                r.left = {l[0], l[1]};
                r.right = {rt[0], rt[1]};
            } else {
                throw FormatError("scene: unknown kind '" + r.kind + "'");
            }
            return r;
        } catch (const json::exception& e) {
            throw FormatError(std::string("scene: ") + e.what());
        }
    }
};

SceneRecipe make_recipe(const std::string& kind, std::uint64_t seed) {
    SceneRecipe r;
    if (kind == "two-translation") return r;
    r.kind = "single";
    r.map = random_motion(seed, kind == "affine");
    return r;
}

SceneRecipe load_recipe(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open scene file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("scene file " + path + ": " + e.what());
    }
    return SceneRecipe::from_json(j);
}

struct SceneOptions {
    std::string file;
    std::string kind;
};

void add_scene_options(CLI::App* app, SceneOptions& o, const std::string& default_kind) {
    o.kind = default_kind;
    app->add_option("--scene", o.file, "scene JSON written by `synth scene`");
    app->add_option("--kind", o.kind, "generated scene kind when no file is given")
        ->check(CLI::IsMember({"two-translation", "translation", "affine"}))
        ->capture_default_str();
}

SceneRecipe resolve_scene(const SceneOptions& o, std::uint64_t seed) {
    return o.file.empty() ? make_recipe(o.kind, seed) : load_recipe(o.file);
}

std::vector<Correspondence> ground_truth_pairs(const SceneSpec& scene, const GridSpec& g) {
    std::vector<Correspondence> out;
    for (std::size_t i = 0; i < g.cells(); ++i) {
        const Vec2 b = scene.warp(g.center(i));
        if (in_extent(b)) out.push_back({g.center(i), b, 1.0});
    }
    return out;
}

WarpField ground_truth_warp(const SceneSpec& scene, const GridSpec& g) {
    std::vector<Vec2> t(g.cells());
    std::vector<double> c(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) {
        t[i] = scene.warp(g.center(i));
        c[i] = in_extent(t[i]) ? 1.0 : 0.0;
    }
    return {g, std::move(t), std::move(c)};
}

Tensor features_tensor(const PyramidLevel& l) {
    const auto d = static_cast<std::size_t>(l.features.cols());
    std::vector<double> v;
    v.reserve(l.grid.cells() * d);
    for (Eigen::Index r = 0; r < l.features.rows(); ++r)
        for (Eigen::Index c = 0; c < l.features.cols(); ++c) v.push_back(l.features(r, c));
    return make_tensor({static_cast<std::uint32_t>(l.grid.height()), static_cast<std::uint32_t>(l.grid.width()),
                        static_cast<std::uint32_t>(d)},
                       v);
}

double spatial_entropy(const CorrespondenceSet& s) {
    std::array<double, 16> counts{};
    for (const auto& p : s.pairs()) {
        const int bx = std::clamp(static_cast<int>((p.a.x + 1.0) * 2.0), 0, 3);
        const int by = std::clamp(static_cast<int>((p.a.y + 1.0) * 2.0), 0, 3);
        counts[static_cast<std::size_t>(by * 4 + bx)] += 1.0;
    }
    double h = 0.0;
    for (double v : counts) {
        if (v > 0.0) {
            const double q = v / static_cast<double>(s.size());
            h -= q * std::log(q);
        }
    }
    return h;
}

std::vector<double> read_pose_errors(const std::string& path, std::vector<double>& trans) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("rot_deg,trans", 0) != 0) {
        throw FormatError(path + ": expected header rot_deg,trans_deg");
    }
    std::vector<double> rot;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto comma = line.find(',');
        try {
            if (comma == std::string::npos) throw std::invalid_argument(line);
            rot.push_back(std::stod(line.substr(0, comma)));
            trans.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::logic_error&) {
            throw FormatError(path + ":" + std::to_string(lineno) + ": malformed row");
        }
    }
    return rot;
}

std::string key_of(double v) { return format_double(v); }

// ---- config ---------------------------------------------------------------

// Expands the per-subcommand object of a JSON config into flags placed right
// after the subcommand path, so flags given on the command line win.
std::vector<std::string> apply_config(std::vector<std::string> args) {
    std::string config;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" || args[i].rfind("--config=", 0) == 0) {
            if (args[i] == "--config") {
                if (i + 1 >= args.size()) throw UsageError("--config needs a file");
                config = args[i + 1];
                args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            } else {
                config = args[i].substr(9);
                args.erase(args.begin() + static_cast<long>(i));
            }
            break;
        }
    }
    if (config.empty()) return args;
    std::ifstream in(config);
    if (!in) throw Error("cannot open config " + config);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw FormatError("config " + config + ": " + e.what());
    }
    if (!j.is_object()) throw FormatError("config " + config + ": top level must be an object");

    std::size_t depth = 0;
    const json* node = &j;
    while (depth < args.size() && !args[depth].empty() && args[depth][0] != '-' && node->is_object() &&
           node->contains(args[depth]) && (*node)[args[depth]].is_object()) {
        node = &(*node)[args[depth]];
        ++depth;
    }
    if (node == &j) return args;
    std::vector<std::string> extra;
    for (const auto& [key, value] : node->items()) {
        if (value.is_object()) continue;  // a nested subcommand's section
        const std::string flag = "--" + key;
        if (value.is_boolean()) {
            if (value.get<bool>()) extra.push_back(flag);
        } else if (value.is_string()) {
            extra.insert(extra.end(), {flag, value.get<std::string>()});
        } else if (value.is_number_integer()) {
            extra.insert(extra.end(), {flag, value.dump()});
        } else if (value.is_number()) {
            extra.insert(extra.end(), {flag, format_double(value.get<double>())});
        } else if (value.is_array()) {
            std::string joined;
            for (const auto& e : value) {
                if (!joined.empty()) joined += ',';
                joined += e.is_string() ? e.get<std::string>() : (e.is_number_integer() ? e.dump() : format_double(e.get<double>()));
            }
            extra.insert(extra.end(), {flag, joined});
        } else {
            throw FormatError("config " + config + ": unsupported value for '" + key + "'");
        }
    }
    args.insert(args.begin() + static_cast<long>(depth), extra.begin(), extra.end());
    return args;
}

// ---- subcommands ----------------------------------------------------------

struct Common {
    std::uint64_t seed = 0;
    std::string out = ".";
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--seed", c.seed, "random seed")->capture_default_str();
    app->add_option("--out", c.out, "output directory")->capture_default_str();
}

class Cli {
public:
    Cli(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
        app_.require_subcommand(1);
        app_.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        synth_scene();
        synth_pyramid();
        synth_descriptors();
        synth_probs();
        decode();
        loss_sweep_cmd();
        diffuse_cmd();
        cascade();
        steer();
        sample();
        eval();
        selftest();
    }

    int run(std::vector<std::string> args) {
        try {
            args = apply_config(std::move(args));
            std::reverse(args.begin(), args.end());
            app_.parse(args);
        } catch (const CLI::ParseError& e) {
            const int code = app_.exit(e, out_, err_);
            return code == 0 ? kExitOk : kExitUsage;
        } catch (const UsageError& e) {
            err_ << "error: " << e.what() << "\n";
            return kExitUsage;
        } catch (const Error& e) {
            err_ << "error: " << e.what() << "\n";
            return kExitData;
        }
        for (auto& [sub, handler] : handlers_) {
            if (!sub->parsed()) continue;
            try {
                return handler();
            } catch (const UsageError& e) {
                err_ << "error: " << e.what() << "\n" << sub->help();
                return kExitUsage;
            } catch (const Error& e) {
                err_ << "error: " << e.what() << "\n";
                return kExitData;
            } catch (const fs::filesystem_error& e) {
                err_ << "error: " << e.what() << "\n";
                return kExitData;
            }
        }
        err_ << app_.help();
        return kExitUsage;
    }

private:
    CLI::App* group(const std::string& name, const std::string& help) {
        if (auto it = groups_.find(name); it != groups_.end()) return it->second;
        auto* g = app_.add_subcommand(name, help);
        g->require_subcommand(1);
        groups_[name] = g;
        return g;
    }

    void on(CLI::App* sub, std::function<int()> f) { handlers_.emplace_back(sub, std::move(f)); }

    void synth_scene() {
        auto* sub = group("synth", "synthetic scenes, pyramids, descriptors and anchor probabilities")
                        ->add_subcommand("scene", "piecewise-affine scene, its joint distribution and true warp");
        auto c = std::make_shared<Common>();
        auto so = std::make_shared<SceneOptions>();
        auto grid = std::make_shared<std::string>("16x16");
        add_common(sub, *c);
        add_scene_options(sub, *so, "two-translation");
        sub->add_option("--grid", *grid, "source and target grid")->capture_default_str();
        on(sub, [=, this] {
            const auto g = parse_shape(*grid);
            const auto recipe = resolve_scene(*so, c->seed);
            const auto scene = recipe.build();
            const auto dir = prepare_out(c->out);
            write_text(dir / "scene.json", recipe.to_json().dump(2) + "\n");
            const auto joint = rasterize_scene(scene, g, g);
            const auto h = static_cast<std::uint32_t>(g.height()), w = static_cast<std::uint32_t>(g.width());
            write_rmgrid(dir / "joint.rmgrid", make_tensor({h, w, h, w}, joint.probs()));
            const auto gt = ground_truth_warp(scene, g);
            write_rmgrid(dir / "scene_warp.rmgrid", warp_to_tensor(gt));
            write_correspondences_csv(dir / "scene_matches.csv", CorrespondenceSet(ground_truth_pairs(scene, g)));
            out_ << "scene " << recipe.kind << " with " << scene.regions.size() << " region(s) on " << g.height()
                 << "x" << g.width() << "; " << CorrespondenceSet(ground_truth_pairs(scene, g)).size()
                 << " cells land inside the target\n";
            return kExitOk;
        });
    }

    void synth_pyramid() {
        auto* sub = group("synth", "")->add_subcommand("pyramid", "feature pyramids for a scene at strides 14, 8, 4, 2, 1");
        auto c = std::make_shared<Common>();
        auto so = std::make_shared<SceneOptions>();
        auto base = std::make_shared<std::string>("56x56");
        auto dim = std::make_shared<std::size_t>(32);
        auto field = std::make_shared<FeatureFieldSpec>();
        add_common(sub, *c);
        add_scene_options(sub, *so, "affine");
        sub->add_option("--base", *base, "stride-1 grid")->capture_default_str();
        sub->add_option("--dim", *dim, "feature channels")->capture_default_str();
        sub->add_option("--wavelength-min", field->wavelength_min)->capture_default_str();
        sub->add_option("--wavelength-max", field->wavelength_max)->capture_default_str();
        on(sub, [=, this] {
            const auto scene = resolve_scene(*so, c->seed).build();
            const auto pyr = roma::synth_pyramid(scene, parse_shape(*base), *dim, c->seed, *field);
            const auto dir = prepare_out(c->out);
            for (const auto& [stride, level] : pyr.source.levels) {
                write_rmgrid(dir / ("pyramid_source_s" + std::to_string(stride) + ".rmgrid"), features_tensor(level));
                write_rmgrid(dir / ("pyramid_target_s" + std::to_string(stride) + ".rmgrid"),
                             features_tensor(pyr.target.level(stride)));
                out_ << "stride " << stride << ": " << level.grid.height() << "x" << level.grid.width() << "x"
                     << level.features.cols() << "\n";
            }
            return kExitOk;
        });
    }

    void synth_descriptors() {
        auto* sub = group("synth", "")->add_subcommand("descriptors", "quarter-turn equivariant descriptor sets");
        auto c = std::make_shared<Common>();
        auto n = std::make_shared<std::size_t>(256);
        auto dim = std::make_shared<std::size_t>(32);
        auto noise = std::make_shared<NoiseSpec>();
        auto kind = std::make_shared<std::string>("gaussian");
        add_common(sub, *c);
        sub->add_option("--n", *n, "descriptors per set")->capture_default_str();
        sub->add_option("--dim", *dim, "descriptor dimension (even)")->capture_default_str();
        sub->add_option("--sigma", noise->sigma, "noise scale")->capture_default_str();
        sub->add_option("--noise", *kind)->check(CLI::IsMember({"gaussian", "laplace"}))->capture_default_str();
        sub->add_option("--outliers", noise->outlier_fraction, "fraction of gross errors")->capture_default_str();
        on(sub, [=, this] {
            NoiseSpec ns = *noise;
            ns.kind = *kind == "laplace" ? NoiseKind::laplace : NoiseKind::gaussian;
            const auto truth = default_steering_truth(*dim, c->seed);
            const auto sets = synth_equivariant(*n, *dim, truth, ns, c->seed);
            const auto dir = prepare_out(c->out);
            for (std::size_t k = 0; k < 4; ++k) write_descriptors(dir / ("desc_k" + std::to_string(k) + ".rmdesc"), sets[k]);
            write_steering(dir / "steering_true.rmsteer", truth);
            out_ << "4 sets of " << *n << " descriptors, dimension " << *dim << "\n";
            return kExitOk;
        });
    }

    void synth_probs() {
        auto* sub = group("synth", "")->add_subcommand(
            "probs", "anchor probabilities from a GP over synthetic features, with ground truth");
        auto c = std::make_shared<Common>();
        auto so = std::make_shared<SceneOptions>();
        auto source = std::make_shared<std::string>("16x16");
        auto anchors = std::make_shared<std::string>("8x8");
        auto sigma = std::make_shared<double>(0.1);
        auto dim = std::make_shared<std::size_t>(32);
        auto kernel = std::make_shared<KernelSpec>();
        auto emb_dim = std::make_shared<std::size_t>(32);
        add_common(sub, *c);
        add_scene_options(sub, *so, "affine");
        sub->add_option("--embedding-dim", *emb_dim, "Fourier coordinate embedding size; 0 for identity")
            ->capture_default_str();
        sub->add_option("--source", *source, "source grid")->capture_default_str();
        sub->add_option("--anchors", *anchors, "anchor grid")->capture_default_str();
        sub->add_option("--sigma", *sigma, "width of the discretized Gaussian around each mean")->capture_default_str();
        sub->add_option("--dim", *dim, "feature channels")->capture_default_str();
        sub->add_option("--beta", kernel->beta, "kernel inverse temperature")->capture_default_str();
        sub->add_option("--noise-variance", kernel->noise_variance)->capture_default_str();
        on(sub, [=, this] {
            const auto scene = resolve_scene(*so, c->seed).build();
            const auto src = parse_shape(*source);
            const auto ag = parse_shape(*anchors);
            const AnchorGrid grid(ag.height(), ag.width());
            // Support: target features at target cell centers, embedded by
            // their coordinates. Queries: the feature each source cell sees.
            // The posterior mean is decoded to the nearest embedded cell center.
            const FeatureField field(FeatureFieldSpec{*dim, 0.3, 0.8}, c->seed);
            const auto emb = *emb_dim == 0 ? CoordinateEmbedding::identity() : CoordinateEmbedding::fourier(*emb_dim, c->seed);
            SupportSet sup{Eigen::MatrixXd(src.cells(), *dim), Eigen::MatrixXd(src.cells(), 2)};
            Eigen::MatrixXd queries(src.cells(), *dim);
            std::vector<double> match(src.cells());
            for (std::size_t i = 0; i < src.cells(); ++i) {
                const auto r = static_cast<Eigen::Index>(i);
                const Vec2 y = src.center(i);
                sup.features.row(r) = field(y).transpose();
                sup.embeddings(r, 0) = y.x;
                sup.embeddings(r, 1) = y.y;
                const Vec2 t = scene.warp(y);
                queries.row(r) = field(t).transpose();
                match[i] = in_extent(t) ? 1.0 : 0.0;
            }
            sup.embeddings = emb.embed(sup.embeddings);
            const Eigen::MatrixXd mean =
                emb.decode(PreparedGp(sup, *kernel).posterior_mean(queries), AnchorGrid(src.height(), src.width()));
            std::vector<Vec2> means(src.cells());
            for (std::size_t i = 0; i < src.cells(); ++i) {
                means[i] = {mean(static_cast<Eigen::Index>(i), 0), mean(static_cast<Eigen::Index>(i), 1)};
            }
            const auto probs = gaussian_anchor_probs(src, means, *sigma, match, grid);
            const auto dir = prepare_out(c->out);
            write_rmgrid(dir / "probs.rmgrid", anchor_probs_to_tensor(probs));
            write_correspondences_csv(dir / "probs_gt.csv", CorrespondenceSet(ground_truth_pairs(scene, src)));
            double err = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < src.cells(); ++i) {
                if (match[i] > 0.0) {
                    err += norm(means[i] - scene.warp(src.center(i)));
                    ++n;
                }
            }
            out_ << "anchor probabilities " << src.height() << "x" << src.width() << " x " << grid.size()
                 << " anchors; GP mean error " << format_double(n ? err / static_cast<double>(n) : 0.0) << " over "
                 << n << " matchable cells\n";
            return kExitOk;
        });
    }

    void decode() {
        auto* sub = app_.add_subcommand("decode", "anchor probabilities to a warp");
        auto c = std::make_shared<Common>();
        auto probs_path = std::make_shared<std::string>();
        auto anchors = std::make_shared<std::string>("64x64");
        auto gt = std::make_shared<std::string>();
        auto lambda = std::make_shared<double>(1.0);
        add_common(sub, *c);
        sub->add_option("--probs", *probs_path, "RMGRID1 [H, W, K+1]")->required();
        sub->add_option("--anchors", *anchors, "anchor grid, must match K")->capture_default_str();
        sub->add_option("--gt", *gt, "ground-truth correspondence CSV; reports the coarse loss");
        sub->add_option("--lambda", *lambda, "matchability weight in the coarse loss")->capture_default_str();
        on(sub, [=, this] {
            const auto probs = anchor_probs_from_tensor(read_rmgrid(fs::path(*probs_path)));
            const auto ag = parse_shape(*anchors);
            const AnchorGrid grid(ag.height(), ag.width());
            if (grid.size() != probs.anchor_count()) {
                throw Error("decode: file has " + std::to_string(probs.anchor_count()) + " anchors but --anchors gives " +
                            std::to_string(grid.size()));
            }
            const auto warp = to_warp(probs, grid);
            const auto dir = prepare_out(c->out);
            write_rmgrid(dir / "warp.rmgrid", warp_to_tensor(warp));
            write_warp_ppm(dir / "warp.ppm", warp);
            write_pgm(dir / "certainty.pgm", warp.grid(), warp.certainty(), 0.0, 1.0);
            double mc = 0.0;
            for (double v : warp.certainty()) mc += v;
            out_ << "decoded " << warp.grid().height() << "x" << warp.grid().width() << " warp, mean certainty "
                 << format_double(mc / static_cast<double>(warp.grid().cells())) << "\n";
            if (!gt->empty()) {
                const auto corr = read_correspondences_csv(fs::path(*gt));
                std::vector<bool> mask(probs.source().cells(), false);
                for (const auto& p : corr.pairs()) mask[probs.source().flat(normalized_to_pixel(p.a, probs.source()))] = true;
                CoarseLossConfig cfg{*lambda, grid};
                const auto loss = coarse_loss(probs, mask, corr, cfg);
                out_ << "coarse loss " << format_double(loss.loss) << " (conditional " << format_double(loss.conditional)
                     << ", marginal " << format_double(loss.marginal) << ")\n";
            }
            return kExitOk;
        });
    }

    void loss_sweep_cmd() {
        auto* sub = app_.add_subcommand("loss-sweep", "robust loss and gradient magnitude against residual norm");
        auto c = std::make_shared<Common>();
        auto cc = std::make_shared<double>(0.03);
        auto exponent = std::make_shared<int>(0);
        auto rmin = std::make_shared<double>(1e-5);
        auto rmax = std::make_shared<double>(1000.0);
        auto points = std::make_shared<std::size_t>(400);
        add_common(sub, *c);
        sub->add_option("--c", *cc, "base scale c")->capture_default_str();
        sub->add_option("--i", *exponent, "scale exponent: s = 2^i c")->capture_default_str();
        sub->add_option("--rmin", *rmin)->capture_default_str();
        sub->add_option("--rmax", *rmax)->capture_default_str();
        sub->add_option("--points", *points)->capture_default_str();
        on(sub, [=, this] {
            if (*exponent < 0) throw UsageError("--i must be nonnegative");
            const double s = std::ldexp(*cc, *exponent);
            const auto rows = loss_sweep(s, *rmin, *rmax, *points);
            std::ostringstream csv;
            csv << "r,loss,grad_magnitude\n";
            for (const auto& r : rows) {
                csv << format_double(r.r) << ',' << format_double(r.loss) << ',' << format_double(r.grad_magnitude) << '\n';
            }
            const auto dir = prepare_out(c->out);
            write_text(dir / "loss_sweep.csv", csv.str());
            // Asymptotic regimes: |g| / r near zero, |g| sqrt(r) for large r.
            auto spread = [&](auto pred, auto value) {
                double lo = INFINITY, hi = 0.0;
                std::size_t n = 0;
                for (const auto& r : rows) {
                    if (r.r > 0.0 && pred(r.r)) {
                        lo = std::min(lo, value(r));
                        hi = std::max(hi, value(r));
                        ++n;
                    }
                }
                return n >= 2 ? hi / lo - 1.0 : NAN;
            };
            const double small = spread([&](double r) { return r <= 0.01 * std::sqrt(s); },
                                        [](const LossSweepRow& r) { return r.grad_magnitude / r.r; });
            const double large = spread([&](double r) { return r >= 100.0 && r <= 1000.0; },
                                        [](const LossSweepRow& r) { return r.grad_magnitude * std::sqrt(r.r); });
            out_ << "s = " << format_double(s) << ", " << rows.size() << " rows, loss(0) = " << format_double(rows.front().loss)
                 << "\n";
            out_ << "relative spread of |g|/r for r <= 0.01 sqrt(s): "
                 << (std::isnan(small) ? std::string("no samples") : format_double(small)) << "\n";
            out_ << "relative spread of |g| sqrt(r) for 100 <= r <= 1000: "
                 << (std::isnan(large) ? std::string("no samples") : format_double(large)) << "\n";
            return kExitOk;
        });
    }

    void diffuse_cmd() {
        auto* sub = app_.add_subcommand("diffuse", "multimodality of diffused conditionals against boundary distance");
        auto c = std::make_shared<Common>();
        auto so = std::make_shared<SceneOptions>();
        auto grid = std::make_shared<std::string>("16x16");
        auto scales = std::make_shared<std::string>("0,0.05,0.1,0.2");
        auto threshold = std::make_shared<double>(0.1);
        auto axes = std::make_shared<std::string>("joint");
        add_common(sub, *c);
        add_scene_options(sub, *so, "two-translation");
        sub->add_option("--grid", *grid, "source and target grid")->capture_default_str();
        sub->add_option("--scales", *scales, "comma-separated diffusion scales")->capture_default_str();
        sub->add_option("--threshold", *threshold, "relative mode threshold")->capture_default_str();
        sub->add_option("--axes", *axes)->check(CLI::IsMember({"joint", "source", "target"}))->capture_default_str();
        on(sub, [=, this] {
            const auto scene = resolve_scene(*so, c->seed).build();
            SweepConfig cfg;
            cfg.source = cfg.target = parse_shape(*grid);
            cfg.rel_threshold = *threshold;
            cfg.axes = *axes == "joint" ? DiffusionAxes::joint
                                        : (*axes == "source" ? DiffusionAxes::source_only : DiffusionAxes::target_only);
            const auto s_list = parse_list<double>(*scales);
            const auto rep = multimodality_sweep(scene, s_list, cfg);
            const auto dir = prepare_out(c->out);
            std::ostringstream csv, cells;
            csv << "s,boundary_distance_bin,fraction_multimodal,n_cells\n";
            for (const auto& r : rep.rows) {
                csv << format_double(r.s) << ',' << r.bin << ',' << format_double(r.fraction_multimodal) << ',' << r.n_cells
                    << '\n';
                out_ << "s=" << format_double(r.s) << " bin=" << r.bin << " multimodal=" << format_double(r.fraction_multimodal)
                     << " (" << r.n_cells << " cells)\n";
            }
            cells << "s,cell,boundary_distance,modes,occluded\n";
            for (const auto& r : rep.cells) {
                cells << format_double(r.s) << ',' << r.cell << ',' << format_double(r.boundary_distance) << ',' << r.modes
                      << ',' << (r.occluded ? 1 : 0) << '\n';
            }
            write_text(dir / "multimodality.csv", csv.str());
            write_text(dir / "cells.csv", cells.str());
            // Snapshots of the conditional of the source cell nearest a boundary.
            const auto dist = boundary_distances(scene, cfg.source);
            const auto probe = static_cast<std::size_t>(std::min_element(dist.begin(), dist.end()) - dist.begin());
            const auto joint = rasterize_scene(scene, cfg.source, cfg.target);
            for (std::size_t i = 0; i < s_list.size(); ++i) {
                const auto q = diffuse(joint, s_list[i], cfg.axes);
                const auto row = q.joint.row(probe);
                double mass = 0.0;
                for (double v : row) mass += v;
                if (!(mass > 0.0)) continue;
                const auto cond = conditional_of(q, probe);
                const auto h = static_cast<std::uint32_t>(cond.target.height()), w = static_cast<std::uint32_t>(cond.target.width());
                const std::string stem = "conditional_" + std::to_string(i);
                write_rmgrid(dir / (stem + ".rmgrid"), make_tensor({h, w}, cond.probs));
                write_pgm(dir / (stem + ".pgm"), cond.target, cond.probs, 0.0,
                          *std::max_element(cond.probs.begin(), cond.probs.end()));
            }
            return kExitOk;
        });
    }

    void cascade() {
        auto* sub = app_.add_subcommand("cascade", "coarse-to-fine refinement of a perturbed coarse warp");
        auto c = std::make_shared<Common>();
        auto so = std::make_shared<SceneOptions>();
        auto base = std::make_shared<std::string>("56x56");
        auto dim = std::make_shared<std::size_t>(32);
        auto perturb = std::make_shared<double>(1.0);
        auto cfg = std::make_shared<CascadeConfig>();
        auto field = std::make_shared<FeatureFieldSpec>();
        add_common(sub, *c);
        add_scene_options(sub, *so, "affine");
        sub->add_option("--base", *base, "stride-1 grid; divisible by 56")->capture_default_str();
        sub->add_option("--dim", *dim, "feature channels")->capture_default_str();
        sub->add_option("--perturb", *perturb, "max coarse-warp error in stride-14 cells")->capture_default_str();
        sub->add_option("--temperature", cfg->temperature, "softargmax temperature")->capture_default_str();
        sub->add_option("--wavelength-min", field->wavelength_min)->capture_default_str();
        sub->add_option("--wavelength-max", field->wavelength_max)->capture_default_str();
        on(sub, [=, this] {
            const auto scene = resolve_scene(*so, c->seed).build();
            const auto g = parse_shape(*base);
            if (g.height() % 56 != 0 || g.width() % 56 != 0) throw UsageError("--base must be divisible by 56");
            const auto pyr = roma::synth_pyramid(scene, g, *dim, c->seed, *field);
            const GridSpec coarse(g.height() / 14, g.width() / 14);
            const auto start = perturbed_warp(scene, coarse, *perturb, c->seed + 1);
            const auto res = run_cascade(pyr.source, pyr.target, start, *cfg);
            const auto epe = cascade_stage_epe(res, scene, g);
            std::ostringstream csv;
            csv << "stage,stride,window,epe_fine_cells\n";
            csv << "input,14,0," << format_double(epe[0]) << '\n';
            out_ << "input        EPE " << format_double(epe[0]) << " fine cells\n";
            for (std::size_t i = 0; i < res.stages.size(); ++i) {
                const auto& sp = res.stages[i].spec;
                csv << i + 1 << ',' << sp.stride << ',' << sp.corr_window << ',' << format_double(epe[i + 1]) << '\n';
                out_ << "stride " << sp.stride << (sp.stride < 10 ? " " : "") << "    EPE " << format_double(epe[i + 1])
                     << " fine cells\n";
            }
            const auto dir = prepare_out(c->out);
            write_text(dir / "stage_epe.csv", csv.str());
            const auto& warp = res.final_warp();
            write_rmgrid(dir / "warp_final.rmgrid", warp_to_tensor(warp));
            write_warp_ppm(dir / "warp_final.ppm", warp);
            write_pgm(dir / "certainty_final.pgm", warp.grid(), warp.certainty(), 0.0, 1.0);
            std::vector<Correspondence> pred, gt;
            for (std::size_t i = 0; i < g.cells(); ++i) {
                const Vec2 truth = scene.warp(g.center(i));
                if (!in_extent(truth)) continue;
                const Vec2 p = warp.target_coords()[i];
                const Vec2 clamped{std::clamp(p.x, -1.0, 1.0), std::clamp(p.y, -1.0, 1.0)};
                pred.push_back({g.center(i), clamped, warp.certainty()[i]});
                gt.push_back({g.center(i), truth, 1.0});
            }
            write_correspondences_csv(dir / "pred_matches.csv", CorrespondenceSet(pred));
            write_correspondences_csv(dir / "gt_matches.csv", CorrespondenceSet(gt));
            return kExitOk;
        });
    }

    void steer() {
        auto* g = group("steer", "descriptor steering under quarter-turn rotations");
        {
            auto* sub = g->add_subcommand("fit", "fit a steering matrix");
            auto c = std::make_shared<Common>();
            auto base = std::make_shared<std::string>();
            auto rotated = std::make_shared<std::string>();
            auto ks = std::make_shared<std::string>("1");
            auto method = std::make_shared<std::string>("lsq");
            auto ridge = std::make_shared<double>(1e-8);
            auto opt = std::make_shared<L1Options>();
            auto init = std::make_shared<std::string>("lsq");
            add_common(sub, *c);
            sub->add_option("--base", *base, "unrotated descriptors (RMDESC1)")->required();
            sub->add_option("--rotated", *rotated, "comma-separated rotated sets, one per --k entry")->required();
            sub->add_option("--k", *ks, "comma-separated quarter-turn counts")->capture_default_str();
            sub->add_option("--method", *method)->check(CLI::IsMember({"lsq", "l1"}))->capture_default_str();
            sub->add_option("--ridge", *ridge, "lsq ridge; 0 disables")->capture_default_str();
            sub->add_option("--iters", opt->iters, "l1 iterations")->capture_default_str();
            sub->add_option("--step", opt->step, "l1 initial step")->capture_default_str();
            sub->add_option("--init", *init, "l1 initialization")->check(CLI::IsMember({"lsq", "random"}))->capture_default_str();
            on(sub, [=, this] {
                std::vector<std::string> paths;
                std::stringstream ss(*rotated);
                for (std::string p; std::getline(ss, p, ',');) paths.push_back(p);
                const auto k = parse_list<int>(*ks);
                if (k.size() != paths.size()) throw UsageError("--k and --rotated need the same number of entries");
                const auto b = read_descriptors(fs::path(*base));
                std::deque<DescriptorSet> rot;
                std::map<int, SteeringPair> sets;
                for (std::size_t i = 0; i < k.size(); ++i) {
                    if (k[i] < 1 || k[i] > 3) throw UsageError("--k entries must be 1, 2 or 3");
                    rot.push_back(read_descriptors(fs::path(paths[i])));
                    sets[k[i]] = {&b, &rot.back()};
                }
                SteeringMatrix w;
                if (*method == "lsq") {
                    if (k.size() != 1 || k[0] != 1) throw UsageError("lsq fits a single k = 1 pair");
                    const auto fit = fit_steering_lsq(b, rot.front(), *ridge);
                    w = fit.w;
                    out_ << "lsq fit, residual RMS " << format_double(fit.residual) << "\n";
                } else {
                    L1Options o = *opt;
                    o.seed = c->seed;
                    o.init = *init == "random" ? L1Init::random : L1Init::lsq;
                    const auto fit = fit_steering_l1(sets, o);
                    w = fit.w;
                    out_ << "l1 fit, loss " << format_double(fit.initial_loss) << " -> " << format_double(fit.final_loss)
                         << " in " << fit.iterations << " iterations\n";
                }
                const auto dir = prepare_out(c->out);
                write_steering(dir / "steering.rmsteer", w);
                out_ << "multi-k L1 loss " << format_double(steering_l1_loss(w, sets)) << "\n";
                return kExitOk;
            });
        }
        {
            auto* sub = g->add_subcommand("apply", "steer descriptors by W^k");
            auto c = std::make_shared<Common>();
            auto steer = std::make_shared<std::string>();
            auto input = std::make_shared<std::string>();
            auto k = std::make_shared<int>(1);
            add_common(sub, *c);
            sub->add_option("--steer", *steer, "steering matrix (RMSTEER1)")->required();
            sub->add_option("--input", *input, "descriptors (RMDESC1)")->required();
            sub->add_option("--k", *k, "quarter turns")->capture_default_str();
            on(sub, [=, this] {
                if (*k < 0) throw UsageError("--k must be nonnegative");
                const auto w = read_steering(fs::path(*steer));
                auto d = read_descriptors(fs::path(*input));
                d.descs = apply_steering(w, *k, d.descs);
                d.coords = rotate_keypoints(d.coords, RotationAction::quarter_turns(*k));
                const auto dir = prepare_out(c->out);
                write_descriptors(dir / "steered.rmdesc", d);
                out_ << "steered " << d.size() << " descriptors by W^" << *k << "\n";
                return kExitOk;
            });
        }
        {
            auto* sub = g->add_subcommand("eval", "mutual nearest-neighbour accuracy with and without steering");
            auto c = std::make_shared<Common>();
            auto steer = std::make_shared<std::string>();
            auto base = std::make_shared<std::string>();
            auto rotated = std::make_shared<std::string>();
            auto k = std::make_shared<int>(1);
            add_common(sub, *c);
            sub->add_option("--steer", *steer, "steering matrix (RMSTEER1)")->required();
            sub->add_option("--base", *base, "unrotated descriptors")->required();
            sub->add_option("--rotated", *rotated, "rotated descriptors")->required();
            sub->add_option("--k", *k, "quarter turns")->capture_default_str();
            on(sub, [=, this] {
                const auto w = read_steering(fs::path(*steer));
                const auto b = read_descriptors(fs::path(*base));
                const auto r = read_descriptors(fs::path(*rotated));
                const auto acc = rotation_matching_eval(b, r, w, *k);
                const json report{{"k", *k}, {"accuracy_without", acc.without}, {"accuracy_with", acc.with}};
                const auto dir = prepare_out(c->out);
                write_text(dir / "steer_eval.json", report.dump(2) + "\n");
                out_ << "accuracy_without " << format_double(acc.without) << "\naccuracy_with " << format_double(acc.with)
                     << "\n";
                return kExitOk;
            });
        }
    }

    void sample() {
        auto* sub = app_.add_subcommand("sample", "balanced sampling of matches from a warp");
        auto c = std::make_shared<Common>();
        auto warp_path = std::make_shared<std::string>();
        auto n = std::make_shared<std::size_t>(kDefaultMatchCount);
        auto h = std::make_shared<double>(kDefaultBandwidth);
        auto space = std::make_shared<std::string>("joint");
        auto no_reweight = std::make_shared<bool>(false);
        add_common(sub, *c);
        sub->add_option("--warp", *warp_path, "warp (RMGRID1 [H, W, 3])")->required();
        sub->add_option("--n-matches", *n, "matches to draw; clamped to the candidate count")->capture_default_str();
        sub->add_option("--bandwidth", *h, "KDE bandwidth")->capture_default_str();
        sub->add_option("--kde-space", *space)->check(CLI::IsMember({"joint", "source"}))->capture_default_str();
        sub->add_flag("--no-reweight", *no_reweight, "sample by certainty alone");
        on(sub, [=, this] {
            const auto warp = warp_from_tensor(read_rmgrid(fs::path(*warp_path)));
            const SamplingOptions opt{*space == "source" ? KdeSpace::source : KdeSpace::joint, !*no_reweight};
            const std::size_t avail = candidate_count(warp);
            const std::size_t count = std::min(*n, avail);
            if (count < *n) out_ << "requested " << *n << " matches, " << avail << " candidates available\n";
            if (count == 0) throw Error("sample: no candidate cells with positive certainty");
            const auto s = balanced_sample(warp, count, *h, c->seed, opt);
            const auto dir = prepare_out(c->out);
            write_correspondences_csv(dir / "matches.csv", s);
            out_ << "sampled " << s.size() << " matches\n";
            // Bandwidth sensitivity: spatial entropy over a 4x4 source binning.
            for (double f : {0.5, 1.0, 2.0}) {
                const auto alt = f == 1.0 ? s : balanced_sample(warp, count, f * *h, c->seed, opt);
                out_ << "bandwidth " << format_double(f * *h) << ": spatial entropy " << format_double(spatial_entropy(alt))
                     << "\n";
            }
            return kExitOk;
        });
    }

    void eval() {
        auto* sub = app_.add_subcommand("eval", "metrics report for matches and/or pose errors");
        auto c = std::make_shared<Common>();
        auto pred = std::make_shared<std::string>();
        auto gt = std::make_shared<std::string>();
        auto poses = std::make_shared<std::string>();
        auto ref = std::make_shared<double>(kDefaultRefResolution);
        auto pck_list = std::make_shared<std::string>("1,3,5");
        auto auc_list = std::make_shared<std::string>("5,10,20");
        add_common(sub, *c);
        sub->add_option("--pred", *pred, "predicted correspondences CSV");
        sub->add_option("--gt", *gt, "index-aligned ground-truth CSV");
        sub->add_option("--poses", *poses, "per-pair errors CSV: rot_deg,trans_deg");
        sub->add_option("--ref-res", *ref, "reference resolution in pixels")->capture_default_str();
        sub->add_option("--pck", *pck_list, "PCK thresholds in pixels")->capture_default_str();
        sub->add_option("--auc", *auc_list, "AUC thresholds in degrees")->capture_default_str();
        on(sub, [=, this] {
            if (pred->empty() != gt->empty()) throw UsageError("--pred and --gt go together");
            if (pred->empty() && poses->empty()) throw UsageError("nothing to evaluate: give --pred/--gt or --poses");
            json report = json::object();
            if (!pred->empty()) {
                const auto p = read_correspondences_csv(fs::path(*pred));
                const auto g = read_correspondences_csv(fs::path(*gt));
                json m{{"pairs", p.size()}, {"ref_res", *ref}, {"epe_px", epe(p, g, *ref)},
                       {"robustness", robustness(p, g, *ref)}};
                json pk = json::object();
                const auto errs = pixel_errors(p, g, *ref);
                for (double t : parse_list<double>(*pck_list)) pk[key_of(t)] = pck(errs, t);
                m["pck"] = pk;
                report["matches"] = m;
            }
            if (!poses->empty()) {
                std::vector<double> trans;
                const auto rot = read_pose_errors(*poses, trans);
                std::vector<double> worst(rot.size());
                for (std::size_t i = 0; i < rot.size(); ++i) worst[i] = std::max(rot[i], trans[i]);
                json a = json::object();
                for (double t : parse_list<double>(*auc_list)) a[key_of(t)] = auc(worst, t);
                report["poses"] = {{"count", rot.size()}, {"auc", a}, {"maa", maa(rot, trans)}};
            }
            const auto dir = prepare_out(c->out);
            const std::string text = report.dump(2) + "\n";
            write_text(dir / "metrics.json", text);
            out_ << text;
            return kExitOk;
        });
    }

    void selftest() {
        auto* sub = app_.add_subcommand("selftest", "run the acceptance checks in-process");
        auto only = std::make_shared<std::string>();
        sub->add_option("--only", *only, "comma-separated check ids");
        on(sub, [=, this] {
            checks::CheckContext ctx;
            ctx.run_cli = [](const std::vector<std::string>& a, std::ostream& o, std::ostream& e) { return cli::run(a, o, e); };
            std::vector<int> ids;
            if (!only->empty()) ids = parse_list<int>(*only);
            std::size_t run = 0, failed = 0;
            for (const auto& chk : checks::all_checks(ctx)) {
                if (!ids.empty() && std::find(ids.begin(), ids.end(), chk.id) == ids.end()) continue;
                checks::CheckResult r;
                try {
                    r = chk.run();
                } catch (const std::exception& e) {
                    r = {chk.id, chk.name, false, std::string("exception: ") + e.what()};
                }
                out_ << checks::format_line(r) << "\n";
                ++run;
                failed += r.passed ? 0 : 1;
            }
            out_ << "selftest: " << run - failed << "/" << run << " checks passed\n";
            return failed == 0 ? kExitOk : kExitData;
        });
    }

    std::ostream& out_;
    std::ostream& err_;
    CLI::App app_{"Dense matching toolkit: synthetic experiments, decoding, refinement, steering, sampling and metrics",
                  "roma"};
    std::map<std::string, CLI::App*> groups_;
    std::vector<std::pair<CLI::App*, std::function<int()>>> handlers_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    Cli cli(out, err);
    return cli.run(args);
}

}  // namespace roma::cli
