#include <doctest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "roma/steering.hpp"

using namespace roma;

namespace {

Eigen::MatrixXd random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n;
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

double median_abs(const Eigen::MatrixXd& m) {
    std::vector<double> v(m.data(), m.data() + m.size());
    for (auto& x : v) x = std::abs(x);
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("quarter-turn keypoint rotation") {
    const std::vector<Vec2> p{{1.0, 0.0}, {0.3, -0.7}};
    CHECK(rotate_keypoints(p, RotationAction::quarter_turns(0)) == p);
    CHECK(rotate_keypoints({{1.0, 0.0}}, RotationAction::quarter_turns(1))[0] == Vec2{0.0, 1.0});
    CHECK(rotate_keypoints({{0.5, 0.5}}, RotationAction::quarter_turns(1, {0.5, 0.0}))[0] == Vec2{0.0, 0.0});

    std::mt19937_64 rng(61);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<Vec2> pts(200);
    for (auto& x : pts) x = {u(rng), u(rng)};
    const Vec2 c{u(rng), u(rng)};
    auto q = pts;
    for (int i = 0; i < 4; ++i) q = rotate_keypoints(q, RotationAction::quarter_turns(1, c));
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(norm(q[i] - pts[i]) < 1e-12);
    CHECK(RotationAction::quarter_turns(5).k == 1);
    CHECK(RotationAction::quarter_turns(-1).k == 3);
}

TEST_CASE("equivariant generator") {
    const auto w = default_steering_truth(16, 3);
    const Eigen::MatrixXd w4 = w.w * w.w * w.w * w.w;
    CHECK((w4 - Eigen::MatrixXd::Identity(16, 16)).norm() < 1e-12);
    // no 2x2 block acts as the identity
    for (Eigen::Index b = 0; b < 16; b += 2) CHECK(std::abs(w.w(b, b) - 1.0) > 0.5);

    const auto sets = synth_equivariant(40, 16, w, {}, 9);
    CHECK(sets[0].descs.rowwise().norm().minCoeff() == doctest::Approx(1.0));
    for (int k = 1; k < 4; ++k) {
        CHECK(sets[static_cast<std::size_t>(k)].descs == sets[static_cast<std::size_t>(k - 1)].descs * w.w.transpose());
        const auto rot = rotate_keypoints(sets[0].coords, RotationAction::quarter_turns(k));
        for (std::size_t i = 0; i < rot.size(); ++i)
            CHECK(norm(sets[static_cast<std::size_t>(k)].coords[i] - rot[i]) < 1e-15);
    }
    const auto again = synth_equivariant(40, 16, w, {}, 9);
    CHECK(again[2].descs == sets[2].descs);
    CHECK_THROWS_AS(default_steering_truth(5, 1), Error);
    CHECK_THROWS_AS(synth_equivariant(10, 8, w, {}, 1), Error);
}

TEST_CASE("least-squares steering fit") {
    const std::size_t d = 8;
    const auto truth = default_steering_truth(d, 4);
    SUBCASE("identity data") {
        const auto s = synth_equivariant(64, d, truth, {}, 1);
        const auto f = fit_steering_lsq(s[0], s[0]);
        CHECK((f.w.w - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-8);
    }
    SUBCASE("noiseless recovery with N = 4D") {
        const auto s = synth_equivariant(4 * d, d, truth, {}, 2);
        const auto f = fit_steering_lsq(s[0], s[1]);
        CHECK((f.w.w - truth.w).norm() < 1e-6);
        CHECK((f.w.power(4) - Eigen::MatrixXd::Identity(8, 8)).norm() < 1e-4);
    }
    SUBCASE("residual reflects the noise level") {
        const auto s = synth_equivariant(400, d, truth, {0.01}, 3);
        const auto f = fit_steering_lsq(s[0], s[1]);
        CHECK(f.residual < 0.03);
        CHECK(f.residual > 0.005);
    }
    SUBCASE("rank deficiency without ridge") {
        const auto s = synth_equivariant(4, d, truth, {}, 4);
        CHECK_THROWS_AS(fit_steering_lsq(s[0], s[1], 0.0), NumericalError);
        CHECK_NOTHROW(fit_steering_lsq(s[0], s[1], 1e-3));
    }
}

TEST_CASE("L1 steering fit") {
    const std::size_t d = 8;
    const auto truth = default_steering_truth(d, 5);
    const auto s = synth_equivariant(64, d, truth, {}, 6);
    const std::map<int, SteeringPair> sets{{1, {&s[0], &s[1]}}, {2, {&s[0], &s[2]}}, {3, {&s[0], &s[3]}}};

    SUBCASE("starting at the truth stays there") {
        L1Options o;
        o.init = L1Init::given;
        o.init_matrix = truth;
        const auto f = fit_steering_l1(sets, o);
        CHECK(f.final_loss < 1e-15);
        CHECK((f.w.w - truth.w).norm() < 1e-12);
    }
    SUBCASE("random initialization converges") {
        L1Options o;
        o.init = L1Init::random;
        o.seed = 3;
        const auto f = fit_steering_l1(sets, o);
        CHECK(f.final_loss < 1e-3);
        CHECK(f.final_loss <= f.initial_loss);
        CHECK(f.iterations <= 2000);
    }
    SUBCASE("missing k = 1 data for the default initialization") {
        CHECK_THROWS_AS(fit_steering_l1({{2, {&s[0], &s[2]}}}), Error);
        CHECK_THROWS_AS(fit_steering_l1({{4, {&s[0], &s[2]}}}), Error);
    }
}

TEST_CASE("L1 fit is robust to gross outliers") {
    const std::size_t d = 8;
    const auto truth = default_steering_truth(d, 7);
    const auto s = synth_equivariant(256, d, truth, {0.02, NoiseKind::laplace, 0.05, 0.5}, 8);
    const std::map<int, SteeringPair> sets{{1, {&s[0], &s[1]}}, {2, {&s[0], &s[2]}}, {3, {&s[0], &s[3]}}};
    const auto lsq = fit_steering_lsq(s[0], s[1]);
    const auto l1 = fit_steering_l1(sets);
    CHECK(median_abs(l1.w.w - truth.w) < median_abs(lsq.w.w - truth.w));
}

TEST_CASE("applying the steering matrix") {
    std::mt19937_64 rng(62);
    const SteeringMatrix w(random_matrix(rng, 6, 6));
    const auto x = random_matrix(rng, 10, 6);
    CHECK(apply_steering(w, 0, x) == x);
    CHECK((apply_steering(w, 2, x) - apply_steering(w, 1, apply_steering(w, 1, x))).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::MatrixXd want(10, 6);
    for (Eigen::Index n = 0; n < 10; ++n)
        for (Eigen::Index i = 0; i < 6; ++i) {
            double acc = 0;
            for (Eigen::Index a = 0; a < 6; ++a)
                for (Eigen::Index b = 0; b < 6; ++b)
                    for (Eigen::Index c = 0; c < 6; ++c) acc += w.w(i, a) * w.w(a, b) * w.w(b, c) * x(n, c);
            want(n, i) = acc;
        }
    CHECK((apply_steering(w, 3, x) - want).cwiseAbs().maxCoeff() < 1e-10);
    CHECK_THROWS_AS(apply_steering(w, 1, random_matrix(rng, 3, 5)), Error);
    CHECK_THROWS_AS(apply_steering(w, 4, x), Error);
}

TEST_CASE("mutual nearest neighbours") {
    std::mt19937_64 rng(63);
    const auto a = random_matrix(rng, 30, 8);
    SUBCASE("self matching is the identity") {
        const auto m = mutual_nn_match(a, a);
        REQUIRE(m.size() == 30);
        for (std::size_t i = 0; i < m.size(); ++i) {
            CHECK(m[i].a == i);
            CHECK(m[i].b == i);
            CHECK(m[i].similarity == doctest::Approx(1.0));
        }
    }
    SUBCASE("permuted orthonormal descriptors") {
        const Eigen::MatrixXd e = Eigen::MatrixXd::Identity(6, 6);
        const std::vector<Eigen::Index> perm{3, 0, 5, 1, 4, 2};
        Eigen::MatrixXd b(6, 6);
        for (Eigen::Index i = 0; i < 6; ++i) b.row(i) = e.row(perm[static_cast<std::size_t>(i)]);
        const auto m = mutual_nn_match(e, b);
        REQUIRE(m.size() == 6);
        for (const auto& x : m) CHECK(perm[x.b] == static_cast<Eigen::Index>(x.a));
    }
    SUBCASE("random sets against a brute-force scan") {
        for (int t = 0; t < 20; ++t) {
            const auto x = random_matrix(rng, 25, 6), y = random_matrix(rng, 31, 6);
            const auto got = mutual_nn_match(x, y);
            const auto want = oracle::brute_mutual_nn(x, y);
            REQUIRE(got.size() == want.size());
            for (std::size_t i = 0; i < got.size(); ++i) {
                CHECK(got[i].a == want[i].first);
                CHECK(got[i].b == want[i].second);
            }
        }
    }
    SUBCASE("zero-norm descriptor") {
        auto z = a;
        z.row(4).setZero();
        CHECK_THROWS_AS(mutual_nn_match(z, a), Error);
    }
}

TEST_CASE("rotation matching evaluation") {
    const std::size_t d = 32;
    const auto truth = default_steering_truth(d, 11);
    const auto s = synth_equivariant(256, d, truth, {0.05}, 12);
    const auto e0 = rotation_matching_eval(s[0], s[0], truth, 0);
    CHECK(e0.without == e0.with);

    const auto fitted = fit_steering_lsq(s[0], s[1]).w;
    for (int k = 1; k <= 3; ++k) {
        const auto e = rotation_matching_eval(s[0], s[static_cast<std::size_t>(k)], fitted, k);
        CHECK(e.with >= 0.95);
        CHECK(e.with > e.without);
    }
    const auto e2 = rotation_matching_eval(s[0], s[2], truth, 2);
    CHECK(e2.without < 0.05);
    CHECK(e2.with >= 0.95);
}

TEST_CASE("descriptor and steering files round trip") {
    std::mt19937_64 rng(64);
    std::vector<Vec2> c{{0.5, -0.25}, {0.0, 1.0}, {-1.0, 0.125}};
    Eigen::MatrixXd d(3, 4);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = static_cast<double>(static_cast<float>(i) / 8.0f);
    const DescriptorSet set(c, d);
    std::stringstream ss;
    write_descriptors(ss, set);
    CHECK(ss.str().size() == 7 + 8 + 3 * 6 * 4);
    const auto back = read_descriptors(ss);
    CHECK(back.coords == set.coords);
    CHECK(back.descs == set.descs);

    const SteeringMatrix w(Eigen::MatrixXd{{0.0, -1.0}, {1.0, 0.0}});
    std::stringstream sw;
    write_steering(sw, w);
    CHECK(read_steering(sw).w == w.w);

    std::stringstream bad("RMDESC0" + std::string(16, '\0'));
    CHECK_THROWS_AS(read_descriptors(bad), FormatError);
    std::stringstream full;
    write_descriptors(full, set);
    std::stringstream truncated(full.str().substr(0, 30));
    CHECK_THROWS_AS(read_descriptors(truncated), FormatError);
    std::stringstream wrong_kind;
    write_descriptors(wrong_kind, set);
    CHECK_THROWS_AS(read_steering(wrong_kind), FormatError);
}
