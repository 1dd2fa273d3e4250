#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "roma/anchors.hpp"

using namespace roma;

namespace {

std::vector<double> random_row(std::mt19937_64& rng, std::size_t k) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(k);
    double s = 0;
    for (auto& x : v) s += (x = u(rng));
    for (auto& x : v) x /= s;
    return v;
}

}  // namespace

TEST_CASE("anchor grid layout") {
    const auto one = build_anchor_grid(1, 1);
    CHECK(one.anchor(0) == Vec2{0.0, 0.0});
    CHECK(one.cell_area() == doctest::Approx(4.0));

    const auto two = build_anchor_grid(2, 2);
    CHECK(two.anchor(0) == Vec2{-0.5, -0.5});
    CHECK(two.anchor(1) == Vec2{0.5, -0.5});
    CHECK(two.anchor(2) == Vec2{-0.5, 0.5});
    CHECK(two.anchor(3) == Vec2{0.5, 0.5});

    CHECK(build_anchor_grid(64, 64).size() == 4096);
    CHECK_THROWS_AS(build_anchor_grid(0, 4), Error);
}

TEST_CASE("mixture density") {
    const auto grid = build_anchor_grid(2, 2);
    const GridSpec src(1, 1);

    SUBCASE("delta on one anchor") {
        const AnchorProbs p(src, 4, {0, 0, 0, 1}, {1.0});
        CHECK(mixture_density(p, grid, 0, {0.5, 0.5}) == doctest::Approx(1.0));
        CHECK(mixture_density(p, grid, 0, {-0.5, 0.5}) == 0.0);
    }
    SUBCASE("uniform") {
        const AnchorProbs p(src, 4, {0.25, 0.25, 0.25, 0.25}, {1.0});
        CHECK(mixture_density(p, grid, 0, {0.3, -0.9}) == doctest::Approx(0.25));
    }
    SUBCASE("integrates to one") {
        std::mt19937_64 rng(2);
        const auto g = build_anchor_grid(4, 5);
        const AnchorProbs p(src, 20, random_row(rng, 20), {0.5});
        const GridSpec fine(40, 50);
        double integral = 0;
        for (std::size_t i = 0; i < fine.cells(); ++i)
            integral += mixture_density(p, g, 0, fine.center(i)) * fine.cell_area();
        CHECK(integral == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("query outside the extent") {
        const AnchorProbs p(src, 4, {0.25, 0.25, 0.25, 0.25}, {1.0});
        CHECK_THROWS_AS(mixture_density(p, grid, 0, {1.2, 0.0}), Error);
    }
}

TEST_CASE("anchor probability validation") {
    const GridSpec src(1, 1);
    CHECK_THROWS_AS(AnchorProbs(src, 2, {0.5, 0.6}, {1.0}), Error);
    CHECK_THROWS_AS(AnchorProbs(src, 2, {1.5, -0.5}, {1.0}), Error);
    CHECK_THROWS_AS(AnchorProbs(src, 2, {0.5, 0.5}, {1.1}), Error);
    CHECK_THROWS_AS(AnchorProbs::normalized(src, 2, {0.0, 0.0}, {1.0}), Error);
}

TEST_CASE("closest anchor") {
    const auto g = build_anchor_grid(2, 2);
    // equidistant from all four: lowest index wins
    CHECK(closest_anchor(g, {0.0, 0.0}) == 0);
    CHECK(closest_anchor(g, {0.0, 0.5}) == 2);

    const auto big = build_anchor_grid(7, 9);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int i = 0; i < 500; ++i) {
        const Vec2 x{u(rng), u(rng)};
        std::size_t best = 0;
        for (std::size_t k = 1; k < big.size(); ++k)
            if (norm(big.anchor(k) - x) < norm(big.anchor(best) - x)) best = k;
        CHECK(closest_anchor(big, x) == best);
    }
}

TEST_CASE("decoding to a warp") {
    const auto g = build_anchor_grid(2, 2);
    const GridSpec src(1, 1);

    SUBCASE("delta decodes to its anchor") {
        const auto w = to_warp(AnchorProbs(src, 4, {0, 1, 0, 0}, {0.3}), g);
        CHECK(w.target_coords()[0] == Vec2{0.5, -0.5});
        CHECK(w.certainty()[0] == 0.3);
    }
    SUBCASE("equal mass on adjacent anchors decodes to the midpoint") {
        const auto w = to_warp(AnchorProbs(src, 4, {0.5, 0.5, 0, 0}, {1.0}), g);
        CHECK(w.target_coords()[0].x == doctest::Approx(0.0));
        CHECK(w.target_coords()[0].y == doctest::Approx(-0.5));
    }
    SUBCASE("random rows match the literal definition") {
        std::mt19937_64 rng(9);
        const auto big = build_anchor_grid(6, 7);
        const GridSpec s(3, 4);
        std::vector<double> pi;
        for (std::size_t i = 0; i < s.cells(); ++i) {
            const auto r = random_row(rng, big.size());
            pi.insert(pi.end(), r.begin(), r.end());
        }
        const AnchorProbs p(s, big.size(), pi, std::vector<double>(s.cells(), 0.5));
        const auto w = to_warp(p, big);
        for (std::size_t i = 0; i < s.cells(); ++i) {
            const auto row = p.row(i);
            const Vec2 want = oracle::literal_decode({row.begin(), row.end()}, 6, 7);
            CHECK(w.target_coords()[i].x == doctest::Approx(want.x).epsilon(1e-12));
            CHECK(w.target_coords()[i].y == doctest::Approx(want.y).epsilon(1e-12));
        }
    }
    SUBCASE("K must match the anchor grid") {
        CHECK_THROWS_AS(to_warp(AnchorProbs(src, 3, {0.2, 0.3, 0.5}, {1.0}), g), Error);
    }
}

TEST_CASE("four-neighbourhood handles borders") {
    const auto g = build_anchor_grid(3, 3);
    CHECK(four_neighborhood(g, 0).size() == 3);
    CHECK(four_neighborhood(g, 1).size() == 4);
    CHECK(four_neighborhood(g, 4).size() == 5);
    CHECK(four_neighborhood(build_anchor_grid(1, 1), 0).size() == 1);
}

TEST_CASE("property: decoded coordinates stay in the anchor center hull") {
    std::mt19937_64 rng(21);
    const auto g = build_anchor_grid(5, 8);
    const double xmax = 1.0 - g.cells().cell_width() / 2, ymax = 1.0 - g.cells().cell_height() / 2;
    for (int t = 0; t < 200; ++t) {
        const AnchorProbs p(GridSpec(1, 1), g.size(), random_row(rng, g.size()), {1.0});
        const Vec2 x = to_warp(p, g).target_coords()[0];
        CHECK(std::abs(x.x) <= xmax + 1e-12);
        CHECK(std::abs(x.y) <= ymax + 1e-12);
    }
}

TEST_CASE("property: argmax and decode are invariant to positive row scaling") {
    std::mt19937_64 rng(22);
    const auto g = build_anchor_grid(4, 4);
    for (int t = 0; t < 100; ++t) {
        auto row = random_row(rng, 16);
        const auto a = to_warp(AnchorProbs(GridSpec(1, 1), 16, row, {1.0}), g);
        for (auto& v : row) v *= 7.5;
        const auto b = to_warp(AnchorProbs::normalized(GridSpec(1, 1), 16, row, {1.0}), g);
        CHECK(norm(a.target_coords()[0] - b.target_coords()[0]) < 1e-12);
    }
}

TEST_CASE("property: a narrow Gaussian decodes within one anchor cell of its mean") {
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> u(-0.9, 0.9);
    const auto g = build_anchor_grid(16, 16);
    const GridSpec src(4, 4);
    std::vector<Vec2> means(src.cells());
    for (auto& m : means) m = {u(rng), u(rng)};
    const auto p = gaussian_anchor_probs(src, means, 0.02, std::vector<double>(src.cells(), 1.0), g);
    const auto w = to_warp(p, g);
    for (std::size_t i = 0; i < src.cells(); ++i)
        CHECK(norm(w.target_coords()[i] - means[i]) < g.cells().cell_width());
}

TEST_CASE("anchor probabilities round trip through a tensor") {
    std::mt19937_64 rng(8);
    const GridSpec s(2, 3);
    std::vector<double> pi;
    for (std::size_t i = 0; i < s.cells(); ++i) {
        std::vector<double> r(4, 0.0);
        r[i % 4] = 1.0;  // exact in float32
        pi.insert(pi.end(), r.begin(), r.end());
    }
    const AnchorProbs p(s, 4, pi, {0, 0.25, 0.5, 0.75, 1, 0.5});
    const auto t = anchor_probs_to_tensor(p);
    CHECK(t.shape == std::vector<std::uint32_t>{2, 3, 5});
    const auto q = anchor_probs_from_tensor(t);
    CHECK(std::equal(q.pi().begin(), q.pi().end(), p.pi().begin()));
    CHECK(std::equal(q.matchability().begin(), q.matchability().end(), p.matchability().begin()));
}

TEST_CASE("regression head passes coordinates through") {
    const GridSpec s(1, 2);
    const std::vector<Vec2> c{{0.1, 0.2}, {-0.3, 0.4}};
    const auto w = to_warp_regression(s, c, std::vector<double>{0.2, 0.9});
    CHECK(w.target_coords()[1] == Vec2{-0.3, 0.4});
    CHECK(w.certainty()[1] == 0.9);
}
