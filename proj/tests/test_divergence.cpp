#include "bedroil/divergence.hpp"
#include "bedroil/mdp.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace bedroil;

namespace {

const std::vector<std::string> kAll{"soft_tv", "tv", "kl", "chi2", "soft_chi2"};
const std::vector<std::string> kSmooth{"soft_tv", "kl", "chi2", "soft_chi2"};

} // namespace

TEST(Generator, VanishesAtOne) {
    for (const auto& name : kAll) EXPECT_EQ(make_generator(name)(1.0), 0.0) << name;
}

TEST(Generator, SoftTvValues) {
    const FGenerator g = make_generator("soft_tv");
    EXPECT_DOUBLE_EQ(g.inverse_derivative(0.0), 1.0);
    EXPECT_NEAR(g(2.0), 0.5 * std::log(std::cosh(1.0)), 1e-15);
    EXPECT_NEAR(g(2.0), 0.21689, 1e-5);
    // stable far from 1
    EXPECT_NEAR(g(1001.0), 0.5 * (1000.0 - std::log(2.0)), 1e-9);
}

TEST(Generator, ChiSquaredInverse) { EXPECT_DOUBLE_EQ(make_generator("chi2").inverse_derivative(0.5), 1.5); }

TEST(Generator, KlAndSoftChiSquaredInverseColumns) {
    EXPECT_NEAR(make_generator("kl").inverse_derivative(0.3), std::exp(-0.7), 1e-15);
    EXPECT_NEAR(make_generator("soft_chi2").inverse_derivative(-0.3), std::exp(-0.3), 1e-15);
    EXPECT_NEAR(make_generator("soft_chi2").inverse_derivative(0.3), 1.3, 1e-15);
}

TEST(Generator, KlUsesZeroLogZeroConvention) { EXPECT_EQ(make_generator("kl")(0.0), 0.0); }

TEST(Generator, TvHasNoInverseDerivative) {
    const FGenerator tv = make_generator("tv");
    EXPECT_FALSE(tv.has_inverse_derivative());
    try {
        tv.inverse_derivative(0.1);
        FAIL() << "expected an error";
    } catch (const ModelError& e) {
        EXPECT_NE(std::string(e.what()).find("non-differentiable generator"), std::string::npos);
    }
}

TEST(Generator, SoftTvInverseSaturatesOutsideItsDomain) {
    const FGenerator g = make_generator("soft_tv");
    EXPECT_EQ(g.inverse_derivative(0.5), std::numeric_limits<double>::infinity());
    EXPECT_EQ(g.inverse_derivative(-0.7), -std::numeric_limits<double>::infinity());
}

TEST(Generator, UnknownNameAndDefaultCap) {
    EXPECT_THROW(make_generator("hellinger"), ModelError);
    EXPECT_EQ(make_generator("kl").saturation_weight(), 1e3);
    EXPECT_EQ(make_generator("kl", 50.0).saturation_weight(), 50.0);
}

TEST(Generator, ConvexOnRandomTriples) {
    Rng rng = make_rng(1);
    for (const auto& name : kAll) {
        const FGenerator f = make_generator(name);
        for (int i = 0; i < 1000; ++i) {
            double v[3] = {uniform(rng, 0.0, 10.0), uniform(rng, 0.0, 10.0), uniform(rng, 0.0, 10.0)};
            std::sort(v, v + 3);
            const auto [a, b, c] = v;
            if (c - a <= 0.0) continue;
            const double t = (b - a) / (c - a);
            EXPECT_LE(f(b), (1.0 - t) * f(a) + t * f(c) + 1e-9) << name << " at " << a << "," << b << "," << c;
        }
    }
}

TEST(Generator, InverseDerivativeRoundTrip) {
    Rng rng = make_rng(2);
    for (const auto& name : kSmooth) {
        const FGenerator f = make_generator(name);
        for (int i = 0; i < 1000; ++i) {
            const double x = uniform(rng, 0.01, 5.0);
            EXPECT_NEAR(f.inverse_derivative(f.derivative(x)), x, 1e-8) << name << " at " << x;
        }
    }
}

TEST(FDivergence, ZeroOnIdenticalDistributions) {
    Rng rng = make_rng(3);
    for (const auto& name : kAll) {
        const auto p = random_simplex(rng, 5);
        EXPECT_NEAR(f_divergence(make_generator(name), p, p), 0.0, 1e-12) << name;
    }
}

TEST(FDivergence, HandEvaluations) {
    const std::vector<double> p{1.0, 0.0}, q{0.5, 0.5};
    EXPECT_NEAR(f_divergence(make_generator("tv"), p, q), 0.5, 1e-15);
    const std::vector<double> p2{0.5, 0.5}, q2{0.25, 0.75};
    const double direct = 0.5 * std::log(0.5 / 0.25) + 0.5 * std::log(0.5 / 0.75);
    EXPECT_NEAR(f_divergence(make_generator("kl"), p2, q2), direct, 1e-15);
    EXPECT_NEAR(direct, 0.14384, 1e-5);
}

TEST(FDivergence, SupportConvention) {
    const std::vector<double> p{0.5, 0.5}, q{1.0, 0.0};
    EXPECT_THROW(f_divergence(make_generator("kl"), p, q), ModelError);
    EXPECT_THROW(f_divergence(make_generator("chi2"), p, q), ModelError);
    // tv: q f(p/q) on the shared support plus p/2 off it
    EXPECT_NEAR(f_divergence(make_generator("tv"), p, q), 0.5, 1e-15);
    // both zero contributes nothing
    const std::vector<double> p0{1.0, 0.0}, q0{1.0, 0.0};
    EXPECT_EQ(f_divergence(make_generator("kl"), p0, q0), 0.0);
}

TEST(FDivergence, RejectsInvalidInputs) {
    const std::vector<double> p{0.7, 0.7}, q{0.5, 0.5};
    EXPECT_THROW(f_divergence(make_generator("kl"), p, q), ModelError);
    EXPECT_THROW(f_divergence(make_generator("kl"), std::vector<double>{1.0}, q), ModelError);
}

TEST(TvDistance, Basics) {
    const std::vector<double> p{1.0, 0.0}, q{0.0, 1.0};
    EXPECT_EQ(tv_distance(p, p), 0.0);
    EXPECT_EQ(tv_distance(p, q), 1.0);
}

TEST(TvDistance, MatchesTvGenerator) {
    Rng rng = make_rng(4);
    const FGenerator tv = make_generator("tv");
    for (int i = 0; i < 1000; ++i) {
        auto p = random_simplex(rng, 6), q = random_simplex(rng, 6);
        if (i % 3 == 0) {  // include zeros on either side
            q[uniform_index(rng, 6)] = 0.0;
            p[uniform_index(rng, 6)] = 0.0;
            double sp = 0.0, sq = 0.0;
            for (int k = 0; k < 6; ++k) sp += p[k], sq += q[k];
            for (int k = 0; k < 6; ++k) p[k] /= sp, q[k] /= sq;
        }
        EXPECT_NEAR(tv_distance(p, q), f_divergence(tv, p, q), 1e-12);
    }
}

TEST(Dominance, SoftTvBelowTvPointwise) {
    Rng rng = make_rng(5);
    const FGenerator soft = make_generator("soft_tv"), tv = make_generator("tv");
    for (int i = 0; i < 100'000; ++i) {
        const double x = uniform(rng, 0.0, 50.0);
        ASSERT_LE(soft(x), tv(x)) << x;
    }
}

TEST(Dominance, SoftTvDivergenceBelowTvDistance) {
    Rng rng = make_rng(6);
    const FGenerator soft = make_generator("soft_tv");
    for (int i = 0; i < 1000; ++i) {
        const auto p = random_simplex(rng, 5), q = random_simplex(rng, 5);
        EXPECT_LE(f_divergence(soft, p, q), tv_distance(p, q));
    }
}

TEST(Dominance, PointwiseOrderTransfersToDivergences) {
    // For every catalog pair ordered on a grid covering the ratios that occur,
    // the divergences are ordered the same way.
    Rng rng = make_rng(7);
    std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
    for (int i = 0; i < 1000; ++i) pairs.emplace_back(random_simplex(rng, 4, 0.05), random_simplex(rng, 4, 0.05));
    int ordered_pairs = 0;
    for (const auto& fn : kAll)
        for (const auto& gn : kAll) {
            if (fn == gn) continue;
            const FGenerator f = make_generator(fn), g = make_generator(gn);
            bool below = true;
            for (int k = 0; k <= 400'000 && below; ++k) {
                const double x = 200.0 * k / 400'000;
                below = f(x) <= g(x);
            }
            if (!below) continue;
            ++ordered_pairs;
            for (const auto& [p, q] : pairs) {
                double max_ratio = 0.0;
                for (int k = 0; k < 4; ++k) max_ratio = std::max(max_ratio, p[k] / q[k]);
                ASSERT_LT(max_ratio, 200.0);
                EXPECT_LE(f_divergence(f, p, q), f_divergence(g, p, q) + 1e-15) << fn << " vs " << gn;
            }
        }
    EXPECT_GE(ordered_pairs, 3);  // soft_tv <= tv, chi2, soft_chi2 at least
}
