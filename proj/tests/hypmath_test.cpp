#include "ecnet/hypmath.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "ecnet/rng.hpp"

using namespace ecnet;

namespace {

Vec random_tangent(Rng& rng, std::size_t n, double max_norm) {
    Vec v(n);
    for (double& x : v) x = rng.normal();
    const double r = norm(v);
    const double target = max_norm * rng.uniform();
    for (double& x : v) x *= target / r;
    return v;
}

}  // namespace

// Oracle constants below are frozen from a 30-digit scalar evaluation.

TEST(Exp0, OriginAndClosedForm) {
    EXPECT_EQ(norm(exp0(Vec{0.0, 0.0}, 1.0)), 0.0);
    const Vec h = exp0(Vec{1.0, 0.0}, 1.0);
    EXPECT_NEAR(h[0], 0.761594155955764888, 1e-15);  // tanh(1)
    EXPECT_NEAR(h[1], 0.0, 1e-15);
}

TEST(Exp0, ClipBranch) {
    auto res = exp0_clipped(Vec{10.0, 0.0}, 1.0, 0.05);
    EXPECT_TRUE(res.clipped);
    EXPECT_NEAR(norm(res.x), 0.95, 1e-15);
}

TEST(Exp0, NonFiniteRejected) {
    EXPECT_THROW(exp0(Vec{std::nan(""), 0.0}, 1.0), std::domain_error);
}

TEST(Log0, OriginAndInverse) {
    EXPECT_EQ(norm(log0(Vec{0.0, 0.0}, 1.0)), 0.0);
    const Vec v = log0(Vec{0.761594155955764888, 0.0}, 1.0);
    EXPECT_NEAR(v[0], 1.0, 1e-12);
    EXPECT_THROW(log0(Vec{1.0, 0.0}, 1.0), std::domain_error);
}

TEST(Log0, RoundTripProperty) {
    for (double c : {1.0, 0.8}) {
        Rng rng(91);
        for (int i = 0; i < 1000; ++i) {
            // stay below the clip radius so exp0 is invertible
            const double safe = 0.9 * artanh(1.0 - 0.05) / std::sqrt(c);
            const Vec v = random_tangent(rng, 4, std::min(2.0, safe));
            const Vec back = log0(exp0(v, c), c);
            double err = 0.0;
            for (std::size_t j = 0; j < v.size(); ++j) err += std::fabs(back[j] - v[j]);
            EXPECT_LE(err, 1e-9);
        }
    }
}

TEST(MobiusAdd, Identities) {
    Rng rng(17);
    for (int i = 0; i < 200; ++i) {
        const Vec y = exp0(random_tangent(rng, 3, 2.0), 1.0);
        const Vec zero(3, 0.0);
        const Vec idy = mobius_add(zero, y, 1.0);
        Vec ny(3);
        for (int j = 0; j < 3; ++j) ny[j] = -y[j];
        const Vec inv = mobius_add(ny, y, 1.0);
        for (int j = 0; j < 3; ++j) {
            EXPECT_NEAR(idy[j], y[j], 1e-12);
            EXPECT_NEAR(inv[j], 0.0, 1e-12);
        }
    }
}

TEST(MobiusAdd, CollinearOracle) {
    const Vec s = mobius_add(Vec{0.3, 0.0}, Vec{0.3, 0.0}, 1.0);
    EXPECT_NEAR(s[0], 0.550458715596330275, 1e-15);  // 0.6/1.09
    EXPECT_NEAR(s[1], 0.0, 1e-15);
}

TEST(MobiusAdd, CurvatureMismatchShape) {
    EXPECT_THROW(mobius_add(Vec{0.1}, Vec{0.1, 0.0}, 1.0), std::domain_error);
}

TEST(PoincareDist, OracleAndProperties) {
    const Vec x{0.5, 0.0};
    EXPECT_NEAR(poincare_dist(Vec{0.0, 0.0}, x, 1.0), 1.098612288668109691, 1e-15);
    EXPECT_EQ(poincare_dist(x, x, 1.0), 0.0);

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        const Vec a = exp0(random_tangent(rng, 3, 2.0), 0.8);
        const Vec b = exp0(random_tangent(rng, 3, 2.0), 0.8);
        const Vec c = exp0(random_tangent(rng, 3, 2.0), 0.8);
        const double ab = poincare_dist(a, b, 0.8);
        EXPECT_NEAR(ab, poincare_dist(b, a, 0.8), 1e-12);
        EXPECT_LE(ab, poincare_dist(a, c, 0.8) + poincare_dist(c, b, 0.8) + 1e-9);
    }
}

TEST(PoincareDist, ClosedFormFromOrigin) {
    Rng rng(23);
    for (double c : {1.0, 0.8}) {
        for (int i = 0; i < 200; ++i) {
            const Vec x = exp0(random_tangent(rng, 4, 2.5), c);
            const double want = 2.0 / std::sqrt(c) * artanh(std::sqrt(c) * norm(x));
            EXPECT_NEAR(poincare_dist(Vec(4, 0.0), x, c), want, 1e-12);
        }
    }
}

TEST(ExpAt, BasePointIdentities) {
    const Vec v{0.3, -0.2};
    const Vec from_origin = exp_at(Vec{0.0, 0.0}, v, 1.0);
    const Vec direct = exp0(v, 1.0);
    EXPECT_NEAR(from_origin[0], direct[0], 1e-15);
    EXPECT_NEAR(from_origin[1], direct[1], 1e-15);

    const Vec w{0.4, 0.1};
    const Vec still = exp_at(w, Vec{0.0, 0.0}, 1.0);
    EXPECT_EQ(still[0], w[0]);
    EXPECT_EQ(still[1], w[1]);
}

TEST(ExpAt, GeodesicDistanceOracle) {
    // d(w, exp_w(v)) = lambda_w ||v|| for the gyrovector exponential; the
    // first-order lambda_w-scaled displacement is the same quantity.
    const Vec w{0.5, 0.0};
    const Vec v{0.1, 0.0};
    const Vec y = exp_at(w, v, 1.0);
    EXPECT_NEAR(norm(y), 0.593232653653068476, 1e-14);
    const double lam = conformal_factor(w, 1.0);  // 8/3
    EXPECT_NEAR(poincare_dist(w, y, 1.0), lam * norm(v), 1e-3);
    EXPECT_NEAR(poincare_dist(w, y, 1.0), 0.266666666666666667, 1e-12);
}

TEST(ConformalFactor, Oracle) {
    EXPECT_EQ(conformal_factor(Vec{0.0, 0.0}, 1.0), 2.0);
    const Vec h{std::sqrt(0.5), 0.0};
    EXPECT_NEAR(conformal_factor(h, 1.0), 4.0, 1e-12);
    // monotone in the radius
    double prev = 0.0;
    for (double r = 0.0; r < 0.95; r += 0.05) {
        const double f = conformal_factor(Vec{r, 0.0}, 1.0);
        EXPECT_GT(f, prev);
        prev = f;
    }
}

TEST(ClipToBall, Examples) {
    auto a = clip_to_ball(Vec{0.5, 0.0}, 1.0, 0.05);
    EXPECT_FALSE(a.clipped);
    EXPECT_EQ(a.x[0], 0.5);

    auto b = clip_to_ball(Vec{0.98, 0.0}, 1.0, 0.05);
    EXPECT_TRUE(b.clipped);
    EXPECT_NEAR(norm(b.x), 0.95, 1e-15);

    auto c = clip_to_ball(Vec{1.2, 0.0}, 4.0, 0.05);
    EXPECT_TRUE(c.clipped);
    EXPECT_NEAR(norm(c.x), 0.475, 1e-15);
}

TEST(ClipToBall, ConstructorInvariant) {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const double c = 0.5 + 1.5 * rng.uniform();
        const Vec v = random_tangent(rng, 5, 6.0);
        const Vec h = exp0(v, c);
        EXPECT_LE(norm(h), (1.0 - 0.05) / std::sqrt(c) + 1e-15);
    }
}

TEST(LinearRescale, ExamplesAndRoundTrip) {
    const Vec x{0.5, 0.0};
    const Vec same = linear_rescale(x, 1.0, 1.0);
    EXPECT_EQ(same[0], 0.5);
    const Vec y = linear_rescale(x, 1.0, 4.0);
    EXPECT_NEAR(y[0], 0.25, 1e-15);
    const Vec back = linear_rescale(y, 4.0, 1.0);
    EXPECT_NEAR(back[0], 0.5, 1e-12);
}

TEST(LinearRescale, MapsIntoTargetBall) {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        const double c1 = 0.5 + 1.5 * rng.uniform();
        const double c2 = std::min(2.0 * c1, std::max(0.5 * c1, c1 * (0.5 + 1.5 * rng.uniform())));
        // boundary-approaching input
        const double r = (1.0 - 1e-6 * rng.uniform()) / std::sqrt(c1);
        Vec x = random_tangent(rng, 3, 1.0);
        const double xr = norm(x);
        for (double& v : x) v *= r / xr;
        EXPECT_LT(norm(linear_rescale(x, c1, c2)) * std::sqrt(c2), 1.0);
    }
}

TEST(IsometricRescale, OracleAndLimit) {
    const Vec zero = isometric_rescale(Vec{0.0, 0.0}, 1.0, 4.0);
    EXPECT_EQ(norm(zero), 0.0);

    const Vec y = isometric_rescale(Vec{0.5, 0.0}, 1.0, 4.0);
    EXPECT_NEAR(y[0], 0.4, 1e-14);
    EXPECT_NEAR(poincare_dist(Vec{0.0, 0.0}, Vec{0.5, 0.0}, 1.0),
                poincare_dist(Vec{0.0, 0.0}, y, 4.0), 1e-12);

    // boundary limit: ||x|| -> 1/sqrt(c1) implies ||Phi(x)|| -> 1/sqrt(c2)
    const Vec near_edge = isometric_rescale(Vec{1.0 - 1e-12, 0.0}, 1.0, 4.0);
    EXPECT_NEAR(norm(near_edge) * 2.0, 1.0, 1e-5);
}

TEST(IsometricRescale, DistancePreservationProperty) {
    Rng rng(29);
    for (int i = 0; i < 1000; ++i) {
        const double c1 = 0.5 + 1.5 * rng.uniform();
        const double ratio = 0.5 + 1.5 * rng.uniform();  // c1/c2 in [0.5, 2]
        const double c2 = c1 / ratio;
        const Vec x = exp0(random_tangent(rng, 4, 2.5), c1, 1e-9);
        const Vec y = isometric_rescale(x, c1, c2);
        const Vec o(4, 0.0);
        EXPECT_NEAR(poincare_dist(o, x, c1), poincare_dist(o, y, c2), 1e-9);
    }
}

TEST(VolumeWeight, ExamplesAndIdentity) {
    EXPECT_EQ(volume_weight(Vec{0.0, 0.0}, 1.0, 2), 1.0);
    const Vec h{std::sqrt(0.5), 0.0};
    EXPECT_NEAR(volume_weight(h, 1.0, 2), 4.0, 1e-12);
    EXPECT_NEAR(volume_weight(h, 1.0, 2, /*inverted=*/true), 0.25, 1e-12);

    // w(h) = conformal_factor(h)^n / 2^n exactly
    Rng rng(41);
    for (int i = 0; i < 300; ++i) {
        const double c = 0.5 + 1.5 * rng.uniform();
        const Vec x = exp0(random_tangent(rng, 3, 2.0), c);
        const int n = 3;
        const double lhs = volume_weight(x, c, n);
        const double rhs = std::pow(conformal_factor(x, c), n) / std::pow(2.0, n);
        EXPECT_NEAR(lhs, rhs, 1e-12 * rhs);
    }
}

TEST(VolumeWeight, MonteCarloVsQuadratureSmall) {
    // f(x) = (1 - c||x||^2)^3; scaled-down version of the acceptance check
    for (double c : {1.0, 0.8}) {
        const double radius = 1.0 / std::sqrt(c);
        Rng rng(59);
        const std::size_t n_draws = 200000;
        double acc = 0.0;
        for (std::size_t i = 0; i < n_draws; ++i) {
            // uniform draw on the Euclidean disc of this ball
            const double r = radius * std::sqrt(rng.uniform());
            const double a = 2.0 * 3.14159265358979323846 * rng.uniform();
            const Vec x{r * std::cos(a), r * std::sin(a)};
            const double f = std::pow(1.0 - c * sqnorm(x), 3);
            acc += f * volume_weight(x, c, 2) * 4.0;
        }
        const double area = 3.14159265358979323846 * radius * radius;
        const double mc = area * acc / static_cast<double>(n_draws);

        // composite Simpson on the radial integrand 2 pi r f(r) 2^n (1-cr^2)^{-n}
        const int steps = 4000;
        double quad = 0.0;
        for (int k = 0; k <= steps; ++k) {
            const double r = radius * k / steps;
            // f(r) (1-cr^2)^{-n} collapses to (1-cr^2) for this f
            const double g = 2.0 * 3.14159265358979323846 * r * 4.0 * (1.0 - c * r * r);
            const double w = (k == 0 || k == steps) ? 1.0 : (k % 2 ? 4.0 : 2.0);
            quad += w * g;
        }
        quad *= radius / steps / 3.0;
        EXPECT_NEAR(mc, quad, 0.04 * std::fabs(quad));
    }
}
