#include "ecnet/propdecomp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "ecnet/rng.hpp"

using namespace ecnet;

namespace {

Tensor random_tensor(Rng& rng, std::size_t r, std::size_t c, double s = 1.0) {
    Tensor t(r, c);
    for (double& x : t.data) x = s * rng.normal();
    return t;
}

}  // namespace

TEST(Decompose, ZeroWeightsEmitBiasConstants) {
    Rng rng(1);
    DecompNet net(5, 8, 4, rng);
    std::vector<Param*> ps;
    net.collect(ps);
    for (Param* p : ps) std::fill(p->value.data.begin(), p->value.data.end(), 0.0);
    net.sigma_head.b.value.data = {1.0, 2.0, 3.0, 4.0};
    net.mu_head.b.value.data = {-1.0, 0.5, 0.0, 2.0};

    Rng data(2);
    Tape t;
    auto out = net.forward(t, t.constant(random_tensor(data, 6, 5)));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 4; ++j) {
            EXPECT_EQ(t.val(out.sigma)(i, j), net.sigma_head.b.value(0, j));
            EXPECT_EQ(t.val(out.mu)(i, j), net.mu_head.b.value(0, j));
        }
}

TEST(Decompose, PermutationEquivariantAndDeterministic) {
    Rng rng(3);
    DecompNet net(4, 8, 3, rng);
    Rng data(4);
    Tensor x = random_tensor(data, 5, 4);
    Tensor x_rev(5, 4);
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 4; ++j) x_rev(i, j) = x(4 - i, j);

    Tape t1, t2;
    auto a = net.forward(t1, t1.constant(x));
    auto b = net.forward(t2, t2.constant(x_rev));
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            EXPECT_EQ(t1.val(a.sigma)(i, j), t2.val(b.sigma)(4 - i, j));
            EXPECT_EQ(t1.val(a.mu)(i, j), t2.val(b.mu)(4 - i, j));
        }

    // identical seeds give bit-identical parameters and outputs
    Rng s1(77), s2(77);
    DecompNet n1(4, 8, 3, s1), n2(4, 8, 3, s2);
    Tape t3, t4;
    auto o1 = n1.forward(t3, t3.constant(x));
    auto o2 = n2.forward(t4, t4.constant(x));
    EXPECT_EQ(t3.val(o1.sigma).data, t4.val(o2.sigma).data);
    EXPECT_EQ(t3.val(o1.mu).data, t4.val(o2.mu).data);
}

TEST(Decompose, EmptyBatchThrows) {
    Rng rng(5);
    DecompNet net(4, 8, 3, rng);
    Tape t;
    EXPECT_THROW(net.forward(t, t.constant(Tensor(0, 4))), std::invalid_argument);
}

TEST(PropLoss, ExamplesAndPermutationInvariance) {
    // P = mu_bar -> 0
    Param p(Tensor(1, 3), "P");
    p.value.data = {0.5, -0.2, 0.1};
    Tensor mu(2, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        mu(0, j) = p.value.data[j] + 0.3;
        mu(1, j) = p.value.data[j] - 0.3;
    }
    Tape t;
    EXPECT_NEAR(t.val(prop_loss(t, p, t.constant(mu))).data[0], 0.0, 1e-15);

    // P = 0, mu_bar = e1 -> 1
    Param zero(Tensor(1, 3), "P0");
    Tensor e1(1, 3);
    e1(0, 0) = 1.0;
    Tape t2;
    EXPECT_NEAR(t2.val(prop_loss(t2, zero, t2.constant(e1))).data[0], 1.0, 1e-15);

    // batch permutation leaves the loss unchanged
    Rng rng(6);
    Tensor batch = random_tensor(rng, 6, 3);
    Tensor rev(6, 3);
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) rev(i, j) = batch(5 - i, j);
    Tape t3, t4;
    const double a = t3.val(prop_loss(t3, p, t3.constant(batch))).data[0];
    const double b = t4.val(prop_loss(t4, p, t4.constant(rev))).data[0];
    EXPECT_NEAR(a, b, 1e-12);

    Param bad(Tensor(1, 4), "bad");
    Tape t5;
    EXPECT_THROW(prop_loss(t5, bad, t5.constant(batch)), std::invalid_argument);
}

TEST(PropLoss, GradientDescentOnPIsMonotone) {
    Rng rng(7);
    Param p(random_tensor(rng, 1, 4), "P");
    Tensor mu = random_tensor(rng, 8, 4);
    double prev = 1e300;
    for (int it = 0; it < 50; ++it) {
        Tape t;
        Value loss = prop_loss(t, p, t.constant(mu));
        const double cur = t.val(loss).data[0];
        EXPECT_LT(cur, prev);
        prev = cur;
        p.zero_grad();
        t.backward(loss);
        for (std::size_t k = 0; k < p.value.size(); ++k)
            p.value.data[k] -= 0.1 * p.grad.data[k];
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(OrthLoss, Examples) {
    // orthogonal rows -> 0
    Tensor sigma(2, 2), mu(2, 2);
    sigma(0, 0) = 1.0;
    mu(0, 1) = 1.0;
    sigma(1, 1) = 2.0;
    mu(1, 0) = -3.0;
    Tape t;
    EXPECT_EQ(t.val(orth_loss(t, t.constant(sigma), t.constant(mu), 0.1)).data[0], 0.0);

    // aligned unit vectors, lambda = 0.1, n = 1 -> 0.1
    Tensor s1(1, 2), m1(1, 2);
    s1(0, 0) = 1.0;
    m1(0, 0) = 1.0;
    Tape t2;
    EXPECT_NEAR(t2.val(orth_loss(t2, t2.constant(s1), t2.constant(m1), 0.1)).data[0], 0.1,
                1e-15);

    // quadratic in mu
    Tensor m2 = m1;
    m2(0, 0) = 2.0;
    Tape t3;
    EXPECT_NEAR(t3.val(orth_loss(t3, t3.constant(s1), t3.constant(m2), 0.1)).data[0], 0.4,
                1e-15);

    Tape t4;
    EXPECT_THROW(orth_loss(t4, t4.constant(s1), t4.constant(Tensor(2, 2)), 0.1),
                 std::invalid_argument);
}

TEST(OrthLoss, ZeroIffAllInnerProductsVanish) {
    Rng rng(8);
    Tensor sigma = random_tensor(rng, 4, 3);
    Tensor mu(4, 3);
    // construct mu rows orthogonal to sigma rows
    for (std::size_t i = 0; i < 4; ++i) {
        mu(i, 0) = -sigma(i, 1);
        mu(i, 1) = sigma(i, 0);
        mu(i, 2) = 0.0;
    }
    Tape t;
    EXPECT_NEAR(t.val(orth_loss(t, t.constant(sigma), t.constant(mu), 1.0)).data[0], 0.0,
                1e-18);
    mu(2, 2) = 0.5;  // break one row
    Tape t2;
    EXPECT_GT(t2.val(orth_loss(t2, t2.constant(sigma), t2.constant(mu), 1.0)).data[0], 0.0);
}

TEST(EmaUpdate, ScheduleAndCoefficients) {
    Param p(Tensor(1, 2), "P");
    Tensor mu_bar(1, 2);
    mu_bar.data = {1.0, -2.0};

    // off-schedule call is a no-op and reports false
    p.value.data = {0.3, 0.4};
    EXPECT_FALSE(ema_update(p, mu_bar, 101));
    EXPECT_EQ(p.value.data[0], 0.3);

    // P = mu_bar is a fixed point
    p.value.data = {1.0, -2.0};
    EXPECT_TRUE(ema_update(p, mu_bar, 100));
    EXPECT_NEAR(p.value.data[0], 1.0, 1e-15);
    EXPECT_NEAR(p.value.data[1], -2.0, 1e-15);

    // P = 0 -> 0.05 mu_bar
    p.value.data = {0.0, 0.0};
    EXPECT_TRUE(ema_update(p, mu_bar, 200));
    EXPECT_NEAR(p.value.data[0], 0.05, 1e-15);
    EXPECT_NEAR(p.value.data[1], -0.1, 1e-15);
}

TEST(EmaUpdate, GeometricContraction) {
    Param p(Tensor(1, 1), "P");
    Tensor mu_bar(1, 1);
    mu_bar.data = {1.0};
    p.value.data = {0.0};
    for (int k = 1; k <= 30; ++k) {
        ASSERT_TRUE(ema_update(p, mu_bar, 100L * k));
        EXPECT_NEAR(p.value.data[0], 1.0 - std::pow(0.95, k), 1e-12);
    }
}

TEST(PrincipalAngles, CanonicalValues) {
    Tensor sigma(4, 2), mu(4, 2);
    // aligned -> 0 deg
    sigma(0, 0) = 2.0;
    mu(0, 0) = 0.5;
    // orthogonal -> 90 deg
    sigma(1, 0) = 1.0;
    mu(1, 1) = 1.0;
    // 45 deg
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    sigma(2, 0) = inv_sqrt2;
    sigma(2, 1) = inv_sqrt2;
    mu(2, 0) = 1.0;
    // anti-aligned counts as aligned via |cos|
    sigma(3, 0) = 1.0;
    mu(3, 0) = -3.0;

    const AngleStats stats = principal_angles(sigma, mu);
    EXPECT_EQ(stats.counted, 4);
    EXPECT_EQ(stats.skipped, 0);
    EXPECT_NEAR(stats.max_deg, 90.0, 1e-12);
    EXPECT_NEAR(stats.mean_deg, (0.0 + 90.0 + 45.0 + 0.0) / 4.0, 1e-12);
    EXPECT_EQ(stats.histogram[0], 2);         // both aligned rows
    EXPECT_EQ(stats.histogram[25], 1);        // 45 / 1.8 = 25
    EXPECT_EQ(stats.histogram[49], 1);        // 90 clamps into the last bin
}

TEST(PrincipalAngles, ZeroVectorsSkipped) {
    Tensor sigma(2, 2), mu(2, 2);
    sigma(1, 0) = 1.0;
    mu(1, 0) = 1.0;
    const AngleStats stats = principal_angles(sigma, mu);
    EXPECT_EQ(stats.counted, 1);
    EXPECT_EQ(stats.skipped, 1);
    EXPECT_NEAR(stats.mean_deg, 0.0, 1e-12);
}

TEST(PrincipalAngles, HistogramCsvRoundTrip) {
    Rng rng(9);
    Tensor sigma = random_tensor(rng, 200, 5);
    Tensor mu = random_tensor(rng, 200, 5);
    const AngleStats stats = principal_angles(sigma, mu);
    const std::string path = ::testing::TempDir() + "angles.csv";
    write_angle_histogram_csv(stats, path);

    std::ifstream in(path);
    ASSERT_TRUE(in.good());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "bin_low,bin_high,count");
    long total = 0;
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        std::istringstream ss(line);
        std::string lo, hi, cnt;
        std::getline(ss, lo, ',');
        std::getline(ss, hi, ',');
        std::getline(ss, cnt, ',');
        total += std::stol(cnt);
        if (rows == 1) EXPECT_EQ(line.substr(0, 8), "0.0,1.8,");
    }
    EXPECT_EQ(rows, 50);
    EXPECT_EQ(total, stats.counted);
    std::remove(path.c_str());
}
