#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "ecnet/hypmath.hpp"
#include "ecnet/rng.hpp"

namespace ecnet {

// ---- small special functions for p-values ----

namespace detail {

// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
inline double betacf(double a, double b, double x) {
    const double tiny = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < tiny) d = tiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 300; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < tiny) d = tiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < 1e-14) break;
    }
    return h;
}

inline double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

// Two-sided p-value of Student's t with df degrees of freedom.
inline double student_t_two_sided(double t, double df) {
    if (df <= 0.0) return 1.0;
    const double x = df / (df + t * t);
    return detail::ibeta(df / 2.0, 0.5, x);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// ---- rank statistics ----

// Average ranks (1-based) with ties sharing the mean rank.
inline std::vector<double> average_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

struct SpearmanResult {
    double rho = 0.0;
    double p_two_sided = 1.0;
};

// Rank correlation with average-rank ties; p from the t-approximation
// t = rho sqrt((n-2)/(1-rho^2)).
inline SpearmanResult spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("spearman_rho: length mismatch");
    if (x.size() < 3) throw std::invalid_argument("spearman_rho: need at least 3 points");
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    SpearmanResult r;
    if (sxx == 0.0 || syy == 0.0) return r;  // a constant list carries no ranking signal
    r.rho = sxy / std::sqrt(sxx * syy);
    const double rr = std::min(std::fabs(r.rho), 1.0 - 1e-15);
    const double t = rr * std::sqrt((n - 2.0) / (1.0 - rr * rr));
    r.p_two_sided = student_t_two_sided(t, n - 2.0);
    return r;
}

// ---- Cochran-Armitage trend ----

struct TrendResult {
    double t_stat = 0.0;
    double z = 0.0;
    double p_one_sided = 1.0;
};

// Rows: counts of outcome 1 (row 1) and outcome 2 (row 2) per ordered stratum;
// T = sum_k w_k (O_{2k} - n_k p_hat), standardized under the margin-conditional
// null.
inline TrendResult cochran_armitage(const std::vector<long>& row1, const std::vector<long>& row2,
                                    const std::vector<double>& scores) {
    const std::size_t k = row1.size();
    if (k < 2 || row2.size() != k || scores.size() != k)
        throw std::invalid_argument("cochran_armitage: need matching K >= 2 columns");
    for (std::size_t i = 1; i < k; ++i)
        if (scores[i] < scores[i - 1])
            throw std::invalid_argument("cochran_armitage: scores must be nondecreasing");
    double total = 0.0, r2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        if (row1[i] < 0 || row2[i] < 0)
            throw std::invalid_argument("cochran_armitage: negative count");
        const double nk = static_cast<double>(row1[i] + row2[i]);
        if (nk == 0.0) throw std::invalid_argument("cochran_armitage: empty column");
        total += nk;
        r2 += static_cast<double>(row2[i]);
    }
    const double p_hat = r2 / total;
    double t = 0.0, sw = 0.0, sw2 = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double nk = static_cast<double>(row1[i] + row2[i]);
        t += scores[i] * (static_cast<double>(row2[i]) - nk * p_hat);
        sw += nk * scores[i];
        sw2 += nk * scores[i] * scores[i];
    }
    TrendResult res;
    res.t_stat = t;
    const double var = p_hat * (1.0 - p_hat) * (sw2 - sw * sw / total);
    if (var > 0.0) {
        res.z = t / std::sqrt(var);
        res.p_one_sided = 1.0 - normal_cdf(res.z);
    } else {
        res.z = 0.0;
        res.p_one_sided = 0.5;
    }
    return res;
}

// Exact conditional permutation distribution of T given both margins
// (multivariate hypergeometric enumeration); feasible for small tables.
// Returns P(T >= observed) and P(T <= observed).
struct ExactTrendTails {
    double p_upper = 1.0;
    double p_lower = 1.0;
};

inline ExactTrendTails cochran_armitage_exact(const std::vector<long>& row1,
                                              const std::vector<long>& row2,
                                              const std::vector<double>& scores) {
    const std::size_t k = row1.size();
    std::vector<long> n(k);
    long total = 0, r2 = 0;
    for (std::size_t i = 0; i < k; ++i) {
        n[i] = row1[i] + row2[i];
        total += n[i];
        r2 += row2[i];
    }
    const double p_hat = static_cast<double>(r2) / static_cast<double>(total);
    auto t_of = [&](const std::vector<long>& o2) {
        double t = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            t += scores[i] * (static_cast<double>(o2[i]) -
                              static_cast<double>(n[i]) * p_hat);
        return t;
    };
    double t_obs = t_of(row2);

    std::vector<double> log_fact(static_cast<std::size_t>(total) + 1, 0.0);
    for (std::size_t i = 2; i < log_fact.size(); ++i)
        log_fact[i] = log_fact[i - 1] + std::log(static_cast<double>(i));
    auto log_choose = [&](long nn, long kk) {
        return log_fact[static_cast<std::size_t>(nn)] - log_fact[static_cast<std::size_t>(kk)] -
               log_fact[static_cast<std::size_t>(nn - kk)];
    };
    const double log_denom = log_choose(total, r2);

    double upper = 0.0, lower = 0.0;
    std::vector<long> o2(k, 0);
    // enumerate all ways to place r2 successes into columns with caps n[i]
    std::function<void(std::size_t, long, double)> rec = [&](std::size_t col, long left,
                                                             double log_w) {
        if (col + 1 == k) {
            if (left > n[col]) return;
            o2[col] = left;
            const double w = std::exp(log_w + log_choose(n[col], left) - log_denom);
            const double t = t_of(o2);
            if (t >= t_obs - 1e-12) upper += w;
            if (t <= t_obs + 1e-12) lower += w;
            return;
        }
        const long hi = std::min(left, n[col]);
        for (long c = 0; c <= hi; ++c) {
            o2[col] = c;
            rec(col + 1, left - c, log_w + log_choose(n[col], c));
        }
    };
    rec(0, r2, 0.0);
    return {upper, lower};
}

// ---- closed-form bounds ----

inline double rademacher_bound(double gamma, double c, double n, double big_n) {
    check_curvature(c);
    if (!(gamma < 1.0 / std::sqrt(c))) throw std::domain_error("rademacher_bound: gamma >= radius");
    if (big_n < 1.0) throw std::domain_error("rademacher_bound: N >= 1 required");
    return 4.0 * std::sqrt(2.0) * gamma / (1.0 - c * gamma * gamma) * std::sqrt(n / big_n);
}

inline double generalization_bound(double gamma, double c, double n, double big_n, double delta,
                                   double empirical_risk) {
    check_curvature(c);
    if (!(gamma < 1.0 / std::sqrt(c)))
        throw std::domain_error("generalization_bound: gamma >= radius");
    if (!(delta > 0.0 && delta <= 1.0)) throw std::domain_error("generalization_bound: delta");
    const double complexity =
        8.0 * std::sqrt(2.0) * gamma / (1.0 - c * gamma * gamma) * std::sqrt(n / big_n);
    const double conf = std::sqrt(std::log(1.0 / delta) / (2.0 * big_n));
    return empirical_risk + complexity + conf;
}

inline double dist_lipschitz_constant(double c, double gamma) {
    return 2.0 * std::sqrt(c) / (1.0 - c * gamma * gamma);
}

struct LipschitzReport {
    double theoretical = 0.0;
    double empirical_max = 0.0;
    bool ok = false;
};

// Empirical max of |d(x,y) - d(x',y')| / (||x-x'|| + ||y-y'||) over random
// quadruples with Euclidean norms <= gamma.
inline LipschitzReport lipschitz_check(double c, double gamma, std::size_t dim,
                                       std::size_t trials, Rng& rng) {
    if (!(gamma < 1.0 / std::sqrt(c))) throw std::domain_error("lipschitz_check: gamma >= radius");
    auto draw = [&]() {
        Vec v(dim);
        for (double& x : v) x = rng.normal();
        const double r = norm(v);
        const double target = gamma * std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
        for (double& x : v) x *= target / r;
        return v;
    };
    LipschitzReport rep;
    rep.theoretical = dist_lipschitz_constant(c, gamma);
    for (std::size_t i = 0; i < trials; ++i) {
        const Vec x = draw(), xp = draw(), y = draw(), yp = draw();
        Vec dx(dim), dy(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            dx[j] = x[j] - xp[j];
            dy[j] = y[j] - yp[j];
        }
        const double denom = norm(dx) + norm(dy);
        if (denom < 1e-12) continue;
        const double num = std::fabs(poincare_dist(x, y, c) - poincare_dist(xp, yp, c));
        rep.empirical_max = std::max(rep.empirical_max, num / denom);
    }
    rep.ok = rep.empirical_max <= rep.theoretical;
    return rep;
}

// ---- run statistics ----

struct ClippingStats {
    double median = 0.0;
    double p95 = 0.0;
};

// Median and nearest-rank 95th percentile of per-batch clipping fractions.
inline ClippingStats clipping_stats(std::vector<double> fractions) {
    ClippingStats s;
    if (fractions.empty()) return s;
    std::sort(fractions.begin(), fractions.end());
    const std::size_t n = fractions.size();
    if (n % 2 == 1)
        s.median = fractions[n / 2];
    else
        s.median = 0.5 * (fractions[n / 2 - 1] + fractions[n / 2]);
    std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n)));
    if (rank == 0) rank = 1;
    s.p95 = fractions[rank - 1];
    return s;
}

}  // namespace ecnet
