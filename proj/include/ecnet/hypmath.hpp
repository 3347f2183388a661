#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace ecnet {

using Vec = std::vector<double>;

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double sqnorm(const Vec& a) { return dot(a, a); }
inline double norm(const Vec& a) { return std::sqrt(sqnorm(a)); }

inline bool all_finite(const Vec& a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

// artanh with the argument clamped to 1 - 1e-15.
inline double artanh(double u) {
    if (u > 1.0 - 1e-15) u = 1.0 - 1e-15;
    if (u < -(1.0 - 1e-15)) u = -(1.0 - 1e-15);
    return std::atanh(u);
}

inline void check_curvature(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) throw std::domain_error("curvature must be positive and finite");
}

inline void check_interior(const Vec& h, double c, const char* what) {
    if (c * sqnorm(h) >= 1.0) throw std::domain_error(std::string(what) + ": point on or outside the ball");
}

struct ClipResult {
    Vec x;
    bool clipped = false;
};

// Radial clipping to norm (1 - eps_bnd)/sqrt(c).
inline ClipResult clip_to_ball(Vec h, double c, double eps_bnd) {
    check_curvature(c);
    if (!(eps_bnd > 0.0 && eps_bnd < 1.0)) throw std::domain_error("eps_bnd must lie in (0,1)");
    const double radius = (1.0 - eps_bnd) / std::sqrt(c);
    const double r = norm(h);
    if (r >= radius) {
        const double scale = (r > 0.0) ? radius / r : 0.0;
        for (double& v : h) v *= scale;
        return {std::move(h), true};
    }
    return {std::move(h), false};
}

// Interior guard for intermediate results: pull anything at or past the
// boundary back to norm (1 - 1e-15)/sqrt(c) without reporting a clip.
inline Vec guard_interior(Vec h, double c) {
    const double radius = (1.0 - 1e-15) / std::sqrt(c);
    const double r = norm(h);
    if (r > radius) {
        const double scale = radius / r;
        for (double& v : h) v *= scale;
    }
    return h;
}

// exp map at the origin: (tanh(sqrt(c) ||v||)/sqrt(c)) v/||v||, then clipping.
inline ClipResult exp0_clipped(const Vec& v, double c, double eps_bnd) {
    check_curvature(c);
    if (!all_finite(v)) throw std::domain_error("exp0: non-finite input");
    const double r = norm(v);
    if (r == 0.0) return {Vec(v.size(), 0.0), false};
    const double sc = std::sqrt(c);
    const double scale = std::tanh(sc * r) / (sc * r);
    Vec out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = scale * v[i];
    return clip_to_ball(std::move(out), c, eps_bnd);
}

inline Vec exp0(const Vec& v, double c, double eps_bnd = 0.05) {
    return exp0_clipped(v, c, eps_bnd).x;
}

// log map at the origin: (artanh(sqrt(c) ||h||)/sqrt(c)) h/||h||.
inline Vec log0(const Vec& h, double c) {
    check_curvature(c);
    if (!all_finite(h)) throw std::domain_error("log0: non-finite input");
    check_interior(h, c, "log0");
    const double r = norm(h);
    if (r == 0.0) return Vec(h.size(), 0.0);
    const double sc = std::sqrt(c);
    const double scale = artanh(sc * r) / (sc * r);
    Vec out(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) out[i] = scale * h[i];
    return out;
}

// Gyrovector Mobius addition; result guarded strictly interior.
inline Vec mobius_add(const Vec& x, const Vec& y, double c) {
    check_curvature(c);
    if (x.size() != y.size()) throw std::domain_error("mobius_add: dimension mismatch");
    const double xy = dot(x, y);
    const double x2 = sqnorm(x);
    const double y2 = sqnorm(y);
    const double denom = 1.0 + 2.0 * c * xy + c * c * x2 * y2;
    const double ax = (1.0 + 2.0 * c * xy + c * y2) / denom;
    const double ay = (1.0 - c * x2) / denom;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = ax * x[i] + ay * y[i];
    return guard_interior(std::move(out), c);
}

// d_P(x, y) = (2/sqrt(c)) artanh(sqrt(c) ||(-x) (+) y||)
inline double poincare_dist(const Vec& x, const Vec& y, double c) {
    Vec nx(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) nx[i] = -x[i];
    const Vec m = mobius_add(nx, y, c);
    const double sc = std::sqrt(c);
    return 2.0 / sc * artanh(sc * norm(m));
}

// Conformal factor lambda(h) = 2/(1 - c ||h||^2).
inline double conformal_factor(const Vec& h, double c) {
    check_curvature(c);
    check_interior(h, c, "conformal_factor");
    return 2.0 / (1.0 - c * sqnorm(h));
}

// exp map at w: w (+) tanh(sqrt(c) lambda_w ||v|| / 2) v / (sqrt(c) ||v||).
inline Vec exp_at(const Vec& w, const Vec& v, double c) {
    check_curvature(c);
    if (!all_finite(w) || !all_finite(v)) throw std::domain_error("exp_at: non-finite input");
    const double r = norm(v);
    if (r == 0.0) return w;
    const double sc = std::sqrt(c);
    const double lam = conformal_factor(w, c);
    const double scale = std::tanh(sc * lam * r / 2.0) / (sc * r);
    Vec step(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) step[i] = scale * v[i];
    return mobius_add(w, step, c);
}

// Linear inter-curvature map sqrt(c1/c2) x, mapping B^{c1} onto B^{c2}.
inline Vec linear_rescale(const Vec& x, double c1, double c2) {
    check_curvature(c1);
    check_curvature(c2);
    const double scale = std::sqrt(c1 / c2);
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = scale * x[i];
    return out;
}

// Radial isometry: rho(r) = tanh(sqrt(c2) artanh(sqrt(c1) r)/sqrt(c1))/sqrt(c2),
// direction preserved; preserves distance to the origin.
inline Vec isometric_rescale(const Vec& x, double c1, double c2) {
    check_curvature(c1);
    check_curvature(c2);
    check_interior(x, c1, "isometric_rescale");
    const double r = norm(x);
    if (r == 0.0) return Vec(x.size(), 0.0);
    const double s1 = std::sqrt(c1);
    const double s2 = std::sqrt(c2);
    const double alpha = artanh(s1 * r) / s1;
    const double rho = std::tanh(s2 * alpha) / s2;
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = (rho / r) * x[i];
    return out;
}

// Importance weight (1 - c ||h||^2)^{-n}; `inverted` selects the reciprocal
// convention (1 - c ||h||^2)^{+n}.
inline double volume_weight(const Vec& h, double c, int n, bool inverted = false) {
    check_curvature(c);
    check_interior(h, c, "volume_weight");
    const double base = 1.0 - c * sqnorm(h);
    return inverted ? std::pow(base, n) : std::pow(base, -n);
}

}  // namespace ecnet
