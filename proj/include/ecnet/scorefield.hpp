#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "ecnet/hypmath.hpp"
#include "ecnet/mirror.hpp"
#include "ecnet/nn.hpp"
#include "ecnet/rng.hpp"
#include "ecnet/tape.hpp"

namespace ecnet {

// Variance-exploding forward kernel q_t = N(z0, sigma(t)^2 I) with geometric
// sigma(t) = sigma_min (sigma_max/sigma_min)^{t/T}.
struct NoiseSchedule {
    double sigma_min = 0.01;
    double sigma_max = 1.0;
    double horizon = 1.0;
    int num_steps = 50;

    double sigma(double t) const {
        return sigma_min * std::pow(sigma_max / sigma_min, t / horizon);
    }
};

// s_theta(z, t) = net(z, t) / sigma(t): the network predicts the negated noise
// and the 1/sigma factor matches the score's scale across noise levels.
struct ScoreModel {
    Mlp net;  // (dim + 1) -> hidden -> dim
    std::size_t dim = 0;

    ScoreModel() = default;
    ScoreModel(std::size_t d, std::size_t hidden, Rng& rng) : dim(d) {
        net = Mlp({d + 1, hidden, hidden, d}, Activation::tanh, Activation::identity, rng,
                  "score");
    }

    void collect(std::vector<Param*>& out) { net.collect(out); }

    // z rows (B x dim), t column (B x 1) as constants of the caller's tape.
    Value forward(Tape& t, Value z, Value tcol, const NoiseSchedule& sched) {
        const Tensor& tv = t.val(tcol);
        Tensor inv_sigma(tv.rows, 1);
        for (std::size_t i = 0; i < tv.rows; ++i)
            inv_sigma(i, 0) = 1.0 / sched.sigma(tv(i, 0));
        Value raw = net.forward(t, t.concat_cols({z, tcol}));
        return t.bcast_mul(raw, t.constant(std::move(inv_sigma)));
    }

    // Plain batched evaluation for the sampler.
    Tensor forward_plain(const Tensor& z, double tval, const NoiseSchedule& sched) const {
        Tensor in(z.rows, z.cols + 1);
        for (std::size_t i = 0; i < z.rows; ++i) {
            for (std::size_t j = 0; j < z.cols; ++j) in(i, j) = z(i, j);
            in(i, z.cols) = tval;
        }
        Tensor out = net.forward_plain(in);
        const double inv = 1.0 / sched.sigma(tval);
        for (double& x : out.data) x *= inv;
        return out;
    }
};

struct Perturbed {
    Vec z_t;
    Vec target_score;  // (z0 - z_t)/sigma(t)^2
};

inline Vec target_score(const Vec& z0, const Vec& z_t, double sigma) {
    Vec out(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i)
        out[i] = (z0[i] - z_t[i]) / (sigma * sigma);
    return out;
}

inline Perturbed perturb(const Vec& z0, double t, const NoiseSchedule& sched, Rng& rng) {
    if (!(t > 0.0 && t <= sched.horizon))
        throw std::invalid_argument("perturb: t outside (0, T]");
    const double s = sched.sigma(t);
    Perturbed out;
    out.z_t.resize(z0.size());
    out.target_score.resize(z0.size());
    for (std::size_t i = 0; i < z0.size(); ++i) {
        const double eps = rng.normal();
        out.z_t[i] = z0[i] + s * eps;
        out.target_score[i] = -eps / s;
    }
    return out;
}

// Monte-Carlo denoising score matching loss over a batch of clean points;
// one t ~ Uniform(0, T] and one noise draw per row.
inline Value score_loss_rows(Tape& t, ScoreModel& model, const Tensor& z0,
                             const NoiseSchedule& sched, Rng& rng) {
    if (z0.rows == 0) throw std::invalid_argument("score_loss: empty batch");
    Tensor zt(z0.rows, z0.cols);
    Tensor target(z0.rows, z0.cols);
    Tensor tcol(z0.rows, 1);
    for (std::size_t i = 0; i < z0.rows; ++i) {
        const double ti = (1.0 - rng.uniform()) * sched.horizon;  // (0, T]
        const double s = sched.sigma(ti);
        tcol(i, 0) = ti;
        for (std::size_t j = 0; j < z0.cols; ++j) {
            const double eps = rng.normal();
            zt(i, j) = z0(i, j) + s * eps;
            target(i, j) = -eps / s;
        }
    }
    Value pred = model.forward(t, t.constant(std::move(zt)), t.constant(std::move(tcol)), sched);
    Value diff = t.sub(pred, t.constant(std::move(target)));
    return t.mean(t.rows_sqnorm(diff));
}

// Batched score evaluation at a shared time.
using ScoreFn = std::function<Tensor(const Tensor& z, double t)>;

inline ScoreFn as_score_fn(const ScoreModel& model, const NoiseSchedule& sched) {
    return [&model, &sched](const Tensor& z, double t) {
        return model.forward_plain(z, t, sched);
    };
}

// Euler-Maruyama reverse integration of the VE process from
// z ~ N(0, sigma(T)^2 I) down the discretized schedule. Returns N x dim draws.
inline Tensor reverse_sample_batch(const ScoreFn& score_fn, std::size_t dim,
                                   const NoiseSchedule& sched, std::size_t n, Rng& rng) {
    Tensor z(n, dim);
    const double st = sched.sigma(sched.horizon);
    for (double& x : z.data) x = st * rng.normal();
    for (int i = sched.num_steps; i >= 1; --i) {
        const double ti = sched.horizon * static_cast<double>(i) / sched.num_steps;
        const double tprev = sched.horizon * static_cast<double>(i - 1) / sched.num_steps;
        const double s1 = sched.sigma(ti);
        const double s0 = sched.sigma(tprev);
        const double dvar = s1 * s1 - s0 * s0;
        const Tensor score = score_fn(z, ti);
        const double step_sd = std::sqrt(dvar);
        for (std::size_t k = 0; k < z.size(); ++k)
            z.data[k] += dvar * score.data[k] + step_sd * rng.normal();
    }
    return z;
}

inline Tensor reverse_sample_batch(const ScoreModel& model, const NoiseSchedule& sched,
                                   std::size_t n, Rng& rng) {
    return reverse_sample_batch(as_score_fn(model, sched), model.dim, sched, n, rng);
}

inline Vec reverse_sample(const ScoreFn& score_fn, std::size_t dim, const NoiseSchedule& sched,
                          Rng& rng) {
    return reverse_sample_batch(score_fn, dim, sched, 1, rng).data;
}

inline Vec reverse_sample(const ScoreModel& model, const NoiseSchedule& sched, Rng& rng) {
    return reverse_sample_batch(model, sched, 1, rng).data;
}

struct VectorFieldSample {
    Vec base;
    Vec vector;
};

// V_hat(h) = log0^{c_E}(f_psi(clip(z0_hat))) - log0^{c_E}(h), with z0_hat a
// reverse-diffusion draw interpreted as a point of B^{c_A}.
inline VectorFieldSample recover_vector_field(const ScoreFn& score_fn,
                                              const NoiseSchedule& sched,
                                              MirrorLayer& mirror, const Vec& h, Rng& rng) {
    Vec z0_hat = reverse_sample(score_fn, h.size(), sched, rng);
    Vec za = clip_to_ball(std::move(z0_hat), mirror.c_a, mirror.eps_bnd).x;
    Vec back = mirror.a2e(za);
    Vec v = log0(back, mirror.c_e);
    const Vec vh = log0(h, mirror.c_e);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= vh[i];
    return {h, std::move(v)};
}

inline VectorFieldSample recover_vector_field(const ScoreModel& model,
                                              const NoiseSchedule& sched,
                                              MirrorLayer& mirror, const Vec& h, Rng& rng) {
    return recover_vector_field(as_score_fn(model, sched), sched, mirror, h, rng);
}

// Max over sample points and index pairs of |d_i V_j - d_j V_i|, estimated by
// central differences with step delta.
inline double curl_proxy(const std::function<Vec(const Vec&)>& field,
                         const std::vector<Vec>& sample_points, double delta) {
    if (sample_points.empty()) throw std::invalid_argument("curl_proxy: no sample points");
    if (!(delta > 0.0)) throw std::invalid_argument("curl_proxy: delta must be positive");
    double worst = 0.0;
    for (const Vec& p : sample_points) {
        const std::size_t n = p.size();
        // partial[i] = dV/dx_i (a full vector per coordinate)
        std::vector<Vec> partial(n);
        for (std::size_t i = 0; i < n; ++i) {
            Vec hi = p, lo = p;
            hi[i] += delta;
            lo[i] -= delta;
            const Vec fhi = field(hi);
            const Vec flo = field(lo);
            partial[i].resize(n);
            for (std::size_t j = 0; j < n; ++j)
                partial[i][j] = (fhi[j] - flo[j]) / (2.0 * delta);
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                worst = std::max(worst, std::fabs(partial[i][j] - partial[j][i]));
    }
    return worst;
}

inline double curl_penalty(double proxy, double lambda_curl = 0.1, double bound = 0.01) {
    return lambda_curl * std::max(0.0, proxy - bound);
}

}  // namespace ecnet
