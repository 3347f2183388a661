#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ecnet/hypmath.hpp"
#include "ecnet/serialize.hpp"
#include "ecnet/tape.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

// Point parameter living inside B^c (mask tokens, test probes).
struct BallParam {
    Param point;  // 1 x n
    double c = 1.0;
    double eps_bnd = 0.05;

    BallParam() = default;
    BallParam(Vec x, double curvature, double eps, std::string name = "ball")
        : c(curvature), eps_bnd(eps) {
        auto clipped = clip_to_ball(std::move(x), c, eps_bnd);
        point = Param(Tensor::row_vector(std::move(clipped.x)), std::move(name));
    }

    Vec coords() const { return point.value.data; }
};

// Scales all gradients so the global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double global_grad_clip(const std::vector<Param*>& params, double max_norm) {
    double s2 = 0.0;
    for (const Param* p : params)
        for (double g : p->grad.data) s2 += g * g;
    const double total = std::sqrt(s2);
    if (total > max_norm && total > 0.0) {
        const double scale = max_norm / total;
        for (Param* p : params)
            for (double& g : p->grad.data) g *= scale;
    }
    return total;
}

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Standard Adam over Euclidean parameters. Non-finite gradients skip the step
// for that parameter and are counted.
class Adam {
  public:
    Adam(std::vector<Param*> params, AdamConfig cfg = {})
        : params_(std::move(params)), cfg_(cfg) {
        for (Param* p : params_) {
            m_.emplace_back(p->value.rows, p->value.cols);
            v_.emplace_back(p->value.rows, p->value.cols);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Param& p = *params_[k];
            bool finite = true;
            for (double g : p.grad.data)
                if (!std::isfinite(g)) {
                    finite = false;
                    break;
                }
            if (!finite) {
                ++skipped_;
                continue;
            }
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const double g = p.grad.data[i];
                m_[k].data[i] = cfg_.beta1 * m_[k].data[i] + (1.0 - cfg_.beta1) * g;
                v_[k].data[i] = cfg_.beta2 * v_[k].data[i] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[k].data[i] / bc1;
                const double vhat = v_[k].data[i] / bc2;
                p.value.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    long steps() const { return t_; }
    long skipped() const { return skipped_; }

    void save_state(std::ostream& os) const {
        write_i64(os, t_);
        write_i64(os, skipped_);
        for (const Tensor& m : m_) write_vec(os, m.data);
        for (const Tensor& v : v_) write_vec(os, v.data);
    }

    void load_state(std::istream& is) {
        t_ = read_i64(is);
        skipped_ = read_i64(is);
        for (Tensor& m : m_) read_vec_into(is, m.data);
        for (Tensor& v : v_) read_vec_into(is, v.data);
    }

  private:
    std::vector<Param*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
    long skipped_ = 0;
};

struct RiemannianAdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Fixed step size when use_schedule is false.
    double lr = 1e-3;
    // eta_t = (D/G) sqrt((1 - c gamma^2)/(2 sigma t)) with D and G estimated
    // online: D from the initial point's distance to a running iterate
    // average, G from an EWMA of the stochastic gradient norm.
    bool use_schedule = false;
    double gamma = 0.5;
    double sigma_smooth = 1.0;
    double avg_decay = 0.99;
    // Lower bound for the online distance-scale estimate. The iterate average
    // starts at w0, so without a floor the schedule stalls for the first few
    // hundred steps while D bootstraps from zero.
    double d_floor = 0.05;
};

inline double eta_schedule(double d, double g, double sigma, double c, double gamma, long t) {
    if (t < 1) throw std::domain_error("eta_schedule: t must be >= 1");
    return (d / g) * std::sqrt((1.0 - c * gamma * gamma) /
                               (2.0 * sigma * static_cast<double>(t)));
}

// Riemannian Adam for a single ball parameter: moments in tangent coordinates,
// retraction via exp_at, radial clipping after each step.
class RiemannianAdam {
  public:
    RiemannianAdam(BallParam* param, RiemannianAdamConfig cfg = {})
        : p_(param),
          cfg_(cfg),
          m_(1, param->point.value.cols),
          v_(1, param->point.value.cols),
          w0_(param->point.value.data),
          avg_(param->point.value.data) {}

    // grad: Euclidean gradient as accumulated by the tape. The Riemannian
    // gradient is grad * (1 - c||w||^2)^2 / 4 (inverse conformal metric).
    void step() {
        const Vec& g = p_->point.grad.data;
        for (double x : g)
            if (!std::isfinite(x)) {
                ++skipped_;
                return;
            }
        ++t_;
        const Vec w = p_->point.value.data;
        const double lam = conformal_factor(w, p_->c);
        const double metric = 1.0 / (lam * lam);  // (1 - c||w||^2)^2 / 4
        Vec rg(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) rg[i] = g[i] * metric;

        if (cfg_.use_schedule) {
            const double gn2 = sqnorm(rg);
            g2_ = (t_ == 1) ? gn2 : 0.99 * g2_ + 0.01 * gn2;
            for (std::size_t i = 0; i < w.size(); ++i)
                avg_[i] = cfg_.avg_decay * avg_[i] + (1.0 - cfg_.avg_decay) * w[i];
            Vec avg_in = guard_interior(avg_, p_->c);
            d_ = std::max(poincare_dist(w0_, avg_in, p_->c), cfg_.d_floor);
        }

        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        Vec dir(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) {
            m_.data[i] = cfg_.beta1 * m_.data[i] + (1.0 - cfg_.beta1) * rg[i];
            v_.data[i] = cfg_.beta2 * v_.data[i] + (1.0 - cfg_.beta2) * rg[i] * rg[i];
            const double mhat = m_.data[i] / bc1;
            const double vhat = v_.data[i] / bc2;
            dir[i] = mhat / (std::sqrt(vhat) + cfg_.eps);
        }

        eta_ = cfg_.use_schedule
                   ? eta_schedule(d_, std::sqrt(std::max(g2_, 1e-300)), cfg_.sigma_smooth,
                                  p_->c, cfg_.gamma, t_)
                   : cfg_.lr;
        for (double& x : dir) x *= -eta_;
        Vec next = exp_at(w, dir, p_->c);
        auto clipped = clip_to_ball(std::move(next), p_->c, p_->eps_bnd);
        p_->point.value.data = std::move(clipped.x);
    }

    long steps() const { return t_; }
    long skipped() const { return skipped_; }
    double eta() const { return eta_; }
    double d_estimate() const { return d_; }
    double g_estimate() const { return std::sqrt(std::max(g2_, 0.0)); }

    void save_state(std::ostream& os) const {
        write_i64(os, t_);
        write_i64(os, skipped_);
        write_vec(os, m_.data);
        write_vec(os, v_.data);
        write_vec(os, w0_);
        write_vec(os, avg_);
        write_f64(os, g2_);
        write_f64(os, d_);
        write_f64(os, eta_);
    }

    void load_state(std::istream& is) {
        t_ = read_i64(is);
        skipped_ = read_i64(is);
        read_vec_into(is, m_.data);
        read_vec_into(is, v_.data);
        read_vec_into(is, w0_);
        read_vec_into(is, avg_);
        g2_ = read_f64(is);
        d_ = read_f64(is);
        eta_ = read_f64(is);
    }

  private:
    BallParam* p_;
    RiemannianAdamConfig cfg_;
    Tensor m_, v_;
    Vec w0_;   // initial point, anchors the D estimate
    Vec avg_;  // running iterate average
    double g2_ = 0.0;
    double d_ = 1.0;
    double eta_ = 0.0;
    long t_ = 0;
    long skipped_ = 0;
};

// Running per-loss standard deviations for dynamic normalization.
// sigma_i is initialized from the first full window, then updated by EWMA
// (decay 0.99) only at update_interval boundaries. Before warmup sigma = 1.
class LossNormalizer {
  public:
    LossNormalizer(std::size_t terms, std::size_t window = 100,
                   std::size_t update_interval = 50, double decay = 0.99,
                   double eps_num = 1e-5)
        : window_(window),
          interval_(update_interval),
          decay_(decay),
          eps_(eps_num),
          sigma_(terms, 1.0),
          buf_(terms) {}

    std::size_t terms() const { return sigma_.size(); }
    bool warmed_up() const { return warm_; }
    double sigma(std::size_t i) const { return sigma_[i]; }
    double epsilon() const { return eps_; }

    double normalize(std::size_t i, double raw) const { return raw / (sigma_[i] + eps_); }

    void record(const std::vector<double>& raw) {
        if (raw.size() != sigma_.size())
            throw std::invalid_argument("LossNormalizer: term count mismatch");
        for (std::size_t i = 0; i < raw.size(); ++i) {
            buf_[i].push_back(raw[i]);
            if (buf_[i].size() > window_) buf_[i].erase(buf_[i].begin());
        }
        ++count_;
        if (!warm_) {
            // Running std over the partial window until the first full one;
            // identity normalization for that long would let the largest raw
            // term monopolize the clipped gradient.
            if (count_ == window_) {
                for (std::size_t i = 0; i < sigma_.size(); ++i) sigma_[i] = window_std(i);
                warm_ = true;
            } else if (count_ >= 2) {
                for (std::size_t i = 0; i < sigma_.size(); ++i) sigma_[i] = window_std(i);
            }
            return;
        }
        if (count_ % interval_ == 0)
            for (std::size_t i = 0; i < sigma_.size(); ++i)
                sigma_[i] = decay_ * sigma_[i] + (1.0 - decay_) * window_std(i);
    }

    void save_state(std::ostream& os) const {
        write_u64(os, count_);
        write_u64(os, warm_ ? 1 : 0);
        write_vec(os, sigma_);
        for (const auto& b : buf_) write_vec(os, b);
    }

    void load_state(std::istream& is) {
        count_ = read_u64(is);
        warm_ = read_u64(is) != 0;
        read_vec_into(is, sigma_);
        for (auto& b : buf_) b = read_vec(is);
    }

  private:
    double window_std(std::size_t i) const {
        const auto& b = buf_[i];
        double mean = 0.0;
        for (double x : b) mean += x;
        mean /= static_cast<double>(b.size());
        double var = 0.0;
        for (double x : b) var += (x - mean) * (x - mean);
        var /= static_cast<double>(b.size());
        return std::sqrt(var);
    }

    std::size_t window_, interval_;
    double decay_, eps_;
    std::vector<double> sigma_;
    std::vector<std::vector<double>> buf_;
    std::size_t count_ = 0;
    bool warm_ = false;
};

// Weights of the total objective.
struct LossWeights {
    double alpha = 0.0;        // L_grad (diagnostic term; off by default)
    double beta = 1.0;         // L_score
    double gamma = 5.0;        // L_cycle
    double delta = 5.0;        // L_inv
    double eta = 1.0;          // L_prop
    double lambda_orth = 0.1;  // L_orth
    double zeta = 0.0;         // L_fus (diagnostic term; off by default)
};

// Term order used throughout losses vectors and diagnostics.
enum LossTerm : std::size_t {
    kTask = 0,
    kGrad = 1,
    kScore = 2,
    kCycle = 3,
    kInv = 4,
    kProp = 5,
    kOrth = 6,
    kFus = 7,
    kNumLossTerms = 8
};

inline double term_weight(const LossWeights& w, std::size_t i) {
    switch (i) {
        case kTask: return 1.0;
        case kGrad: return w.alpha;
        case kScore: return w.beta;
        case kCycle: return w.gamma;
        case kInv: return w.delta;
        case kProp: return w.eta;
        case kOrth: return w.lambda_orth;
        case kFus: return w.zeta;
    }
    return 0.0;
}

// Weighted sum of the (normalized) loss terms in LossTerm order.
inline double total_loss(const std::vector<double>& terms, const LossWeights& w) {
    if (terms.size() != kNumLossTerms)
        throw std::invalid_argument("total_loss: expected one value per loss term");
    double s = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) s += term_weight(w, i) * terms[i];
    return s;
}

}  // namespace ecnet
