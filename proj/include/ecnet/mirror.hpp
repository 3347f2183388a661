#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ecnet/hypmath.hpp"
#include "ecnet/nn.hpp"
#include "ecnet/tape.hpp"

namespace ecnet {

enum class WeightMode { raw, self_normalized };

// Learnable involution between B^{c_E} and B^{c_A}: tangent-space residual
// MLPs wrapped in log/exp maps, with the summed tangent vector clipped to a
// bound beta chosen so exp0 images stay interior with margin
// (gamma = tanh(sqrt(c) beta)/sqrt(c) = 0.9/sqrt(c) in the target ball).
struct MirrorLayer {
    Mlp res_e2a;  // R_phi on tangent space of the source ball
    Mlp res_a2e;  // R_psi
    double c_e = 1.0;
    double c_a = 0.8;
    double eps_bnd = 0.05;
    double beta_e2a = 0.0;  // clip bound for the E->A tangent vector
    double beta_a2e = 0.0;
    int vol_n = 0;  // ball dimension, used by the importance weight
    WeightMode weight_mode = WeightMode::raw;

    MirrorLayer() = default;
    MirrorLayer(std::size_t dim, std::size_t hidden, std::size_t depth, double ce, double ca,
                double eps, Rng& rng)
        : c_e(ce), c_a(ca), eps_bnd(eps), vol_n(static_cast<int>(dim)) {
        std::vector<std::size_t> dims{dim};
        for (std::size_t i = 0; i + 1 < depth; ++i) dims.push_back(hidden);
        dims.push_back(dim);
        res_e2a = Mlp(dims, Activation::tanh, Activation::identity, rng, "mirror.e2a");
        res_a2e = Mlp(dims, Activation::tanh, Activation::identity, rng, "mirror.a2e");
        beta_e2a = ecnet::artanh(0.9) / std::sqrt(c_a);
        beta_a2e = ecnet::artanh(0.9) / std::sqrt(c_e);
    }

    void collect(std::vector<Param*>& out) {
        res_e2a.collect(out);
        res_a2e.collect(out);
    }

    // g_phi = exp0^{c_A} o clip_beta o (id + R_phi) o log0^{c_E}
    Value e2a_rows(Tape& t, Value h, int* clip_count = nullptr) {
        Value v = t.log0_rows(h, c_e);
        Value u = t.clip_rows_maxnorm(t.add(v, res_e2a.forward(t, v)), beta_e2a);
        return t.exp0_rows(u, c_a, eps_bnd, clip_count);
    }

    // f_psi, the opposite direction.
    Value a2e_rows(Tape& t, Value h, int* clip_count = nullptr) {
        Value v = t.log0_rows(h, c_a);
        Value u = t.clip_rows_maxnorm(t.add(v, res_a2e.forward(t, v)), beta_a2e);
        return t.exp0_rows(u, c_e, eps_bnd, clip_count);
    }

    Vec e2a(const Vec& h) {
        Tape t;
        return t.val(e2a_rows(t, t.constant(Tensor::row_vector(h)))).data;
    }

    Vec a2e(const Vec& h) {
        Tape t;
        return t.val(a2e_rows(t, t.constant(Tensor::row_vector(h)))).data;
    }

    // Importance weight column w(h) = (1 - c_E ||h||^2)^{-n}.
    Value weight_rows(Tape& t, Value h) {
        Value base = t.add_scalar(t.scale(t.rows_sqnorm(h), -c_e), 1.0);
        return t.pow_int(base, -vol_n);
    }

    Value weighted_mean(Tape& t, Value w, Value d) {
        if (weight_mode == WeightMode::self_normalized) {
            return t.mul(t.sum(t.mul(w, d)), t.reciprocal(t.sum(w)));
        }
        return t.mean(t.mul(w, d));
    }

    // L_cycle = mean_h w(h) d_P(h, f_psi(g_phi(h)))
    Value cycle_loss_rows(Tape& t, Value h) {
        if (t.val(h).rows == 0) throw std::invalid_argument("cycle_loss: empty batch");
        Value fg = a2e_rows(t, e2a_rows(t, h));
        Value d = t.poincare_dist_rows(h, fg, c_e);
        return weighted_mean(t, weight_rows(t, h), d);
    }

    // L_inv = mean_h w(h) d_P(h, (T o g_phi)^2(h)) with T the radial isometry
    // B^{c_A} -> B^{c_E}, inserted so g_phi composes with itself across
    // curvatures.
    Value involution_loss_rows(Tape& t, Value h) {
        if (t.val(h).rows == 0) throw std::invalid_argument("involution_loss: empty batch");
        Value g1 = t.isometric_rescale_rows(e2a_rows(t, h), c_a, c_e);
        Value g2 = t.isometric_rescale_rows(e2a_rows(t, g1), c_a, c_e);
        Value d = t.poincare_dist_rows(h, g2, c_e);
        return weighted_mean(t, weight_rows(t, h), d);
    }

    double cycle_loss(const std::vector<Vec>& batch) {
        return eval_loss(batch, /*involution=*/false);
    }

    double involution_loss(const std::vector<Vec>& batch) {
        return eval_loss(batch, /*involution=*/true);
    }

    // s_asym(h) = d_P(h, f_psi(g_phi(h))) in B^{c_E}.
    double asymmetry_score(const Vec& h_fus) {
        return poincare_dist(h_fus, a2e(e2a(h_fus)), c_e);
    }

  private:
    double eval_loss(const std::vector<Vec>& batch, bool involution) {
        if (batch.empty()) throw std::invalid_argument("mirror loss: empty batch");
        Tensor rows(batch.size(), batch[0].size());
        for (std::size_t i = 0; i < batch.size(); ++i)
            for (std::size_t j = 0; j < batch[i].size(); ++j) rows(i, j) = batch[i][j];
        Tape t;
        Value h = t.constant(std::move(rows));
        Value loss = involution ? involution_loss_rows(t, h) : cycle_loss_rows(t, h);
        return t.val(loss).data[0];
    }
};

}  // namespace ecnet
