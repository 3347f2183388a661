#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ecnet/config.hpp"
#include "ecnet/data.hpp"
#include "ecnet/fusion.hpp"
#include "ecnet/mirror.hpp"
#include "ecnet/optim.hpp"
#include "ecnet/propdecomp.hpp"
#include "ecnet/scorefield.hpp"
#include "ecnet/serialize.hpp"

namespace ecnet {

// All trainable state of a run. Per modality: tangent projections into the
// two balls, a mask token living on B^{c_E}, a decomposition net, and a
// property embedding. Shared: mirror, score model, fuser, prediction head.
struct EcNetModel {
    std::array<Param, kNumModalities> proj_e;
    std::array<Param, kNumModalities> proj_a;
    std::array<BallParam, kNumModalities> token;
    std::array<DecompNet, kNumModalities> decomp;
    std::array<Param, kNumModalities> prop;
    MirrorLayer mirror;
    ScoreModel score;
    NoiseSchedule sched;
    SetFuser fuser;
    PredictHead head;
    std::size_t d_p = 0;

    EcNetModel(const Config& cfg, const DatasetHeader& hdr, Rng& rng)
        : d_p(static_cast<std::size_t>(cfg.d_p)) {
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            const std::size_t dm = hdr.dims[m];
            if (dm == 0) throw std::invalid_argument("model: zero-dim modality");
            const std::string nm = modality_name(m);
            Tensor we(d_p, dm), wa(d_p, dm);
            // Half-unit tangent rows at init: keeps the starting embeddings
            // well inside the clip radius for O(1) feature scales.
            const double s = 0.5 / std::sqrt(static_cast<double>(dm * d_p));
            for (double& x : we.data) x = s * rng.normal();
            for (double& x : wa.data) x = s * rng.normal();
            proj_e[m] = Param(std::move(we), "proj_e." + nm);
            proj_a[m] = Param(std::move(wa), "proj_a." + nm);
            Vec tok(d_p);
            for (double& x : tok) x = 0.05 * rng.normal() / std::sqrt(static_cast<double>(d_p));
            token[m] = BallParam(std::move(tok), cfg.c_e, cfg.eps_bnd, "token." + nm);
            decomp[m] = DecompNet(d_p, static_cast<std::size_t>(cfg.hidden), d_p, rng,
                                  "decomp." + nm);
            prop[m] = Param(Tensor(1, d_p), "prop." + nm);
        }
        mirror = MirrorLayer(d_p, static_cast<std::size_t>(cfg.hidden),
                             static_cast<std::size_t>(cfg.mirror_depth), cfg.c_e, cfg.c_a,
                             cfg.eps_bnd, rng);
        // Per-batch Monte-Carlo estimates self-normalize the importance
        // weights; the raw mean explodes whenever a row sits near the
        // boundary.
        mirror.weight_mode = WeightMode::self_normalized;
        // Damp the residual branches so the mirror starts near the pure
        // curvature transport. A full-scale random residual throws the
        // mirror images against the far ball's boundary; exactly zero would
        // put the cycle distance at the nondifferentiable origin. The first
        // layer is steepened instead: saturated tanh units make the learned
        // displacement depend on direction rather than on distance from the
        // origin, which is what lets the round-trip gap separate on-cluster
        // points from off-cluster ones.
        for (Mlp* r : {&mirror.res_e2a, &mirror.res_a2e}) {
            for (double& x : r->layers.front().w.value.data) x *= 6.0;
            for (double& x : r->layers.back().w.value.data) x *= 0.01;
        }
        score = ScoreModel(d_p, static_cast<std::size_t>(cfg.hidden), rng);
        sched = NoiseSchedule{cfg.sigma_min, cfg.sigma_max, 1.0, cfg.score_steps};
        fuser = SetFuser(kNumModalities + 1, d_p, static_cast<std::size_t>(cfg.heads),
                         d_p / static_cast<std::size_t>(cfg.heads), d_p, cfg.c_e, cfg.eps_bnd,
                         rng);
        // Same treatment for the fuser's output projection: a unit-scale
        // random map emits tangent rows of norm ~sqrt(d_p), which lands every
        // fused point on the clip sphere and flattens its geometry. The
        // feed-forward layer is steepened like the mirror residuals, so the
        // fused radius depends on the saturation pattern rather than on how
        // far the pooled activations sit from the unit boundary.
        for (double& x : fuser.ffn.w.value.data) x *= 6.0;
        for (double& x : fuser.out_proj.w.value.data) x *= 0.05;
        head = PredictHead(d_p, static_cast<std::size_t>(cfg.hidden), cfg.classes, cfg.c_e,
                           rng);
    }

    // Parameters stepped by Euclidean Adam, in a fixed order.
    std::vector<Param*> euclidean_params() {
        std::vector<Param*> out;
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            out.push_back(&proj_e[m]);
            out.push_back(&proj_a[m]);
            decomp[m].collect(out);
            out.push_back(&prop[m]);
        }
        mirror.collect(out);
        score.collect(out);
        fuser.collect(out);
        head.collect(out);
        return out;
    }

    // Everything, tokens included, for clipping, zeroing, and checkpoints.
    std::vector<Param*> all_params() {
        std::vector<Param*> out = euclidean_params();
        for (std::size_t m = 0; m < kNumModalities; ++m) out.push_back(&token[m].point);
        return out;
    }
};

struct BatchStats {
    std::array<double, kNumLossTerms> raw{};
    std::array<double, kNumLossTerms> normalized{};
    double total = 0.0;
    double grad_norm = 0.0;
    bool grad_clipped = false;
    long clip_points = 0;
    long total_points = 0;
    double clip_fraction = 0.0;
    double sampler_clip_fraction = 0.0;
    bool ema_applied = false;
    double mask_rate = 0.0;
};

struct EpochStats {
    int epoch = 0;
    long batches = 0;
    std::array<double, kNumLossTerms> raw_mean{};
    std::array<double, kNumLossTerms> norm_mean{};
    double total_mean = 0.0;
    double grad_norm_mean = 0.0;
    double grad_clip_fraction = 0.0;
    double clip_fraction = 0.0;
    double sampler_clip_fraction = 0.0;
    double curl = 0.0;
    AngleStats angles;
};

struct EvalResult {
    std::string protocol;
    std::string pattern;
    Metrics metrics;
    std::array<long, kNumModalities> token_slots{};
    std::vector<int> predictions;
    std::vector<double> s_asym;
    double s_asym_mean = 0.0;
};

namespace detail {

inline void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i)
        std::swap(idx[i - 1], idx[rng.integer(i)]);
}

inline std::string fmt_double(double x) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

}  // namespace detail

// One training run: owns the model, optimizers, loss normalizer, and every
// random stream, so that (config, seed) fully determines the trajectory and a
// checkpoint can resume it mid-run.
class Trainer {
  public:
    // Loss-term graph of one minibatch. Terms flagged on_tape carry
    // gradients; the curl term is a finite-difference diagnostic filled in by
    // the caller. z0 (clean mirror-space points) and zhat (clipped reverse
    // draws) are generated data: gradients stop at them by construction, and
    // passing them back in reproduces the identical graph.
    struct TermGraph {
        std::array<Value, kNumLossTerms> term{};
        std::array<bool, kNumLossTerms> on_tape{};
        std::array<Tensor, kNumModalities> mu_bar;
        AngleStats angles;
        Value h_fus{};
        Value logits{};
        long clip_points = 0;
        long total_points = 0;
        long sampler_clips = 0;  // reverse draws re-projected into the ball,
        long sampler_points = 0;  // tracked apart from the embedding safeguard
        Tensor z0;
        Tensor zhat;
    };

    Trainer(const Config& cfg, std::uint64_t seed, const DatasetHeader& hdr)
        : cfg_(cfg),
          seed_(seed),
          init_rng_(Rng::stream(seed, "init")),
          model_(cfg, hdr, init_rng_),
          shuffle_(Rng::stream(seed, "shuffle")),
          mask_(Rng::stream(seed, "mask")),
          score_rng_(Rng::stream(seed, "score")),
          vhat_(Rng::stream(seed, "vhat")),
          fus_(Rng::stream(seed, "fus")),
          normalizer_(kNumLossTerms, static_cast<std::size_t>(cfg.loss_window),
                      static_cast<std::size_t>(cfg.loss_update_interval),
                      cfg.loss_ewma_decay) {
        msched_.train_rates = cfg.mask_rates;
        msched_.min_start = cfg.mask_min_start;
        msched_.min_end = cfg.mask_min_end;
        msched_.anneal_interval = cfg.mask_anneal_epochs;
        msched_.test_rate = cfg.test_mask;
        weights_ = {1.0,          cfg.alpha, cfg.beta, cfg.gamma,
                    cfg.delta,    cfg.eta_prop,
                    /*orth*/ 1.0,  // lambda_orth is applied inside the raw term
                    cfg.zeta};
        adam_ = std::make_unique<Adam>(model_.euclidean_params(),
                                       AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            RiemannianAdamConfig rc;
            rc.lr = cfg.lr;
            radam_[m] = std::make_unique<RiemannianAdam>(&model_.token[m], rc);
        }
        Rng curl_rng = Rng::stream(seed, "curl");
        for (int p = 0; p < 4; ++p) {
            Vec pt(model_.d_p);
            for (double& x : pt) x = curl_rng.normal();
            const double r = norm(pt);
            const double target = 0.3 * curl_rng.uniform() / std::sqrt(cfg.c_e);
            if (r > 0.0)
                for (double& x : pt) x *= target / r;
            curl_probes_.push_back(std::move(pt));
        }
    }

    Trainer(const Trainer&) = delete;
    Trainer& operator=(const Trainer&) = delete;

    const Config& config() const { return cfg_; }
    std::uint64_t seed() const { return seed_; }
    long step() const { return step_; }
    int epochs_done() const { return epochs_done_; }
    EcNetModel& model() { return model_; }
    const std::vector<double>& clip_fractions() const { return clip_history_; }
    const LossNormalizer& normalizer() const { return normalizer_; }
    const RiemannianAdam& token_optimizer(std::size_t m) const { return *radam_[m]; }
    double last_curl() const { return last_curl_; }

    // Builds every differentiable loss term of one (already masked) batch on
    // the caller's tape. fus_rng enables the sub-mask consistency term.
    // fixed_z0 / fixed_zhat replay previously generated data instead of
    // drawing fresh; shapes must match the batch.
    TermGraph build_terms(Tape& t, const std::vector<Sample>& batch, Rng& score_rng,
                          Rng& vhat_rng, Rng* fus_rng = nullptr,
                          const Tensor* fixed_z0 = nullptr,
                          const Tensor* fixed_zhat = nullptr) {
        if (batch.empty()) throw std::invalid_argument("build_terms: empty batch");
        TermGraph g;
        const std::size_t B = batch.size();
        const std::size_t d = model_.d_p;

        std::array<Value, kNumModalities> h_e;
        std::array<Value, kNumModalities> tan;
        int clip_embed = 0;
        std::vector<Vec> observed;  // h_E rows of available modalities
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            SlotInput in = slot_input(batch, m);
            Value proj = t.matmul_nt(t.constant(std::move(in.x)), t.leaf(model_.proj_e[m]));
            Value blended = blend_with_token(t, proj, std::move(in.av), std::move(in.nav), m);
            h_e[m] = t.exp0_rows(blended, cfg_.c_e, cfg_.eps_bnd, &clip_embed);
            tan[m] = t.log0_rows(h_e[m], cfg_.c_e);
            const Tensor& hv = t.val(h_e[m]);
            for (std::size_t j = 0; j < B; ++j)
                if (batch[j].mask[m]) observed.push_back(hv.row(j));
        }
        g.total_points += static_cast<long>(kNumModalities * B);
        g.clip_points += clip_embed;

        // Paired-ball embeddings of the observed features. Nothing downstream
        // consumes them, but they are part of the per-batch pipeline and
        // their clipping events belong in the safeguard statistics.
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            for (std::size_t j = 0; j < B; ++j) {
                if (!batch[j].mask[m]) continue;
                Vec u = matmul_nt(Tensor::row_vector(batch[j].features[m]),
                                  model_.proj_a[m].value)
                            .data;
                if (exp0_clipped(u, cfg_.c_a, cfg_.eps_bnd).clipped) ++g.clip_points;
                ++g.total_points;
            }
        }

        // Decomposition heads on the tangent embeddings.
        Value l_prop{}, l_orth{};
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            DecompNet::Out out = model_.decomp[m].forward(t, tan[m]);
            Value lp = prop_loss(t, model_.prop[m], out.mu);
            Value lo = orth_loss(t, out.sigma, out.mu, cfg_.lambda_orth);
            if (m == 0) {
                l_prop = lp;
                l_orth = lo;
            } else {
                l_prop = t.add(l_prop, lp);
                l_orth = t.add(l_orth, lo);
            }
            const Tensor& mu = t.val(out.mu);
            Tensor bar(1, d);
            for (std::size_t j = 0; j < B; ++j)
                for (std::size_t k = 0; k < d; ++k) bar(0, k) += mu(j, k);
            for (double& x : bar.data) x /= static_cast<double>(B);
            g.mu_bar[m] = std::move(bar);
            merge_angles(g.angles, principal_angles(t.val(out.sigma), mu));
        }
        g.term[kProp] = t.scale(l_prop, 1.0 / kNumModalities);
        g.term[kOrth] = t.scale(l_orth, 1.0 / kNumModalities);

        // Denoising score matching on mirror images of the observed rows.
        if (fixed_z0 != nullptr) {
            g.z0 = *fixed_z0;
        } else {
            Tensor obs(observed.size(), d);
            for (std::size_t j = 0; j < observed.size(); ++j)
                for (std::size_t k = 0; k < d; ++k) obs(j, k) = observed[j][k];
            Tape tz;
            g.z0 = tz.val(model_.mirror.e2a_rows(tz, tz.constant(std::move(obs))));
        }
        g.term[kScore] = score_loss_rows(t, model_.score, g.z0, model_.sched, score_rng);

        // Reverse-diffusion draws, mapped back through the mirror, become the
        // extra fusion slot.
        if (fixed_zhat != nullptr) {
            g.zhat = *fixed_zhat;
        } else {
            g.zhat = reverse_sample_batch(model_.score, model_.sched, B, vhat_rng);
            for (std::size_t j = 0; j < B; ++j) {
                auto cl = clip_to_ball(g.zhat.row(j), cfg_.c_a, cfg_.eps_bnd);
                if (cl.clipped) ++g.sampler_clips;
                ++g.sampler_points;
                for (std::size_t k = 0; k < d; ++k) g.zhat(j, k) = cl.x[k];
            }
        }
        Value vhat_slot =
            t.log0_rows(model_.mirror.a2e_rows(t, t.constant(g.zhat)), cfg_.c_e);

        std::vector<int> labels(B);
        for (std::size_t j = 0; j < B; ++j) labels[j] = batch[j].label;
        int clip_fus = 0;
        g.h_fus = model_.fuser.fuse_rows(t, {tan[0], tan[1], tan[2], vhat_slot}, &clip_fus);
        g.total_points += static_cast<long>(B);
        g.clip_points += clip_fus;
        g.logits = model_.head.forward(t, g.h_fus);
        g.term[kTask] = task_loss(t, g.logits, labels);

        // Mirror consistency over every batch of points the model places on
        // M_E: the per-modality embedding rows and the fused rows. Anchoring
        // the round trip at the fused points keeps their region of the ball
        // well covered by the mirror and discourages the fuser from drifting
        // toward the boundary, where the round-trip distance blows up.
        Value l_cycle = model_.mirror.cycle_loss_rows(t, h_e[0]);
        Value l_inv = model_.mirror.involution_loss_rows(t, h_e[0]);
        for (std::size_t m = 1; m < kNumModalities; ++m) {
            l_cycle = t.add(l_cycle, model_.mirror.cycle_loss_rows(t, h_e[m]));
            l_inv = t.add(l_inv, model_.mirror.involution_loss_rows(t, h_e[m]));
        }
        l_cycle = t.add(l_cycle, model_.mirror.cycle_loss_rows(t, g.h_fus));
        l_inv = t.add(l_inv, model_.mirror.involution_loss_rows(t, g.h_fus));
        g.term[kCycle] = t.scale(l_cycle, 1.0 / (kNumModalities + 1));
        g.term[kInv] = t.scale(l_inv, 1.0 / (kNumModalities + 1));

        if (fus_rng != nullptr)
            g.term[kFus] = submask_task_loss(t, batch, tan, vhat_slot, labels, *fus_rng);

        g.on_tape[kTask] = true;
        g.on_tape[kScore] = true;
        g.on_tape[kCycle] = true;
        g.on_tape[kInv] = true;
        g.on_tape[kProp] = true;
        g.on_tape[kOrth] = true;
        g.on_tape[kFus] = fus_rng != nullptr;
        return g;
    }

    // One training minibatch: mask, build the loss graph, normalize and
    // combine the terms, clip gradients, step both optimizers, and run the
    // scheduled property-embedding EMA.
    BatchStats train_batch(std::vector<Sample> batch, int epoch) {
        BatchStats st;
        if (batch.empty()) return st;
        st.mask_rate = msched_.sample_rate(epoch, mask_);
        apply_mask(batch, st.mask_rate, mask_);

        Tape t;
        const bool use_fus = cfg_.zeta > 0.0;
        TermGraph g = build_terms(t, batch, score_rng_, vhat_, use_fus ? &fus_ : nullptr);
        st.clip_points = g.clip_points;
        st.total_points = g.total_points;
        st.sampler_clip_fraction =
            g.sampler_points > 0 ? static_cast<double>(g.sampler_clips) /
                                       static_cast<double>(g.sampler_points)
                                 : 0.0;

        for (std::size_t i = 0; i < kNumLossTerms; ++i)
            st.raw[i] = g.on_tape[i] ? t.val(g.term[i]).data[0] : 0.0;
        st.raw[kGrad] = curl_penalty(last_curl_, cfg_.lambda_curl, cfg_.curl_bound);

        normalizer_.record(std::vector<double>(st.raw.begin(), st.raw.end()));
        for (std::size_t i = 0; i < kNumLossTerms; ++i)
            st.normalized[i] = normalizer_.normalize(i, st.raw[i]);

        auto coeff = [&](std::size_t i) {
            return weights_[i] / (normalizer_.sigma(i) + normalizer_.epsilon());
        };
        Value total = t.scale(g.term[kTask], coeff(kTask));
        for (std::size_t i = 0; i < kNumLossTerms; ++i) {
            if (i == kTask || !g.on_tape[i] || weights_[i] == 0.0) continue;
            total = t.add(total, t.scale(g.term[i], coeff(i)));
        }
        // The curl penalty is a finite-difference diagnostic; it enters the
        // reported total but contributes no gradient.
        st.total = t.val(total).data[0] + weights_[kGrad] * st.normalized[kGrad];

        t.backward(total);
        std::vector<Param*> all = model_.all_params();
        st.grad_norm = global_grad_clip(all, cfg_.grad_clip);
        st.grad_clipped = st.grad_norm > cfg_.grad_clip;
        adam_->step();
        for (std::size_t m = 0; m < kNumModalities; ++m) radam_[m]->step();
        ++step_;
        for (std::size_t m = 0; m < kNumModalities; ++m)
            st.ema_applied |= ema_update(model_.prop[m], g.mu_bar[m], step_,
                                         cfg_.ema_interval, cfg_.ema_decay);
        for (Param* p : all) p->zero_grad();

        st.clip_fraction =
            st.total_points > 0
                ? static_cast<double>(st.clip_points) / static_cast<double>(st.total_points)
                : 0.0;
        clip_history_.push_back(st.clip_fraction);
        merge_angles(epoch_angles_, g.angles);
        return st;
    }

    EpochStats train_epoch(const Dataset& train) {
        EpochStats es;
        es.epoch = epochs_done_;
        epoch_angles_ = AngleStats{};
        epoch_angles_.histogram.assign(50, 0);
        std::vector<std::size_t> idx(train.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        detail::shuffle_indices(idx, shuffle_);
        const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
        for (std::size_t start = 0; start < idx.size(); start += bs) {
            const std::size_t end = std::min(start + bs, idx.size());
            std::vector<Sample> batch;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) batch.push_back(train.samples[idx[i]]);
            BatchStats bst = train_batch(std::move(batch), epochs_done_);
            ++es.batches;
            for (std::size_t i = 0; i < kNumLossTerms; ++i) {
                es.raw_mean[i] += bst.raw[i];
                es.norm_mean[i] += bst.normalized[i];
            }
            es.total_mean += bst.total;
            es.grad_norm_mean += bst.grad_norm;
            es.grad_clip_fraction += bst.grad_clipped ? 1.0 : 0.0;
            es.clip_fraction += bst.clip_fraction;
            es.sampler_clip_fraction += bst.sampler_clip_fraction;
        }
        if (es.batches > 0) {
            const double nb = static_cast<double>(es.batches);
            for (std::size_t i = 0; i < kNumLossTerms; ++i) {
                es.raw_mean[i] /= nb;
                es.norm_mean[i] /= nb;
            }
            es.total_mean /= nb;
            es.grad_norm_mean /= nb;
            es.grad_clip_fraction /= nb;
            es.clip_fraction /= nb;
            es.sampler_clip_fraction /= nb;
        }
        last_curl_ = curl_diagnostic();
        es.curl = last_curl_;
        es.angles = epoch_angles_;
        ++epochs_done_;
        return es;
    }

    // Max curl-proxy of the mirror round-trip displacement field over the
    // fixed probe points.
    double curl_diagnostic() {
        auto field = [this](const Vec& h) {
            Vec back = model_.mirror.a2e(model_.mirror.e2a(h));
            Vec v = log0(back, cfg_.c_e);
            const Vec vh = log0(h, cfg_.c_e);
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= vh[i];
            return v;
        };
        return curl_proxy(field, curl_probes_, 1e-3);
    }

    // Inference pass over a prepared (already masked/corrupted) sample list.
    EvalResult infer(const std::vector<Sample>& samples, Rng& rng,
                     const std::string& protocol, const std::string& pattern) {
        EvalResult res;
        res.protocol = protocol;
        res.pattern = pattern;
        const std::size_t d = model_.d_p;
        std::vector<int> truth;
        truth.reserve(samples.size());
        const std::size_t bs = static_cast<std::size_t>(cfg_.batch_size);
        for (std::size_t start = 0; start < samples.size(); start += bs) {
            const std::size_t end = std::min(start + bs, samples.size());
            const std::size_t B = end - start;
            std::vector<Sample> batch(samples.begin() + start, samples.begin() + end);
            Tape t;
            std::array<Value, kNumModalities> tan;
            for (std::size_t m = 0; m < kNumModalities; ++m) {
                for (std::size_t j = 0; j < B; ++j)
                    if (!batch[j].mask[m]) ++res.token_slots[m];
                SlotInput in = slot_input(batch, m);
                Value proj =
                    t.matmul_nt(t.constant(std::move(in.x)), t.leaf(model_.proj_e[m]));
                Value blended =
                    blend_with_token(t, proj, std::move(in.av), std::move(in.nav), m);
                Value h = t.exp0_rows(blended, cfg_.c_e, cfg_.eps_bnd);
                tan[m] = t.log0_rows(h, cfg_.c_e);
            }
            Tensor zhat = reverse_sample_batch(model_.score, model_.sched, B, rng);
            for (std::size_t j = 0; j < B; ++j) {
                Vec row = clip_to_ball(zhat.row(j), cfg_.c_a, cfg_.eps_bnd).x;
                for (std::size_t k = 0; k < d; ++k) zhat(j, k) = row[k];
            }
            Value vhat_slot =
                t.log0_rows(model_.mirror.a2e_rows(t, t.constant(std::move(zhat))), cfg_.c_e);
            Value h_fus = model_.fuser.fuse_rows(t, {tan[0], tan[1], tan[2], vhat_slot});
            Value logits = model_.head.forward(t, h_fus);
            const Tensor& lg = t.val(logits);
            const Tensor& hf = t.val(h_fus);
            for (std::size_t j = 0; j < B; ++j) {
                int best = 0;
                for (std::size_t k = 1; k < lg.cols; ++k)
                    if (lg(j, k) > lg(j, best)) best = static_cast<int>(k);
                res.predictions.push_back(best);
                truth.push_back(batch[j].label);
                res.s_asym.push_back(model_.mirror.asymmetry_score(hf.row(j)));
            }
        }
        res.metrics = task_metrics(res.predictions, truth, cfg_.classes);
        double acc = 0.0;
        for (double s : res.s_asym) acc += s;
        res.s_asym_mean =
            res.s_asym.empty() ? 0.0 : acc / static_cast<double>(res.s_asym.size());
        return res;
    }

    EvalResult eval_pattern(const Dataset& test, const std::array<bool, kNumModalities>& keep,
                            const std::string& pattern) {
        std::vector<Sample> prepared = test.samples;
        for (Sample& s : prepared)
            for (std::size_t m = 0; m < kNumModalities; ++m)
                s.mask[m] = s.mask[m] && keep[m];
        Rng rng = Rng::stream(seed_, "eval/fixed/" + pattern);
        return infer(prepared, rng, "fixed", pattern);
    }

    EvalResult eval_clean(const Dataset& test) {
        Rng rng = Rng::stream(seed_, "eval/clean");
        return infer(test.samples, rng, "clean", "full");
    }

    // Global missing rate: every modality slot dropped independently. A
    // sample may lose all slots; fusion then sees only mask tokens.
    EvalResult eval_eta(const Dataset& test, double eta) {
        char name[16];
        std::snprintf(name, sizeof name, "eta=%.1f", eta);
        Rng rng = Rng::stream(seed_, std::string("eval/eta/") + name);
        std::vector<Sample> prepared = test.samples;
        for (Sample& s : prepared)
            for (std::size_t m = 0; m < kNumModalities; ++m)
                if (s.mask[m] && rng.uniform() < eta) s.mask[m] = false;
        return infer(prepared, rng, "eta", name);
    }

    // Gaussian feature noise on a fixed fraction of test samples.
    EvalResult eval_corrupt(const Dataset& test) {
        Rng rng = Rng::stream(seed_, "eval/corrupt");
        std::vector<Sample> prepared = test.samples;
        const std::size_t n_corrupt = static_cast<std::size_t>(
            std::lround(cfg_.corrupt_frac * static_cast<double>(prepared.size())));
        std::vector<std::size_t> idx(prepared.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        detail::shuffle_indices(idx, rng);
        for (std::size_t i = 0; i < n_corrupt && i < idx.size(); ++i) {
            Sample& s = prepared[idx[i]];
            for (std::size_t m = 0; m < kNumModalities; ++m)
                for (double& x : s.features[m]) x += cfg_.corrupt_sigma * rng.normal();
        }
        return infer(prepared, rng, "corrupt", "full");
    }

    void save_checkpoint(const std::string& path) {
        std::ofstream os(path);
        if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
        os << "ecnet-ckpt-v1\n";
        write_u64(os, seed_);
        write_i64(os, step_);
        write_i64(os, epochs_done_);
        write_f64(os, last_curl_);
        std::vector<Param*> all = model_.all_params();
        write_u64(os, all.size());
        for (const Param* p : all) write_vec(os, p->value.data);
        adam_->save_state(os);
        for (std::size_t m = 0; m < kNumModalities; ++m) radam_[m]->save_state(os);
        normalizer_.save_state(os);
        shuffle_.save_state(os);
        mask_.save_state(os);
        score_rng_.save_state(os);
        vhat_.save_state(os);
        fus_.save_state(os);
        write_vec(os, clip_history_);
        if (!os) throw CheckpointError("write failure on checkpoint: " + path);
    }

    void load_checkpoint(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw CheckpointError("cannot open checkpoint: " + path);
        expect_tag(is, "ecnet-ckpt-v1");
        const std::uint64_t seed = read_u64(is);
        if (seed != seed_)
            throw CheckpointError("checkpoint seed does not match the run seed");
        step_ = read_i64(is);
        epochs_done_ = static_cast<int>(read_i64(is));
        last_curl_ = read_f64(is);
        std::vector<Param*> all = model_.all_params();
        if (read_u64(is) != all.size())
            throw CheckpointError("checkpoint parameter count mismatch");
        for (Param* p : all) read_vec_into(is, p->value.data);
        adam_->load_state(is);
        for (std::size_t m = 0; m < kNumModalities; ++m) radam_[m]->load_state(is);
        normalizer_.load_state(is);
        shuffle_.load_state(is);
        mask_.load_state(is);
        score_rng_.load_state(is);
        vhat_.load_state(is);
        fus_.load_state(is);
        clip_history_ = read_vec(is);
    }

  private:
    struct SlotInput {
        Tensor x;
        Tensor av;
        Tensor nav;
    };

    SlotInput slot_input(const std::vector<Sample>& batch, std::size_t m) const {
        const std::size_t B = batch.size();
        SlotInput in{Tensor(B, batch[0].features[m].size()), Tensor(B, 1), Tensor(B, 1)};
        for (std::size_t j = 0; j < B; ++j) {
            const Vec& f = batch[j].features[m];
            for (std::size_t k = 0; k < f.size(); ++k) in.x(j, k) = f[k];
            in.av(j, 0) = batch[j].mask[m] ? 1.0 : 0.0;
            in.nav(j, 0) = 1.0 - in.av(j, 0);
        }
        return in;
    }

    // available ? projected tangent : log0 of the modality's mask token
    Value blend_with_token(Tape& t, Value proj, Tensor av, Tensor nav, std::size_t m) {
        const std::size_t B = av.rows;
        Value tok_tan = t.log0_rows(t.leaf(model_.token[m].point), cfg_.c_e);
        Value tok_rows = t.add_rowvec(t.constant(Tensor(B, model_.d_p)), tok_tan);
        return t.add(t.bcast_mul(proj, t.constant(std::move(av))),
                     t.bcast_mul(tok_rows, t.constant(std::move(nav))));
    }

    static void merge_angles(AngleStats& into, const AngleStats& add) {
        if (into.histogram.empty()) into.histogram.assign(50, 0);
        const long total = into.counted + add.counted;
        if (total > 0)
            into.mean_deg =
                (into.mean_deg * static_cast<double>(into.counted) +
                 add.mean_deg * static_cast<double>(add.counted)) /
                static_cast<double>(total);
        into.max_deg = std::max(into.max_deg, add.max_deg);
        into.counted = total;
        into.skipped += add.skipped;
        for (std::size_t b = 0; b < add.histogram.size() && b < into.histogram.size(); ++b)
            into.histogram[b] += add.histogram[b];
    }

    Value submask_task_loss(Tape& t, const std::vector<Sample>& batch,
                            const std::array<Value, kNumModalities>& tan, Value vhat_slot,
                            const std::vector<int>& labels, Rng& rng) {
        const std::size_t B = batch.size();
        std::array<Tensor, kNumModalities> av;
        for (auto& a : av) a = Tensor(B, 1);
        for (std::size_t j = 0; j < B; ++j) {
            std::vector<std::size_t> present;
            for (std::size_t m = 0; m < kNumModalities; ++m)
                if (batch[j].mask[m]) present.push_back(m);
            std::vector<std::size_t> kept;
            for (std::size_t m : present)
                if (rng.uniform() >= 0.5) kept.push_back(m);
            if (kept.empty() && !present.empty())
                kept.push_back(present[rng.integer(present.size())]);
            for (std::size_t m : kept) av[m](j, 0) = 1.0;
        }
        std::vector<Value> slots;
        for (std::size_t m = 0; m < kNumModalities; ++m) {
            Tensor nav(B, 1);
            for (std::size_t j = 0; j < B; ++j) nav(j, 0) = 1.0 - av[m](j, 0);
            slots.push_back(blend_with_token(t, tan[m], std::move(av[m]), std::move(nav), m));
        }
        slots.push_back(vhat_slot);
        Value h = model_.fuser.fuse_rows(t, slots);
        return task_loss(t, model_.head.forward(t, h), labels);
    }

    Config cfg_;
    std::uint64_t seed_ = 0;
    Rng init_rng_;
    EcNetModel model_;
    Rng shuffle_, mask_, score_rng_, vhat_, fus_;
    LossNormalizer normalizer_;
    MaskSchedule msched_;
    std::array<double, kNumLossTerms> weights_{};
    std::unique_ptr<Adam> adam_;
    std::array<std::unique_ptr<RiemannianAdam>, kNumModalities> radam_;
    std::vector<Vec> curl_probes_;
    std::vector<double> clip_history_;
    AngleStats epoch_angles_;
    double last_curl_ = 0.0;
    long step_ = 0;
    int epochs_done_ = 0;
};

// ---- run drivers ----

// Train/test split drawn from one generator pass so both sides share class
// prototypes and feature maps.
inline std::pair<Dataset, Dataset> make_synthetic_split(const Config& cfg,
                                                        std::uint64_t seed) {
    SynthConfig sc;
    sc.classes = cfg.classes;
    sc.count = static_cast<std::size_t>(cfg.train_count + cfg.test_count);
    sc.n_ball = static_cast<std::size_t>(cfg.n_ball);
    sc.rho_inc = cfg.rho_inc;
    sc.c_e = cfg.c_e;
    sc.eps_bnd = cfg.eps_bnd;
    Dataset all = generate_synthetic(sc, seed);
    Dataset train, test;
    train.header = all.header;
    test.header = all.header;
    const std::size_t nt = static_cast<std::size_t>(cfg.train_count);
    train.samples.assign(all.samples.begin(), all.samples.begin() + nt);
    test.samples.assign(all.samples.begin() + nt, all.samples.end());
    return {std::move(train), std::move(test)};
}

inline const std::array<std::pair<const char*, std::array<bool, 3>>, 6>& fixed_patterns() {
    // t = language, a = audio, v = visual.
    static const std::array<std::pair<const char*, std::array<bool, 3>>, 6> pats{{
        {"t", {true, false, false}},
        {"v", {false, false, true}},
        {"a", {false, true, false}},
        {"tv", {true, false, true}},
        {"ta", {true, true, false}},
        {"va", {false, true, true}},
    }};
    return pats;
}

inline void write_metrics_header(std::ostream& os) {
    os << "epoch,protocol,pattern,acc7,acc2,f1,n,s_asym_mean,tokens_L,tokens_A,tokens_V\n";
}

inline void write_metrics_row(std::ostream& os, int epoch, const EvalResult& r) {
    os << epoch << ',' << r.protocol << ',' << r.pattern << ','
       << detail::fmt_double(r.metrics.acc7) << ',' << detail::fmt_double(r.metrics.acc2)
       << ',' << detail::fmt_double(r.metrics.f1) << ',' << r.metrics.n << ','
       << detail::fmt_double(r.s_asym_mean) << ',' << r.token_slots[0] << ','
       << r.token_slots[1] << ',' << r.token_slots[2] << '\n';
}

inline void write_diagnostics_header(std::ostream& os) {
    os << "epoch,task,grad,score,cycle,inv,prop,orth,fus,"
          "n_task,n_grad,n_score,n_cycle,n_inv,n_prop,n_orth,n_fus,"
          "total,grad_norm,grad_clip_frac,ball_clip_frac,sampler_clip_frac,curl,"
          "angle_mean,angle_max\n";
}

inline void write_diagnostics_row(std::ostream& os, const EpochStats& es) {
    os << es.epoch;
    for (double x : es.raw_mean) os << ',' << detail::fmt_double(x);
    for (double x : es.norm_mean) os << ',' << detail::fmt_double(x);
    os << ',' << detail::fmt_double(es.total_mean) << ','
       << detail::fmt_double(es.grad_norm_mean) << ','
       << detail::fmt_double(es.grad_clip_fraction) << ','
       << detail::fmt_double(es.clip_fraction) << ','
       << detail::fmt_double(es.sampler_clip_fraction) << ','
       << detail::fmt_double(es.curl) << ',' << detail::fmt_double(es.angles.mean_deg) << ','
       << detail::fmt_double(es.angles.max_deg) << '\n';
}

struct RunResult {
    std::string run_dir;
    std::vector<EpochStats> epochs;
    EvalResult final_clean;
};

// Full training run: synthesize data, train for the configured epochs with a
// clean-protocol evaluation and checkpoint after each, and leave metrics,
// diagnostics, the angle histogram, and the config echo in run_dir.
inline RunResult run_train(const Config& cfg, std::uint64_t seed, const std::string& run_dir) {
    std::filesystem::create_directories(run_dir);
    {
        std::ofstream os(run_dir + "/config.txt");
        if (!os) throw ConfigError("cannot write " + run_dir + "/config.txt");
        os << serialize(cfg);
    }
    auto [train, test] = make_synthetic_split(cfg, seed);
    Trainer trainer(cfg, seed, train.header);
    RunResult result;
    result.run_dir = run_dir;
    std::ostringstream metrics, diagnostics;
    write_metrics_header(metrics);
    write_diagnostics_header(diagnostics);
    for (int e = 0; e < cfg.epochs; ++e) {
        EpochStats es = trainer.train_epoch(train);
        result.epochs.push_back(es);
        write_diagnostics_row(diagnostics, es);
        result.final_clean = trainer.eval_clean(test);
        write_metrics_row(metrics, es.epoch, result.final_clean);
        trainer.save_checkpoint(run_dir + "/checkpoint.txt");
    }
    std::ofstream(run_dir + "/metrics.csv") << metrics.str();
    std::ofstream(run_dir + "/diagnostics.csv") << diagnostics.str();
    if (!result.epochs.empty())
        write_angle_histogram_csv(result.epochs.back().angles, run_dir + "/angles.csv");
    return result;
}

// Restore a run directory into a ready-to-evaluate trainer.
inline std::unique_ptr<Trainer> load_run(const std::string& run_dir, Config& cfg_out,
                                         std::uint64_t seed) {
    cfg_out = load_config(run_dir + "/config.txt");
    const std::string ckpt = run_dir + "/checkpoint.txt";
    if (!std::filesystem::exists(ckpt)) throw DataError("missing checkpoint: " + ckpt);
    auto split = make_synthetic_split(cfg_out, seed);
    auto trainer = std::make_unique<Trainer>(cfg_out, seed, split.first.header);
    trainer->load_checkpoint(ckpt);
    return trainer;
}

// Evaluate a stored run under one protocol and write the metrics table.
inline std::vector<EvalResult> run_eval(const std::string& run_dir, std::uint64_t seed,
                                        const std::string& protocol,
                                        const std::string& out_path) {
    Config cfg;
    std::unique_ptr<Trainer> trainer = load_run(run_dir, cfg, seed);
    auto [train, test] = make_synthetic_split(cfg, seed);
    std::vector<EvalResult> rows;
    if (protocol == "fixed") {
        for (const auto& [name, keep] : fixed_patterns())
            rows.push_back(trainer->eval_pattern(test, keep, name));
    } else if (protocol == "eta") {
        for (int k = 1; k <= 7; ++k) rows.push_back(trainer->eval_eta(test, 0.1 * k));
    } else if (protocol == "clean") {
        rows.push_back(trainer->eval_clean(test));
    } else if (protocol == "corrupt") {
        rows.push_back(trainer->eval_corrupt(test));
    } else {
        throw ConfigError("unknown protocol '" + protocol + "'");
    }
    std::ostringstream os;
    write_metrics_header(os);
    for (const EvalResult& r : rows) write_metrics_row(os, trainer->epochs_done(), r);
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write " + out_path);
    out << os.str();
    return rows;
}

}  // namespace ecnet
