#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecnet/nn.hpp"
#include "ecnet/tape.hpp"

namespace ecnet {

// Induced attention pooling over a fixed-length slot set: one learned seed
// query per head attends over the slots, the pooled heads pass through a
// feed-forward layer and project back to the tangent space of B^{c_E}.
// With slot-position encodings disabled (the default and tested
// configuration) the output is exactly permutation invariant.
struct SetFuser {
    std::size_t num_slots = 4;
    std::size_t dim = 0;     // slot vector dimension (ball tangent dim)
    std::size_t heads = 8;
    std::size_t d_head = 16;
    double c_e = 1.0;
    double eps_bnd = 0.05;
    bool use_position_enc = false;

    std::vector<Param> q;         // per head, 1 x d_head
    std::vector<DenseLayer> wk;   // per head, dim -> d_head
    std::vector<DenseLayer> wv;   // per head, dim -> d_head
    DenseLayer ffn;               // heads*d_head -> hidden
    DenseLayer out_proj;          // hidden -> dim
    std::vector<Param> pos_enc;   // per slot, 1 x dim (applied only if enabled)

    SetFuser() = default;
    SetFuser(std::size_t slots, std::size_t d, std::size_t n_heads, std::size_t dh,
             std::size_t hidden, double ce, double eps, Rng& rng)
        : num_slots(slots), dim(d), heads(n_heads), d_head(dh), c_e(ce), eps_bnd(eps) {
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qt(1, d_head);
            for (double& x : qt.data) x = rng.normal() / std::sqrt(static_cast<double>(d_head));
            q.emplace_back(std::move(qt), "fuser.q" + std::to_string(h));
            wk.emplace_back(dim, d_head, Activation::identity, rng,
                            "fuser.k" + std::to_string(h));
            wv.emplace_back(dim, d_head, Activation::identity, rng,
                            "fuser.v" + std::to_string(h));
        }
        ffn = DenseLayer(heads * d_head, hidden, Activation::tanh, rng, "fuser.ffn");
        out_proj = DenseLayer(hidden, dim, Activation::identity, rng, "fuser.out");
        for (std::size_t s = 0; s < num_slots; ++s)
            pos_enc.emplace_back(Tensor(1, dim), "fuser.pos" + std::to_string(s));
    }

    void collect(std::vector<Param*>& out) {
        for (Param& p : q) out.push_back(&p);
        for (DenseLayer& l : wk) l.collect(out);
        for (DenseLayer& l : wv) l.collect(out);
        ffn.collect(out);
        out_proj.collect(out);
        if (use_position_enc)
            for (Param& p : pos_enc) out.push_back(&p);
    }

    // slots: num_slots tensors of shape (B x dim) already on the tape.
    // Returns h_fus rows (B x dim) as points of B^{c_E}.
    Value fuse_rows(Tape& t, const std::vector<Value>& slots, int* clip_count = nullptr) {
        if (slots.size() != num_slots) throw std::invalid_argument("fuse: slot count mismatch");
        std::vector<Value> in = slots;
        if (use_position_enc)
            for (std::size_t s = 0; s < num_slots; ++s)
                in[s] = t.add_rowvec(in[s], t.leaf(pos_enc[s]));
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
        std::vector<Value> pooled;
        pooled.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Value qh = t.leaf(q[h]);
            std::vector<Value> scores;
            std::vector<Value> values;
            scores.reserve(num_slots);
            values.reserve(num_slots);
            for (std::size_t s = 0; s < num_slots; ++s) {
                Value k = wk[h].forward(t, in[s]);
                scores.push_back(t.scale(t.matmul_nt(k, qh), inv_sqrt));
                values.push_back(wv[h].forward(t, in[s]));
            }
            Value attn = t.softmax_rows(t.concat_cols(scores));
            Value acc = t.bcast_mul(values[0], t.slice_col(attn, 0));
            for (std::size_t s = 1; s < num_slots; ++s)
                acc = t.add(acc, t.bcast_mul(values[s], t.slice_col(attn, s)));
            pooled.push_back(acc);
        }
        Value merged = t.concat_cols(pooled);
        Value tangent = out_proj.forward(t, ffn.forward(t, merged));
        return t.exp0_rows(tangent, c_e, eps_bnd, clip_count);
    }
};

// Prediction head C_omega on log0(h_fus).
struct PredictHead {
    Mlp net;
    std::size_t num_classes = 0;
    double c_e = 1.0;

    PredictHead() = default;
    PredictHead(std::size_t dim, std::size_t hidden, std::size_t classes, double ce, Rng& rng)
        : num_classes(classes), c_e(ce) {
        net = Mlp({dim, hidden, classes}, Activation::tanh, Activation::identity, rng, "head");
    }

    void collect(std::vector<Param*>& out) { net.collect(out); }

    Value forward(Tape& t, Value h_fus_rows) {
        return net.forward(t, t.log0_rows(h_fus_rows, c_e));
    }
};

// Cross-entropy for classification tasks.
inline Value task_loss(Tape& t, Value logits, const std::vector<int>& labels) {
    return t.softmax_cross_entropy(logits, labels);
}

// L1 for regression tasks.
inline Value task_loss_l1(Tape& t, Value pred, const Tensor& target) {
    return t.mean(t.abs(t.sub(pred, t.constant(target))));
}

}  // namespace ecnet
