#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ecnet/hypmath.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

// Trainable parameter. Gradients accumulate across backward passes until
// zero_grad is called by the optimizer.
struct Param {
    Tensor value;
    Tensor grad;
    std::string name;

    Param() = default;
    Param(Tensor v, std::string n = "")
        : value(std::move(v)), grad(value.rows, value.cols), name(std::move(n)) {}

    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

// Handle to a node on a tape.
struct Value {
    Tape* tape = nullptr;
    std::size_t idx = 0;
};

// Reverse-mode tape over tensor-valued nodes. One tape instance records one
// forward graph; backward walks nodes in reverse creation order. Single
// threaded by design; distinct tapes are independent.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    const Tensor& val(Value v) const { return nodes_[v.idx].value; }
    Tensor& grad(Value v) { return nodes_[v.idx].grad; }
    std::size_t num_nodes() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        leaves_.clear();
    }

    Value leaf(Param& p) {
        const std::size_t idx = push(p.value);
        leaves_.emplace_back(idx, &p);
        return {this, idx};
    }

    Value constant(Tensor t) { return {this, push(std::move(t))}; }

    // ---- elementwise and linear algebra ----

    Value add(Value a, Value b) {
        require_shape(val(a), val(b), "add");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += val(b).data[i];
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    Value sub(Value a, Value b) {
        require_shape(val(a), val(b), "sub");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= val(b).data[i];
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            accumulate(a, g);
            Tensor gb = g;
            for (double& x : gb.data) x = -x;
            accumulate(b, gb);
        });
    }

    Value mul(Value a, Value b) {
        require_shape(val(a), val(b), "mul");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= val(b).data[i];
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            Tensor ga = g, gb = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga.data[i] *= val(b).data[i];
                gb.data[i] *= val(a).data[i];
            }
            accumulate(a, ga);
            accumulate(b, gb);
        });
    }

    Value scale(Value a, double k) {
        Tensor out = val(a);
        for (double& x : out.data) x *= k;
        return make(std::move(out), [this, a, k](const Tensor& g, std::size_t) {
            Tensor ga = g;
            for (double& x : ga.data) x *= k;
            accumulate(a, ga);
        });
    }

    Value add_scalar(Value a, double k) {
        Tensor out = val(a);
        for (double& x : out.data) x += k;
        return make(std::move(out),
                    [this, a](const Tensor& g, std::size_t) { accumulate(a, g); });
    }

    // x (r x k) * W (c x k)^T, the dense-layer product.
    Value matmul_nt(Value x, Value w) {
        Tensor out = ecnet::matmul_nt(val(x), val(w));
        return make(std::move(out), [this, x, w](const Tensor& g, std::size_t) {
            accumulate(x, ecnet::matmul(g, val(w)));
            accumulate(w, ecnet::matmul_tn(g, val(x)));
        });
    }

    Value matmul(Value a, Value b) {
        Tensor out = ecnet::matmul(val(a), val(b));
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            accumulate(a, ecnet::matmul_nt(g, val(b)));
            accumulate(b, ecnet::matmul_tn(val(a), g));
        });
    }

    // Add a 1 x c row vector to every row.
    Value add_rowvec(Value a, Value b) {
        const Tensor& bv = val(b);
        if (bv.rows != 1 || bv.cols != val(a).cols)
            throw std::invalid_argument("add_rowvec: need 1 x cols vector");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) += bv(0, j);
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            accumulate(a, g);
            Tensor gb(1, g.cols);
            for (std::size_t i = 0; i < g.rows; ++i)
                for (std::size_t j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
            accumulate(b, gb);
        });
    }

    // Multiply row i of a by scalar s(i, 0).
    Value bcast_mul(Value a, Value s) {
        const Tensor& sv = val(s);
        if (sv.rows != val(a).rows || sv.cols != 1)
            throw std::invalid_argument("bcast_mul: need rows x 1 scalar column");
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.rows; ++i)
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) *= sv(i, 0);
        return make(std::move(out), [this, a, s](const Tensor& g, std::size_t) {
            Tensor ga = g;
            Tensor gs(g.rows, 1);
            for (std::size_t i = 0; i < g.rows; ++i) {
                double acc = 0.0;
                for (std::size_t j = 0; j < g.cols; ++j) {
                    acc += g(i, j) * val(a)(i, j);
                    ga(i, j) *= val(s)(i, 0);
                }
                gs(i, 0) = acc;
            }
            accumulate(a, ga);
            accumulate(s, gs);
        });
    }

    Value tanh(Value a) {
        Tensor out = val(a);
        for (double& x : out.data) x = std::tanh(x);
        return make(std::move(out), [this, a](const Tensor& g, std::size_t self) {
            Tensor ga = g;
            const Tensor& y = nodes_[self].value;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] *= 1.0 - y.data[i] * y.data[i];
            accumulate(a, ga);
        });
    }

    Value relu(Value a) {
        Tensor out = val(a);
        for (double& x : out.data) x = x > 0.0 ? x : 0.0;
        return make(std::move(out), [this, a](const Tensor& g, std::size_t) {
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (val(a).data[i] <= 0.0) ga.data[i] = 0.0;
            accumulate(a, ga);
        });
    }

    Value abs(Value a) {
        Tensor out = val(a);
        for (double& x : out.data) x = std::fabs(x);
        return make(std::move(out), [this, a](const Tensor& g, std::size_t) {
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = val(a).data[i];
                ga.data[i] *= (x > 0.0) ? 1.0 : (x < 0.0 ? -1.0 : 0.0);
            }
            accumulate(a, ga);
        });
    }

    // artanh with the argument clamped to |u| <= 1 - 1e-15 (matching hypmath).
    Value artanh(Value a) {
        Tensor out = val(a);
        for (double& x : out.data) x = ecnet::artanh(x);
        return make(std::move(out), [this, a](const Tensor& g, std::size_t) {
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double u = val(a).data[i];
                const double lim = 1.0 - 1e-15;
                if (u > lim) u = lim;
                if (u < -lim) u = -lim;
                ga.data[i] *= 1.0 / (1.0 - u * u);
            }
            accumulate(a, ga);
        });
    }

    // Integer power, valid for strictly positive bases when p < 0.
    Value pow_int(Value a, int p) {
        Tensor out = val(a);
        for (double& x : out.data) x = std::pow(x, p);
        return make(std::move(out), [this, a, p](const Tensor& g, std::size_t) {
            Tensor ga = g;
            for (std::size_t i = 0; i < g.size(); ++i)
                ga.data[i] *= p * std::pow(val(a).data[i], p - 1);
            accumulate(a, ga);
        });
    }

    Value reciprocal(Value a) {
        Tensor out = val(a);
        for (double& x : out.data) x = 1.0 / x;
        return make(std::move(out), [this, a](const Tensor& g, std::size_t self) {
            Tensor ga = g;
            const Tensor& y = nodes_[self].value;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] *= -y.data[i] * y.data[i];
            accumulate(a, ga);
        });
    }

    // ---- reductions ----

    Value sum(Value a) {
        Tensor out(1, 1);
        for (double x : val(a).data) out.data[0] += x;
        return make(std::move(out), [this, a](const Tensor& g, std::size_t) {
            Tensor ga(val(a).rows, val(a).cols, g.data[0]);
            accumulate(a, ga);
        });
    }

    Value mean(Value a) {
        const double inv = 1.0 / static_cast<double>(val(a).size());
        Tensor out(1, 1);
        for (double x : val(a).data) out.data[0] += x * inv;
        return make(std::move(out), [this, a, inv](const Tensor& g, std::size_t) {
            Tensor ga(val(a).rows, val(a).cols, g.data[0] * inv);
            accumulate(a, ga);
        });
    }

    // Column means over the batch: (r x c) -> (1 x c).
    Value mean_rows(Value a) {
        const Tensor& av = val(a);
        const double inv = 1.0 / static_cast<double>(av.rows);
        Tensor out(1, av.cols);
        for (std::size_t i = 0; i < av.rows; ++i)
            for (std::size_t j = 0; j < av.cols; ++j) out(0, j) += av(i, j) * inv;
        return make(std::move(out), [this, a, inv](const Tensor& g, std::size_t) {
            Tensor ga(val(a).rows, val(a).cols);
            for (std::size_t i = 0; i < ga.rows; ++i)
                for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) = g(0, j) * inv;
            accumulate(a, ga);
        });
    }

    // Per-row inner product: (r x c), (r x c) -> (r x 1).
    Value rows_dot(Value a, Value b) {
        require_shape(val(a), val(b), "rows_dot");
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        Tensor out(av.rows, 1);
        for (std::size_t i = 0; i < av.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < av.cols; ++j) s += av(i, j) * bv(i, j);
            out(i, 0) = s;
        }
        return make(std::move(out), [this, a, b](const Tensor& g, std::size_t) {
            Tensor ga(val(a).rows, val(a).cols), gb = ga;
            for (std::size_t i = 0; i < ga.rows; ++i)
                for (std::size_t j = 0; j < ga.cols; ++j) {
                    ga(i, j) = g(i, 0) * val(b)(i, j);
                    gb(i, j) = g(i, 0) * val(a)(i, j);
                }
            accumulate(a, ga);
            accumulate(b, gb);
        });
    }

    Value rows_sqnorm(Value a) { return rows_dot(a, a); }

    // Per-row Euclidean norm with a zero-radius gradient guard.
    Value rows_norm(Value a) {
        const Tensor& av = val(a);
        Tensor out(av.rows, 1);
        for (std::size_t i = 0; i < av.rows; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < av.cols; ++j) s += av(i, j) * av(i, j);
            out(i, 0) = std::sqrt(s);
        }
        return make(std::move(out), [this, a](const Tensor& g, std::size_t self) {
            Tensor ga(val(a).rows, val(a).cols);
            const Tensor& r = nodes_[self].value;
            for (std::size_t i = 0; i < ga.rows; ++i) {
                if (r(i, 0) < 1e-12) continue;
                const double s = g(i, 0) / r(i, 0);
                for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) = s * val(a)(i, j);
            }
            accumulate(a, ga);
        });
    }

    // ---- structural ops ----

    Value concat_cols(const std::vector<Value>& parts) {
        if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
        const std::size_t rows = val(parts[0]).rows;
        std::size_t cols = 0;
        for (Value p : parts) {
            if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
            cols += val(p).cols;
        }
        Tensor out(rows, cols);
        std::size_t off = 0;
        for (Value p : parts) {
            const Tensor& pv = val(p);
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < pv.cols; ++j) out(i, off + j) = pv(i, j);
            off += pv.cols;
        }
        std::vector<Value> ps = parts;
        return make(std::move(out), [this, ps](const Tensor& g, std::size_t) {
            std::size_t off = 0;
            for (Value p : ps) {
                Tensor gp(val(p).rows, val(p).cols);
                for (std::size_t i = 0; i < gp.rows; ++i)
                    for (std::size_t j = 0; j < gp.cols; ++j) gp(i, j) = g(i, off + j);
                accumulate(p, gp);
                off += gp.cols;
            }
        });
    }

    Value slice_col(Value a, std::size_t j) {
        const Tensor& av = val(a);
        if (j >= av.cols) throw std::invalid_argument("slice_col: column out of range");
        Tensor out(av.rows, 1);
        for (std::size_t i = 0; i < av.rows; ++i) out(i, 0) = av(i, j);
        return make(std::move(out), [this, a, j](const Tensor& g, std::size_t) {
            Tensor ga(val(a).rows, val(a).cols);
            for (std::size_t i = 0; i < ga.rows; ++i) ga(i, j) = g(i, 0);
            accumulate(a, ga);
        });
    }

    Value softmax_rows(Value a) {
        Tensor out = val(a);
        for (std::size_t i = 0; i < out.rows; ++i) {
            double mx = out(i, 0);
            for (std::size_t j = 1; j < out.cols; ++j) mx = std::max(mx, out(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < out.cols; ++j) {
                out(i, j) = std::exp(out(i, j) - mx);
                z += out(i, j);
            }
            for (std::size_t j = 0; j < out.cols; ++j) out(i, j) /= z;
        }
        return make(std::move(out), [this, a](const Tensor& g, std::size_t self) {
            const Tensor& s = nodes_[self].value;
            Tensor ga(s.rows, s.cols);
            for (std::size_t i = 0; i < s.rows; ++i) {
                double inner = 0.0;
                for (std::size_t j = 0; j < s.cols; ++j) inner += g(i, j) * s(i, j);
                for (std::size_t j = 0; j < s.cols; ++j)
                    ga(i, j) = s(i, j) * (g(i, j) - inner);
            }
            accumulate(a, ga);
        });
    }

    // Mean softmax cross-entropy against integer labels; fused for stability.
    Value softmax_cross_entropy(Value logits, const std::vector<int>& labels) {
        const Tensor& lv = val(logits);
        if (labels.size() != lv.rows)
            throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
        Tensor probs = lv;
        double loss = 0.0;
        for (std::size_t i = 0; i < lv.rows; ++i) {
            const int y = labels[i];
            if (y < 0 || static_cast<std::size_t>(y) >= lv.cols)
                throw std::invalid_argument("softmax_cross_entropy: label out of range");
            double mx = probs(i, 0);
            for (std::size_t j = 1; j < lv.cols; ++j) mx = std::max(mx, probs(i, j));
            double z = 0.0;
            for (std::size_t j = 0; j < lv.cols; ++j) {
                probs(i, j) = std::exp(probs(i, j) - mx);
                z += probs(i, j);
            }
            for (std::size_t j = 0; j < lv.cols; ++j) probs(i, j) /= z;
            loss -= std::log(std::max(probs(i, static_cast<std::size_t>(y)), 1e-300));
        }
        loss /= static_cast<double>(lv.rows);
        Tensor out(1, 1, loss);
        return make(std::move(out),
                    [this, logits, labels, probs](const Tensor& g, std::size_t) {
                        const double inv = g.data[0] / static_cast<double>(probs.rows);
                        Tensor gl = probs;
                        for (std::size_t i = 0; i < gl.rows; ++i) {
                            gl(i, static_cast<std::size_t>(labels[i])) -= 1.0;
                            for (std::size_t j = 0; j < gl.cols; ++j) gl(i, j) *= inv;
                        }
                        accumulate(logits, gl);
                    });
    }

    // ---- fused ball geometry (rowwise) ----

    // exp0 per row with radial clipping; true projection Jacobian through the
    // clip branch. If clip_count is non-null it receives the number of clipped
    // rows of this call.
    Value exp0_rows(Value v, double c, double eps_bnd, int* clip_count = nullptr) {
        check_curvature(c);
        const Tensor& vv = val(v);
        const double sc = std::sqrt(c);
        const double radius = (1.0 - eps_bnd) / sc;
        Tensor out(vv.rows, vv.cols);
        std::vector<char> clipped(vv.rows, 0);
        std::vector<double> rr(vv.rows, 0.0);
        int count = 0;
        for (std::size_t i = 0; i < vv.rows; ++i) {
            double s2 = 0.0;
            for (std::size_t j = 0; j < vv.cols; ++j) s2 += vv(i, j) * vv(i, j);
            const double r = std::sqrt(s2);
            rr[i] = r;
            const double s = (r < 1e-12) ? 1.0 : std::tanh(sc * r) / (sc * r);
            double rho = s * r;
            double extra = 1.0;
            if (rho >= radius) {
                clipped[i] = 1;
                ++count;
                extra = radius / rho;
            }
            for (std::size_t j = 0; j < vv.cols; ++j) out(i, j) = extra * s * vv(i, j);
        }
        if (clip_count) *clip_count = count;
        return make(std::move(out),
                    [this, v, c, sc, radius, clipped, rr](const Tensor& g, std::size_t self) {
                        const Tensor& y = nodes_[self].value;
                        const Tensor& vv = val(v);
                        Tensor gv(vv.rows, vv.cols);
                        for (std::size_t i = 0; i < vv.rows; ++i) {
                            const double r = rr[i];
                            if (r < 1e-12) {
                                for (std::size_t j = 0; j < vv.cols; ++j) gv(i, j) = g(i, j);
                                continue;
                            }
                            const double ar = sc * r;
                            const double th = std::tanh(ar);
                            const double s = th / ar;
                            const double sech2 = 1.0 - th * th;
                            const double sp = (sech2 * ar - th) / (sc * r * r);
                            std::vector<double> gy(vv.cols);
                            if (clipped[i]) {
                                // y = radius * u / ||u||, u = s * v
                                double ydotg = 0.0, ynorm2 = 0.0;
                                for (std::size_t j = 0; j < vv.cols; ++j) {
                                    ydotg += y(i, j) * g(i, j);
                                    ynorm2 += y(i, j) * y(i, j);
                                }
                                const double rho = s * r;  // pre-clip norm
                                for (std::size_t j = 0; j < vv.cols; ++j)
                                    gy[j] = (radius / rho) *
                                            (g(i, j) - ydotg * y(i, j) / ynorm2);
                            } else {
                                for (std::size_t j = 0; j < vv.cols; ++j) gy[j] = g(i, j);
                            }
                            // through u = s(r) v: gu -> gv = s*gy + (s'/r)(gy . v) v
                            double vdotg = 0.0;
                            for (std::size_t j = 0; j < vv.cols; ++j) vdotg += vv(i, j) * gy[j];
                            const double k = sp / r * vdotg;
                            for (std::size_t j = 0; j < vv.cols; ++j)
                                gv(i, j) = s * gy[j] + k * vv(i, j);
                        }
                        accumulate(v, gv);
                    });
    }

    // log0 per row; input rows must be strictly interior.
    Value log0_rows(Value h, double c) {
        check_curvature(c);
        const Tensor& hv = val(h);
        const double sc = std::sqrt(c);
        Tensor out(hv.rows, hv.cols);
        std::vector<double> rr(hv.rows, 0.0);
        for (std::size_t i = 0; i < hv.rows; ++i) {
            double s2 = 0.0;
            for (std::size_t j = 0; j < hv.cols; ++j) s2 += hv(i, j) * hv(i, j);
            const double r = std::sqrt(s2);
            if (sc * r >= 1.0) throw std::domain_error("log0_rows: point outside the ball");
            rr[i] = r;
            const double u = (r < 1e-12) ? 1.0 : ecnet::artanh(sc * r) / (sc * r);
            for (std::size_t j = 0; j < hv.cols; ++j) out(i, j) = u * hv(i, j);
        }
        return make(std::move(out), [this, h, sc, rr](const Tensor& g, std::size_t) {
            const Tensor& hv = val(h);
            Tensor gh(hv.rows, hv.cols);
            for (std::size_t i = 0; i < hv.rows; ++i) {
                const double r = rr[i];
                if (r < 1e-12) {
                    for (std::size_t j = 0; j < hv.cols; ++j) gh(i, j) = g(i, j);
                    continue;
                }
                const double ar = sc * r;
                const double at = ecnet::artanh(ar);
                const double u = at / ar;
                const double up = (ar / (1.0 - ar * ar) - at) / (sc * r * r);
                double hdotg = 0.0;
                for (std::size_t j = 0; j < hv.cols; ++j) hdotg += hv(i, j) * g(i, j);
                const double k = up / r * hdotg;
                for (std::size_t j = 0; j < hv.cols; ++j)
                    gh(i, j) = u * g(i, j) + k * hv(i, j);
            }
            accumulate(h, gh);
        });
    }

    // Per-row norm clip to max_norm with the projection's true Jacobian.
    Value clip_rows_maxnorm(Value x, double max_norm, int* clip_count = nullptr) {
        const Tensor& xv = val(x);
        Tensor out(xv.rows, xv.cols);
        std::vector<char> clipped(xv.rows, 0);
        std::vector<double> rr(xv.rows, 0.0);
        int count = 0;
        for (std::size_t i = 0; i < xv.rows; ++i) {
            double s2 = 0.0;
            for (std::size_t j = 0; j < xv.cols; ++j) s2 += xv(i, j) * xv(i, j);
            const double r = std::sqrt(s2);
            rr[i] = r;
            double scale = 1.0;
            if (r > max_norm && r > 0.0) {
                clipped[i] = 1;
                ++count;
                scale = max_norm / r;
            }
            for (std::size_t j = 0; j < xv.cols; ++j) out(i, j) = scale * xv(i, j);
        }
        if (clip_count) *clip_count = count;
        return make(std::move(out),
                    [this, x, max_norm, clipped, rr](const Tensor& g, std::size_t) {
                        const Tensor& xv = val(x);
                        Tensor gx(xv.rows, xv.cols);
                        for (std::size_t i = 0; i < xv.rows; ++i) {
                            if (!clipped[i]) {
                                for (std::size_t j = 0; j < xv.cols; ++j) gx(i, j) = g(i, j);
                                continue;
                            }
                            const double r = rr[i];
                            double xdotg = 0.0;
                            for (std::size_t j = 0; j < xv.cols; ++j) xdotg += xv(i, j) * g(i, j);
                            const double k = xdotg / (r * r);
                            for (std::size_t j = 0; j < xv.cols; ++j)
                                gx(i, j) = (max_norm / r) * (g(i, j) - k * xv(i, j));
                        }
                        accumulate(x, gx);
                    });
    }

    // ---- composites built from elementary ops ----

    // Rowwise Mobius addition x (+)_c y.
    Value mobius_add_rows(Value x, Value y, double c) {
        Value xy = rows_dot(x, y);
        Value x2 = rows_sqnorm(x);
        Value y2 = rows_sqnorm(y);
        // coef_x = 1 + 2c<x,y> + c|y|^2 ; coef_y = 1 - c|x|^2
        Value coef_x = add_scalar(add(scale(xy, 2.0 * c), scale(y2, c)), 1.0);
        Value coef_y = add_scalar(scale(x2, -c), 1.0);
        // denom = 1 + 2c<x,y> + c^2 |x|^2 |y|^2
        Value denom = add_scalar(add(scale(xy, 2.0 * c), scale(mul(x2, y2), c * c)), 1.0);
        Value inv = reciprocal(denom);
        return add(bcast_mul(x, mul(coef_x, inv)), bcast_mul(y, mul(coef_y, inv)));
    }

    // Rowwise Poincare distance (r x 1).
    Value poincare_dist_rows(Value x, Value y, double c) {
        const double sc = std::sqrt(c);
        Value m = mobius_add_rows(scale(x, -1.0), y, c);
        Value r = rows_norm(m);
        return scale(artanh(scale(r, sc)), 2.0 / sc);
    }

    // Rowwise radial isometry between curvatures (see hypmath::isometric_rescale).
    Value isometric_rescale_rows(Value x, double c1, double c2) {
        const double s1 = std::sqrt(c1);
        const double s2 = std::sqrt(c2);
        Value r = rows_norm(x);
        // rho(r)/r, with rho = tanh((s2/s1) artanh(s1 r))/s2; at r -> 0 the ratio
        // tends to s1/s1 * (s2/s2) = 1 smoothly, handled by the r guard in rows_norm.
        Value alpha = scale(artanh(scale(r, s1)), s2 / s1);
        Value rho = scale(tanh(alpha), 1.0 / s2);
        // x * rho/r rowwise; guard r=0 by adding tiny epsilon to the denominator
        Value ratio = mul(rho, reciprocal(add_scalar(r, 1e-300)));
        return bcast_mul(x, ratio);
    }

    // ---- reverse sweep ----

    void backward(Value root) {
        const Tensor& rv = val(root);
        if (rv.rows != 1 || rv.cols != 1)
            throw std::invalid_argument("backward: root must be scalar");
        for (Node& n : nodes_) {
            n.grad = Tensor(n.value.rows, n.value.cols);
        }
        nodes_[root.idx].grad.data[0] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward) n.backward(n.grad, i);
        }
        for (auto& [idx, param] : leaves_) {
            const Tensor& g = nodes_[idx].grad;
            for (std::size_t k = 0; k < g.size(); ++k) param->grad.data[k] += g.data[k];
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(const Tensor&, std::size_t)> backward;
    };

    std::size_t push(Tensor t) {
        nodes_.push_back(Node{std::move(t), Tensor(), nullptr});
        return nodes_.size() - 1;
    }

    Value make(Tensor t, std::function<void(const Tensor&, std::size_t)> back) {
        const std::size_t idx = push(std::move(t));
        nodes_[idx].backward = std::move(back);
        return {this, idx};
    }

    void accumulate(Value v, const Tensor& g) {
        Tensor& dst = nodes_[v.idx].grad;
        for (std::size_t i = 0; i < g.size(); ++i) dst.data[i] += g.data[i];
    }

    std::vector<Node> nodes_;
    std::vector<std::pair<std::size_t, Param*>> leaves_;
};

}  // namespace ecnet
