#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ecnet/nn.hpp"
#include "ecnet/tape.hpp"

namespace ecnet {

// Shared trunk with two linear heads emitting sample-specific (Sigma) and
// sample-invariant (mu) components.
struct DecompNet {
    Mlp trunk;
    DenseLayer sigma_head;
    DenseLayer mu_head;

    DecompNet() = default;
    DecompNet(std::size_t in, std::size_t hidden, std::size_t d_p, Rng& rng,
              const std::string& name = "decomp") {
        trunk = Mlp({in, hidden}, Activation::tanh, Activation::tanh, rng, name + ".trunk");
        sigma_head = DenseLayer(hidden, d_p, Activation::identity, rng, name + ".sigma");
        mu_head = DenseLayer(hidden, d_p, Activation::identity, rng, name + ".mu");
    }

    struct Out {
        Value sigma;
        Value mu;
    };

    Out forward(Tape& t, Value x) {
        if (t.val(x).rows == 0) throw std::invalid_argument("decompose: empty batch");
        Value h = trunk.forward(t, x);
        return {sigma_head.forward(t, h), mu_head.forward(t, h)};
    }

    void collect(std::vector<Param*>& out) {
        trunk.collect(out);
        sigma_head.collect(out);
        mu_head.collect(out);
    }
};

// L_prop = ||P - mean_j(mu_j)||^2
inline Value prop_loss(Tape& t, Param& p, Value mu_rows) {
    if (t.val(mu_rows).cols != p.value.cols)
        throw std::invalid_argument("prop_loss: dimension mismatch");
    Value diff = t.sub(t.leaf(p), t.mean_rows(mu_rows));
    return t.sum(t.mul(diff, diff));
}

// L_orth = lambda (1/n) sum_j <Sigma_j, mu_j>^2
inline Value orth_loss(Tape& t, Value sigma_rows, Value mu_rows, double lambda_orth) {
    require_shape(t.val(sigma_rows), t.val(mu_rows), "orth_loss");
    Value ip = t.rows_dot(sigma_rows, mu_rows);
    return t.scale(t.mean(t.mul(ip, ip)), lambda_orth);
}

// P <- decay P + (1 - decay) mu_bar, applied only when step is a multiple of
// the interval. Returns whether the update was applied.
inline bool ema_update(Param& p, const Tensor& mu_bar, long step, long interval = 100,
                       double decay = 0.95) {
    if (interval <= 0 || step % interval != 0) return false;
    require_shape(p.value, mu_bar, "ema_update");
    for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value.data[i] = decay * p.value.data[i] + (1.0 - decay) * mu_bar.data[i];
    return true;
}

struct AngleStats {
    double mean_deg = 0.0;
    double max_deg = 0.0;
    std::vector<long> histogram;  // 50 bins over [0, 90] degrees
    long counted = 0;
    long skipped = 0;
};

// Per-sample angle arccos(|<Sigma_j, mu_j>| / (||Sigma_j|| ||mu_j||)) in
// degrees; zero vectors are skipped and counted.
inline AngleStats principal_angles(const Tensor& sigma, const Tensor& mu) {
    require_shape(sigma, mu, "principal_angles");
    AngleStats stats;
    stats.histogram.assign(50, 0);
    double sum = 0.0;
    for (std::size_t i = 0; i < sigma.rows; ++i) {
        double ip = 0.0, s2 = 0.0, m2 = 0.0;
        for (std::size_t j = 0; j < sigma.cols; ++j) {
            ip += sigma(i, j) * mu(i, j);
            s2 += sigma(i, j) * sigma(i, j);
            m2 += mu(i, j) * mu(i, j);
        }
        if (s2 == 0.0 || m2 == 0.0) {
            ++stats.skipped;
            continue;
        }
        double cosv = std::fabs(ip) / std::sqrt(s2 * m2);
        if (cosv > 1.0) cosv = 1.0;
        const double deg = std::acos(cosv) * 180.0 / 3.14159265358979323846;
        sum += deg;
        stats.max_deg = std::max(stats.max_deg, deg);
        ++stats.counted;
        std::size_t bin = static_cast<std::size_t>(deg / 1.8);
        if (bin >= 50) bin = 49;
        ++stats.histogram[bin];
    }
    if (stats.counted > 0) stats.mean_deg = sum / static_cast<double>(stats.counted);
    return stats;
}

// 50-row CSV: bin_low, bin_high, count.
inline void write_angle_histogram_csv(const AngleStats& stats, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "bin_low,bin_high,count\n";
    char line[96];
    for (std::size_t b = 0; b < stats.histogram.size(); ++b) {
        std::snprintf(line, sizeof line, "%.1f,%.1f,%ld\n", 1.8 * b, 1.8 * (b + 1),
                      stats.histogram[b]);
        out << line;
    }
}

}  // namespace ecnet
