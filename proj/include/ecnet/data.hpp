#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecnet/hypmath.hpp"
#include "ecnet/rng.hpp"
#include "ecnet/tensor.hpp"

namespace ecnet {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::size_t kNumModalities = 3;  // L, A, V
inline const char* modality_name(std::size_t m) {
    static const char* names[kNumModalities] = {"L", "A", "V"};
    return names[m];
}

struct Sample {
    std::string id;
    int label = 0;  // class index; score = label - (classes-1)/2 for binarized metrics
    std::array<Vec, kNumModalities> features;
    std::array<bool, kNumModalities> mask{true, true, true};
    bool inconsistent = false;
};

struct DatasetHeader {
    std::array<std::size_t, kNumModalities> dims{0, 0, 0};
    int num_classes = 0;
};

struct Dataset {
    DatasetHeader header;
    std::vector<Sample> samples;

    std::size_t size() const { return samples.size(); }
};

struct SynthConfig {
    int classes = 7;
    std::size_t count = 2000;
    std::size_t n_ball = 8;                       // latent ball dimension
    std::array<std::size_t, 3> dims{24, 12, 16};  // d_L, d_A, d_V
    std::array<double, 3> noise{0.05, 0.35, 0.30};
    double proto_radius = 1.2;    // tangent norm of class prototypes
    double spread = 0.25;         // tangent perturbation scale around a prototype
    double rho_inc = 0.0;         // planted inconsistency fraction
    std::array<bool, 3> inconsistent_modalities{false, true, true};
    double c_e = 1.0;
    double eps_bnd = 0.05;
};

// Class prototypes are drawn in B^{c_E}; each sample perturbs its prototype
// along a random tangent direction, and each modality observes a fixed random
// linear image of log0(point) plus Gaussian noise. Inconsistent samples have
// one eligible modality re-drawn from a different class's prototype.
inline Dataset generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
    if (cfg.classes < 2 || cfg.count == 0 || cfg.n_ball == 0)
        throw std::invalid_argument("generate_synthetic: invalid config");
    bool any_inc = false;
    for (bool b : cfg.inconsistent_modalities) any_inc = any_inc || b;
    if (cfg.rho_inc > 0.0 && !any_inc)
        throw std::invalid_argument("generate_synthetic: rho_inc > 0 needs eligible modalities");

    Rng proto_rng = Rng::stream(seed, "prototypes");
    Rng map_rng = Rng::stream(seed, "featmaps");
    Rng sample_rng = Rng::stream(seed, "samples");

    // prototypes as tangent vectors of fixed norm, then exp0
    std::vector<Vec> proto_tangent(cfg.classes);
    for (int k = 0; k < cfg.classes; ++k) {
        Vec dir(cfg.n_ball);
        for (double& x : dir) x = proto_rng.normal();
        const double r = norm(dir);
        for (double& x : dir) x *= cfg.proto_radius / r;
        proto_tangent[k] = std::move(dir);
    }

    std::array<Tensor, 3> feat_map;
    for (std::size_t m = 0; m < 3; ++m) {
        feat_map[m] = Tensor(cfg.dims[m], cfg.n_ball);
        for (double& x : feat_map[m].data) x = map_rng.normal();
    }

    auto modality_features = [&](int cls, std::size_t m, Rng& rng) {
        Vec proto = exp0(proto_tangent[cls], cfg.c_e, cfg.eps_bnd);
        Vec dv(cfg.n_ball);
        for (double& x : dv) x = cfg.spread * rng.normal();
        Vec point = clip_to_ball(exp_at(proto, dv, cfg.c_e), cfg.c_e, cfg.eps_bnd).x;
        Vec tangent = log0(point, cfg.c_e);
        Vec out(cfg.dims[m], 0.0);
        for (std::size_t i = 0; i < cfg.dims[m]; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < cfg.n_ball; ++j) s += feat_map[m](i, j) * tangent[j];
            out[i] = s + cfg.noise[m] * rng.normal();
        }
        return out;
    };

    Dataset ds;
    ds.header.num_classes = cfg.classes;
    ds.header.dims = cfg.dims;
    ds.samples.reserve(cfg.count);
    for (std::size_t idx = 0; idx < cfg.count; ++idx) {
        Sample s;
        s.id = "synth-" + std::to_string(idx);
        s.label = static_cast<int>(sample_rng.integer(static_cast<std::uint64_t>(cfg.classes)));
        for (std::size_t m = 0; m < 3; ++m)
            s.features[m] = modality_features(s.label, m, sample_rng);
        if (cfg.rho_inc > 0.0 && sample_rng.uniform() < cfg.rho_inc) {
            std::vector<std::size_t> eligible;
            for (std::size_t m = 0; m < 3; ++m)
                if (cfg.inconsistent_modalities[m]) eligible.push_back(m);
            const std::size_t m = eligible[sample_rng.integer(eligible.size())];
            int other = static_cast<int>(sample_rng.integer(cfg.classes - 1));
            if (other >= s.label) ++other;
            s.features[m] = modality_features(other, m, sample_rng);
            s.inconsistent = true;
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

// ---- newline-delimited record files ----

inline void save_records(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    for (const Sample& s : ds.samples) {
        nlohmann::json j;
        j["id"] = s.id;
        j["label"] = s.label;
        j["features"]["L"] = s.features[0];
        j["features"]["A"] = s.features[1];
        j["features"]["V"] = s.features[2];
        j["mask"] = {s.mask[0] ? 1 : 0, s.mask[1] ? 1 : 0, s.mask[2] ? 1 : 0};
        j["inconsistent"] = s.inconsistent ? 1 : 0;
        out << j.dump() << "\n";
    }
}

inline Dataset load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError("line " + std::to_string(line_no) + ": malformed record: " +
                            e.what());
        }
        Sample s;
        try {
            s.id = j.at("id").get<std::string>();
            s.label = j.at("label").get<int>();
            const auto& f = j.at("features");
            const char* keys[3] = {"L", "A", "V"};
            for (std::size_t m = 0; m < 3; ++m) {
                if (f.contains(keys[m]))
                    s.features[m] = f.at(keys[m]).get<Vec>();
                if (j.contains("mask"))
                    s.mask[m] = j.at("mask").at(m).get<int>() != 0;
            }
            if (j.contains("inconsistent")) s.inconsistent = j.at("inconsistent").get<int>() != 0;
        } catch (const nlohmann::json::exception& e) {
            throw DataError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (ds.samples.empty()) {
            for (std::size_t m = 0; m < 3; ++m) ds.header.dims[m] = s.features[m].size();
        }
        for (std::size_t m = 0; m < 3; ++m) {
            if (s.features[m].empty() && !s.mask[m])
                s.features[m].assign(ds.header.dims[m], 0.0);  // masked slot, zero-filled
            if (s.features[m].size() != ds.header.dims[m])
                throw DataError("line " + std::to_string(line_no) + ": feature shape for " +
                                modality_name(m) + " deviates from header");
        }
        max_label = std::max(max_label, s.label);
        ds.samples.push_back(std::move(s));
    }
    ds.header.num_classes = max_label + 1;
    return ds;
}

// ---- masking schedule ----

enum class FloorMode { clip_up, filter };

struct MaskSchedule {
    std::vector<double> train_rates{0.2, 0.5, 0.8};
    double min_start = 0.5;
    double min_end = 0.1;
    int anneal_interval = 10;  // epochs between decrements
    double test_rate = 0.3;
    FloorMode floor_mode = FloorMode::clip_up;

    // Staircase: one 0.1 decrement per milestone, constant at min_end after the
    // final milestone.
    double min_rate(int epoch) const {
        if (epoch < 0) throw std::invalid_argument("min_rate: negative epoch");
        const double r = min_start - 0.1 * static_cast<double>(epoch / anneal_interval);
        return std::max(r, min_end);
    }

    double sample_rate(int epoch, Rng& rng) const {
        const double floor = min_rate(epoch);
        if (floor_mode == FloorMode::filter) {
            std::vector<double> ok;
            for (double r : train_rates)
                if (r >= floor) ok.push_back(r);
            if (ok.empty()) return floor;
            return ok[rng.integer(ok.size())];
        }
        const double p = train_rates[rng.integer(train_rates.size())];
        return std::max(p, floor);
    }
};

struct MaskStats {
    std::size_t raw_drops = 0;       // Bernoulli drops before the all-drop guard
    std::size_t guard_retained = 0;  // samples where the guard re-added a modality
};

// Per-sample independent drops at the given rate; a sample never loses every
// modality that the record provides (one survivor is retained uniformly).
inline MaskStats apply_mask(std::vector<Sample>& batch, double rate, Rng& rng) {
    MaskStats stats;
    for (Sample& s : batch) {
        std::vector<std::size_t> available;
        for (std::size_t m = 0; m < kNumModalities; ++m)
            if (s.mask[m]) available.push_back(m);
        std::size_t kept = 0;
        for (std::size_t m : available) {
            if (rng.uniform() < rate) {
                s.mask[m] = false;
                ++stats.raw_drops;
            } else {
                ++kept;
            }
        }
        if (kept == 0 && !available.empty()) {
            s.mask[available[rng.integer(available.size())]] = true;
            ++stats.guard_retained;
        }
    }
    return stats;
}

inline double anneal_min_rate(const MaskSchedule& sched, int epoch) {
    return sched.min_rate(epoch);
}

// ---- task metrics ----

struct Metrics {
    double acc7 = 0.0;
    double acc2 = 0.0;
    double f1 = 0.0;
    std::size_t n = 0;
};

// Seven-way accuracy over all samples; binary accuracy and F1 over the
// non-neutral samples with positive = score above the midpoint (labels map to
// scores label - (classes-1)/2).
inline Metrics task_metrics(const std::vector<int>& pred, const std::vector<int>& truth,
                            int num_classes) {
    if (pred.size() != truth.size()) throw std::invalid_argument("task_metrics: size mismatch");
    Metrics m;
    m.n = pred.size();
    if (pred.empty()) return m;
    const double mid = (num_classes - 1) / 2.0;
    std::size_t correct = 0;
    std::size_t bin_n = 0, bin_correct = 0;
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == truth[i]) ++correct;
        const double ts = truth[i] - mid;
        if (ts == 0.0) continue;  // true neutral excluded from binary metrics
        const bool tpos = ts > 0.0;
        const bool ppos = pred[i] - mid > 0.0;
        ++bin_n;
        if (tpos == ppos) ++bin_correct;
        if (ppos && tpos) ++tp;
        if (ppos && !tpos) ++fp;
        if (!ppos && tpos) ++fn;
    }
    m.acc7 = static_cast<double>(correct) / static_cast<double>(pred.size());
    if (bin_n > 0) m.acc2 = static_cast<double>(bin_correct) / static_cast<double>(bin_n);
    const double denom = 2.0 * tp + fp + fn;
    if (denom > 0.0) m.f1 = 2.0 * tp / denom;
    return m;
}

}  // namespace ecnet
