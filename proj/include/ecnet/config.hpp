#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ecnet {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value run configuration. Field names mirror the config keys
// one-to-one; unknown keys are rejected so typos fail loudly.
struct Config {
    // geometry
    double c_e = 1.0;
    double c_a = 0.8;
    double eps_bnd = 0.05;

    // regularizers
    double lambda_orth = 0.1;
    double lambda_curl = 0.1;
    double curl_bound = 0.01;

    // total-objective weights; the task term is fixed at 1. alpha and zeta
    // gate diagnostic aliases and default to off.
    double alpha = 0.0;
    double beta = 1.0;
    double gamma = 5.0;
    double delta = 5.0;
    double eta_prop = 1.0;
    double zeta = 0.0;

    // property EMA
    double ema_decay = 0.95;
    int ema_interval = 100;

    // loss normalization
    double loss_ewma_decay = 0.99;
    int loss_update_interval = 50;
    int loss_window = 100;

    // optimization
    double grad_clip = 1.0;
    double lr = 0.001;

    // masking schedule
    std::vector<double> mask_rates{0.2, 0.5, 0.8};
    double mask_min_start = 0.5;
    double mask_min_end = 0.1;
    int mask_anneal_epochs = 10;
    double test_mask = 0.3;

    // model shape
    int d_p = 128;
    int heads = 8;
    int mirror_depth = 2;
    int hidden = 64;

    // score field
    double sigma_min = 0.01;
    double sigma_max = 1.0;
    int score_steps = 50;

    // run plumbing
    std::vector<std::uint64_t> seeds{42, 123, 2025};
    int epochs = 5;
    int batch_size = 32;

    // synthetic dataset
    int classes = 7;
    int train_count = 2000;
    int test_count = 500;
    int n_ball = 8;
    double rho_inc = 0.2;

    // corruption protocol: Gaussian noise of this scale on this fraction of
    // test samples
    double corrupt_sigma = 0.5;
    double corrupt_frac = 0.1;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
    if (pos != v.size()) throw ConfigError(key + ": trailing characters in '" + v + "'");
    return out;
}

inline int parse_int(const std::string& key, const std::string& v) {
    const double d = parse_double(key, v);
    const int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) throw ConfigError(key + ": expected an integer, got '" + v + "'");
    return i;
}

template <typename T, typename F>
std::vector<T> parse_list(const std::string& key, const std::string& v, F elem) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw ConfigError(key + ": empty list element");
        out.push_back(elem(key, item));
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

}  // namespace detail

inline void validate(const Config& cfg) {
    if (cfg.c_e <= 0.0 || cfg.c_a <= 0.0) throw ConfigError("curvatures must be positive");
    const double ratio = cfg.c_e / cfg.c_a;
    if (ratio < 0.5 || ratio > 2.0)
        throw ConfigError("curvature ratio c_e/c_a = " + std::to_string(ratio) +
                          " outside the supported range [0.5, 2]");
    if (cfg.eps_bnd <= 0.0 || cfg.eps_bnd >= 1.0) throw ConfigError("eps_bnd must be in (0, 1)");
    if (cfg.mask_rates.empty()) throw ConfigError("mask_rates must be nonempty");
    for (double r : cfg.mask_rates)
        if (r < 0.0 || r > 1.0) throw ConfigError("mask_rates entries must be in [0, 1]");
    if (cfg.test_mask < 0.0 || cfg.test_mask > 1.0) throw ConfigError("test_mask must be in [0, 1]");
    if (cfg.mask_min_start < cfg.mask_min_end) throw ConfigError("mask_min_start below mask_min_end");
    if (cfg.mask_anneal_epochs <= 0) throw ConfigError("mask_anneal_epochs must be positive");
    if (cfg.d_p <= 0 || cfg.heads <= 0 || cfg.mirror_depth <= 0 || cfg.hidden <= 0)
        throw ConfigError("model dimensions must be positive");
    if (cfg.d_p % cfg.heads != 0) throw ConfigError("heads must divide d_p");
    if (cfg.sigma_min <= 0.0 || cfg.sigma_max <= cfg.sigma_min)
        throw ConfigError("need 0 < sigma_min < sigma_max");
    if (cfg.score_steps <= 0) throw ConfigError("score_steps must be positive");
    if (cfg.lr <= 0.0) throw ConfigError("lr must be positive");
    if (cfg.grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
    if (cfg.ema_decay <= 0.0 || cfg.ema_decay >= 1.0) throw ConfigError("ema_decay must be in (0, 1)");
    if (cfg.ema_interval <= 0) throw ConfigError("ema_interval must be positive");
    if (cfg.loss_window <= 0 || cfg.loss_update_interval <= 0)
        throw ConfigError("loss window/interval must be positive");
    if (cfg.loss_ewma_decay <= 0.0 || cfg.loss_ewma_decay >= 1.0)
        throw ConfigError("loss_ewma_decay must be in (0, 1)");
    if (cfg.seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (cfg.epochs <= 0 || cfg.batch_size <= 0) throw ConfigError("epochs/batch_size must be positive");
    if (cfg.classes < 2) throw ConfigError("classes must be at least 2");
    if (cfg.train_count <= 0 || cfg.test_count <= 0) throw ConfigError("dataset counts must be positive");
    if (cfg.n_ball <= 0) throw ConfigError("n_ball must be positive");
    if (cfg.rho_inc < 0.0 || cfg.rho_inc > 1.0) throw ConfigError("rho_inc must be in [0, 1]");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0 || cfg.gamma < 0.0 || cfg.delta < 0.0 ||
        cfg.eta_prop < 0.0 || cfg.zeta < 0.0)
        throw ConfigError("loss weights must be nonnegative");
    if (cfg.lambda_orth < 0.0 || cfg.lambda_curl < 0.0)
        throw ConfigError("lambda_orth/lambda_curl must be nonnegative");
    if (cfg.corrupt_sigma < 0.0) throw ConfigError("corrupt_sigma must be nonnegative");
    if (cfg.corrupt_frac < 0.0 || cfg.corrupt_frac > 1.0)
        throw ConfigError("corrupt_frac must be in [0, 1]");
}

inline Config parse_config(std::istream& in) {
    Config cfg;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    const std::map<std::string, Setter> setters = {
        {"c_e", [&](const std::string& k, const std::string& v) { cfg.c_e = detail::parse_double(k, v); }},
        {"c_a", [&](const std::string& k, const std::string& v) { cfg.c_a = detail::parse_double(k, v); }},
        {"eps_bnd", [&](const std::string& k, const std::string& v) { cfg.eps_bnd = detail::parse_double(k, v); }},
        {"lambda_orth", [&](const std::string& k, const std::string& v) { cfg.lambda_orth = detail::parse_double(k, v); }},
        {"lambda_curl", [&](const std::string& k, const std::string& v) { cfg.lambda_curl = detail::parse_double(k, v); }},
        {"curl_bound", [&](const std::string& k, const std::string& v) { cfg.curl_bound = detail::parse_double(k, v); }},
        {"alpha", [&](const std::string& k, const std::string& v) { cfg.alpha = detail::parse_double(k, v); }},
        {"beta", [&](const std::string& k, const std::string& v) { cfg.beta = detail::parse_double(k, v); }},
        {"gamma", [&](const std::string& k, const std::string& v) { cfg.gamma = detail::parse_double(k, v); }},
        {"delta", [&](const std::string& k, const std::string& v) { cfg.delta = detail::parse_double(k, v); }},
        {"eta_prop", [&](const std::string& k, const std::string& v) { cfg.eta_prop = detail::parse_double(k, v); }},
        {"zeta", [&](const std::string& k, const std::string& v) { cfg.zeta = detail::parse_double(k, v); }},
        {"ema_decay", [&](const std::string& k, const std::string& v) { cfg.ema_decay = detail::parse_double(k, v); }},
        {"ema_interval", [&](const std::string& k, const std::string& v) { cfg.ema_interval = detail::parse_int(k, v); }},
        {"loss_ewma_decay", [&](const std::string& k, const std::string& v) { cfg.loss_ewma_decay = detail::parse_double(k, v); }},
        {"loss_update_interval", [&](const std::string& k, const std::string& v) { cfg.loss_update_interval = detail::parse_int(k, v); }},
        {"loss_window", [&](const std::string& k, const std::string& v) { cfg.loss_window = detail::parse_int(k, v); }},
        {"grad_clip", [&](const std::string& k, const std::string& v) { cfg.grad_clip = detail::parse_double(k, v); }},
        {"lr", [&](const std::string& k, const std::string& v) { cfg.lr = detail::parse_double(k, v); }},
        {"mask_rates", [&](const std::string& k, const std::string& v) { cfg.mask_rates = detail::parse_list<double>(k, v, detail::parse_double); }},
        {"mask_min_start", [&](const std::string& k, const std::string& v) { cfg.mask_min_start = detail::parse_double(k, v); }},
        {"mask_min_end", [&](const std::string& k, const std::string& v) { cfg.mask_min_end = detail::parse_double(k, v); }},
        {"mask_anneal_epochs", [&](const std::string& k, const std::string& v) { cfg.mask_anneal_epochs = detail::parse_int(k, v); }},
        {"test_mask", [&](const std::string& k, const std::string& v) { cfg.test_mask = detail::parse_double(k, v); }},
        {"d_p", [&](const std::string& k, const std::string& v) { cfg.d_p = detail::parse_int(k, v); }},
        {"heads", [&](const std::string& k, const std::string& v) { cfg.heads = detail::parse_int(k, v); }},
        {"mirror_depth", [&](const std::string& k, const std::string& v) { cfg.mirror_depth = detail::parse_int(k, v); }},
        {"hidden", [&](const std::string& k, const std::string& v) { cfg.hidden = detail::parse_int(k, v); }},
        {"sigma_min", [&](const std::string& k, const std::string& v) { cfg.sigma_min = detail::parse_double(k, v); }},
        {"sigma_max", [&](const std::string& k, const std::string& v) { cfg.sigma_max = detail::parse_double(k, v); }},
        {"score_steps", [&](const std::string& k, const std::string& v) { cfg.score_steps = detail::parse_int(k, v); }},
        {"seeds",
         [&](const std::string& k, const std::string& v) {
             cfg.seeds = detail::parse_list<std::uint64_t>(k, v, [](const std::string& kk, const std::string& vv) {
                 const int i = detail::parse_int(kk, vv);
                 if (i < 0) throw ConfigError(kk + ": seeds must be nonnegative");
                 return static_cast<std::uint64_t>(i);
             });
         }},
        {"epochs", [&](const std::string& k, const std::string& v) { cfg.epochs = detail::parse_int(k, v); }},
        {"batch_size", [&](const std::string& k, const std::string& v) { cfg.batch_size = detail::parse_int(k, v); }},
        {"classes", [&](const std::string& k, const std::string& v) { cfg.classes = detail::parse_int(k, v); }},
        {"train_count", [&](const std::string& k, const std::string& v) { cfg.train_count = detail::parse_int(k, v); }},
        {"test_count", [&](const std::string& k, const std::string& v) { cfg.test_count = detail::parse_int(k, v); }},
        {"n_ball", [&](const std::string& k, const std::string& v) { cfg.n_ball = detail::parse_int(k, v); }},
        {"rho_inc", [&](const std::string& k, const std::string& v) { cfg.rho_inc = detail::parse_double(k, v); }},
        {"corrupt_sigma", [&](const std::string& k, const std::string& v) { cfg.corrupt_sigma = detail::parse_double(k, v); }},
        {"corrupt_frac", [&](const std::string& k, const std::string& v) { cfg.corrupt_frac = detail::parse_double(k, v); }},
    };

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end())
            throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        it->second(key, value);
    }
    validate(cfg);
    return cfg;
}

inline Config parse_config_text(const std::string& text) {
    std::istringstream in(text);
    return parse_config(in);
}

inline Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    return parse_config(in);
}

inline std::string serialize(const Config& cfg) {
    std::ostringstream out;
    out.precision(17);
    auto list = [&](const auto& v) {
        std::ostringstream s;
        s.precision(17);
        for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "," : "") << v[i];
        return s.str();
    };
    out << "c_e=" << cfg.c_e << "\n"
        << "c_a=" << cfg.c_a << "\n"
        << "eps_bnd=" << cfg.eps_bnd << "\n"
        << "lambda_orth=" << cfg.lambda_orth << "\n"
        << "lambda_curl=" << cfg.lambda_curl << "\n"
        << "curl_bound=" << cfg.curl_bound << "\n"
        << "alpha=" << cfg.alpha << "\n"
        << "beta=" << cfg.beta << "\n"
        << "gamma=" << cfg.gamma << "\n"
        << "delta=" << cfg.delta << "\n"
        << "eta_prop=" << cfg.eta_prop << "\n"
        << "zeta=" << cfg.zeta << "\n"
        << "ema_decay=" << cfg.ema_decay << "\n"
        << "ema_interval=" << cfg.ema_interval << "\n"
        << "loss_ewma_decay=" << cfg.loss_ewma_decay << "\n"
        << "loss_update_interval=" << cfg.loss_update_interval << "\n"
        << "loss_window=" << cfg.loss_window << "\n"
        << "grad_clip=" << cfg.grad_clip << "\n"
        << "lr=" << cfg.lr << "\n"
        << "mask_rates=" << list(cfg.mask_rates) << "\n"
        << "mask_min_start=" << cfg.mask_min_start << "\n"
        << "mask_min_end=" << cfg.mask_min_end << "\n"
        << "mask_anneal_epochs=" << cfg.mask_anneal_epochs << "\n"
        << "test_mask=" << cfg.test_mask << "\n"
        << "d_p=" << cfg.d_p << "\n"
        << "heads=" << cfg.heads << "\n"
        << "mirror_depth=" << cfg.mirror_depth << "\n"
        << "hidden=" << cfg.hidden << "\n"
        << "sigma_min=" << cfg.sigma_min << "\n"
        << "sigma_max=" << cfg.sigma_max << "\n"
        << "score_steps=" << cfg.score_steps << "\n"
        << "seeds=" << list(cfg.seeds) << "\n"
        << "epochs=" << cfg.epochs << "\n"
        << "batch_size=" << cfg.batch_size << "\n"
        << "classes=" << cfg.classes << "\n"
        << "train_count=" << cfg.train_count << "\n"
        << "test_count=" << cfg.test_count << "\n"
        << "n_ball=" << cfg.n_ball << "\n"
        << "rho_inc=" << cfg.rho_inc << "\n"
        << "corrupt_sigma=" << cfg.corrupt_sigma << "\n"
        << "corrupt_frac=" << cfg.corrupt_frac << "\n";
    return out.str();
}

}  // namespace ecnet
