#pragma once

// Run configuration: one INI-style file (sections of key = value) plus overrides.
// Every key has a default, so an empty file is a valid configuration.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "bltrader/backtest.hpp"
#include "bltrader/errors.hpp"
#include "bltrader/exchange.hpp"
#include "bltrader/policy.hpp"
#include "bltrader/trainer.hpp"

namespace bltrader {

struct RunConfig {
    // [data]
    std::vector<std::string> sources;        // raw CSV files (date,ticker,adj_close)
    std::vector<std::string> tickers;        // universe; empty means universe_file
    std::string universe_file = "data/djia29.txt";
    std::string cache = "out/panel.csv";
    std::string output_dir = "out";
    int min_days = 0;

    // [grid]
    int periods_per_window = 50;  // m
    int days_per_period = 5;      // K

    // [costs]
    double commission_rate = 0.0005;
    double cash_lending_rate = 0.03;
    double stock_lending_rate = 0.03;
    int days_per_year = 252;
    double initial_amount = 1e8;

    // [train]
    double lambda1 = 0.2;
    double lambda2 = 0.002;
    double lambda3 = 1.0;
    double learning_rate = 1e-5;
    int minibatch = 128;
    int target_step = 1080;
    std::int64_t total_steps = 300000;
    double grad_clip = 1e3;
    int buffer_capacity = 1 << 14;

    // [policy]
    int depth = 6;
    int head_hidden = 3712;
    double attention_scale = 1.0;
    int mlp_hidden = 0;  // 0 means 4n
    double tau = 1.0;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int fc_hidden = 32;

    // [ablation]
    bool positional_encoding = false;  // BDA-V1
    bool maximize_rho = false;         // BDA-V3
    bool softmax_head = false;         // BDA-V4
    bool one_day_period = false;       // BDA-V5

    // [windows], ISO dates; empty means the whole cached panel
    std::string train_start;
    std::string train_end;
    std::string backtest_start;
    std::string backtest_end;

    // [backtest]
    std::string checkpoint;
    bool baselines_only = false;
    double eg_eta = 0.05;
    int olmar_window = 5;
    double olmar_epsilon = 10.0;
    double pamr_epsilon = 0.5;
    double ons_beta = 1.0;
    double ons_delta = 0.125;
    double ons_eta = 0.0;
    double jb_gamma = 1.0;
    double kztf_gamma = 1.0;

    // [run]
    std::uint64_t seed = 0;

    bool operator==(const RunConfig&) const = default;

    /// Ablation label written into traces and manifests.
    std::string variant() const {
        if (positional_encoding) return "BDA-V1";
        if (maximize_rho) return "BDA-V3";
        if (softmax_head) return "BDA-V4";
        if (one_day_period) return "BDA-V5";
        return "BDA";
    }

    /// K and m after the one-day-period ablation, which keeps the look-back length in days.
    int effective_days_per_period() const { return one_day_period ? 1 : days_per_period; }
    int effective_periods_per_window() const {
        return one_day_period ? periods_per_window * days_per_period : periods_per_window;
    }

    void validate() const {
        if (periods_per_window < 1 || days_per_period < 1) throw ParseError("grid: m and K must be positive");
        if (!train_end.empty() && !backtest_start.empty() && train_end > backtest_start)
            throw ParseError("windows: train_end must not be after backtest_start");
        if (!train_start.empty() && !train_end.empty() && train_start > train_end)
            throw ParseError("windows: train_start is after train_end");
        if (!backtest_start.empty() && !backtest_end.empty() && backtest_start > backtest_end)
            throw ParseError("windows: backtest_start is after backtest_end");
        costs().validate();
        train_config().validate();
    }

    CostSchedule costs() const {
        CostSchedule c;
        c.commission_rate = commission_rate;
        c.cash_lending_rate_annual = cash_lending_rate;
        c.stock_lending_rate_annual = stock_lending_rate;
        c.period_days = effective_days_per_period();
        c.days_per_year = days_per_year;
        return c;
    }

    TrainConfig train_config() const {
        TrainConfig t;
        t.lambda1 = lambda1;
        t.lambda2 = lambda2;
        t.lambda3 = lambda3;
        t.learning_rate = learning_rate;
        t.minibatch = minibatch;
        t.target_step = target_step;
        t.total_steps = total_steps;
        t.seed = seed;
        t.grad_clip = grad_clip;
        t.buffer_capacity = static_cast<std::size_t>(buffer_capacity);
        t.maximize_rho = maximize_rho;
        t.initial_amount = initial_amount;
        return t;
    }

    PolicyConfig policy_config(int num_assets) const {
        PolicyConfig p;
        p.transformer.depth = depth;
        p.transformer.model_dim = num_assets;
        p.transformer.attention_scale = attention_scale;
        p.transformer.mlp_hidden = mlp_hidden;
        p.transformer.head_hidden = head_hidden;
        p.transformer.positional_encoding = positional_encoding;
        p.cnn.conv1_channels = conv1_channels;
        p.cnn.conv2_channels = conv2_channels;
        p.cnn.fc_hidden = fc_hidden;
        p.periods_per_window = effective_periods_per_window();
        p.days_per_period = effective_days_per_period();
        p.tau = tau;
        p.softmax_head = softmax_head;
        return p;
    }

    BacktestConfig backtest_config() const {
        BacktestConfig b;
        b.periods_per_window = effective_periods_per_window();
        b.days_per_period = effective_days_per_period();
        b.initial_amount = initial_amount;
        b.costs = costs();
        return b;
    }

    BaselineParams baseline_params() const {
        return {eg_eta, olmar_window, olmar_epsilon, pamr_epsilon, ons_beta, ons_delta, ons_eta, jb_gamma, kztf_gamma};
    }
};

namespace config_detail {

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

inline std::string join_list(const std::vector<std::string>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
    return s;
}

inline std::string fmt(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

/// Visits every field with its section.key name; `Io` decides whether to read or write.
template <typename Io>
void visit(RunConfig& c, Io&& io) {
    io("data.sources", c.sources);
    io("data.tickers", c.tickers);
    io("data.universe_file", c.universe_file);
    io("data.cache", c.cache);
    io("data.output_dir", c.output_dir);
    io("data.min_days", c.min_days);
    io("grid.m", c.periods_per_window);
    io("grid.K", c.days_per_period);
    io("costs.commission_rate", c.commission_rate);
    io("costs.cash_lending_rate", c.cash_lending_rate);
    io("costs.stock_lending_rate", c.stock_lending_rate);
    io("costs.days_per_year", c.days_per_year);
    io("costs.initial_amount", c.initial_amount);
    io("train.lambda1", c.lambda1);
    io("train.lambda2", c.lambda2);
    io("train.lambda3", c.lambda3);
    io("train.learning_rate", c.learning_rate);
    io("train.minibatch", c.minibatch);
    io("train.target_step", c.target_step);
    io("train.total_steps", c.total_steps);
    io("train.grad_clip", c.grad_clip);
    io("train.buffer_capacity", c.buffer_capacity);
    io("policy.depth", c.depth);
    io("policy.head_hidden", c.head_hidden);
    io("policy.attention_scale", c.attention_scale);
    io("policy.mlp_hidden", c.mlp_hidden);
    io("policy.tau", c.tau);
    io("policy.conv1_channels", c.conv1_channels);
    io("policy.conv2_channels", c.conv2_channels);
    io("policy.fc_hidden", c.fc_hidden);
    io("ablation.positional_encoding", c.positional_encoding);
    io("ablation.maximize_rho", c.maximize_rho);
    io("ablation.softmax_head", c.softmax_head);
    io("ablation.one_day_period", c.one_day_period);
    io("windows.train_start", c.train_start);
    io("windows.train_end", c.train_end);
    io("windows.backtest_start", c.backtest_start);
    io("windows.backtest_end", c.backtest_end);
    io("backtest.checkpoint", c.checkpoint);
    io("backtest.baselines_only", c.baselines_only);
    io("backtest.eg_eta", c.eg_eta);
    io("backtest.olmar_window", c.olmar_window);
    io("backtest.olmar_epsilon", c.olmar_epsilon);
    io("backtest.pamr_epsilon", c.pamr_epsilon);
    io("backtest.ons_beta", c.ons_beta);
    io("backtest.ons_delta", c.ons_delta);
    io("backtest.ons_eta", c.ons_eta);
    io("backtest.jb_gamma", c.jb_gamma);
    io("backtest.kztf_gamma", c.kztf_gamma);
    io("run.seed", c.seed);
}

struct Reader {
    const boost::property_tree::ptree& pt;

    template <typename T>
    void operator()(const char* key, T& field) const {
        const auto v = pt.get_optional<std::string>(key);
        if (!v) return;
        try {
            if constexpr (std::is_same_v<T, std::vector<std::string>>) {
                field = split_list(*v);
            } else if constexpr (std::is_same_v<T, std::string>) {
                field = *v;
            } else if constexpr (std::is_same_v<T, bool>) {
                if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") field = true;
                else if (*v == "false" || *v == "0" || *v == "off" || *v == "no") field = false;
                else throw std::invalid_argument("not a boolean");
            } else {
                field = pt.get<T>(key);
            }
        } catch (const std::exception&) {
            throw ParseError(std::string("config key '") + key + "': cannot parse value '" + *v + "'");
        }
    }
};

struct Writer {
    boost::property_tree::ptree& pt;

    template <typename T>
    void operator()(const char* key, const T& field) const {
        if constexpr (std::is_same_v<T, std::vector<std::string>>) pt.put(key, join_list(field));
        else if constexpr (std::is_same_v<T, std::string>) pt.put(key, field);
        else if constexpr (std::is_same_v<T, bool>) pt.put(key, field ? "true" : "false");
        else if constexpr (std::is_floating_point_v<T>) pt.put(key, fmt(field));
        else pt.put(key, std::to_string(field));
    }
};

inline const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        RunConfig c;
        visit(c, [&](const char* key, auto&) { k.emplace_back(key); });
        return k;
    }();
    return keys;
}

}  // namespace config_detail

/// `overrides` are "section.key=value" strings applied after the file; they win.
inline RunConfig parse_run_config(std::istream& in, const std::vector<std::string>& overrides = {}) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ParseError(std::string("config: ") + e.what());
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ParseError("override '" + o + "' is not section.key=value");
        tree.put(o.substr(0, eq), o.substr(eq + 1));
    }
    const auto& keys = config_detail::known_keys();
    for (const auto& [section, body] : tree) {
        for (const auto& [key, value] : body) {
            const std::string full = section + "." + key;
            if (std::find(keys.begin(), keys.end(), full) == keys.end())
                throw ParseError("config: unknown key '" + full + "'");
        }
    }
    RunConfig c;
    config_detail::visit(c, config_detail::Reader{tree});
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
    if (path.empty()) {
        std::istringstream empty;
        return parse_run_config(empty, overrides);
    }
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open config file '" + path + "'");
    return parse_run_config(in, overrides);
}

inline std::string serialize_run_config(const RunConfig& cfg) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    RunConfig copy = cfg;
    config_detail::visit(copy, config_detail::Writer{tree});
    std::ostringstream os;
    pt::write_ini(os, tree);
    return os.str();
}

}  // namespace bltrader
