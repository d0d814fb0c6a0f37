// bltrader: ingest prices, train the agent, backtest it against the baselines, and
// merge reports.
//
// Exit codes: 0 ok, 1 unexpected error, 2 input error, 3 numeric divergence,
// 4 backtest truncated by bankruptcy.

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "bltrader/bltrader.hpp"
#include "bltrader/config.hpp"

namespace fs = std::filesystem;
using namespace bltrader;

namespace {

constexpr const char* kVersion = "bltrader 1.0.0";

enum Exit { kOk = 0, kUnexpected = 1, kInput = 2, kDiverged = 3, kBankrupt = 4 };

int exit_code(const Error& e) {
    if (dynamic_cast<const DivergenceDetected*>(&e)) return kDiverged;
    if (dynamic_cast<const Bankrupt*>(&e)) return kBankrupt;
    if (dynamic_cast<const MissingFile*>(&e) || dynamic_cast<const MissingTicker*>(&e) ||
        dynamic_cast<const NonPositivePrice*>(&e) || dynamic_cast<const InsufficientHistory*>(&e) ||
        dynamic_cast<const ParseError*>(&e) || dynamic_cast<const MissingCheckpoint*>(&e))
        return kInput;
    return kUnexpected;
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
        EVP_MD_CTX_free(ctx);
        throw std::runtime_error("sha256 failed");
    }
    EVP_MD_CTX_free(ctx);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingFile("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
}

std::vector<std::string> universe(const RunConfig& cfg) {
    if (!cfg.tickers.empty()) return cfg.tickers;
    std::ifstream in(cfg.universe_file);
    if (!in) throw MissingFile("cannot open universe file '" + cfg.universe_file + "'");
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        out.push_back(line.substr(b, line.find_last_not_of(" \t\r") - b + 1));
    }
    return out;
}

PricePanel load_cache(const RunConfig& cfg) {
    if (!fs::exists(cfg.cache)) throw MissingFile("price cache '" + cfg.cache + "' not found; run `ingest` first");
    return load_price_panel(cfg.cache, universe(cfg));
}

int first_row_on_or_after(const PricePanel& p, const std::string& date) {
    const auto it = std::lower_bound(p.dates.begin(), p.dates.end(), date);
    return static_cast<int>(it - p.dates.begin());
}

/// Training window as configured (whole panel when unset).
PricePanel training_panel(const PricePanel& all, const RunConfig& cfg) {
    if (cfg.train_start.empty() && cfg.train_end.empty()) return all;
    const std::string first = cfg.train_start.empty() ? all.dates.front() : cfg.train_start;
    const std::string last = cfg.train_end.empty() ? all.dates.back() : cfg.train_end;
    return slice_dates(all, first, last);
}

/// Backtest window plus the m*K days of warm-up history and the execution-price day before it.
PricePanel backtest_panel(const PricePanel& all, const RunConfig& cfg) {
    const int warmup = cfg.effective_periods_per_window() * cfg.effective_days_per_period() + 1;
    const int start = cfg.backtest_start.empty() ? warmup : first_row_on_or_after(all, cfg.backtest_start);
    const int end = cfg.backtest_end.empty() ? all.num_days()
                                             : static_cast<int>(std::upper_bound(all.dates.begin(), all.dates.end(),
                                                                                 cfg.backtest_end) -
                                                                all.dates.begin());
    if (start - warmup < 0)
        throw InsufficientHistory("backtest window starts " + std::to_string(start) + " rows into the cache; " +
                                  std::to_string(warmup) + " rows of warm-up are needed");
    if (end <= start) throw InsufficientHistory("backtest window is empty");
    return slice_rows(all, start - warmup, end - start + warmup);
}

std::string format_row(const MetricReport& r) {
    std::ostringstream os;
    os << std::setprecision(10) << r.name << ',' << r.ar << ',' << r.dr << ',' << r.std_dev << ',' << r.sr << ','
       << r.lstd << ',' << r.str;
    return os.str();
}

int cmd_ingest(const RunConfig& cfg) {
    if (cfg.sources.empty()) throw MissingFile("no [data] sources configured");
    std::vector<PriceRow> rows;
    for (const auto& src : cfg.sources) {
        std::ifstream in(src);
        if (!in) throw MissingFile("source file '" + src + "' not found");
        auto part = parse_price_csv(in, src);
        rows.insert(rows.end(), part.begin(), part.end());
    }
    const auto panel = align_price_rows(rows, universe(cfg), cfg.min_days);
    std::ostringstream os;
    write_price_csv(os, panel);
    const std::string text = os.str();
    const std::string hash = sha256_hex(text);
    write_file(cfg.cache, text);
    write_file(cfg.cache + ".sha256", hash + "\n");
    std::cout << "ingested " << panel.num_assets() << " assets x " << panel.num_days() << " days ("
              << panel.dates.front() << " .. " << panel.dates.back() << ") -> " << cfg.cache << "\nsha256 " << hash
              << '\n';
    return kOk;
}

nlohmann::json manifest(const RunConfig& cfg, const std::string& command) {
    const std::string text = serialize_run_config(cfg);
    return {{"command", command},
            {"version", kVersion},
            {"variant", cfg.variant()},
            {"seed", cfg.seed},
            {"config_sha256", sha256_hex(text)},
            {"data_sha256", fs::exists(cfg.cache) ? sha256_hex(read_file(cfg.cache)) : ""},
            {"config", text}};
}

int cmd_train(const RunConfig& cfg) {
    const auto all = load_cache(cfg);
    const auto panel = training_panel(all, cfg);
    const TrainingEnvironment env(panel, cfg.effective_periods_per_window(), cfg.effective_days_per_period(),
                                  cfg.costs());
    const BlPolicy policy(cfg.policy_config(panel.num_assets()));
    const auto tc = cfg.train_config();

    const fs::path out_dir(cfg.output_dir);
    const fs::path trace_path = out_dir / "train_trace.csv";
    fs::create_directories(out_dir / "checkpoints");
    auto m = manifest(cfg, "train");
    write_file(out_dir / "train_manifest.json", m.dump(2) + "\n");

    TrainTrace trace;
    trace.variant = cfg.variant();
    auto flush_trace = [&] {
        std::ostringstream os;
        write_trace_csv(os, trace);
        write_file(trace_path, os.str());
    };
    flush_trace();
    const auto observer = [&](const StageRecord& rec, const gradnet::ParamStore& params) {
        trace.stages.push_back(rec);
        flush_trace();
        std::ostringstream name;
        name << "stage_" << std::setw(4) << std::setfill('0') << rec.stage << ".ckpt";
        gradnet::save_checkpoint_file((out_dir / "checkpoints" / name.str()).string(), params, policy.metadata());
        std::cerr << "stage " << rec.stage << " steps=" << rec.steps << " OP=" << rec.op << " EF=" << rec.ef
                  << " AR_tr=" << rec.ar_tr << " ARD_tr=" << rec.ard_tr << '\n';
    };

    try {
        auto params = policy.init(cfg.seed);
        const auto result = cfg.maximize_rho ? maximize_rho_train(env, policy, std::move(params), tc, observer)
                                             : train(env, policy, std::move(params), tc, observer);
        const auto final_path = out_dir / "policy.ckpt";
        gradnet::save_checkpoint_file(final_path.string(), result.params, policy.metadata());
        m["checkpoint"] = final_path.string();
        m["stages"] = trace.stages.size();
        write_file(out_dir / "train_manifest.json", m.dump(2) + "\n");
        if (trace.stages.empty()) {
            std::cout << "done: 0 stages (total_steps=" << tc.total_steps << "), checkpoint " << final_path.string()
                      << '\n';
        } else {
            const auto& last = trace.stages.back();
            std::cout << "done: stages=" << trace.stages.size() << " steps=" << last.steps << " OP=" << last.op
                      << " EF=" << last.ef << " AR_tr=" << last.ar_tr << " ARD_tr=" << last.ard_tr << " checkpoint "
                      << final_path.string() << '\n';
        }
    } catch (const DivergenceDetected& e) {
        std::cerr << "error: " << e.what() << "\npartial trace kept in " << trace_path.string() << '\n';
        return kDiverged;
    }
    return kOk;
}

int cmd_backtest(const RunConfig& cfg) {
    const auto all = load_cache(cfg);
    const auto panel = backtest_panel(all, cfg);
    const auto bc = cfg.backtest_config();

    std::vector<std::unique_ptr<Strategy>> strategies;
    if (!cfg.baselines_only && !cfg.checkpoint.empty()) {
        auto ck = gradnet::load_checkpoint_file(cfg.checkpoint);
        auto policy = BlPolicy::from_metadata(ck.metadata);
        if (policy.num_assets() != panel.num_assets())
            throw ShapeMismatch("checkpoint was trained on " + std::to_string(policy.num_assets()) +
                                " assets, panel has " + std::to_string(panel.num_assets()));
        if (policy.history_periods() != bc.periods_per_window ||
            policy.config().days_per_period != bc.days_per_period)
            throw ShapeMismatch("checkpoint period grid does not match the configured grid");
        strategies.push_back(std::make_unique<PolicyStrategy>(std::move(policy), std::move(ck.params),
                                                              cfg.variant()));
    }
    for (auto& s : baselines(cfg.baseline_params())) strategies.push_back(std::move(s));

    const fs::path dir = fs::path(cfg.output_dir) / "backtest";
    fs::create_directories(dir);
    std::vector<MetricReport> reports;
    bool truncated = false;
    for (auto& s : strategies) {
        auto r = run_backtest(*s, panel, bc);
        truncated = truncated || r.has_flag("bankrupt_truncated");
        write_file(dir / (r.name + ".json"), report_json(r).dump(2) + "\n");
        std::ostringstream theta, weights;
        write_theta_csv(theta, r);
        write_weights_csv(weights, r, panel.tickers);
        write_file(dir / (r.name + "_theta.csv"), theta.str());
        write_file(dir / (r.name + "_weights.csv"), weights.str());
        reports.push_back(std::move(r));
    }

    std::ostringstream table;
    table << "name,AR,DR,Std,SR,LStd,STR\n";
    for (const auto& r : rank_by_ar(reports)) table << format_row(r) << '\n';
    write_file(dir / "ranking.csv", table.str());
    auto m = manifest(cfg, "backtest");
    m["periods"] = reports.empty() ? 0 : reports.front().periods.size();
    m["first_date"] = panel.dates.front();
    m["last_date"] = panel.dates.back();
    write_file(dir / "manifest.json", m.dump(2) + "\n");
    std::cout << table.str();
    if (truncated) {
        std::cerr << "warning: at least one strategy went bankrupt; its metrics cover the solvent days only\n";
        return kBankrupt;
    }
    return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path) {
    std::vector<fs::path> files;
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            for (const auto& e : fs::directory_iterator(in))
                if (e.path().extension() == ".json") files.push_back(e.path());
        } else if (fs::exists(in)) {
            files.push_back(in);
        } else {
            throw MissingFile("report input '" + in + "' not found");
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<MetricReport> reports;
    for (const auto& f : files) {
        const auto j = nlohmann::json::parse(read_file(f.string()), nullptr, false);
        if (j.is_discarded()) throw ParseError("'" + f.string() + "' is not valid JSON");
        if (!j.is_object() || !j.contains("AR")) continue;
        MetricReport r;
        r.name = j.at("name");
        r.ar = j.at("AR");
        r.dr = j.at("DR");
        r.std_dev = j.at("Std");
        r.sr = j.at("SR");
        r.lstd = j.at("LStd");
        r.str = j.at("STR");
        reports.push_back(r);
    }
    std::ostringstream table;
    table << "name,AR,DR,Std,SR,LStd,STR\n";
    for (const auto& r : rank_by_ar(reports)) table << format_row(r) << '\n';
    if (out_path.empty() || out_path == "-") std::cout << table.str();
    else write_file(out_path, table.str());
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Black-Litterman deep RL portfolio agent"};
    app.set_version_flag("--version", kVersion);
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", config_path, "INI run configuration");
        sub->add_option("--set", overrides, "override, section.key=value (repeatable; wins over the file)");
    };

    std::vector<std::string> sources;
    auto* ingest = app.add_subcommand("ingest", "align raw price CSVs into the panel cache");
    add_common(ingest);
    ingest->add_option("--source", sources, "raw CSV (repeatable; replaces [data] sources)");

    std::string ablation;
    std::int64_t total_steps = -1;
    std::int64_t seed = -1;
    std::string out_dir;
    auto* train_cmd = app.add_subcommand("train", "train the agent on the training window");
    add_common(train_cmd);
    train_cmd->add_option("--ablation", ablation, "positional_encoding | maximize_rho | softmax_head | one_day_period")
        ->check(CLI::IsMember({"positional_encoding", "maximize_rho", "softmax_head", "one_day_period"}));
    train_cmd->add_option("--total-steps", total_steps, "override [train] total_steps");
    train_cmd->add_option("--seed", seed, "override [run] seed");
    train_cmd->add_option("--out-dir", out_dir, "override [data] output_dir");

    std::string checkpoint;
    bool baselines_only = false;
    auto* backtest_cmd = app.add_subcommand("backtest", "run the agent and the baselines on the backtest window");
    add_common(backtest_cmd);
    backtest_cmd->add_option("--checkpoint", checkpoint, "trained policy checkpoint");
    backtest_cmd->add_flag("--baselines-only", baselines_only, "skip the agent");
    backtest_cmd->add_option("--ablation", ablation, "grid ablation (one_day_period)")
        ->check(CLI::IsMember({"positional_encoding", "maximize_rho", "softmax_head", "one_day_period"}));
    backtest_cmd->add_option("--out-dir", out_dir, "override [data] output_dir");

    std::vector<std::string> inputs;
    std::string report_out;
    auto* report_cmd = app.add_subcommand("report", "merge backtest JSON reports into one CSV table");
    report_cmd->add_option("inputs", inputs, "JSON files or directories")->required();
    report_cmd->add_option("-o,--out", report_out, "output CSV (default stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (report_cmd->parsed()) return cmd_report(inputs, report_out);

        if (!sources.empty()) {
            std::string joined;
            for (size_t i = 0; i < sources.size(); ++i) joined += (i ? "," : "") + sources[i];
            overrides.push_back("data.sources=" + joined);
        }
        if (!ablation.empty()) overrides.push_back("ablation." + ablation + "=true");
        if (total_steps >= 0) overrides.push_back("train.total_steps=" + std::to_string(total_steps));
        if (seed >= 0) overrides.push_back("run.seed=" + std::to_string(seed));
        if (!out_dir.empty()) overrides.push_back("data.output_dir=" + out_dir);
        if (!checkpoint.empty()) overrides.push_back("backtest.checkpoint=" + checkpoint);
        if (baselines_only) overrides.push_back("backtest.baselines_only=true");
        const RunConfig cfg = load_run_config(config_path, overrides);

        if (ingest->parsed()) return cmd_ingest(cfg);
        if (train_cmd->parsed()) return cmd_train(cfg);
        if (backtest_cmd->parsed()) return cmd_backtest(cfg);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kUnexpected;
    }
    return kUnexpected;
}
