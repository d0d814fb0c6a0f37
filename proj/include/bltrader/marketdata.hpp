#pragma once

// Price ingestion, period partitioning and agent-state construction.
//
// Conventions used across the library:
//   * price row d is the adjusted close of trading day d;
//   * return row r = log2(price[r + 1] / price[r]);
//   * trading period t covers return rows [t*K, t*K + K), so its daily marks are
//     price rows t*K + 1 .. t*K + K and its execution price (end of period t-1)
//     is price row t*K.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "bltrader/errors.hpp"

namespace bltrader {

struct PriceRow {
    std::string date;
    std::string ticker;
    double adj_close = 0.0;
};

/// Aligned D x n adjusted-close matrix.
struct PricePanel {
    std::vector<std::string> tickers;
    std::vector<std::string> dates;
    Eigen::MatrixXd prices;  // rows = dates, cols = tickers

    int num_days() const { return static_cast<int>(prices.rows()); }
    int num_assets() const { return static_cast<int>(prices.cols()); }

    bool operator==(const PricePanel& other) const {
        return tickers == other.tickers && dates == other.dates &&
               prices.rows() == other.prices.rows() && prices.cols() == other.prices.cols() &&
               prices == other.prices;
    }
};

/// Daily base-2 log returns, (D-1) x n.
struct ReturnPanel {
    Eigen::MatrixXd log_returns;

    int num_rows() const { return static_cast<int>(log_returns.rows()); }
    int num_assets() const { return static_cast<int>(log_returns.cols()); }
};

/// Partition of the return rows into complete trading periods of K days.
struct PeriodGrid {
    int periods_per_window = 50;  // m
    int days_per_period = 5;      // K
    int num_periods = 0;

    PeriodGrid() = default;
    PeriodGrid(int m, int k, int return_rows) : periods_per_window(m), days_per_period(k) {
        if (m < 1 || k < 1) throw std::invalid_argument("PeriodGrid: m and K must be positive");
        num_periods = return_rows / k;  // trailing incomplete period dropped
    }

    int first_row(int t) const { return t * days_per_period; }
    int end_row(int t) const { return (t + 1) * days_per_period; }
    /// Price row holding the execution price p_{t-1} for period t.
    int exec_price_row(int t) const { return t * days_per_period; }
    /// Price row of the k-th (1-based) daily mark in period t.
    int mark_price_row(int t, int k) const { return t * days_per_period + k; }
    int window_rows() const { return periods_per_window * days_per_period; }
};

/// The agent's observation <w_{t-1}, X_t>.
struct AgentState {
    Eigen::VectorXd prev_weights;
    Eigen::MatrixXd history;  // (K*m) x n, oldest row first
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline bool is_iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
        if (s[static_cast<size_t>(i)] < '0' || s[static_cast<size_t>(i)] > '9') return false;
    const std::chrono::year_month_day ymd{std::chrono::year{std::stoi(s.substr(0, 4))},
                                          std::chrono::month{static_cast<unsigned>(std::stoi(s.substr(5, 2)))},
                                          std::chrono::day{static_cast<unsigned>(std::stoi(s.substr(8, 2)))}};
    return ymd.ok();
}

}  // namespace detail

/// Parses long-format CSV text with header `date,ticker,adj_close`.
inline std::vector<PriceRow> parse_price_csv(std::istream& in, const std::string& source = "<stream>") {
    std::vector<PriceRow> rows;
    std::string line;
    if (!std::getline(in, line)) throw ParseError(source + ": empty file");
    if (detail::trim(line) != "date,ticker,adj_close")
        throw ParseError(source + ": expected header 'date,ticker,adj_close', got '" + detail::trim(line) + "'");
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        line = detail::trim(line);
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string date, ticker, price;
        if (!std::getline(ss, date, ',') || !std::getline(ss, ticker, ',') || !std::getline(ss, price))
            throw ParseError(source + ":" + std::to_string(lineno) + ": expected 3 fields");
        date = detail::trim(date);
        if (!detail::is_iso_date(date))
            throw ParseError(source + ":" + std::to_string(lineno) + ": bad date '" + date + "'");
        PriceRow row{date, detail::trim(ticker), 0.0};
        try {
            size_t used = 0;
            const std::string p = detail::trim(price);
            row.adj_close = std::stod(p, &used);
            if (used != p.size()) throw std::invalid_argument(p);
        } catch (const std::exception&) {
            throw ParseError(source + ":" + std::to_string(lineno) + ": bad price '" + price + "'");
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

/// Restricts rows to `tickers` and keeps only dates on which every ticker has a price.
inline PricePanel align_price_rows(std::span<const PriceRow> rows, const std::vector<std::string>& tickers,
                                   int min_days = 0) {
    if (tickers.size() < 2) throw std::invalid_argument("price panel needs at least two tickers");
    std::unordered_map<std::string, int> column;
    for (size_t i = 0; i < tickers.size(); ++i) {
        if (!column.emplace(tickers[i], static_cast<int>(i)).second)
            throw std::invalid_argument("duplicate ticker '" + tickers[i] + "'");
    }

    std::map<std::string, std::vector<double>> by_date;  // ordered by ISO date
    std::vector<bool> seen(tickers.size(), false);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : rows) {
        const auto it = column.find(r.ticker);
        if (it == column.end()) continue;
        if (!(r.adj_close > 0.0) || !std::isfinite(r.adj_close))
            throw NonPositivePrice("non-positive price for " + r.ticker + " on " + r.date);
        auto& slot = by_date.try_emplace(r.date, tickers.size(), nan).first->second;
        if (!std::isnan(slot[static_cast<size_t>(it->second)]))
            throw ParseError("duplicate row for " + r.ticker + " on " + r.date);
        slot[static_cast<size_t>(it->second)] = r.adj_close;
        seen[static_cast<size_t>(it->second)] = true;
    }
    for (size_t i = 0; i < tickers.size(); ++i)
        if (!seen[i]) throw MissingTicker("ticker '" + tickers[i] + "' not present in input");

    PricePanel panel;
    panel.tickers = tickers;
    std::vector<const std::vector<double>*> kept;
    for (const auto& [date, values] : by_date) {
        if (std::none_of(values.begin(), values.end(), [](double v) { return std::isnan(v); })) {
            panel.dates.push_back(date);
            kept.push_back(&values);
        }
    }
    panel.prices.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(tickers.size()));
    for (size_t d = 0; d < kept.size(); ++d)
        for (size_t i = 0; i < tickers.size(); ++i)
            panel.prices(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(i)) = (*kept[d])[i];

    if (panel.num_days() < min_days)
        throw InsufficientHistory("only " + std::to_string(panel.num_days()) + " aligned days, need " +
                                  std::to_string(min_days));
    return panel;
}

/// Loads a long-format CSV and aligns it. `min_days` is usually K*(m+1).
inline PricePanel load_price_panel(const std::string& path, const std::vector<std::string>& tickers,
                                   int min_days = 0) {
    std::ifstream in(path);
    if (!in) throw MissingFile("cannot open price file '" + path + "'");
    const auto rows = parse_price_csv(in, path);
    return align_price_rows(rows, tickers, min_days);
}

inline std::vector<PriceRow> to_price_rows(const PricePanel& panel) {
    std::vector<PriceRow> rows;
    rows.reserve(panel.dates.size() * panel.tickers.size());
    for (int d = 0; d < panel.num_days(); ++d)
        for (int i = 0; i < panel.num_assets(); ++i)
            rows.push_back({panel.dates[static_cast<size_t>(d)], panel.tickers[static_cast<size_t>(i)],
                            panel.prices(d, i)});
    return rows;
}

/// Writes the panel back in the ingestion format; values round-trip exactly.
inline void write_price_csv(std::ostream& out, const PricePanel& panel) {
    out << "date,ticker,adj_close\n";
    out << std::setprecision(17);
    for (const auto& r : to_price_rows(panel)) out << r.date << ',' << r.ticker << ',' << r.adj_close << '\n';
}

/// Days in [first_date, last_date], both inclusive, ISO strings.
inline PricePanel slice_dates(const PricePanel& panel, const std::string& first_date, const std::string& last_date) {
    const auto lo = std::lower_bound(panel.dates.begin(), panel.dates.end(), first_date);
    const auto hi = std::upper_bound(panel.dates.begin(), panel.dates.end(), last_date);
    PricePanel out;
    out.tickers = panel.tickers;
    out.dates.assign(lo, hi);
    const auto start = static_cast<Eigen::Index>(lo - panel.dates.begin());
    out.prices = panel.prices.middleRows(start, static_cast<Eigen::Index>(out.dates.size()));
    return out;
}

inline PricePanel slice_rows(const PricePanel& panel, int first_row, int count) {
    if (first_row < 0 || count < 0 || first_row + count > panel.num_days())
        throw std::out_of_range("slice_rows: range outside panel");
    PricePanel out;
    out.tickers = panel.tickers;
    out.dates.assign(panel.dates.begin() + first_row, panel.dates.begin() + first_row + count);
    out.prices = panel.prices.middleRows(first_row, count);
    return out;
}

inline ReturnPanel daily_log_returns(const PricePanel& panel) {
    ReturnPanel r;
    const auto d = panel.prices.rows();
    if (d < 2) {
        r.log_returns.resize(0, panel.prices.cols());
        return r;
    }
    const auto& p = panel.prices;
    r.log_returns = (p.bottomRows(d - 1).array() / p.topRows(d - 1).array()).log() / std::log(2.0);
    return r;
}

/// State for decision period t: the m periods t-m .. t-1, oldest first.
inline AgentState build_state(const ReturnPanel& returns, const PeriodGrid& grid, int t,
                              const Eigen::VectorXd& prev_weights) {
    if (t < grid.periods_per_window)
        throw InsufficientHistory("period " + std::to_string(t) + " has fewer than m=" +
                                  std::to_string(grid.periods_per_window) + " periods of history");
    const int first = grid.first_row(t - grid.periods_per_window);
    const int rows = grid.window_rows();
    if (first + rows > returns.num_rows())
        throw InsufficientHistory("period " + std::to_string(t) + " runs past the end of the return panel");
    if (prev_weights.size() != returns.num_assets())
        throw ShapeMismatch("prev_weights has " + std::to_string(prev_weights.size()) + " entries, expected " +
                            std::to_string(returns.num_assets()));
    return AgentState{prev_weights, returns.log_returns.middleRows(first, rows)};
}

}  // namespace bltrader
