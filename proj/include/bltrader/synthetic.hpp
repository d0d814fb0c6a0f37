#pragma once

// Seeded synthetic markets for tests, samples and smoke runs.

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "bltrader/marketdata.hpp"

namespace bltrader {

struct SyntheticMarket {
    int num_assets = 5;
    int num_days = 1500;               // price rows
    double daily_drift = 0.0003;       // mean daily log return
    double daily_vol = 0.015;
    double correlation = 0.3;          // pairwise, one-factor
    double start_price = 100.0;
    std::uint64_t seed = 1;
    std::string first_date = "2018-01-02";
};

/// Weekday dates starting at `first` (inclusive if it is a weekday).
inline std::vector<std::string> business_days(const std::string& first, int count) {
    using namespace std::chrono;
    int y = 0;
    unsigned m = 0, d = 0;
    if (std::sscanf(first.c_str(), "%d-%u-%u", &y, &m, &d) != 3) throw ParseError("bad date '" + first + "'");
    sys_days day = year{y} / month{m} / std::chrono::day{d};
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(count));
    char buf[16];
    while (static_cast<int>(out.size()) < count) {
        const weekday w{day};
        if (w != Saturday && w != Sunday) {
            const year_month_day ymd{day};
            std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()),
                          unsigned(ymd.day()));
            out.emplace_back(buf);
        }
        day += days{1};
    }
    return out;
}

/// Correlated geometric random walk: log p_{d+1} - log p_d = drift_i + vol (sqrt(c) f + sqrt(1-c) e_i).
/// Each asset's drift is jittered by +-50% so the assets are not exchangeable.
inline PricePanel geometric_random_walk(const SyntheticMarket& s) {
    if (s.num_assets < 1 || s.num_days < 2) throw std::invalid_argument("synthetic market needs assets and days");
    std::mt19937_64 rng(s.seed);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> jitter(0.5, 1.5);
    Eigen::VectorXd drift(s.num_assets);
    for (int i = 0; i < s.num_assets; ++i) drift(i) = s.daily_drift * jitter(rng);

    PricePanel p;
    for (int i = 0; i < s.num_assets; ++i) p.tickers.push_back("S" + std::to_string(i));
    p.dates = business_days(s.first_date, s.num_days);
    p.prices.resize(s.num_days, s.num_assets);
    p.prices.row(0).setConstant(s.start_price);
    const double a = std::sqrt(s.correlation), b = std::sqrt(1.0 - s.correlation);
    for (int d = 1; d < s.num_days; ++d) {
        const double f = z(rng);
        for (int i = 0; i < s.num_assets; ++i) {
            const double r = drift(i) + s.daily_vol * (a * f + b * z(rng));
            p.prices(d, i) = p.prices(d - 1, i) * std::exp(r);
        }
    }
    return p;
}

/// Panel whose daily log2 returns repeat `pattern` (rows = days of one period) forever.
inline PricePanel periodic_market(const Eigen::MatrixXd& pattern, int periods, double start_price = 100.0,
                                  const std::string& first_date = "2018-01-02") {
    const auto k = pattern.rows();
    const auto n = pattern.cols();
    PricePanel p;
    for (Eigen::Index i = 0; i < n; ++i) p.tickers.push_back("P" + std::to_string(i));
    const int days = static_cast<int>(k * periods + 1);
    p.dates = business_days(first_date, days);
    p.prices.resize(days, n);
    p.prices.row(0).setConstant(start_price);
    for (int d = 1; d < days; ++d)
        for (Eigen::Index i = 0; i < n; ++i)
            p.prices(d, i) = p.prices(d - 1, i) * std::exp2(pattern((d - 1) % k, i));
    return p;
}

}  // namespace bltrader
