#pragma once

// Self-financing long/short trading simulator.
//
// Each period the target weights are turned into whole-share targets against a fixed
// investment amount T = T1 / 2, the difference to the current book is traded at the
// previous period's closing prices, and the book is marked to market at each daily
// close. Cash may go negative (borrowed, charged r_l); short positions are charged r_s.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "bltrader/errors.hpp"

namespace bltrader {

using Quantities = Eigen::Matrix<std::int64_t, Eigen::Dynamic, 1>;

struct CostSchedule {
    double commission_rate = 0.0005;           // alpha, per unit of traded value
    double cash_lending_rate_annual = 0.03;    // r_l
    double stock_lending_rate_annual = 0.03;   // r_s
    int period_days = 5;
    int days_per_year = 252;

    /// Simple proration: annual * period_days / days_per_year.
    double period_cash_rate() const { return cash_lending_rate_annual * period_days / days_per_year; }
    double period_stock_rate() const { return stock_lending_rate_annual * period_days / days_per_year; }

    static CostSchedule free(int period_days = 5) {
        CostSchedule c;
        c.commission_rate = c.cash_lending_rate_annual = c.stock_lending_rate_annual = 0.0;
        c.period_days = period_days;
        return c;
    }

    void validate() const {
        if (commission_rate < 0 || cash_lending_rate_annual < 0 || stock_lending_rate_annual < 0)
            throw std::invalid_argument("cost rates must be non-negative");
        if (period_days < 1 || days_per_year < 1) throw std::invalid_argument("day counts must be positive");
    }
};

struct Ledger {
    double cash = 0.0;
    Quantities holdings;
    double total_value = 0.0;
    double invest_amount = 0.0;   // T_t, fixed at half the initial amount
    double initial_amount = 0.0;  // T_1

    static Ledger open(int num_assets, double initial_amount) {
        Ledger l;
        l.cash = initial_amount;
        l.holdings = Quantities::Zero(num_assets);
        l.total_value = initial_amount;
        l.initial_amount = initial_amount;
        l.invest_amount = 0.5 * initial_amount;
        return l;
    }

    double mark(const Eigen::VectorXd& prices) const { return cash + holdings.cast<double>().dot(prices); }
};

/// One line of the optional order log.
struct OrderRecord {
    int period = 0;
    int asset = 0;
    std::int64_t delta_shares = 0;
    double exec_price = 0.0;
    double commission = 0.0;
    double borrow_fee = 0.0;
};

struct PeriodOutcome {
    double xi = 0.0;                          // period log return against T
    std::vector<double> daily_returns;        // per-day split of xi (telescopes to xi)
    std::vector<double> daily_total_returns;  // log2 ratio of successive total-asset marks
    std::vector<double> daily_values;         // v_{t_k}, k = 1..K
    double variance = 0.0;                    // filled by callers that know the covariance
    double txn_scale_ratio = 0.0;             // |dq|' p_{t-1} / T
    double traded_notional = 0.0;
    double commission = 0.0;
    double borrow_fee = 0.0;
    double cash_interest = 0.0;
    double start_value = 0.0;                 // v_{t-1}
    Quantities delta;
    std::vector<OrderRecord> orders;
    Ledger end;
};

/// q_i = floor(T * w_i / p_i), rounding toward minus infinity for shorts too.
inline Quantities target_quantity(const Eigen::VectorXd& weights, double invest_amount,
                                  const Eigen::VectorXd& prices) {
    if (weights.size() != prices.size()) throw ShapeMismatch("target_quantity: weights/prices size differ");
    Quantities q(weights.size());
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (!(prices(i) > 0.0)) throw NonPositivePrice("target_quantity: price must be positive");
        const double raw = std::floor(invest_amount * weights(i) / prices(i));
        if (!std::isfinite(raw) || std::abs(raw) > 9.0e15)
            throw DivergenceDetected("target_quantity: non-finite or overflowing share count");
        q(i) = static_cast<std::int64_t>(raw);
    }
    return q;
}

inline double portfolio_variance(const Eigen::VectorXd& weights, const Eigen::MatrixXd& cov) {
    if (cov.rows() != weights.size() || cov.cols() != weights.size())
        throw ShapeMismatch("portfolio_variance: covariance shape does not match weights");
    return weights.dot(cov * weights);
}

/// Rebalances to `target_q` at `exec_prices`, then marks the book at each row of
/// `daily_prices` (K x n; the last row is the period-end price). Mutates `ledger`.
inline PeriodOutcome step_period(Ledger& ledger, const Quantities& target_q, const Eigen::VectorXd& exec_prices,
                                 const Eigen::MatrixXd& daily_prices, const CostSchedule& costs, int period = 0) {
    const auto n = ledger.holdings.size();
    if (target_q.size() != n || exec_prices.size() != n || daily_prices.cols() != n)
        throw ShapeMismatch("step_period: asset dimension mismatch");
    if (daily_prices.rows() < 1) throw ShapeMismatch("step_period: no daily prices");

    PeriodOutcome out;
    out.start_value = ledger.total_value;
    const double T = ledger.invest_amount;
    const double prev_cash = ledger.cash;

    out.delta = target_q - ledger.holdings;
    const Eigen::VectorXd dq = out.delta.cast<double>();
    const Eigen::VectorXd short_book = ledger.holdings.cast<double>().cwiseMin(0.0).cwiseAbs();

    const double trade_cost = dq.dot(exec_prices);
    out.traded_notional = dq.cwiseAbs().dot(exec_prices);
    out.commission = costs.commission_rate * out.traded_notional;
    out.borrow_fee = costs.period_stock_rate() * short_book.dot(exec_prices);
    out.cash_interest = prev_cash < 0.0 ? -prev_cash * costs.period_cash_rate() : 0.0;

    for (Eigen::Index i = 0; i < n; ++i) {
        const double fee_i = costs.period_stock_rate() * short_book(i) * exec_prices(i);
        if (out.delta(i) != 0 || fee_i != 0.0) {
            out.orders.push_back({period, static_cast<int>(i), out.delta(i), exec_prices(i),
                                  costs.commission_rate * std::abs(dq(i)) * exec_prices(i), fee_i});
        }
    }

    ledger.cash = prev_cash - out.cash_interest - trade_cost - out.borrow_fee - out.commission;
    ledger.holdings = target_q;
    out.txn_scale_ratio = out.traded_notional / T;

    const auto k_days = daily_prices.rows();
    out.daily_values.reserve(static_cast<size_t>(k_days));
    out.daily_returns.reserve(static_cast<size_t>(k_days));
    out.daily_total_returns.reserve(static_cast<size_t>(k_days));
    double prev_mark = out.start_value;
    for (Eigen::Index k = 0; k < k_days; ++k) {
        const double v = ledger.mark(daily_prices.row(k).transpose());
        if (!(v > 0.0))
            throw Bankrupt("total asset value " + std::to_string(v) + " <= 0 in period " + std::to_string(period) +
                               ", day " + std::to_string(k + 1),
                           period, static_cast<int>(k + 1));
        const double num = v - out.start_value + T;
        const double den = prev_mark - out.start_value + T;
        if (!(num > 0.0))
            throw Bankrupt("period loss exceeds the investment amount in period " + std::to_string(period) +
                               ", day " + std::to_string(k + 1),
                           period, static_cast<int>(k + 1));
        out.daily_returns.push_back(std::log2(num / den));
        out.daily_total_returns.push_back(std::log2(v / prev_mark));
        out.daily_values.push_back(v);
        prev_mark = v;
    }
    ledger.total_value = out.daily_values.back();
    out.xi = std::log2((ledger.total_value - out.start_value) / T + 1.0);
    out.end = ledger;
    return out;
}

inline void write_order_log_header(std::ostream& out) {
    out << "period,ticker,delta_shares,exec_price,commission,borrow_fee\n";
}

inline void write_order_log(std::ostream& out, const std::vector<OrderRecord>& orders,
                            const std::vector<std::string>& tickers) {
    const auto old = out.precision(17);
    for (const auto& o : orders)
        out << o.period << ',' << tickers.at(static_cast<size_t>(o.asset)) << ',' << o.delta_shares << ','
            << o.exec_price << ',' << o.commission << ',' << o.borrow_fee << '\n';
    out.precision(old);
}

}  // namespace bltrader
