#pragma once

// Out-of-sample evaluation: strategies, the classical comparison rules and the
// performance metrics computed from daily log2 total-asset returns.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bltrader/blmodel.hpp"
#include "bltrader/exchange.hpp"
#include "bltrader/gradnet/params.hpp"
#include "bltrader/marketdata.hpp"
#include "bltrader/policy.hpp"

namespace bltrader {

// ---------------------------------------------------------------------------
// Metrics

struct MetricReport {
    std::string name;
    double ar = 0.0;
    double dr = 0.0;
    double var = 0.0;
    double std_dev = 0.0;
    double sr = 0.0;
    double lstd = 0.0;
    double str = 0.0;
    std::vector<std::string> flags;
    std::vector<double> daily_returns;          // theta series
    std::vector<Eigen::VectorXd> weights;       // one entry per period
    std::vector<int> periods;
    std::vector<double> daily_values;

    bool has_flag(const std::string& f) const { return std::find(flags.begin(), flags.end(), f) != flags.end(); }
};

/// AR, DR, Std (population), SR, LStd and STR with zero risk-free rate and zero
/// minimum acceptable return. A zero denominator gives a ratio of 0 and a flag.
inline MetricReport metric_suite(const std::vector<double>& theta) {
    if (theta.empty()) throw EmptySeries("metric_suite: empty return series");
    MetricReport r;
    const double n = static_cast<double>(theta.size());
    r.ar = std::accumulate(theta.begin(), theta.end(), 0.0);
    r.dr = r.ar / n;
    double ss = 0.0, downside = 0.0;
    for (double x : theta) {
        ss += (x - r.dr) * (x - r.dr);
        const double lo = std::min(x, 0.0);
        downside += lo * lo;
    }
    r.var = ss / n;
    r.std_dev = std::sqrt(r.var);
    r.lstd = std::sqrt(downside / n);
    if (r.std_dev > 0.0) r.sr = r.dr / r.std_dev;
    else r.flags.push_back("sr_degenerate");
    if (r.lstd > 0.0) r.str = r.dr / r.lstd;
    else r.flags.push_back("str_degenerate");
    r.daily_returns = theta;
    return r;
}

inline nlohmann::json report_json(const MetricReport& r) {
    return nlohmann::json{{"name", r.name}, {"AR", r.ar},   {"DR", r.dr},   {"Std", r.std_dev},
                          {"SR", r.sr},     {"LStd", r.lstd}, {"STR", r.str}, {"flags", r.flags}};
}

inline void write_theta_csv(std::ostream& out, const MetricReport& r) {
    const auto old = out.precision(17);
    out << "day,theta,value\n";
    for (size_t i = 0; i < r.daily_returns.size(); ++i)
        out << i + 1 << ',' << r.daily_returns[i] << ',' << (i < r.daily_values.size() ? r.daily_values[i] : 0.0)
            << '\n';
    out.precision(old);
}

inline void write_weights_csv(std::ostream& out, const MetricReport& r, const std::vector<std::string>& tickers) {
    const auto old = out.precision(17);
    out << "period";
    for (const auto& t : tickers) out << ',' << t;
    out << '\n';
    for (size_t i = 0; i < r.weights.size(); ++i) {
        out << r.periods[i];
        for (Eigen::Index j = 0; j < r.weights[i].size(); ++j) out << ',' << r.weights[i](j);
        out << '\n';
    }
    out.precision(old);
}

// ---------------------------------------------------------------------------
// Strategies

/// What a strategy sees at decision time: the period index and the agent state
/// (previous decision plus the K*m most recent daily log2 returns).
struct DecisionContext {
    int period = 0;
    const AgentState& state;
    int days_per_period = 5;
};

struct Decision {
    Eigen::VectorXd weights;
    bool hold = false;  // keep the current share counts instead of rebalancing
};

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::string name() const = 0;
    virtual bool long_only() const { return true; }
    /// Periods of history the strategy needs (the state always carries m).
    virtual int needs_history() const { return 1; }
    virtual void reset(int num_assets) = 0;
    virtual Decision decide(const DecisionContext& ctx) = 0;
};

namespace baseline_detail {

/// Euclidean projection onto {x >= 0, sum x = 1}.
inline Eigen::VectorXd simplex_projection(const Eigen::VectorXd& v) {
    const auto n = v.size();
    std::vector<double> u(v.data(), v.data() + n);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cum = 0.0, theta = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        cum += u[static_cast<size_t>(j)];
        const double t = (cum - 1.0) / static_cast<double>(j + 1);
        if (u[static_cast<size_t>(j)] - t > 0.0) theta = t;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

/// argmin over the simplex of (x - y)' A (x - y), by projected gradient.
inline Eigen::VectorXd simplex_projection_a_norm(const Eigen::VectorXd& y, const Eigen::MatrixXd& a,
                                                 int max_iter = 2000, double tol = 1e-12) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a, Eigen::EigenvaluesOnly);
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 1e-300);
    const double step = 1.0 / (2.0 * lmax);
    Eigen::VectorXd x = simplex_projection(y);
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd next = simplex_projection(x - step * 2.0 * a * (x - y));
        const double moved = (next - x).cwiseAbs().maxCoeff();
        x = next;
        if (moved < tol) break;
    }
    return x;
}

/// Period price relatives p_t / p_{t-1} of the last `periods` periods, oldest first (columns).
inline Eigen::MatrixXd period_relatives(const AgentState& s, int k, int periods) {
    const auto& h = s.history;
    const auto n = h.cols();
    Eigen::MatrixXd rel(n, periods);
    const auto rows = h.rows();
    for (int j = 0; j < periods; ++j) {
        const auto first = rows - static_cast<Eigen::Index>(periods - j) * k;
        rel.col(j) = h.middleRows(first, k).colwise().sum().transpose().unaryExpr(
            [](double x) { return std::exp2(x); });
    }
    return rel;
}

inline Eigen::VectorXd last_relative(const DecisionContext& c) {
    return period_relatives(c.state, c.days_per_period, 1).col(0);
}

inline Eigen::VectorXd uniform(Eigen::Index n) { return Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)); }

/// Scales w down so that sum |w_i| <= 1.
inline Eigen::VectorXd cap_gross(const Eigen::VectorXd& w) {
    const double g = w.cwiseAbs().sum();
    return g > 1.0 ? Eigen::VectorXd(w / g) : w;
}

/// Per-period sample moments from the daily history, aggregated to period returns.
struct PeriodSample {
    Eigen::MatrixXd returns;  // periods x n, period log2 returns
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;      // divisor T - 1, ridged
};

inline PeriodSample period_sample(const AgentState& s, int k) {
    const auto n = s.history.cols();
    const auto periods = s.history.rows() / k;
    PeriodSample p;
    p.returns.resize(periods, n);
    for (Eigen::Index t = 0; t < periods; ++t) p.returns.row(t) = s.history.middleRows(t * k, k).colwise().sum();
    p.mean = p.returns.colwise().mean().transpose();
    const Eigen::MatrixXd c = p.returns.rowwise() - p.mean.transpose();
    p.cov = bl::ridge_regularize(c.transpose() * c / static_cast<double>(std::max<Eigen::Index>(periods - 1, 1)),
                                 bl::RidgeOptions{1e-6, 1e-8});
    return p;
}

}  // namespace baseline_detail

/// Uniform buy-and-hold: buy e/n once, then never trade.
class Ubah final : public Strategy {
public:
    std::string name() const override { return "UBAH"; }
    void reset(int n) override { n_ = n, bought_ = false; }
    Decision decide(const DecisionContext&) override {
        Decision d{baseline_detail::uniform(n_), bought_};
        bought_ = true;
        return d;
    }

private:
    int n_ = 0;
    bool bought_ = false;
};

/// Constant rebalanced portfolio, e/n every period.
class Crp final : public Strategy {
public:
    std::string name() const override { return "CRP"; }
    void reset(int n) override { n_ = n; }
    Decision decide(const DecisionContext&) override { return {baseline_detail::uniform(n_), false}; }

private:
    int n_ = 0;
};

/// Exponentiated gradient (Helmbold et al.): b_i <- b_i exp(eta x_i / b'x), renormalized.
class ExponentiatedGradient final : public Strategy {
public:
    explicit ExponentiatedGradient(double eta = 0.05) : eta_(eta) {}
    std::string name() const override { return "EG"; }
    void reset(int n) override { b_ = baseline_detail::uniform(n), started_ = false; }
    Decision decide(const DecisionContext& c) override {
        if (started_) {
            const Eigen::VectorXd x = baseline_detail::last_relative(c);
            const double bx = b_.dot(x);
            Eigen::VectorXd nb = b_.array() * (eta_ * x.array() / bx).exp();
            b_ = nb / nb.sum();
        }
        started_ = true;
        return {b_, false};
    }

private:
    double eta_;
    Eigen::VectorXd b_;
    bool started_ = false;
};

/// OLMAR-1 (Li and Hoi): moving-average price prediction over W periods.
class Olmar final : public Strategy {
public:
    explicit Olmar(int window = 5, double epsilon = 10.0) : window_(window), eps_(epsilon) {}
    std::string name() const override { return "OLMAR"; }
    int needs_history() const override { return window_; }
    void reset(int n) override { b_ = baseline_detail::uniform(n), started_ = false; }
    Decision decide(const DecisionContext& c) override {
        if (started_) {
            // x_hat = (1/W) sum_{i=0}^{W-1} p_{t-i} / p_t
            const Eigen::MatrixXd rel = baseline_detail::period_relatives(c.state, c.days_per_period, window_ - 1);
            Eigen::VectorXd ratio = Eigen::VectorXd::Ones(b_.size());
            Eigen::VectorXd acc = ratio;
            for (int j = window_ - 2; j >= 0; --j) {
                ratio = ratio.cwiseQuotient(rel.col(j));
                acc += ratio;
            }
            const Eigen::VectorXd xhat = acc / static_cast<double>(window_);
            const Eigen::VectorXd centered = xhat.array() - xhat.mean();
            const double denom = centered.squaredNorm();
            const double lambda = denom > 0.0 ? std::max(0.0, (eps_ - b_.dot(xhat)) / denom) : 0.0;
            b_ = baseline_detail::simplex_projection(b_ + lambda * centered);
        }
        started_ = true;
        return {b_, false};
    }

private:
    int window_;
    double eps_;
    Eigen::VectorXd b_;
    bool started_ = false;
};

/// PAMR (Li et al.): passive-aggressive mean reversion with sensitivity epsilon.
class Pamr final : public Strategy {
public:
    explicit Pamr(double epsilon = 0.5) : eps_(epsilon) {}
    std::string name() const override { return "PAMR"; }
    void reset(int n) override { b_ = baseline_detail::uniform(n), started_ = false; }
    Decision decide(const DecisionContext& c) override {
        if (started_) {
            const Eigen::VectorXd x = baseline_detail::last_relative(c);
            const double loss = std::max(0.0, b_.dot(x) - eps_);
            const Eigen::VectorXd centered = x.array() - x.mean();
            const double denom = centered.squaredNorm();
            const double tau = denom > 0.0 ? loss / denom : 0.0;
            b_ = baseline_detail::simplex_projection(b_ - tau * centered);
        }
        started_ = true;
        return {b_, false};
    }

private:
    double eps_;
    Eigen::VectorXd b_;
    bool started_ = false;
};

/// Online Newton step (Agarwal et al.) with beta, delta and mixing eta.
class OnlineNewtonStep final : public Strategy {
public:
    OnlineNewtonStep(double beta = 1.0, double delta = 0.125, double eta = 0.0)
        : beta_(beta), delta_(delta), eta_(eta) {}
    std::string name() const override { return "ONS"; }
    void reset(int n) override {
        a_ = Eigen::MatrixXd::Identity(n, n);
        acc_ = Eigen::VectorXd::Zero(n);
        b_ = baseline_detail::uniform(n);
        started_ = false;
    }
    Decision decide(const DecisionContext& c) override {
        if (started_) {
            const Eigen::VectorXd x = baseline_detail::last_relative(c);
            const Eigen::VectorXd grad = x / b_.dot(x);
            a_ += grad * grad.transpose();
            acc_ += (1.0 + 1.0 / beta_) * grad;
            const Eigen::VectorXd y = delta_ * a_.llt().solve(acc_);
            const Eigen::VectorXd p = baseline_detail::simplex_projection_a_norm(y, a_);
            b_ = (1.0 - eta_) * p + eta_ * baseline_detail::uniform(p.size());
        }
        started_ = true;
        return {b_, false};
    }

private:
    double beta_, delta_, eta_;
    Eigen::MatrixXd a_;
    Eigen::VectorXd acc_;
    Eigen::VectorXd b_;
    bool started_ = false;
};

/// Jorion's Bayes-Stein shrinkage of the sample mean toward the minimum-variance
/// mean, followed by the mean-variance rule S^-1 mu / gamma, gross exposure capped at 1.
class JorionBayesStein final : public Strategy {
public:
    explicit JorionBayesStein(double gamma = 1.0) : gamma_(gamma) {}
    std::string name() const override { return "JB"; }
    bool long_only() const override { return false; }
    void reset(int) override {}
    Decision decide(const DecisionContext& c) override {
        const auto s = baseline_detail::period_sample(c.state, c.days_per_period);
        const auto n = static_cast<double>(s.mean.size());
        const auto T = static_cast<double>(s.returns.rows());
        const bl::SpdFactor f(s.cov, "JB sample covariance");
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(s.mean.size());
        const Eigen::VectorXd s_inv_one = f.solve(ones);
        const double y0 = s_inv_one.dot(s.mean) / s_inv_one.sum();
        const Eigen::VectorXd d = s.mean - y0 * ones;
        const double phi = (n + 2.0) / ((n + 2.0) + T * d.dot(f.solve(d)));
        const Eigen::VectorXd mu = (1.0 - phi) * s.mean + phi * y0 * ones;
        return {baseline_detail::cap_gross(f.solve(mu) / gamma_), false};
    }

private:
    double gamma_;
};

/// Kan and Zhou's three-fund rule: a mix of the sample tangency and minimum-variance
/// portfolios with the plug-in mixing coefficient, gross exposure capped at 1.
class KanZhouThreeFund final : public Strategy {
public:
    explicit KanZhouThreeFund(double gamma = 1.0) : gamma_(gamma) {}
    std::string name() const override { return "KZTF"; }
    bool long_only() const override { return false; }
    void reset(int) override {}
    Decision decide(const DecisionContext& c) override {
        const auto s = baseline_detail::period_sample(c.state, c.days_per_period);
        const auto n = static_cast<double>(s.mean.size());
        const auto T = static_cast<double>(s.returns.rows());
        const bl::SpdFactor f(s.cov, "KZTF sample covariance");
        const Eigen::VectorXd ones = Eigen::VectorXd::Ones(s.mean.size());
        const Eigen::VectorXd s_inv_one = f.solve(ones);
        const Eigen::VectorXd s_inv_mu = f.solve(s.mean);
        const double mu_g = s_inv_one.dot(s.mean) / s_inv_one.sum();
        const Eigen::VectorXd d = s.mean - mu_g * ones;
        const double psi2 = std::max(d.dot(f.solve(d)), 0.0);
        const double eta = psi2 + n / T > 0.0 ? psi2 / (psi2 + n / T) : 0.0;
        const double c3 = (T > n + 4.0) ? (T - n - 1.0) * (T - n - 4.0) / (T * (T - 2.0)) : 1.0;
        const Eigen::VectorXd w = c3 / gamma_ * (eta * s_inv_mu + (1.0 - eta) * mu_g * s_inv_one);
        return {baseline_detail::cap_gross(w), false};
    }

private:
    double gamma_;
};

struct BaselineParams {
    double eg_eta = 0.05;
    int olmar_window = 5;
    double olmar_epsilon = 10.0;
    double pamr_epsilon = 0.5;
    double ons_beta = 1.0;
    double ons_delta = 0.125;
    double ons_eta = 0.0;
    double jb_gamma = 1.0;
    double kztf_gamma = 1.0;
};

/// UBAH, CRP, EG, OLMAR, PAMR, ONS, JB, KZTF.
inline std::vector<std::unique_ptr<Strategy>> baselines(const BaselineParams& p = {}) {
    std::vector<std::unique_ptr<Strategy>> s;
    s.push_back(std::make_unique<Ubah>());
    s.push_back(std::make_unique<Crp>());
    s.push_back(std::make_unique<ExponentiatedGradient>(p.eg_eta));
    s.push_back(std::make_unique<Olmar>(p.olmar_window, p.olmar_epsilon));
    s.push_back(std::make_unique<Pamr>(p.pamr_epsilon));
    s.push_back(std::make_unique<OnlineNewtonStep>(p.ons_beta, p.ons_delta, p.ons_eta));
    s.push_back(std::make_unique<JorionBayesStein>(p.jb_gamma));
    s.push_back(std::make_unique<KanZhouThreeFund>(p.kztf_gamma));
    return s;
}

/// The trained agent as a strategy.
class PolicyStrategy final : public Strategy {
public:
    PolicyStrategy(BlPolicy policy, gradnet::ParamStore params, std::string name = "BDA")
        : policy_(std::move(policy)), params_(std::move(params)), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    bool long_only() const override { return policy_.config().softmax_head; }
    int needs_history() const override { return policy_.history_periods(); }
    void reset(int) override {}
    Decision decide(const DecisionContext& c) override { return {policy_.act(c.state, params_), false}; }

private:
    BlPolicy policy_;
    gradnet::ParamStore params_;
    std::string name_;
};

// ---------------------------------------------------------------------------
// Harness

struct BacktestConfig {
    int periods_per_window = 50;  // m
    int days_per_period = 5;      // K
    double initial_amount = 1e8;  // T1
    CostSchedule costs;
};

/// Runs `strategy` over every period of `panel` that has m periods of history before it.
/// A bankruptcy ends the run; metrics cover the days before it and carry a flag.
inline MetricReport run_backtest(Strategy& strategy, const PricePanel& panel, const BacktestConfig& cfg) {
    CostSchedule costs = cfg.costs;
    costs.period_days = cfg.days_per_period;
    costs.validate();
    const auto returns = daily_log_returns(panel);
    const PeriodGrid grid(cfg.periods_per_window, cfg.days_per_period, returns.num_rows());
    if (strategy.needs_history() > cfg.periods_per_window)
        throw InsufficientHistory(strategy.name() + " needs " + std::to_string(strategy.needs_history()) +
                                  " periods of history, window is " + std::to_string(cfg.periods_per_window));
    if (grid.num_periods <= grid.periods_per_window)
        throw InsufficientHistory("backtest panel has no tradable period after the m-period warm-up");

    const int n = panel.num_assets();
    strategy.reset(n);
    Ledger ledger = Ledger::open(n, cfg.initial_amount);
    Eigen::VectorXd w_prev = Eigen::VectorXd::Zero(n);
    std::vector<double> theta, values;
    MetricReport rep;
    bool bankrupt = false;

    for (int t = grid.periods_per_window; t < grid.num_periods; ++t) {
        const AgentState s = build_state(returns, grid, t, w_prev);
        const Decision d = strategy.decide({t, s, cfg.days_per_period});
        if (d.weights.size() != n || !d.weights.allFinite())
            throw DivergenceDetected(strategy.name() + " produced invalid weights in period " + std::to_string(t));
        const Eigen::VectorXd p = panel.prices.row(grid.exec_price_row(t)).transpose();
        const Eigen::MatrixXd daily = panel.prices.middleRows(grid.mark_price_row(t, 1), cfg.days_per_period);
        const Quantities target = d.hold ? ledger.holdings : target_quantity(d.weights, ledger.invest_amount, p);
        Ledger trial = ledger;
        try {
            const auto out = step_period(trial, target, p, daily, costs, t);
            theta.insert(theta.end(), out.daily_total_returns.begin(), out.daily_total_returns.end());
            values.insert(values.end(), out.daily_values.begin(), out.daily_values.end());
        } catch (const Bankrupt& b) {
            // Keep the solvent days of the failing period.
            Ledger replay = ledger;
            const int solvent = b.day() - 1;
            if (solvent > 0) {
                const auto out = step_period(replay, target, p, daily.topRows(solvent), costs, t);
                theta.insert(theta.end(), out.daily_total_returns.begin(), out.daily_total_returns.end());
                values.insert(values.end(), out.daily_values.begin(), out.daily_values.end());
            }
            bankrupt = true;
            break;
        }
        ledger = trial;
        const Eigen::VectorXd held = d.hold ? Eigen::VectorXd(ledger.holdings.cast<double>().cwiseProduct(p) /
                                                              ledger.invest_amount)
                                            : d.weights;
        rep.weights.push_back(held);
        rep.periods.push_back(t);
        w_prev = d.weights;
    }

    if (theta.empty()) {
        rep.name = strategy.name();
        rep.flags = {"bankrupt_truncated", "empty_series"};
        return rep;
    }
    MetricReport m = metric_suite(theta);
    m.name = strategy.name();
    m.weights = std::move(rep.weights);
    m.periods = std::move(rep.periods);
    m.daily_values = std::move(values);
    if (bankrupt) m.flags.insert(m.flags.begin(), "bankrupt_truncated");
    return m;
}

/// Reports sorted by AR, best first.
inline std::vector<MetricReport> rank_by_ar(std::vector<MetricReport> reports) {
    std::stable_sort(reports.begin(), reports.end(),
                     [](const MetricReport& a, const MetricReport& b) { return a.ar > b.ar; });
    return reports;
}

}  // namespace bltrader
