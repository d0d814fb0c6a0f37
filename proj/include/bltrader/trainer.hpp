#pragma once

// Target-value policy-gradient training.
//
// The agent rolls its policy through the training market, storing transitions in a
// replay buffer. Each transition carries, through its next state, the realized mean
// and covariance of the period just traded, so a foresight-optimal portfolio and its
// evaluation value Gamma can be computed for it. The policy is then pushed, by plain
// gradient ascent, to make its own evaluation value rho match Gamma.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "bltrader/blmodel.hpp"
#include "bltrader/exchange.hpp"
#include "bltrader/gradnet/gradnet.hpp"
#include "bltrader/marketdata.hpp"

namespace bltrader {

/// Anything the trainer can optimize: parameters on a ParamStore and a differentiable map
/// from an AgentState to an n x 1 weight vector.
template <typename P>
concept TrainablePolicy = requires(const P& p, const AgentState& s, const gradnet::Bindings& b,
                                   const gradnet::ParamStore& store, std::uint64_t seed) {
    { p.init(seed) } -> std::same_as<gradnet::ParamStore>;
    { p.forward(s, b) } -> std::same_as<gradnet::Var>;
    { p.act(s, store) } -> std::convertible_to<Eigen::VectorXd>;
    { p.history_periods() } -> std::convertible_to<int>;
};

struct TrainConfig {
    double lambda1 = 0.2;          // variance penalty
    double lambda2 = 0.002;        // turnover penalty
    double lambda3 = 1.0;          // risk aversion of the foresight-optimal portfolio
    double learning_rate = 1e-5;
    int minibatch = 128;           // N
    int target_step = 1080;        // M, transitions per stage
    std::int64_t total_steps = 300000;
    std::uint64_t seed = 0;
    double grad_clip = 1e3;        // <= 0 disables
    std::size_t buffer_capacity = std::size_t{1} << 14;
    bool maximize_rho = false;     // ablation: ascend rho instead of -(Gamma - rho)^2
    double initial_amount = 1e8;   // T1 = v0
    bl::RidgeOptions ridge;

    void validate() const {
        if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("lambda1 and lambda2 must be >= 0");
        if (!(lambda3 > 0)) throw std::invalid_argument("lambda3 must be positive");
        if (minibatch < 1 || target_step < 1) throw std::invalid_argument("minibatch and target_step must be >= 1");
        if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
        if (buffer_capacity < 1) throw std::invalid_argument("buffer_capacity must be >= 1");
        if (!(initial_amount > 0)) throw std::invalid_argument("initial_amount must be positive");
    }
};

/// r = xi / K - (lambda1 / 2) V - (lambda2 / 2) eps. `outcome.variance` must already hold V_t.
inline double env_reward(const PeriodOutcome& outcome, const TrainConfig& cfg, int days_per_period = 5) {
    return outcome.xi / days_per_period - 0.5 * cfg.lambda1 * outcome.variance -
           0.5 * cfg.lambda2 * outcome.txn_scale_ratio;
}

inline double env_reward(double xi, double variance, double txn_scale_ratio, const TrainConfig& cfg,
                         int days_per_period = 5) {
    PeriodOutcome o;
    o.xi = xi;
    o.variance = variance;
    o.txn_scale_ratio = txn_scale_ratio;
    return env_reward(o, cfg, days_per_period);
}

/// rho = w'mu - (lambda1 / 2) w'Sw - (lambda2 / 2) |w - w_prev|_1.
inline double evaluation_fn(const Eigen::VectorXd& w, const Eigen::VectorXd& w_prev, const Eigen::VectorXd& mu,
                            const Eigen::MatrixXd& cov, const TrainConfig& cfg) {
    return w.dot(mu) - 0.5 * cfg.lambda1 * w.dot(cov * w) - 0.5 * cfg.lambda2 * (w - w_prev).cwiseAbs().sum();
}

/// Same as evaluation_fn with w (n x 1) on the tape.
inline gradnet::Var evaluation_fn(const gradnet::Var& w, const Eigen::VectorXd& w_prev, const Eigen::VectorXd& mu,
                                  const Eigen::MatrixXd& cov, const TrainConfig& cfg) {
    using namespace gradnet;
    const Var ret = matmul(transpose(w), constant(Eigen::MatrixXd(mu)));
    const Var var = matmul(transpose(w), matmul(constant(cov), w));
    const Var turnover = sum(abs(sub(w, constant(Eigen::MatrixXd(w_prev)))));
    return sub(sub(ret, scale(var, 0.5 * cfg.lambda1)), scale(turnover, 0.5 * cfg.lambda2));
}

/// w_opt = S^-1 mu / lambda3.
inline Eigen::VectorXd optimal_weights(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, const TrainConfig& cfg) {
    const bl::SpdFactor f(cov, "realized covariance");
    return f.solve(mu) / cfg.lambda3;
}

inline double target_value(const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov, const Eigen::VectorXd& w_prev,
                           const TrainConfig& cfg) {
    return evaluation_fn(optimal_weights(mu, cov, cfg), w_prev, mu, cov, cfg);
}

/// theta = -(Gamma - rho(w))^2.
inline double objective(const Eigen::VectorXd& w, const Eigen::VectorXd& w_prev, const Eigen::VectorXd& mu,
                        const Eigen::MatrixXd& cov, const TrainConfig& cfg) {
    const double gap = target_value(mu, cov, w_prev, cfg) - evaluation_fn(w, w_prev, mu, cov, cfg);
    return -gap * gap;
}

struct Transition {
    int period = 0;
    AgentState state;
    Eigen::VectorXd action;
    double reward = 0.0;
    AgentState next_state;
};

/// Realized statistics of the period a transition traded: mu is the mean of the last K
/// rows of the next state's history and Sigma is that history's covariance.
struct RealizedMoments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline RealizedMoments realized_moments(const AgentState& next_state, int days_per_period,
                                        const bl::RidgeOptions& ridge = {}) {
    const auto& h = next_state.history;
    if (days_per_period < 1 || h.rows() < days_per_period)
        throw InsufficientHistory("realized_moments: history shorter than one period");
    RealizedMoments m;
    m.mean = h.bottomRows(days_per_period).colwise().mean().transpose();
    m.cov = bl::historical_cov(h, ridge).cov;
    return m;
}

/// FIFO ring of transitions.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity = std::size_t{1} << 14) : capacity_(capacity) {
        if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
    }

    void push(Transition t) {
        if (items_.size() == capacity_) items_.pop_front();
        items_.push_back(std::move(t));
    }
    void clear() { items_.clear(); }
    std::size_t size() const { return items_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return items_.empty(); }
    const Transition& operator[](std::size_t i) const { return items_[i]; }

    /// min(count, size) distinct indices, uniformly at random.
    std::vector<std::size_t> sample_indices(std::size_t count, std::mt19937_64& rng) const {
        std::vector<std::size_t> idx(items_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const std::size_t k = std::min(count, idx.size());
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
            std::swap(idx[i], idx[pick(rng)]);
        }
        idx.resize(k);
        return idx;
    }

private:
    std::size_t capacity_;
    std::deque<Transition> items_;
};

/// Training market: aligned prices, their log returns and the period grid.
struct TrainingEnvironment {
    PricePanel prices;
    ReturnPanel returns;
    PeriodGrid grid;
    CostSchedule costs;

    TrainingEnvironment(PricePanel panel, int m, int k, CostSchedule cost_schedule)
        : prices(std::move(panel)), returns(daily_log_returns(prices)),
          grid(m, k, returns.num_rows()), costs(cost_schedule) {
        costs.period_days = k;
        costs.validate();
        if (grid.num_periods < m + 1)
            throw InsufficientHistory("training environment has " + std::to_string(grid.num_periods) +
                                      " periods, need at least m + 1 = " + std::to_string(m + 1));
    }

    int num_assets() const { return returns.num_assets(); }
    int first_period() const { return grid.periods_per_window; }
    int end_period() const { return grid.num_periods; }

    AgentState state(int t, const Eigen::VectorXd& prev_weights) const {
        return build_state(returns, grid, t, prev_weights);
    }

    Eigen::VectorXd exec_prices(int t) const { return prices.prices.row(grid.exec_price_row(t)).transpose(); }

    Eigen::MatrixXd daily_prices(int t) const {
        return prices.prices.middleRows(grid.mark_price_row(t, 1), grid.days_per_period);
    }

    /// Executes weights w in period t against `ledger`.
    PeriodOutcome execute(Ledger& ledger, const Eigen::VectorXd& w, int t) const {
        const auto p = exec_prices(t);
        return step_period(ledger, target_quantity(w, ledger.invest_amount, p), p, daily_prices(t), costs, t);
    }
};

struct StageRecord {
    int stage = 0;
    std::int64_t steps = 0;   // accumulated S
    double op = 0.0;          // mean theta over the last minibatch
    double ef = 0.0;          // mean rho over the last minibatch
    double ar_tr = 0.0;       // log2(v_end / v0) of a greedy pass over the training market
    double ard_tr = 0.0;      // accumulated reward of the same pass
    double mean_abs_gap = 0.0;  // mean |Gamma - rho| over the last minibatch
    double gap_variance = 0.0;  // variance of (Gamma - rho) over the last minibatch
    double target_variance = 0.0;  // variance of Gamma over the last minibatch
    int updates = 0;
    bool eval_bankrupt = false;
};

struct TrainTrace {
    std::string variant = "BDA";
    std::vector<StageRecord> stages;
};

inline void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
    const auto old = out.precision(17);
    out << "# variant=" << trace.variant << '\n';
    out << "stage,steps,OP,EF,AR_tr,ARD_tr\n";
    for (const auto& s : trace.stages)
        out << s.stage << ',' << s.steps << ',' << s.op << ',' << s.ef << ',' << s.ar_tr << ',' << s.ard_tr << '\n';
    out.precision(old);
}

struct TrainResult {
    gradnet::ParamStore params;
    TrainTrace trace;
};

/// Called after every completed stage with the record and current parameters.
using StageObserver = std::function<void(const StageRecord&, const gradnet::ParamStore&)>;

struct GreedyEvaluation {
    double accumulated_return = 0.0;  // AR^(tr)
    double accumulated_reward = 0.0;  // ARD^(tr)
    double final_value = 0.0;
    bool bankrupt = false;
};

/// One deterministic pass over every tradable period of the training market.
template <TrainablePolicy Policy>
GreedyEvaluation evaluate_greedy(const TrainingEnvironment& env, const Policy& policy,
                                 const gradnet::ParamStore& params, const TrainConfig& cfg) {
    GreedyEvaluation ev;
    Ledger ledger = Ledger::open(env.num_assets(), cfg.initial_amount);
    Eigen::VectorXd w_prev = Eigen::VectorXd::Zero(env.num_assets());
    for (int t = env.first_period(); t < env.end_period(); ++t) {
        const auto s = env.state(t, w_prev);
        const Eigen::VectorXd w = policy.act(s, params);
        if (!w.allFinite()) throw DivergenceDetected("policy produced non-finite weights during evaluation");
        try {
            auto out = env.execute(ledger, w, t);
            const auto next = env.state(t + 1, w);
            out.variance = portfolio_variance(w, realized_moments(next, env.grid.days_per_period, cfg.ridge).cov);
            ev.accumulated_reward += env_reward(out, cfg, env.grid.days_per_period);
        } catch (const Bankrupt&) {
            ev.bankrupt = true;
            break;
        }
        w_prev = w;
    }
    ev.final_value = ledger.total_value;
    ev.accumulated_return = std::log2(ledger.total_value / cfg.initial_amount);
    return ev;
}

namespace trainer_detail {

struct SampleStats {
    double theta = 0.0;
    double rho = 0.0;
    double gamma = 0.0;
};

}  // namespace trainer_detail

template <TrainablePolicy Policy>
class Trainer {
public:
    Trainer(const TrainingEnvironment& env, const Policy& policy, TrainConfig cfg)
        : env_(env), policy_(policy), cfg_(std::move(cfg)), buffer_(cfg_.buffer_capacity), rng_(cfg_.seed) {
        cfg_.validate();
        if (policy_.history_periods() != env_.grid.periods_per_window)
            throw ShapeMismatch("policy window m=" + std::to_string(policy_.history_periods()) +
                                " does not match the environment's m=" +
                                std::to_string(env_.grid.periods_per_window));
    }

    TrainResult run(gradnet::ParamStore params, const StageObserver& observer = {}) {
        TrainResult result;
        result.trace.variant = cfg_.maximize_rho ? "BDA-V3" : "BDA";
        reset_episode();
        std::int64_t steps = 0;
        int stage = 0;
        while (steps < cfg_.total_steps) {
            StageRecord rec;
            rec.stage = stage;
            fill_buffer(params);
            const int batches = cfg_.target_step / cfg_.minibatch;
            std::vector<trainer_detail::SampleStats> last;
            for (int b = 0; b < batches && steps < cfg_.total_steps; ++b) {
                if (buffer_.empty()) break;
                last = update(params);
                steps += cfg_.minibatch;
                ++rec.updates;
            }
            if (rec.updates == 0) {
                // Nothing to learn from (every rollout went bankrupt); count the attempt so the loop ends.
                steps += cfg_.minibatch;
            }
            summarize(last, rec);
            rec.steps = steps;
            const auto ev = evaluate_greedy(env_, policy_, params, cfg_);
            rec.ar_tr = ev.accumulated_return;
            rec.ard_tr = ev.accumulated_reward;
            rec.eval_bankrupt = ev.bankrupt;
            result.trace.stages.push_back(rec);
            if (!std::isfinite(rec.op) || !std::isfinite(rec.ef) || !params.all_finite()) {
                result.params = params;
                throw_divergence(result.trace);
            }
            if (observer) observer(rec, params);
            ++stage;
        }
        result.params = std::move(params);
        return result;
    }

    const ReplayBuffer& buffer() const { return buffer_; }

    /// Mean over `indices` of d(objective)/d(params), in store order; also returns sample stats.
    std::vector<Eigen::VectorXd> minibatch_gradient(const gradnet::ParamStore& params,
                                                    const std::vector<std::size_t>& indices,
                                                    std::vector<trainer_detail::SampleStats>* stats = nullptr) const {
        std::vector<Eigen::VectorXd> total;
        for (const auto& e : params.entries()) total.push_back(Eigen::VectorXd::Zero(e.value.size()));
        for (std::size_t i : indices) {
            const auto& tr = buffer_[i];
            gradnet::Bindings b(params, true);
            trainer_detail::SampleStats st;
            const auto obj = sample_objective(tr, b, st);
            gradnet::backward(obj);
            const auto g = b.gradients();
            for (std::size_t k = 0; k < g.size(); ++k) total[k] += g[k];
            if (stats) stats->push_back(st);
        }
        if (!indices.empty())
            for (auto& g : total) g /= static_cast<double>(indices.size());
        return total;
    }

    /// Objective of one stored transition on the tape (theta, or rho in the maximize-rho variant).
    gradnet::Var sample_objective(const Transition& tr, const gradnet::Bindings& b,
                                  trainer_detail::SampleStats& st) const {
        using namespace gradnet;
        const auto mom = realized_moments(tr.next_state, env_.grid.days_per_period, cfg_.ridge);
        const auto& w_prev = tr.state.prev_weights;
        st.gamma = target_value(mom.mean, mom.cov, w_prev, cfg_);
        const Var w = policy_.forward(tr.state, b);
        const Var rho = evaluation_fn(w, w_prev, mom.mean, mom.cov, cfg_);
        st.rho = rho.item();
        const double gap = st.gamma - st.rho;
        st.theta = -gap * gap;
        if (cfg_.maximize_rho) return rho;
        const Var g = add_scalar(neg(rho), st.gamma);
        return neg(mul(g, g));
    }

private:
    void reset_episode() {
        t_ = env_.first_period();
        ledger_ = Ledger::open(env_.num_assets(), cfg_.initial_amount);
        w_prev_ = Eigen::VectorXd::Zero(env_.num_assets());
    }

    void advance() {
        if (++t_ >= env_.end_period()) reset_episode();
    }

    /// M environment steps with the current policy. Bankrupt periods reset the episode and
    /// are not stored.
    void fill_buffer(const gradnet::ParamStore& params) {
        buffer_.clear();
        for (int i = 0; i < cfg_.target_step; ++i) {
            const auto s = env_.state(t_, w_prev_);
            const Eigen::VectorXd w = policy_.act(s, params);
            if (!w.allFinite()) throw DivergenceDetected("policy produced non-finite weights during rollout");
            try {
                auto out = env_.execute(ledger_, w, t_);
                auto next = env_.state(t_ + 1, w);
                out.variance =
                    portfolio_variance(w, realized_moments(next, env_.grid.days_per_period, cfg_.ridge).cov);
                const double r = env_reward(out, cfg_, env_.grid.days_per_period);
                buffer_.push({t_, s, w, r, std::move(next)});
                w_prev_ = w;
                advance();
            } catch (const Bankrupt&) {
                reset_episode();
            }
        }
    }

    std::vector<trainer_detail::SampleStats> update(gradnet::ParamStore& params) {
        const auto idx = buffer_.sample_indices(static_cast<std::size_t>(cfg_.minibatch), rng_);
        std::vector<trainer_detail::SampleStats> stats;
        auto grads = minibatch_gradient(params, idx, &stats);
        double norm2 = 0.0;
        for (const auto& g : grads) norm2 += g.squaredNorm();
        const double norm = std::sqrt(norm2);
        if (!std::isfinite(norm)) return stats;  // caught by the stage-level finiteness check
        const double clip = (cfg_.grad_clip > 0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
        auto& entries = params.entries();
        for (std::size_t k = 0; k < entries.size(); ++k) entries[k].grad.data = clip * grads[k];
        params.apply_gradient(cfg_.learning_rate);
        if (!params.all_finite()) {
            stats.push_back({std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0});
        }
        return stats;
    }

    static void summarize(const std::vector<trainer_detail::SampleStats>& s, StageRecord& rec) {
        if (s.empty()) return;
        const double n = static_cast<double>(s.size());
        double gap_mean = 0.0, gamma_mean = 0.0;
        for (const auto& x : s) {
            rec.op += x.theta / n;
            rec.ef += x.rho / n;
            rec.mean_abs_gap += std::abs(x.gamma - x.rho) / n;
            gap_mean += (x.gamma - x.rho) / n;
            gamma_mean += x.gamma / n;
        }
        for (const auto& x : s) {
            rec.gap_variance += std::pow(x.gamma - x.rho - gap_mean, 2) / n;
            rec.target_variance += std::pow(x.gamma - gamma_mean, 2) / n;
        }
    }

    [[noreturn]] static void throw_divergence(const TrainTrace& trace) {
        throw DivergenceDetected("training diverged at stage " + std::to_string(trace.stages.back().stage) +
                                 ": non-finite objective or parameters");
    }

    const TrainingEnvironment& env_;
    const Policy& policy_;
    TrainConfig cfg_;
    ReplayBuffer buffer_;
    std::mt19937_64 rng_;
    int t_ = 0;
    Ledger ledger_;
    Eigen::VectorXd w_prev_;
};

/// Target-value training (Gamma - rho regression).
template <TrainablePolicy Policy>
TrainResult train(const TrainingEnvironment& env, const Policy& policy, gradnet::ParamStore params,
                  TrainConfig cfg, const StageObserver& observer = {}) {
    cfg.maximize_rho = false;
    return Trainer<Policy>(env, policy, cfg).run(std::move(params), observer);
}

/// Ablation: ascend rho directly.
template <TrainablePolicy Policy>
TrainResult maximize_rho_train(const TrainingEnvironment& env, const Policy& policy, gradnet::ParamStore params,
                               TrainConfig cfg, const StageObserver& observer = {}) {
    cfg.maximize_rho = true;
    return Trainer<Policy>(env, policy, cfg).run(std::move(params), observer);
}

}  // namespace bltrader
