#include <catch_amalgamated.hpp>

#include <sstream>

#include "support.hpp"

using namespace bltrader;

namespace {

struct AllCash final : Strategy {
    int n = 0;
    std::string name() const override { return "cash"; }
    void reset(int k) override { n = k; }
    Decision decide(const DecisionContext&) override { return {Eigen::VectorXd::Zero(n), false}; }
};

struct BuyAndHold final : Strategy {
    bool bought = false;
    std::string name() const override { return "hold"; }
    void reset(int) override { bought = false; }
    Decision decide(const DecisionContext&) override {
        const bool hold = bought;
        bought = true;
        return {Eigen::VectorXd::Ones(1), hold};
    }
};

// Records every decision of a wrapped strategy.
struct Recorder final : Strategy {
    Strategy& inner;
    std::vector<Eigen::VectorXd> seen;
    explicit Recorder(Strategy& s) : inner(s) {}
    std::string name() const override { return inner.name(); }
    bool long_only() const override { return inner.long_only(); }
    int needs_history() const override { return inner.needs_history(); }
    void reset(int n) override { inner.reset(n), seen.clear(); }
    Decision decide(const DecisionContext& c) override {
        auto d = inner.decide(c);
        seen.push_back(d.weights);
        return d;
    }
};

PricePanel flat_panel(int n, int days) {
    PricePanel p;
    for (int i = 0; i < n; ++i) p.tickers.push_back("F" + std::to_string(i));
    p.dates = business_days("2019-01-01", days);
    p.prices = Eigen::MatrixXd::Constant(days, n, 50.0);
    for (int i = 0; i < n; ++i) p.prices.col(i) *= 1.0 + i;
    return p;
}

BacktestConfig zero_cost(int m = 2) {
    BacktestConfig c;
    c.periods_per_window = m;
    c.costs = CostSchedule::free();
    return c;
}

PricePanel noisy_panel(int n = 4, int days = 300, std::uint64_t seed = 3) {
    SyntheticMarket s;
    s.num_assets = n;
    s.num_days = days;
    s.daily_vol = 0.02;
    s.seed = seed;
    return geometric_random_walk(s);
}

}  // namespace

TEST_CASE("metric examples", "[backtest]") {
    const auto a = metric_suite({0.01, 0.01, 0.01, 0.01, 0.01, -0.01, -0.01, -0.01, -0.01, -0.01});
    CHECK(a.dr == Catch::Approx(0.0).margin(1e-18));
    CHECK(a.std_dev == Catch::Approx(0.01).epsilon(1e-12));
    CHECK(a.sr == Catch::Approx(0.0).margin(1e-15));
    CHECK(a.lstd == Catch::Approx(std::sqrt(5 * 1e-4 / 10)).epsilon(1e-12));
    CHECK(a.str == Catch::Approx(0.0).margin(1e-15));

    const auto b = metric_suite(std::vector<double>(20, 0.001));
    CHECK(b.ar == Catch::Approx(0.02).epsilon(1e-12));
    CHECK(b.dr == Catch::Approx(0.001).epsilon(1e-12));
    CHECK(b.std_dev == Catch::Approx(0.0).margin(1e-15));
    CHECK(b.lstd == 0.0);
    CHECK(b.has_flag("str_degenerate"));

    const auto c = metric_suite({0.02, -0.02});
    CHECK(c.dr == 0.0);
    CHECK(c.std_dev == Catch::Approx(0.02).epsilon(1e-12));
    CHECK(c.lstd == Catch::Approx(0.01414).margin(5e-6));
    CHECK(c.str == 0.0);

    CHECK_THROWS_AS(metric_suite({}), EmptySeries);
}

TEST_CASE("metric identities on random series", "[backtest]") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> z(0.0005, 0.01);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(5 * (1 + trial % 30));
        for (auto& v : x) v = z(rng);
        const auto r = metric_suite(x);
        CHECK(std::abs(r.ar - static_cast<double>(x.size()) * r.dr) < 1e-12);
        double sq = 0.0;
        for (double v : x) sq += v * v / static_cast<double>(x.size());
        CHECK(r.lstd * r.lstd <= sq + 1e-18);
        CHECK(r.sr == Catch::Approx(r.dr / r.std_dev).epsilon(1e-12));
        CHECK(r.str == Catch::Approx(r.dr / r.lstd).epsilon(1e-12));
    }
}

TEST_CASE("all cash is flat", "[backtest]") {
    AllCash s;
    const auto r = run_backtest(s, noisy_panel(), zero_cost());
    CHECK(r.ar == 0.0);
    CHECK(r.std_dev == 0.0);
    CHECK(r.sr == 0.0);
    CHECK(r.has_flag("sr_degenerate"));
    CHECK(r.daily_returns.size() == 5 * r.periods.size());
}

TEST_CASE("single asset buy and hold against a hand ledger", "[backtest]") {
    SyntheticMarket m;
    m.num_assets = 1;
    m.num_days = 61;
    m.daily_vol = 0.02;
    const auto panel = geometric_random_walk(m);
    const auto cfg = zero_cost(2);
    BuyAndHold s;
    const auto r = run_backtest(s, panel, cfg);

    // Buy floor(T / p) at the first execution price, keep the rest in cash, mark at the last day.
    const double t1 = cfg.initial_amount;
    const double p0 = panel.prices(2 * 5, 0);
    const double q = std::floor(0.5 * t1 / p0);
    const double p_end = panel.prices(panel.num_days() - 1, 0);
    CHECK(r.periods.size() == 10);
    CHECK(r.ar == Catch::Approx(std::log2((t1 - q * p0 + q * p_end) / t1)).epsilon(1e-10));
    CHECK(r.daily_values.back() == Catch::Approx(t1 - q * p0 + q * p_end).epsilon(1e-12));
}

TEST_CASE("UBAH on flat prices", "[backtest]") {
    Ubah s;
    const auto r = run_backtest(s, flat_panel(3, 101), zero_cost());
    CHECK(r.ar == 0.0);
    // After the first purchase the book is held share counts, so the weights never drift.
    REQUIRE(r.weights.size() > 2);
    for (size_t i = 1; i < r.weights.size(); ++i) CHECK((r.weights[i] - r.weights[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((r.weights[1] - r.weights[0]).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("constant weights on constant prices earn nothing", "[backtest]") {
    for (auto& s : baselines()) {
        const auto r = run_backtest(*s, flat_panel(3, 101), zero_cost(5));
        INFO(s->name());
        CHECK(r.ar == 0.0);
    }
}

TEST_CASE("CRP harvests mirrored oscillation", "[backtest]") {
    // A goes x1.01 then x1/1.01, B the reverse: each is flat over two days, a daily
    // rebalance earns 0.5 (1.01 + 1 / 1.01) > 1 per day on the invested half.
    const double up = std::log2(1.01);
    Eigen::MatrixXd pattern(2, 2);
    pattern << up, -up, -up, up;
    const auto panel = periodic_market(pattern, 100);
    BacktestConfig cfg = zero_cost(1);
    cfg.days_per_period = 1;
    Crp crp;
    Ubah ubah;
    const auto rc = run_backtest(crp, panel, cfg);
    const auto ru = run_backtest(ubah, panel, cfg);
    CHECK(rc.ar > 0.0);
    CHECK(rc.ar > ru.ar);

    // Hand ledger: each day buy floor(T / (2 p)) of both at the close and mark at the next close.
    double v = cfg.initial_amount;
    for (int d = 1; d + 1 < panel.num_days(); ++d) {
        double cash = v;
        double next = 0.0;
        for (int i = 0; i < 2; ++i) {
            const double q = std::floor(0.25 * cfg.initial_amount / panel.prices(d, i));
            cash -= q * panel.prices(d, i);
            next += q * panel.prices(d + 1, i);
        }
        v = cash + next;
    }
    CHECK(rc.ar == Catch::Approx(std::log2(v / cfg.initial_amount)).epsilon(1e-9));
}

TEST_CASE("EG with zero learning rate is CRP", "[backtest]") {
    const auto panel = noisy_panel();
    ExponentiatedGradient eg(0.0);
    Crp crp;
    const auto a = run_backtest(eg, panel, zero_cost());
    const auto b = run_backtest(crp, panel, zero_cost());
    CHECK(a.ar == b.ar);
    CHECK(a.daily_returns == b.daily_returns);
}

TEST_CASE("long-only baselines stay on the simplex", "[backtest]") {
    const auto panel = noisy_panel(5, 400, 8);
    BacktestConfig cfg;
    cfg.periods_per_window = 5;
    auto all = baselines();
    REQUIRE(all.size() == 8);
    std::vector<std::string> names;
    for (auto& s : all) {
        names.push_back(s->name());
        Recorder rec(*s);
        const auto r = run_backtest(rec, panel, cfg);
        INFO(s->name());
        CHECK(std::isfinite(r.ar));
        CHECK_FALSE(rec.seen.empty());
        if (!s->long_only()) continue;
        for (const auto& w : rec.seen) {
            CHECK(w.minCoeff() >= 0.0);
            CHECK(w.sum() <= 1.0 + 1e-12);
        }
    }
    CHECK(names == std::vector<std::string>{"UBAH", "CRP", "EG", "OLMAR", "PAMR", "ONS", "JB", "KZTF"});
}

TEST_CASE("simplex projection", "[backtest]") {
    using baseline_detail::simplex_projection;
    CHECK(simplex_projection(Eigen::Vector3d(0.2, 0.3, 0.5)).isApprox(Eigen::Vector3d(0.2, 0.3, 0.5), 1e-15));
    CHECK(simplex_projection(Eigen::Vector3d(5, 0, 0)).isApprox(Eigen::Vector3d(1, 0, 0), 1e-15));
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 100; ++trial) {
        const Eigen::VectorXd v = testing_support::random_matrix(6, 1, rng, 2.0);
        const Eigen::VectorXd x = simplex_projection(v);
        CHECK(x.minCoeff() >= 0.0);
        CHECK(std::abs(x.sum() - 1.0) < 1e-12);
        // Optimality: no simplex vertex is closer to v along the feasible directions.
        for (int i = 0; i < 6; ++i) {
            const Eigen::VectorXd e = Eigen::VectorXd::Unit(6, i);
            CHECK((v - x).dot(e - x) <= 1e-12);
        }
    }
}

TEST_CASE("reports and logs", "[backtest]") {
    Crp crp;
    const auto panel = noisy_panel(3, 120);
    const auto r = run_backtest(crp, panel, zero_cost());
    const auto j = report_json(r);
    CHECK(j["name"] == "CRP");
    for (const char* k : {"AR", "DR", "Std", "SR", "LStd", "STR", "flags"}) CHECK(j.contains(k));
    std::ostringstream w, t;
    write_weights_csv(w, r, panel.tickers);
    write_theta_csv(t, r);
    CHECK(w.str().rfind("period,S0,S1,S2\n", 0) == 0);
    CHECK(t.str().rfind("day,theta,value\n", 0) == 0);

    const auto ranked = rank_by_ar({metric_suite({0.1}), metric_suite({0.3}), metric_suite({-0.2})});
    CHECK(ranked[0].ar == 0.3);
    CHECK(ranked[2].ar == -0.2);
}

TEST_CASE("backtest input errors", "[backtest]") {
    Olmar o(60, 10.0);
    CHECK_THROWS_AS(run_backtest(o, noisy_panel(), zero_cost(5)), InsufficientHistory);
    Crp crp;
    CHECK_THROWS_AS(run_backtest(crp, noisy_panel(3, 20), zero_cost(5)), InsufficientHistory);
}
