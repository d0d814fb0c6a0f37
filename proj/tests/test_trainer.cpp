#include <catch_amalgamated.hpp>

#include <sstream>

#include "support.hpp"

using namespace bltrader;
using namespace bltrader::gradnet;
using testing_support::random_matrix;
using testing_support::random_spd;

namespace {

// w = phi for a single asset.
struct ScalarPolicy {
    int window = 2;
    ParamStore init(std::uint64_t seed) const { return init_params({{"phi", {1, 1}, ParamRole::Bias}}, seed); }
    Var forward(const AgentState&, const Bindings& b) const { return b["phi"]; }
    Eigen::VectorXd act(const AgentState& s, const ParamStore& p) const {
        return forward(s, Bindings(p, false)).value().data;
    }
    int history_periods() const { return window; }
};

TrainingEnvironment small_env(int assets = 3, int days = 400, std::uint64_t seed = 1) {
    SyntheticMarket s;
    s.num_assets = assets;
    s.num_days = days;
    s.daily_vol = 0.01;
    s.seed = seed;
    return TrainingEnvironment(geometric_random_walk(s), 2, 5, CostSchedule{});
}

TrainConfig quick(std::int64_t steps) {
    TrainConfig c;
    c.total_steps = steps;
    c.target_step = 256;
    c.minibatch = 128;
    c.learning_rate = 1.0;
    c.seed = 3;
    return c;
}

ParamStore warm_params(const BlPolicy& policy, std::uint64_t seed) {
    auto p = policy.init(seed);
    std::mt19937_64 rng(seed);
    testing_support::randomize(p, rng, 0.1);
    return p;
}

}  // namespace

TEST_CASE("reward", "[trainer]") {
    TrainConfig c;
    CHECK(env_reward(0.0, 0.0, 0.0, c) == 0.0);
    CHECK(env_reward(0.05, 0.01, 0.1, c) == Catch::Approx(0.0089).epsilon(1e-12));
    c.lambda1 = c.lambda2 = 0.0;
    CHECK(env_reward(0.05, 0.3, 0.7, c) == Catch::Approx(0.01).epsilon(1e-14));
}

TEST_CASE("evaluation function", "[trainer]") {
    TrainConfig c;
    CHECK(evaluation_fn(Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), Eigen::Vector2d(0.3, 0.1),
                        Eigen::Matrix2d::Identity(), c) == 0.0);
    CHECK(evaluation_fn(Eigen::Vector2d(1, 0), Eigen::Vector2d::Zero(), Eigen::Vector2d(0.01, 0),
                        1e-4 * Eigen::Matrix2d::Identity(), c) == Catch::Approx(0.00899).epsilon(1e-12));

    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::MatrixXd s = random_spd(4, rng);
        const Eigen::VectorXd mu = random_matrix(4, 1, rng), wp = random_matrix(4, 1, rng);
        const Eigen::VectorXd a = random_matrix(4, 1, rng, 2.0), b = random_matrix(4, 1, rng, 2.0);
        const double mid = evaluation_fn((a + b) / 2, wp, mu, s, c);
        CHECK(mid >= (evaluation_fn(a, wp, mu, s, c) + evaluation_fn(b, wp, mu, s, c)) / 2 - 1e-12);
    }

    // The tape version agrees with the scalar one.
    const Eigen::MatrixXd s = random_spd(3, rng);
    const Eigen::VectorXd mu = random_matrix(3, 1, rng), wp = random_matrix(3, 1, rng), w = random_matrix(3, 1, rng);
    CHECK(evaluation_fn(constant(Eigen::MatrixXd(w)), wp, mu, s, c).item() ==
          Catch::Approx(evaluation_fn(w, wp, mu, s, c)).epsilon(1e-14));
}

TEST_CASE("target value", "[trainer]") {
    TrainConfig c;
    const Eigen::Vector3d wp(0.2, -0.5, 0.1);
    CHECK(target_value(Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity(), wp, c) ==
          Catch::Approx(-0.5 * c.lambda2 * 0.8).epsilon(1e-15));

    // Sigma = I, lambda3 = 1: w_opt = mu.
    const Eigen::Vector2d mu(0.02, -0.01);
    CHECK(optimal_weights(mu, Eigen::Matrix2d::Identity(), c) == mu);
    const double expected = (0.02 * 0.02 + 0.01 * 0.01) - 0.1 * (0.02 * 0.02 + 0.01 * 0.01) - 0.001 * (0.02 + 0.01);
    CHECK(target_value(mu, Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(), c) ==
          Catch::Approx(expected).epsilon(1e-13));

    Eigen::Matrix2d singular;
    singular << 1, 1, 1, 1;
    CHECK_THROWS_AS(target_value(mu, singular, Eigen::Vector2d::Zero(), c), SingularCovariance);
}

TEST_CASE("target value never beats the best evaluation value", "[trainer]") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> l3(0.05, 5.0);
    for (int trial = 0; trial < 30; ++trial) {
        TrainConfig c;
        c.lambda2 = 0.0;
        c.lambda3 = l3(rng);
        const Eigen::MatrixXd s = random_spd(3, rng);
        const Eigen::VectorXd mu = random_matrix(3, 1, rng, 0.1);
        // max rho = min of (1/2) w' (lambda1 S) w - mu' w, negated.
        const Eigen::MatrixXd a = c.lambda1 * s;
        const auto w_star = testing_support::projected_gradient_qp(a, mu, 100.0);
        const double best = evaluation_fn(w_star, Eigen::VectorXd::Zero(3), mu, s, c);
        CHECK(target_value(mu, s, Eigen::VectorXd::Zero(3), c) <= best + 1e-9);
    }
}

TEST_CASE("objective", "[trainer]") {
    TrainConfig c;
    std::mt19937_64 rng(3);
    const Eigen::MatrixXd s = random_spd(3, rng);
    const Eigen::VectorXd mu = random_matrix(3, 1, rng, 0.1), wp = random_matrix(3, 1, rng);
    CHECK(objective(optimal_weights(mu, s, c), wp, mu, s, c) == Catch::Approx(0.0).margin(1e-30));

    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::VectorXd w = random_matrix(3, 1, rng);
        CHECK(objective(w, wp, mu, s, c) <= 0.0);
        const double gap = target_value(mu, s, wp, c) - evaluation_fn(w, wp, mu, s, c);
        CHECK(objective(w, wp, mu, s, c) == Catch::Approx(-gap * gap).epsilon(1e-14));
    }

    // d theta / d w by central differences, away from the turnover kinks.
    for (int trial = 0; trial < 10; ++trial) {
        const Eigen::MatrixXd w = wp + random_matrix(3, 1, rng).cwiseSign() * 0.5 + random_matrix(3, 1, rng, 0.1);
        const double gamma = target_value(mu, s, wp, c);
        const auto res = testing_support::check_gradients({Tensor({3, 1}, Eigen::VectorXd(w))}, [&](const auto& x) {
            const Var g = add_scalar(neg(evaluation_fn(x[0], wp, mu, s, c)), gamma);
            return neg(mul(g, g));
        });
        CHECK(res.worst() < 1e-5);
    }
}

TEST_CASE("replay buffer", "[trainer]") {
    ReplayBuffer full(std::size_t{1} << 14);
    for (int i = 0; i < 1080; ++i) full.push({i, {}, {}, 0.0, {}});
    CHECK(full.size() == 1080);

    ReplayBuffer small(4);
    for (int i = 0; i < 6; ++i) small.push({i, {}, {}, 0.0, {}});
    REQUIRE(small.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(small[static_cast<std::size_t>(i)].period == i + 2);

    std::mt19937_64 rng(4);
    auto idx = small.sample_indices(3, rng);
    std::sort(idx.begin(), idx.end());
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());
    CHECK(small.sample_indices(10, rng).size() == 4);
    CHECK_THROWS_AS(ReplayBuffer(0), std::invalid_argument);
}

TEST_CASE("minibatch gradient is the mean of per-sample gradients", "[trainer]") {
    const auto env = small_env();
    const BlPolicy policy(testing_support::toy_policy_config());
    const auto params = warm_params(policy, 5);
    Trainer<BlPolicy> trainer(env, policy, quick(128));
    trainer.run(params);
    REQUIRE(trainer.buffer().size() == 256);

    std::vector<std::size_t> idx{3, 17, 40, 41, 100, 200, 255};
    const auto batch = trainer.minibatch_gradient(params, idx);
    std::vector<Eigen::VectorXd> acc;
    for (std::size_t i : idx) {
        const auto g = trainer.minibatch_gradient(params, {i});
        if (acc.empty()) acc = g;
        else
            for (std::size_t k = 0; k < g.size(); ++k) acc[k] += g[k];
    }
    for (std::size_t k = 0; k < acc.size(); ++k) {
        acc[k] /= static_cast<double>(idx.size());
        CHECK((batch[k] - acc[k]).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + acc[k].cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("stage bookkeeping", "[trainer]") {
    const auto env = small_env();
    const BlPolicy policy(testing_support::toy_policy_config());
    const auto p0 = warm_params(policy, 6);

    const auto none = train(env, policy, p0, quick(0));
    CHECK(none.trace.stages.empty());
    CHECK(none.params == p0);

    const auto one = train(env, policy, p0, quick(256));
    REQUIRE(one.trace.stages.size() == 1);
    CHECK(one.trace.stages[0].updates == 2);
    CHECK(one.trace.stages[0].steps == 256);
    CHECK_FALSE(one.params == p0);

    auto cfg = quick(2048);
    cfg.target_step = 1080;
    const auto two = train(env, policy, p0, cfg);
    REQUIRE(two.trace.stages.size() == 2);
    for (const auto& s : two.trace.stages) {
        CHECK(s.updates == 8);
        CHECK(s.op <= 0.0);
        CHECK(s.mean_abs_gap >= 0.0);
    }

    auto bad = quick(10);
    bad.lambda3 = 0.0;
    CHECK_THROWS_AS(train(env, policy, p0, bad), std::invalid_argument);
    auto wrong_window = testing_support::toy_policy_config();
    wrong_window.periods_per_window = 3;
    const BlPolicy other(wrong_window);
    CHECK_THROWS_AS(train(env, other, other.init(0), quick(10)), ShapeMismatch);
}

TEST_CASE("training is deterministic", "[trainer]") {
    const auto env = small_env();
    const BlPolicy policy(testing_support::toy_policy_config());
    const auto p0 = warm_params(policy, 7);
    const auto a = train(env, policy, p0, quick(512));
    const auto b = train(env, policy, p0, quick(512));
    CHECK(a.params == b.params);
    std::ostringstream ta, tb;
    write_trace_csv(ta, a.trace);
    write_trace_csv(tb, b.trace);
    CHECK(ta.str() == tb.str());
    CHECK(ta.str().rfind("# variant=BDA\nstage,steps,OP,EF,AR_tr,ARD_tr\n", 0) == 0);
}

TEST_CASE("maximizing rho moves the parameters differently", "[trainer]") {
    const auto env = small_env();
    const BlPolicy policy(testing_support::toy_policy_config());
    const auto p0 = warm_params(policy, 8);
    const auto tv = train(env, policy, p0, quick(128));
    const auto mr = maximize_rho_train(env, policy, p0, quick(128));
    CHECK(mr.trace.variant == "BDA-V3");
    CHECK(mr.trace.stages.size() == tv.trace.stages.size());
    double diff = 0.0;
    for (std::size_t k = 0; k < p0.entries().size(); ++k) {
        const auto d1 = tv.params.entries()[k].value.data - p0.entries()[k].value.data;
        const auto d2 = mr.params.entries()[k].value.data - p0.entries()[k].value.data;
        diff = std::max(diff, (d1 - d2).cwiseAbs().maxCoeff());
    }
    CHECK(diff > 0.0);
}

TEST_CASE("maximizing rho finds the scalar mean-variance optimum", "[trainer]") {
    // Every period repeats the same five returns, so mu and S are the same for every transition.
    Eigen::MatrixXd pattern(5, 1);
    pattern << 0.01, -0.005, 0.01, -0.005, 0.01;
    const TrainingEnvironment env(periodic_market(pattern, 60), 2, 5, CostSchedule{});
    const ScalarPolicy policy;
    TrainConfig cfg;
    cfg.lambda1 = 100.0;
    cfg.lambda2 = 0.0;
    cfg.learning_rate = 100.0;
    cfg.total_steps = 128 * 40;
    cfg.target_step = 256;

    const auto mom = realized_moments(env.state(5, Eigen::VectorXd::Zero(1)), 5);
    const double w_star = mom.mean(0) / (cfg.lambda1 * mom.cov(0, 0));
    REQUIRE(w_star > 0.3);
    REQUIRE(w_star < 1.0);

    const auto res = maximize_rho_train(env, policy, policy.init(0), cfg);
    const double phi = res.params.value("phi").data(0);
    CHECK(std::abs(phi / w_star - 1.0) < 0.05);
}
