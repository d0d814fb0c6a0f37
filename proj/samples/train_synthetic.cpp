// Trains a small agent on a synthetic market and backtests it against CRP.

#include <iostream>

#include "bltrader/bltrader.hpp"

int main() {
    using namespace bltrader;
    SyntheticMarket market;
    market.num_assets = 5;
    market.num_days = 1200;
    market.daily_drift = 0.003;
    market.daily_vol = 0.003;
    market.correlation = 0.0;
    const auto all = geometric_random_walk(market);
    const auto train_panel = slice_rows(all, 0, 900);
    const auto test_panel = slice_rows(all, 900 - 51, 300 + 51);

    PolicyConfig pc;
    pc.transformer.depth = 2;
    pc.transformer.model_dim = market.num_assets;
    pc.transformer.head_hidden = 64;
    pc.periods_per_window = 10;
    const BlPolicy policy(pc);

    TrainConfig tc;
    tc.total_steps = 4096;
    tc.learning_rate = 20.0;
    tc.lambda3 = 50.0;
    tc.seed = 7;

    const TrainingEnvironment env(train_panel, pc.periods_per_window, pc.days_per_period, CostSchedule{});
    const auto result = train(env, policy, policy.init(tc.seed), tc);
    write_trace_csv(std::cout, result.trace);

    BacktestConfig bc;
    bc.periods_per_window = pc.periods_per_window;
    PolicyStrategy agent(policy, result.params);
    Crp crp;
    for (Strategy* s : {static_cast<Strategy*>(&agent), static_cast<Strategy*>(&crp)}) {
        const auto r = run_backtest(*s, test_panel, bc);
        std::cout << report_json(r).dump() << "\n";
    }
}
