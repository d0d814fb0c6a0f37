// Black-Litterman weights for a three-asset toy market with one bullish view per asset.

#include <iostream>

#include "bltrader/blmodel.hpp"

int main() {
    using namespace bltrader;
    Eigen::MatrixXd history(40, 3);
    for (int r = 0; r < 40; ++r) {
        const double f = std::sin(0.7 * r);
        history.row(r) << 0.010 * f + 0.002 * std::cos(1.3 * r), 0.008 * f - 0.004 * std::sin(2.1 * r),
            -0.006 * f + 0.005 * std::cos(0.4 * r);
    }

    const double delta = 2.5;
    const auto moments = bl::historical_cov(history);
    const Eigen::VectorXd prior = bl::prior_mean(moments.cov, delta);
    const Eigen::VectorXd q = (Eigen::VectorXd(3) << 0.002, -0.001, 0.0005).finished();
    const auto post = bl::posterior(moments, bl::absolute_views(q, moments.cov), prior);
    const auto w = bl::closed_form_weights(post, delta);

    std::cout << "prior Pi:      " << prior.transpose() << "\n"
              << "views Q:       " << q.transpose() << "\n"
              << "posterior mu:  " << post.mean.transpose() << "\n"
              << "risk weights:  " << w.risk_weights.transpose() << "\n"
              << "cash weight:   " << w.cash_weight << "\n";
}
