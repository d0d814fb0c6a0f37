#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace bltrader;
using namespace bltrader::bl;
using testing_support::random_matrix;
using testing_support::random_spd;

namespace {

HistoricalMoments moments_of(const Eigen::MatrixXd& cov) {
    HistoricalMoments m;
    m.cov = cov;
    m.sample_mean = Eigen::VectorXd::Zero(cov.rows());
    return m;
}

// Precision form: A = (tS)^-1 + P' O^-1 P, mean = A^-1 [(tS)^-1 Pi + P' O^-1 Q], cov = S + A^-1.
Posterior precision_form(const Eigen::MatrixXd& s, const ViewSet& v, const Eigen::VectorXd& prior) {
    const Eigen::MatrixXd ts_inv = (v.tau * s).inverse();
    const Eigen::MatrixXd o_inv = v.omega_diag.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd a = ts_inv + v.pick.transpose() * o_inv * v.pick;
    const Eigen::MatrixXd a_inv = a.inverse();
    return {a_inv * (ts_inv * prior + v.pick.transpose() * o_inv * v.view_means), s + a_inv};
}

}  // namespace

TEST_CASE("historical covariance uses the printed divisor", "[blmodel]") {
    std::mt19937_64 rng(1);
    const Eigen::MatrixXd h = random_matrix(20, 3, rng, 0.01);
    const auto m = historical_cov(h, {0.0, 0.0});
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (int r = 0; r < 20; ++r) mean += h.row(r).transpose() / 20.0;
    Eigen::Matrix3d brute = Eigen::Matrix3d::Zero();
    for (int r = 0; r < 20; ++r) {
        const Eigen::Vector3d d = h.row(r).transpose() - mean;
        brute += d * d.transpose();
    }
    brute /= (20 - 3 - 1);
    CHECK((m.cov - brute).cwiseAbs().maxCoeff() < 1e-18);
    CHECK((m.sample_mean - mean).cwiseAbs().maxCoeff() < 1e-18);
    CHECK(m.cov == m.cov.transpose());

    // m = 50, n = 29: divisor 220.
    const Eigen::MatrixXd big = random_matrix(250, 29, rng);
    const Eigen::MatrixXd c = big.rowwise() - big.colwise().mean();
    const Eigen::MatrixXd expected = c.transpose() * c / 220.0;
    CHECK((historical_cov(big, {0.0, 0.0}).cov - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("degenerate history gives the ridge only", "[blmodel]") {
    Eigen::MatrixXd h(6, 2);
    h.rowwise() = Eigen::RowVector2d(0.01, -0.02);
    const auto m = historical_cov(h);
    CHECK(m.cov.isDiagonal());
    CHECK(m.cov(0, 0) == Catch::Approx(1e-16).epsilon(1e-12));  // 1e-8 * max(0, 1e-8)
    CHECK_NOTHROW(SpdFactor(m.cov));

    std::mt19937_64 rng(2);
    const Eigen::MatrixXd h2 = random_matrix(30, 4, rng);
    const auto raw = historical_cov(h2, {0.0, 0.0}).cov;
    const auto ridged = historical_cov(h2).cov;
    CHECK(((ridged - raw).diagonal().array() - 1e-8 * raw.trace() / 4).abs().maxCoeff() < 1e-15 * raw.maxCoeff());
    CHECK_THROWS_AS(historical_cov(random_matrix(5, 4, rng)), TooFewSamples);
}

TEST_CASE("prior mean inverts the mean-variance solution", "[blmodel]") {
    CHECK(prior_mean(Eigen::Matrix4d::Identity(), 0.25).isApprox(Eigen::Vector4d::Ones(), 1e-15));
    CHECK(prior_mean(Eigen::Matrix4d::Identity(), 1e300).cwiseAbs().maxCoeff() < 1e-299);
    CHECK_THROWS_AS(prior_mean(Eigen::Matrix2d::Identity(), 0.0), std::invalid_argument);

    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::MatrixXd s = random_spd(3, rng);
        const auto w = closed_form_weights({prior_mean(s, 0.5), s}, 0.5);
        CHECK((w.risk_weights - Eigen::Vector3d::Constant(1.0 / 3.0)).cwiseAbs().maxCoeff() < 1e-10);
        CHECK(w.cash_weight == Catch::Approx(0.0).margin(1e-10));
    }
}

TEST_CASE("posterior matches the precision form", "[blmodel]") {
    std::mt19937_64 rng(4);
    for (int n = 2; n <= 6; ++n) {
        const Eigen::MatrixXd s = random_spd(n, rng, 1e-4, 4e-4);
        const Eigen::VectorXd prior = random_matrix(n, 1, rng, 1e-3);
        const Eigen::VectorXd q = random_matrix(n, 1, rng, 1e-3);
        for (double tau : {0.05, 1.0, 3.0}) {
            const auto views = absolute_views(q, s, tau);
            const auto post = posterior(moments_of(s), views, prior);
            const auto oracle = precision_form(s, views, prior);
            CHECK((post.mean - oracle.mean).cwiseAbs().maxCoeff() < 1e-12);
            CHECK((post.cov - oracle.cov).cwiseAbs().maxCoeff() < 1e-14);
            // Sigma^V - Sigma^h is PSD.
            CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(post.cov - s).eigenvalues().minCoeff() > -1e-10);
        }
    }
}

TEST_CASE("posterior degenerate cases", "[blmodel]") {
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd s = random_spd(4, rng, 1e-4, 4e-4);
    const Eigen::VectorXd prior = prior_mean(s, 0.7);

    // Agreeing views fix the mean.
    const auto same = posterior(moments_of(s), absolute_views(prior, s), prior);
    CHECK((same.mean - prior).cwiseAbs().maxCoeff() < 1e-12 * prior.cwiseAbs().maxCoeff() + 1e-300);

    // Worthless views.
    auto weak = absolute_views(random_matrix(4, 1, rng, 1e-2), s);
    weak.omega_diag *= 1e12;
    CHECK((posterior(moments_of(s), weak, prior).mean - prior).norm() <= 1e-6 * prior.norm());

    // Diagonal covariance, tau = 1: each asset is an independent 1-D update.
    const Eigen::Vector4d d(1e-4, 2e-4, 5e-4, 3e-5);
    const Eigen::MatrixXd sd = d.asDiagonal();
    const Eigen::Vector4d q(0.01, -0.02, 0.0, 0.003);
    const auto post = posterior(moments_of(sd), absolute_views(q, sd, 1.0), prior_mean(sd, 0.4));
    const Eigen::VectorXd half = (prior_mean(sd, 0.4) + q) / 2.0;
    CHECK((post.mean - half).cwiseAbs().maxCoeff() < 1e-10);

    // Interpolation: each component lies between the prior and the view.
    const Eigen::VectorXd pd = prior_mean(sd, 0.4);
    for (double tau : {0.1, 0.5, 2.0}) {
        const auto p = posterior(moments_of(sd), absolute_views(q, sd, tau), pd);
        for (int i = 0; i < 4; ++i) {
            CHECK(p.mean(i) >= std::min(pd(i), q(i)) - 1e-15);
            CHECK(p.mean(i) <= std::max(pd(i), q(i)) + 1e-15);
        }
    }
}

TEST_CASE("posterior input errors", "[blmodel]") {
    const Eigen::Matrix2d s = Eigen::Matrix2d::Identity();
    auto v = absolute_views(Eigen::Vector2d::Zero(), s);
    v.omega_diag(0) = 0.0;
    CHECK_THROWS_AS(posterior(moments_of(s), v, Eigen::Vector2d::Zero()), SingularCovariance);
    CHECK_THROWS_AS(absolute_views(Eigen::Vector3d::Zero(), s), ShapeMismatch);
    CHECK_THROWS_AS(absolute_views(Eigen::Vector2d::Zero(), s, 0.0), std::invalid_argument);
    Eigen::Matrix2d singular;
    singular << 1, 1, 1, 1;
    CHECK_THROWS_AS(closed_form_weights({Eigen::Vector2d::Ones(), singular}, 1.0), SingularCovariance);
}

TEST_CASE("closed form weights", "[blmodel]") {
    const auto zero = closed_form_weights({Eigen::Vector3d::Zero(), Eigen::Matrix3d::Identity()}, 2.0);
    CHECK(zero.risk_weights.isZero());
    CHECK(zero.cash_weight == 1.0);

    const auto id = closed_form_weights({Eigen::Vector2d(0.1, -0.2), Eigen::Matrix2d::Identity()}, 1.0);
    CHECK(id.risk_weights.isApprox(Eigen::Vector2d(0.1, -0.2), 1e-15));
    CHECK(id.cash_weight == Catch::Approx(1.1).epsilon(1e-15));

    std::mt19937_64 rng(6);
    const Eigen::MatrixXd s = random_spd(5, rng);
    const Eigen::VectorXd mu = random_matrix(5, 1, rng);
    const auto w1 = closed_form_weights({mu, s}, 0.8).risk_weights;
    const auto w2 = closed_form_weights({mu, s}, 1.6).risk_weights;
    CHECK((w2 - 2.0 * w1).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("closed form matches the iterative minimizer", "[blmodel]") {
    std::mt19937_64 rng(7);
    const Eigen::MatrixXd s = random_spd(5, rng);
    const Eigen::VectorXd mu = random_matrix(5, 1, rng);
    const double delta = 0.6;
    const auto w = closed_form_weights({mu, s}, delta).risk_weights;
    const auto oracle = testing_support::projected_gradient_qp(s, delta * mu, 10.0 * w.cwiseAbs().maxCoeff() + 1.0);
    CHECK((w - oracle).cwiseAbs().maxCoeff() < 1e-6);

    // No random direction of size 1e-3 lowers the objective.
    const double f0 = mean_variance_objective(w, s, mu, delta);
    for (int k = 0; k < 100; ++k) {
        Eigen::VectorXd d = random_matrix(5, 1, rng);
        d *= 1e-3 / d.norm();
        CHECK(mean_variance_objective(w + d, s, mu, delta) >= f0);
    }
}
