#pragma once

// Black-Litterman pieces on plain Eigen types: historical covariance, the
// equal-weight implied prior, view blending and the unconstrained mean-variance
// closed form. The differentiable version of the same pipeline lives in policy.hpp.

#include <Eigen/Dense>

#include <algorithm>
#include <string>

#include "bltrader/errors.hpp"

namespace bltrader::bl {

/// Ridge added before any factorization: ridge_factor * max(tr(S)/n, ridge_scale_floor) * I.
struct RidgeOptions {
    double ridge_factor = 1e-8;
    double ridge_scale_floor = 1e-8;
};

struct HistoricalMoments {
    Eigen::MatrixXd cov;
    Eigen::VectorXd sample_mean;
};

struct ViewSet {
    Eigen::MatrixXd pick;       // P, v x n
    Eigen::VectorXd view_means; // Q
    double tau = 1.0;
    Eigen::VectorXd omega_diag; // diagonal of Omega
};

struct Posterior {
    Eigen::VectorXd mean;  // mu^V
    Eigen::MatrixXd cov;   // Sigma^V
};

struct MeanVarianceWeights {
    Eigen::VectorXd risk_weights;
    double cash_weight = 1.0;
};

/// Cholesky factorization that refuses matrices whose pivots span more than 1e12.
class SpdFactor {
public:
    explicit SpdFactor(const Eigen::MatrixXd& a, const char* what = "matrix") {
        if (a.rows() != a.cols()) throw ShapeMismatch(std::string(what) + " is not square");
        llt_.compute(0.5 * (a + a.transpose()));
        if (llt_.info() != Eigen::Success)
            throw SingularCovariance(std::string(what) + " is not positive definite");
        const Eigen::VectorXd pivots = llt_.matrixLLT().diagonal().array().square();
        if (pivots.size() > 0 && !(pivots.minCoeff() > 1e-12 * pivots.maxCoeff()))
            throw SingularCovariance(std::string(what) + " is numerically singular");
    }

    template <typename Rhs>
    typename Rhs::PlainObject solve(const Eigen::MatrixBase<Rhs>& b) const {
        return llt_.solve(b);
    }

private:
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline Eigen::MatrixXd ridge_regularize(const Eigen::MatrixXd& cov, const RidgeOptions& opt = {}) {
    const auto n = cov.rows();
    if (n == 0) return cov;
    const double scale = std::max(cov.trace() / static_cast<double>(n), opt.ridge_scale_floor);
    Eigen::MatrixXd out = cov;
    out.diagonal().array() += opt.ridge_factor * scale;
    return out;
}

/// Sample covariance of the rows of `history` with divisor rows - n - 1, then ridged.
inline HistoricalMoments historical_cov(const Eigen::MatrixXd& history, const RidgeOptions& opt = {}) {
    const auto rows = history.rows();
    const auto n = history.cols();
    if (rows <= n + 1)
        throw TooFewSamples("historical_cov: " + std::to_string(rows) + " samples for " + std::to_string(n) +
                            " assets, need more than n + 1");
    HistoricalMoments m;
    m.sample_mean = history.colwise().mean().transpose();
    const Eigen::MatrixXd centered = history.rowwise() - m.sample_mean.transpose();
    Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(rows - n - 1);
    cov = 0.5 * (cov + cov.transpose());
    m.cov = ridge_regularize(cov, opt);
    return m;
}

/// Return vector that makes the equal-weight portfolio optimal: cov * e / (n * delta).
inline Eigen::VectorXd prior_mean(const Eigen::MatrixXd& cov, double delta) {
    if (!(delta > 0.0)) throw std::invalid_argument("prior_mean: delta must be positive");
    const auto n = cov.rows();
    return cov * Eigen::VectorXd::Ones(n) / (static_cast<double>(n) * delta);
}

/// Absolute views on every asset: P = I, Omega = diag(tau * cov).
inline ViewSet absolute_views(const Eigen::VectorXd& q, const Eigen::MatrixXd& cov, double tau = 1.0) {
    if (q.size() != cov.rows()) throw ShapeMismatch("absolute_views: Q size does not match covariance");
    if (!(tau > 0.0)) throw std::invalid_argument("absolute_views: tau must be positive");
    ViewSet v;
    v.pick = Eigen::MatrixXd::Identity(q.size(), q.size());
    v.view_means = q;
    v.tau = tau;
    v.omega_diag = (tau * cov).diagonal();
    return v;
}

/// The prior-independent part of the view blend:
///   mu^V    = Pi + gain (Q - P Pi),        gain = tS P' (P tS P' + Omega)^-1
///   Sigma^V = S + tS - gain P tS,          tS = tau * S
/// Only the SPD view-space matrix P tS P' + Omega is factorized; this is the
/// Woodbury form of the precision-weighted average and never inverts S itself.
struct PosteriorOperator {
    Eigen::MatrixXd pick;
    Eigen::MatrixXd gain;  // n x v
    Eigen::MatrixXd cov;   // Sigma^V
};

inline PosteriorOperator posterior_operator(const HistoricalMoments& moments, const Eigen::MatrixXd& pick, double tau,
                                            const Eigen::VectorXd& omega_diag) {
    const auto n = moments.cov.rows();
    if (pick.cols() != n || omega_diag.size() != pick.rows())
        throw ShapeMismatch("posterior: view dimensions do not match covariance");
    if (!(tau > 0.0)) throw std::invalid_argument("posterior: tau must be positive");
    if (!(omega_diag.array() > 0.0).all()) throw SingularCovariance("posterior: Omega is not invertible");

    const Eigen::MatrixXd tS = tau * moments.cov;
    const Eigen::MatrixXd tSPt = tS * pick.transpose();
    Eigen::MatrixXd m = pick * tSPt;
    m.diagonal() += omega_diag;
    const SpdFactor f(m, "view covariance P tau S P' + Omega");

    PosteriorOperator op;
    op.pick = pick;
    op.gain = f.solve(tSPt.transpose()).transpose();
    op.cov = moments.cov + tS - op.gain * tSPt.transpose();
    op.cov = 0.5 * (op.cov + op.cov.transpose());
    return op;
}

inline Posterior posterior(const HistoricalMoments& moments, const ViewSet& views, const Eigen::VectorXd& prior) {
    if (prior.size() != moments.cov.rows() || views.view_means.size() != views.pick.rows())
        throw ShapeMismatch("posterior: view/prior dimensions do not match covariance");
    const auto op = posterior_operator(moments, views.pick, views.tau, views.omega_diag);
    return {prior + op.gain * (views.view_means - views.pick * prior), op.cov};
}

/// w = delta * (Sigma^V)^-1 mu^V, w0 = 1 - sum(w). No sign or budget constraints.
inline MeanVarianceWeights closed_form_weights(const Posterior& post, double delta) {
    const SpdFactor f(post.cov, "posterior covariance");
    MeanVarianceWeights w;
    w.risk_weights = delta * f.solve(post.mean);
    w.cash_weight = 1.0 - w.risk_weights.sum();
    return w;
}

/// 0.5 w' S w - delta w' mu, the quadratic minimized by closed_form_weights.
inline double mean_variance_objective(const Eigen::VectorXd& w, const Eigen::MatrixXd& cov,
                                      const Eigen::VectorXd& mean, double delta) {
    return 0.5 * w.dot(cov * w) - delta * w.dot(mean);
}

}  // namespace bltrader::bl
