#pragma once

// Shared helpers for the unit and acceptance tests: finite differences and small fixtures.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bltrader/bltrader.hpp"

namespace testing_support {

using bltrader::gradnet::Tensor;
using bltrader::gradnet::Var;

/// Per-tensor relative error ||analytic - numeric||_inf / max(||analytic||_inf, ||numeric||_inf, floor).
struct GradCheck {
    std::vector<double> rel_err;
    double worst() const { return rel_err.empty() ? 0.0 : *std::max_element(rel_err.begin(), rel_err.end()); }
};

inline GradCheck check_gradients(const std::vector<Tensor>& inputs,
                                 const std::function<Var(const std::vector<Var>&)>& f, double h = 1e-5,
                                 double floor = 1e-10) {
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(bltrader::gradnet::leaf(t));
    bltrader::gradnet::backward(f(leaves));

    GradCheck out;
    std::vector<Tensor> probe = inputs;
    for (size_t k = 0; k < inputs.size(); ++k) {
        const Eigen::VectorXd analytic = leaves[k].grad().data;
        Eigen::VectorXd numeric(inputs[k].size());
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            auto eval = [&](double delta) {
                probe[k].data(i) = inputs[k].data(i) + delta;
                std::vector<Var> c;
                for (const auto& t : probe) c.push_back(bltrader::gradnet::constant(t));
                return f(c).item();
            };
            numeric(i) = (eval(h) - eval(-h)) / (2.0 * h);
            probe[k].data(i) = inputs[k].data(i);
        }
        const double scale = std::max({analytic.cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
        out.rel_err.push_back((analytic - numeric).cwiseAbs().maxCoeff() / scale);
    }
    return out;
}

/// Finite-difference check of d f / d params for every tensor of a ParamStore.
/// Errors are per tensor, in store order, with the same normalization as check_gradients.
struct ParamGradCheck {
    std::vector<std::string> names;
    std::vector<double> rel_err;
    std::vector<double> analytic_norm;
    double worst() const { return rel_err.empty() ? 0.0 : *std::max_element(rel_err.begin(), rel_err.end()); }
};

inline ParamGradCheck check_param_gradients(const bltrader::gradnet::ParamStore& store,
                                            const std::function<Var(const bltrader::gradnet::Bindings&)>& f,
                                            double h = 1e-5, double floor = 1e-10) {
    using bltrader::gradnet::Bindings;
    const Bindings b(store, true);
    bltrader::gradnet::backward(f(b));
    const auto analytic = b.gradients();

    ParamGradCheck out;
    auto probe = store;
    for (size_t k = 0; k < store.entries().size(); ++k) {
        const auto& base = store.entries()[k].value;
        auto& slot = probe.entries()[k].value;
        Eigen::VectorXd numeric(base.size());
        for (Eigen::Index i = 0; i < base.size(); ++i) {
            auto eval = [&](double delta) {
                slot.data(i) = base.data(i) + delta;
                return f(Bindings(probe, false)).item();
            };
            numeric(i) = (eval(h) - eval(-h)) / (2.0 * h);
            slot.data(i) = base.data(i);
        }
        const double scale = std::max({analytic[k].cwiseAbs().maxCoeff(), numeric.cwiseAbs().maxCoeff(), floor});
        out.names.push_back(store.entries()[k].name);
        out.rel_err.push_back((analytic[k] - numeric).cwiseAbs().maxCoeff() / scale);
        out.analytic_norm.push_back(analytic[k].cwiseAbs().maxCoeff());
    }
    return out;
}

inline Tensor random_tensor(bltrader::gradnet::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> z(0.0, scale);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data(i) = z(rng);
    return t;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> z(0.0, scale);
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = z(rng);
    return m;
}

/// Random SPD matrix with eigenvalues in [lo, hi].
inline Eigen::MatrixXd random_spd(int n, std::mt19937_64& rng, double lo = 0.5, double hi = 2.0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(random_matrix(n, n, rng));
    const Eigen::MatrixXd q = qr.householderQ();
    std::uniform_real_distribution<double> u(lo, hi);
    Eigen::VectorXd ev(n);
    for (int i = 0; i < n; ++i) ev(i) = u(rng);
    return q * ev.asDiagonal() * q.transpose();
}

/// Minimizes 0.5 w'Aw - b'w over the box |w_i| <= bound by projected gradient descent.
/// Step 1/L with L the largest eigenvalue; stops when an iteration moves less than tol.
inline Eigen::VectorXd projected_gradient_qp(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double bound,
                                             double tol = 1e-13, int max_iter = 1'000'000) {
    const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(a).eigenvalues().maxCoeff();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(b.size());
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd next = (w - (a * w - b) / lmax).cwiseMax(-bound).cwiseMin(bound);
        const double moved = (next - w).cwiseAbs().maxCoeff();
        w = next;
        if (moved < tol) break;
    }
    return w;
}

/// Daily-return-like history with a given row count.
inline Eigen::MatrixXd random_history(int rows, int n, std::mt19937_64& rng, double vol = 0.01) {
    return random_matrix(rows, n, rng, vol);
}

/// Small policy configuration used by gradient and invariance checks.
inline bltrader::PolicyConfig toy_policy_config(int n = 3, int m = 2, int depth = 1, int head = 8) {
    bltrader::PolicyConfig c;
    c.transformer.depth = depth;
    c.transformer.model_dim = n;
    c.transformer.head_hidden = head;
    c.periods_per_window = m;
    c.days_per_period = 5;
    return c;
}

/// Gives every parameter a random value so no tensor sits at a special point (zeros, ones).
inline void randomize(bltrader::gradnet::ParamStore& p, std::mt19937_64& rng, double scale = 0.3) {
    std::normal_distribution<double> z(0.0, scale);
    for (auto& e : p.entries())
        for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data(i) += z(rng);
}

}  // namespace testing_support
