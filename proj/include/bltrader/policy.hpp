#pragma once

// The agent's deterministic policy. A position-free Transformer encoder turns the
// return history into absolute return views, a small CNN turns the same history into
// the risk-aversion scalar, and the Black-Litterman blend plus the unconstrained
// mean-variance solution maps both to target weights. The whole map is built on the
// gradnet tape, so the training objective differentiates through it end to end.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "bltrader/blmodel.hpp"
#include "bltrader/gradnet/gradnet.hpp"
#include "bltrader/marketdata.hpp"

namespace bltrader {

struct TransformerConfig {
    int depth = 6;                     // L
    int model_dim = 29;                // must equal the number of assets
    double attention_scale = 1.0;      // d in softmax(q k' / sqrt(d))
    int mlp_hidden = 0;                // 0 means 4 * model_dim
    int head_hidden = 3712;            // l
    bool positional_encoding = false;  // learnable position embeddings (ablation)
    double layer_norm_eps = 1e-5;

    int mlp_width() const { return mlp_hidden > 0 ? mlp_hidden : 4 * model_dim; }
};

struct CnnConfig {
    int conv1_channels = 8;
    int conv2_channels = 16;
    int fc_hidden = 32;
    double delta_floor = 1e-4;
};

struct PolicyConfig {
    TransformerConfig transformer;
    CnnConfig cnn;
    int periods_per_window = 50;  // m
    int days_per_period = 5;      // K
    double tau = 1.0;
    bool softmax_head = false;    // long-only softmax weights instead of the BL head (ablation)
    bl::RidgeOptions ridge;

    int num_assets() const { return transformer.model_dim; }
    int history_rows() const { return periods_per_window * days_per_period; }

    void validate() const {
        if (transformer.depth < 1) throw std::invalid_argument("transformer depth must be >= 1");
        if (transformer.model_dim < 2) throw std::invalid_argument("model_dim (asset count) must be >= 2");
        if (transformer.head_hidden < 1) throw std::invalid_argument("head_hidden must be >= 1");
        if (!(transformer.attention_scale > 0)) throw std::invalid_argument("attention_scale must be positive");
        if (!(tau > 0)) throw std::invalid_argument("tau must be positive");
        if (periods_per_window < 1 || days_per_period < 1) throw std::invalid_argument("window sizes must be positive");
    }
};

inline void to_json(nlohmann::json& j, const PolicyConfig& c) {
    j = nlohmann::json{
        {"depth", c.transformer.depth},
        {"model_dim", c.transformer.model_dim},
        {"attention_scale", c.transformer.attention_scale},
        {"mlp_hidden", c.transformer.mlp_hidden},
        {"head_hidden", c.transformer.head_hidden},
        {"positional_encoding", c.transformer.positional_encoding},
        {"layer_norm_eps", c.transformer.layer_norm_eps},
        {"conv1_channels", c.cnn.conv1_channels},
        {"conv2_channels", c.cnn.conv2_channels},
        {"fc_hidden", c.cnn.fc_hidden},
        {"delta_floor", c.cnn.delta_floor},
        {"periods_per_window", c.periods_per_window},
        {"days_per_period", c.days_per_period},
        {"tau", c.tau},
        {"softmax_head", c.softmax_head},
        {"ridge_factor", c.ridge.ridge_factor},
        {"ridge_scale_floor", c.ridge.ridge_scale_floor},
    };
}

inline void from_json(const nlohmann::json& j, PolicyConfig& c) {
    c.transformer.depth = j.at("depth");
    c.transformer.model_dim = j.at("model_dim");
    c.transformer.attention_scale = j.at("attention_scale");
    c.transformer.mlp_hidden = j.at("mlp_hidden");
    c.transformer.head_hidden = j.at("head_hidden");
    c.transformer.positional_encoding = j.at("positional_encoding");
    c.transformer.layer_norm_eps = j.at("layer_norm_eps");
    c.cnn.conv1_channels = j.at("conv1_channels");
    c.cnn.conv2_channels = j.at("conv2_channels");
    c.cnn.fc_hidden = j.at("fc_hidden");
    c.cnn.delta_floor = j.at("delta_floor");
    c.periods_per_window = j.at("periods_per_window");
    c.days_per_period = j.at("days_per_period");
    c.tau = j.at("tau");
    c.softmax_head = j.at("softmax_head");
    c.ridge.ridge_factor = j.at("ridge_factor");
    c.ridge.ridge_scale_floor = j.at("ridge_scale_floor");
}

namespace policy_detail {

inline std::string block(int l) { return "n1.block" + std::to_string(l); }

inline int pooled(int x) { return (((x + 1) / 2) + 1) / 2; }

}  // namespace policy_detail

/// Parameter inventory for the view network (n1.*) and risk-aversion network (n2.*).
inline std::vector<gradnet::ParamSpec> policy_param_specs(const PolicyConfig& cfg) {
    using gradnet::ParamRole;
    cfg.validate();
    const int n = cfg.num_assets();
    const int h = cfg.transformer.mlp_width();
    const int l = cfg.transformer.head_hidden;
    std::vector<gradnet::ParamSpec> specs;
    specs.push_back({"n1.q_pre", {1, n}, ParamRole::Embedding});
    if (cfg.transformer.positional_encoding)
        specs.push_back({"n1.pos", {cfg.history_rows() + 1, n}, ParamRole::Embedding});
    for (int b = 0; b < cfg.transformer.depth; ++b) {
        const auto p = policy_detail::block(b);
        specs.push_back({p + ".ln1.gain", {1, n}, ParamRole::Gain});
        specs.push_back({p + ".ln1.bias", {1, n}, ParamRole::Bias});
        specs.push_back({p + ".attn.wq", {n, n}, ParamRole::Weight});
        specs.push_back({p + ".attn.wk", {n, n}, ParamRole::Weight});
        specs.push_back({p + ".attn.wv", {n, n}, ParamRole::Weight});
        specs.push_back({p + ".ln2.gain", {1, n}, ParamRole::Gain});
        specs.push_back({p + ".ln2.bias", {1, n}, ParamRole::Bias});
        specs.push_back({p + ".mlp.w1", {n, h}, ParamRole::Weight});
        specs.push_back({p + ".mlp.b1", {1, h}, ParamRole::Bias});
        specs.push_back({p + ".mlp.w2", {h, n}, ParamRole::Weight});
        specs.push_back({p + ".mlp.b2", {1, n}, ParamRole::Bias});
    }
    specs.push_back({"n1.head.w1", {n, l}, ParamRole::Weight});
    // Zero start: Q = 0, so an untrained agent holds the BL prior portfolio.
    specs.push_back({"n1.head.w2", {l, n}, ParamRole::Output});

    if (!cfg.softmax_head) {
        const int c1 = cfg.cnn.conv1_channels;
        const int c2 = cfg.cnn.conv2_channels;
        const int flat = c2 * policy_detail::pooled(cfg.history_rows()) * policy_detail::pooled(n);
        specs.push_back({"n2.conv1.w", {c1, 1, 3, 3}, ParamRole::Weight});
        specs.push_back({"n2.conv1.b", {c1}, ParamRole::Bias});
        specs.push_back({"n2.conv2.w", {c2, c1, 3, 3}, ParamRole::Weight});
        specs.push_back({"n2.conv2.b", {c2}, ParamRole::Bias});
        specs.push_back({"n2.fc1.w", {flat, cfg.cnn.fc_hidden}, ParamRole::Weight});
        specs.push_back({"n2.fc1.b", {1, cfg.cnn.fc_hidden}, ParamRole::Bias});
        specs.push_back({"n2.fc2.w", {cfg.cnn.fc_hidden, 1}, ParamRole::Weight});
        specs.push_back({"n2.fc2.b", {1, 1}, ParamRole::Bias});
    }
    return specs;
}

namespace policy_detail {

inline void check_state(const AgentState& s, const PolicyConfig& cfg) {
    if (s.history.rows() != cfg.history_rows() || s.history.cols() != cfg.num_assets())
        throw ShapeMismatch("policy: state history is " + std::to_string(s.history.rows()) + "x" +
                            std::to_string(s.history.cols()) + ", expected " + std::to_string(cfg.history_rows()) +
                            "x" + std::to_string(cfg.num_assets()));
}

/// Encoder output for the prediction token and the head pre-activation y (1 x n).
inline gradnet::Var head_output(const AgentState& state, const gradnet::Bindings& p, const PolicyConfig& cfg) {
    using namespace gradnet;
    check_state(state, cfg);
    const auto& tc = cfg.transformer;

    Var z = concat_rows({p["n1.q_pre"], constant(state.history)});
    if (tc.positional_encoding) z = add(z, p["n1.pos"]);

    const double inv_sqrt_d = 1.0 / std::sqrt(tc.attention_scale);
    for (int b = 0; b < tc.depth; ++b) {
        const auto pre = block(b);
        const Var h = layer_norm_rows(z, p[pre + ".ln1.gain"], p[pre + ".ln1.bias"], tc.layer_norm_eps);
        const Var q = matmul(h, p[pre + ".attn.wq"]);
        const Var k = matmul(h, p[pre + ".attn.wk"]);
        const Var v = matmul(h, p[pre + ".attn.wv"]);
        const Var attn = matmul(softmax_rows(scale(matmul(q, transpose(k)), inv_sqrt_d)), v);
        const Var z_mid = add(attn, z);
        const Var h2 = layer_norm_rows(z_mid, p[pre + ".ln2.gain"], p[pre + ".ln2.bias"], tc.layer_norm_eps);
        const Var mlp = add(matmul(gelu(add(matmul(h2, p[pre + ".mlp.w1"]), p[pre + ".mlp.b1"])), p[pre + ".mlp.w2"]),
                            p[pre + ".mlp.b2"]);
        z = add(mlp, z_mid);
    }
    const Var token = slice_rows(z, 0, 1);
    return matmul(log_sigmoid(matmul(token, p["n1.head.w1"])), p["n1.head.w2"]);
}

}  // namespace policy_detail

/// Views Q (n x 1): head output scaled by each asset's historical variance.
inline gradnet::Var transformer_views(const AgentState& state, const gradnet::Bindings& params,
                                      const PolicyConfig& cfg, const Eigen::VectorXd& variances) {
    using namespace gradnet;
    const Var y = policy_detail::head_output(state, params, cfg);
    if (variances.size() != cfg.num_assets()) throw ShapeMismatch("transformer_views: variance vector size");
    return mul(transpose(y), constant(Eigen::MatrixXd(variances)));
}

inline gradnet::Var transformer_views(const AgentState& state, const gradnet::Bindings& params,
                                      const PolicyConfig& cfg) {
    const auto moments = bl::historical_cov(state.history, cfg.ridge);
    return transformer_views(state, params, cfg, moments.cov.diagonal());
}

/// Risk aversion delta (1 x 1), always >= delta_floor.
inline gradnet::Var cnn_risk_aversion(const AgentState& state, const gradnet::Bindings& p, const PolicyConfig& cfg) {
    using namespace gradnet;
    policy_detail::check_state(state, cfg);
    const int rows = static_cast<int>(state.history.rows());
    const int n = static_cast<int>(state.history.cols());
    Var x = reshape(constant(state.history), {1, rows, n});
    x = max_pool2d(gelu(conv2d(x, p["n2.conv1.w"], p["n2.conv1.b"], 1)), 2);
    x = max_pool2d(gelu(conv2d(x, p["n2.conv2.w"], p["n2.conv2.b"], 1)), 2);
    x = reshape(x, {1, static_cast<int>(x.value().size())});
    x = gelu(add(matmul(x, p["n2.fc1.w"]), p["n2.fc1.b"]));
    x = add(matmul(x, p["n2.fc2.w"]), p["n2.fc2.b"]);
    return add_scalar(softplus(x), cfg.cnn.delta_floor);
}

struct PolicyOutput {
    gradnet::Var weights;  // n x 1
    gradnet::Var views;    // Q, n x 1 (BL head only)
    gradnet::Var delta;    // 1 x 1 (BL head only)
};

/// Differentiable BL stage given views Q (n x 1) and delta (1 x 1) on the tape:
///   Pi = S e / (n delta);  mu^V = Pi + gain (Q - Pi);  w = delta (Sigma^V)^-1 mu^V.
inline gradnet::Var bl_weights(const bl::HistoricalMoments& moments, const gradnet::Var& views,
                               const gradnet::Var& delta, double tau) {
    using namespace gradnet;
    const auto n = moments.cov.rows();
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
    const auto op = bl::posterior_operator(moments, eye, tau, (tau * moments.cov).diagonal());
    const Eigen::MatrixXd prior_unit = moments.cov * Eigen::VectorXd::Ones(n) / static_cast<double>(n);
    const Var prior = mul(constant(prior_unit), reciprocal(delta));
    const Var mu = add(prior, matmul(constant(op.gain), sub(views, prior)));
    return mul(delta, spd_solve(constant(op.cov), mu));
}

inline PolicyOutput policy_forward(const AgentState& state, const gradnet::Bindings& params, const PolicyConfig& cfg) {
    const auto moments = bl::historical_cov(state.history, cfg.ridge);
    PolicyOutput out;
    out.delta = cnn_risk_aversion(state, params, cfg);
    out.views = transformer_views(state, params, cfg, moments.cov.diagonal());
    out.weights = bl_weights(moments, out.views, out.delta, cfg.tau);
    return out;
}

/// Long-only ablation: softmax over the view network's head output.
inline gradnet::Var softmax_policy_forward(const AgentState& state, const gradnet::Bindings& params,
                                           const PolicyConfig& cfg) {
    using namespace gradnet;
    return transpose(softmax_rows(policy_detail::head_output(state, params, cfg)));
}

/// Policy object used by the trainer and the backtester.
class BlPolicy {
public:
    explicit BlPolicy(PolicyConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const PolicyConfig& config() const { return cfg_; }
    int num_assets() const { return cfg_.num_assets(); }
    int history_periods() const { return cfg_.periods_per_window; }

    gradnet::ParamStore init(std::uint64_t seed) const { return gradnet::init_params(policy_param_specs(cfg_), seed); }

    /// Weights (n x 1) on the tape.
    gradnet::Var forward(const AgentState& state, const gradnet::Bindings& params) const {
        if (cfg_.softmax_head) return softmax_policy_forward(state, params, cfg_);
        return policy_forward(state, params, cfg_).weights;
    }

    Eigen::VectorXd act(const AgentState& state, const gradnet::ParamStore& params) const {
        const gradnet::Bindings b(params, false);
        const auto w = forward(state, b);
        return w.value().data;
    }

    std::string metadata() const {
        nlohmann::json j;
        j["kind"] = "bl_policy";
        j["config"] = cfg_;
        return j.dump();
    }

    static BlPolicy from_metadata(const std::string& metadata) {
        const auto j = nlohmann::json::parse(metadata);
        if (j.value("kind", "") != "bl_policy") throw ParseError("checkpoint metadata is not a BL policy config");
        return BlPolicy(j.at("config").get<PolicyConfig>());
    }

private:
    PolicyConfig cfg_;
};

}  // namespace bltrader
