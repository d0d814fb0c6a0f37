#pragma once

// Dense float64 tensors and a dynamic reverse-mode tape.
//
// Every Var owns a Node holding its value, a lazily allocated gradient and the
// closure that pushes its gradient into its parents. The graph is rebuilt on every
// forward pass; backward() walks it once in reverse topological order and then drops
// the closures so intermediate buffers can be released.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bltrader/errors.hpp"

namespace bltrader::gradnet {

using Shape = std::vector<int>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline std::int64_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

/// Row-major dense tensor.
struct Tensor {
    Shape shape;
    Eigen::VectorXd data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(Eigen::VectorXd::Zero(numel(shape))) {}
    Tensor(Shape s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != numel(shape)) throw ShapeMismatch("Tensor: data size does not match shape " + to_string(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor scalar(double v) {
        Tensor t({1, 1});
        t.data(0) = v;
        return t;
    }
    /// Copies an Eigen matrix (any storage order) into a rank-2 tensor.
    template <typename Derived>
    static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
        Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
        t.matrix() = m;
        return t;
    }

    std::int64_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int rows() const { return shape.at(0); }
    int cols() const { return shape.at(1); }

    MatrixMap matrix() {
        require_rank2();
        return MatrixMap(data.data(), shape[0], shape[1]);
    }
    ConstMatrixMap matrix() const {
        require_rank2();
        return ConstMatrixMap(data.data(), shape[0], shape[1]);
    }
    double item() const {
        if (data.size() != 1) throw NotScalar("item() on tensor of shape " + to_string(shape));
        return data(0);
    }

    bool operator==(const Tensor& o) const { return shape == o.shape && data == o.data; }

private:
    void require_rank2() const {
        if (shape.size() != 2) throw ShapeMismatch("expected rank-2 tensor, got " + to_string(shape));
    }
};

struct Node {
    Tensor value;
    Eigen::VectorXd grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Eigen::VectorXd& ensure_grad() {
        if (grad.size() != value.data.size()) grad = Eigen::VectorXd::Zero(value.data.size());
        return grad;
    }
    bool is_leaf() const { return !backward_fn; }
};

/// Handle to a node on the tape.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    double item() const { return node_->value.item(); }
    bool requires_grad() const { return node_->requires_grad; }

    /// Gradient as a tensor (zeros if nothing was accumulated).
    Tensor grad() const {
        if (node_->grad.size() == 0) return Tensor::zeros(shape());
        return Tensor(shape(), node_->grad);
    }
    void zero_grad() { node_->grad.resize(0); }

    const std::shared_ptr<Node>& node() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    std::shared_ptr<Node> node_;
};

/// Trainable leaf.
inline Var leaf(Tensor t, bool requires_grad = true) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
}

/// Leaf that never receives a gradient.
inline Var constant(Tensor t) { return leaf(std::move(t), false); }

template <typename Derived>
inline Var constant(const Eigen::MatrixBase<Derived>& m) {
    return constant(Tensor::from_matrix(m));
}

namespace detail {

/// Creates an interior node. `fn` is only attached when some parent needs a gradient.
inline Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    for (const auto& v : inputs) {
        if (v.requires_grad()) n->requires_grad = true;
        n->parents.push_back(v.node());
    }
    if (n->requires_grad) n->backward_fn = std::move(fn);
    else n->parents.clear();
    return Var(std::move(n));
}

/// Gradient slot of parent i, or nullptr when that parent is constant.
inline Eigen::VectorXd* parent_grad(Node& self, size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace detail

/// Reverse-mode sweep from a scalar objective. Leaf gradients accumulate additively
/// across calls; interior closures are released afterwards.
inline void backward(const Var& objective) {
    if (objective.value().size() != 1)
        throw NotScalar("backward() needs a scalar objective, got shape " + to_string(objective.shape()));
    if (!objective.requires_grad()) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack{{objective.node().get(), 0}};
    visited.insert(objective.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    objective.node()->ensure_grad()(0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
    }
    for (Node* n : order) {
        if (!n->is_leaf()) {
            n->backward_fn = nullptr;
            n->parents.clear();
            n->grad.resize(0);
        }
    }
}

}  // namespace bltrader::gradnet
