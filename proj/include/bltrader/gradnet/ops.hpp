#pragma once

// Differentiable primitives. Every function builds a node whose closure adds the
// vector-Jacobian product into the gradients of its parents.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "bltrader/gradnet/tensor.hpp"

namespace bltrader::gradnet {

namespace detail {

inline void require(bool ok, const std::string& what) {
    if (!ok) throw ShapeMismatch(what);
}

inline void require_rank2(const Var& v, const char* op) {
    require(v.shape().size() == 2, std::string(op) + ": expected rank-2 operand, got " + to_string(v.shape()));
}

/// Index map for a binary op where `b` may broadcast: identical shapes, a single
/// element, or rank-2 row/column broadcasting (each dim equal or 1).
struct Broadcast {
    Shape out;
    std::vector<Eigen::Index> a_index;
    std::vector<Eigen::Index> b_index;
};

inline Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
    Broadcast bc;
    const auto na = numel(a);
    const auto nb = numel(b);
    if (a == b) {
        bc.out = a;
        bc.a_index.resize(static_cast<size_t>(na));
        std::iota(bc.a_index.begin(), bc.a_index.end(), Eigen::Index{0});
        bc.b_index = bc.a_index;
        return bc;
    }
    if (nb == 1 || na == 1) {
        bc.out = nb == 1 ? a : b;
        const auto n = numel(bc.out);
        bc.a_index.resize(static_cast<size_t>(n));
        bc.b_index.resize(static_cast<size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i) {
            bc.a_index[static_cast<size_t>(i)] = na == 1 ? 0 : i;
            bc.b_index[static_cast<size_t>(i)] = nb == 1 ? 0 : i;
        }
        return bc;
    }
    require(a.size() == 2 && b.size() == 2,
            std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    const int rows = std::max(a[0], b[0]);
    const int cols = std::max(a[1], b[1]);
    for (const auto& s : {a, b})
        require((s[0] == rows || s[0] == 1) && (s[1] == cols || s[1] == 1),
                std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    bc.out = {rows, cols};
    bc.a_index.reserve(static_cast<size_t>(rows) * static_cast<size_t>(cols));
    bc.b_index.reserve(static_cast<size_t>(rows) * static_cast<size_t>(cols));
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) {
            bc.a_index.push_back(static_cast<Eigen::Index>(a[0] == 1 ? 0 : i) * a[1] + (a[1] == 1 ? 0 : j));
            bc.b_index.push_back(static_cast<Eigen::Index>(b[0] == 1 ? 0 : i) * b[1] + (b[1] == 1 ? 0 : j));
        }
    return bc;
}

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "add");
    Tensor out(bc.out);
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (size_t i = 0; i < bc.a_index.size(); ++i) out.data(static_cast<Eigen::Index>(i)) = av(bc.a_index[i]) + bv(bc.b_index[i]);
    return detail::make_node(std::move(out), {a, b}, [bc = std::move(bc)](Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (size_t i = 0; i < bc.a_index.size(); ++i) (*ga)(bc.a_index[i]) += self.grad(static_cast<Eigen::Index>(i));
        if (auto* gb = detail::parent_grad(self, 1))
            for (size_t i = 0; i < bc.b_index.size(); ++i) (*gb)(bc.b_index[i]) += self.grad(static_cast<Eigen::Index>(i));
    });
}

inline Var sub(const Var& a, const Var& b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "sub");
    Tensor out(bc.out);
    const auto& av = a.value().data;
    const auto& bv = b.value().data;
    for (size_t i = 0; i < bc.a_index.size(); ++i) out.data(static_cast<Eigen::Index>(i)) = av(bc.a_index[i]) - bv(bc.b_index[i]);
    return detail::make_node(std::move(out), {a, b}, [bc = std::move(bc)](Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (size_t i = 0; i < bc.a_index.size(); ++i) (*ga)(bc.a_index[i]) += self.grad(static_cast<Eigen::Index>(i));
        if (auto* gb = detail::parent_grad(self, 1))
            for (size_t i = 0; i < bc.b_index.size(); ++i) (*gb)(bc.b_index[i]) -= self.grad(static_cast<Eigen::Index>(i));
    });
}

/// Elementwise product (with broadcasting).
inline Var mul(const Var& a, const Var& b) {
    auto bc = detail::broadcast(a.shape(), b.shape(), "mul");
    Tensor out(bc.out);
    const Eigen::VectorXd av = a.value().data;
    const Eigen::VectorXd bv = b.value().data;
    for (size_t i = 0; i < bc.a_index.size(); ++i) out.data(static_cast<Eigen::Index>(i)) = av(bc.a_index[i]) * bv(bc.b_index[i]);
    return detail::make_node(std::move(out), {a, b}, [bc = std::move(bc), av, bv](Node& self) {
        if (auto* ga = detail::parent_grad(self, 0))
            for (size_t i = 0; i < bc.a_index.size(); ++i)
                (*ga)(bc.a_index[i]) += self.grad(static_cast<Eigen::Index>(i)) * bv(bc.b_index[i]);
        if (auto* gb = detail::parent_grad(self, 1))
            for (size_t i = 0; i < bc.b_index.size(); ++i)
                (*gb)(bc.b_index[i]) += self.grad(static_cast<Eigen::Index>(i)) * av(bc.a_index[i]);
    });
}

inline Var scale(const Var& a, double s) {
    Tensor out(a.shape(), a.value().data * s);
    return detail::make_node(std::move(out), {a}, [s](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) *g += s * self.grad;
    });
}

inline Var add_scalar(const Var& a, double s) {
    Tensor out(a.shape(), a.value().data.array() + s);
    return detail::make_node(std::move(out), {a}, [](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) *g += self.grad;
    });
}

inline Var neg(const Var& a) { return scale(a, -1.0); }

inline Var reciprocal(const Var& a) {
    Tensor out(a.shape(), a.value().data.cwiseInverse());
    const Eigen::VectorXd y = out.data;
    return detail::make_node(std::move(out), {a}, [y](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) *g -= (self.grad.array() * y.array().square()).matrix();
    });
}

/// |x| with subgradient 0 at 0.
inline Var abs(const Var& a) {
    Tensor out(a.shape(), a.value().data.cwiseAbs());
    const Eigen::VectorXd sign = a.value().data.unaryExpr([](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
    return detail::make_node(std::move(out), {a}, [sign](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) *g += (self.grad.array() * sign.array()).matrix();
    });
}

inline Var square(const Var& a) { return mul(a, a); }

// ---------------------------------------------------------------------------
// Activations

/// Exact GELU, x * Phi(x).
inline Var gelu(const Var& a) {
    const Eigen::VectorXd x = a.value().data;
    Tensor out(a.shape(), x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2)); }));
    return detail::make_node(std::move(out), {a}, [x](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const double v = x(i);
                const double d = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v);
                (*g)(i) += self.grad(i) * d;
            }
        }
    });
}

/// log(sigmoid(x)), natural log.
inline Var log_sigmoid(const Var& a) {
    const Eigen::VectorXd x = a.value().data;
    Tensor out(a.shape(), x.unaryExpr([](double v) { return -detail::softplus(-v); }));
    return detail::make_node(std::move(out), {a}, [x](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            for (Eigen::Index i = 0; i < x.size(); ++i) (*g)(i) += self.grad(i) * detail::sigmoid(-x(i));
    });
}

inline Var softplus(const Var& a) {
    const Eigen::VectorXd x = a.value().data;
    Tensor out(a.shape(), x.unaryExpr([](double v) { return detail::softplus(v); }));
    return detail::make_node(std::move(out), {a}, [x](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            for (Eigen::Index i = 0; i < x.size(); ++i) (*g)(i) += self.grad(i) * detail::sigmoid(x(i));
    });
}

// ---------------------------------------------------------------------------
// Linear algebra and structure

inline Var matmul(const Var& a, const Var& b) {
    detail::require_rank2(a, "matmul");
    detail::require_rank2(b, "matmul");
    detail::require(a.shape()[1] == b.shape()[0],
                    "matmul: inner dimensions differ " + to_string(a.shape()) + " x " + to_string(b.shape()));
    Tensor out({a.shape()[0], b.shape()[1]});
    out.matrix().noalias() = a.value().matrix() * b.value().matrix();
    return detail::make_node(std::move(out), {a, b}, [](Node& self) {
        const Node& pa = *self.parents[0];
        const Node& pb = *self.parents[1];
        const ConstMatrixMap g(self.grad.data(), self.value.shape[0], self.value.shape[1]);
        if (auto* ga = detail::parent_grad(self, 0))
            MatrixMap(ga->data(), pa.value.shape[0], pa.value.shape[1]).noalias() += g * pb.value.matrix().transpose();
        if (auto* gb = detail::parent_grad(self, 1))
            MatrixMap(gb->data(), pb.value.shape[0], pb.value.shape[1]).noalias() += pa.value.matrix().transpose() * g;
    });
}

inline Var transpose(const Var& a) {
    detail::require_rank2(a, "transpose");
    Tensor out({a.shape()[1], a.shape()[0]});
    out.matrix() = a.value().matrix().transpose();
    return detail::make_node(std::move(out), {a}, [](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            const Node& p = *self.parents[0];
            MatrixMap(g->data(), p.value.shape[0], p.value.shape[1]) +=
                ConstMatrixMap(self.grad.data(), self.value.shape[0], self.value.shape[1]).transpose();
        }
    });
}

inline Var reshape(const Var& a, Shape shape) {
    detail::require(numel(shape) == a.value().size(),
                    "reshape: " + to_string(a.shape()) + " -> " + to_string(shape) + " changes element count");
    Tensor out(std::move(shape), a.value().data);
    return detail::make_node(std::move(out), {a}, [](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) *g += self.grad;
    });
}

/// Stacks rank-2 tensors with equal column counts on top of each other.
inline Var concat_rows(const std::vector<Var>& parts) {
    detail::require(!parts.empty(), "concat_rows: no inputs");
    const int cols = parts.front().shape().at(1);
    int rows = 0;
    for (const auto& p : parts) {
        detail::require_rank2(p, "concat_rows");
        detail::require(p.shape()[1] == cols, "concat_rows: column counts differ");
        rows += p.shape()[0];
    }
    Tensor out({rows, cols});
    std::vector<Eigen::Index> offsets;
    Eigen::Index off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        out.data.segment(off, p.value().size()) = p.value().data;
        off += p.value().size();
    }
    return detail::make_node(std::move(out), parts, [offsets](Node& self) {
        for (size_t i = 0; i < self.parents.size(); ++i)
            if (auto* g = detail::parent_grad(self, i)) *g += self.grad.segment(offsets[i], g->size());
    });
}

inline Var slice_rows(const Var& a, int begin, int count) {
    detail::require_rank2(a, "slice_rows");
    detail::require(begin >= 0 && count >= 0 && begin + count <= a.shape()[0], "slice_rows: range out of bounds");
    const int cols = a.shape()[1];
    Tensor out({count, cols}, a.value().data.segment(static_cast<Eigen::Index>(begin) * cols,
                                                      static_cast<Eigen::Index>(count) * cols));
    return detail::make_node(std::move(out), {a}, [begin, cols](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            g->segment(static_cast<Eigen::Index>(begin) * cols, self.grad.size()) += self.grad;
    });
}

/// Diagonal of a square matrix as an n x 1 column.
inline Var diag(const Var& a) {
    detail::require_rank2(a, "diag");
    detail::require(a.shape()[0] == a.shape()[1], "diag: matrix is not square");
    const int n = a.shape()[0];
    Tensor out({n, 1}, a.value().matrix().diagonal());
    return detail::make_node(std::move(out), {a}, [n](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            for (int i = 0; i < n; ++i) (*g)(static_cast<Eigen::Index>(i) * n + i) += self.grad(i);
    });
}

/// Square matrix with `v` (any vector shape) on the diagonal.
inline Var diag_embed(const Var& v) {
    const auto n = static_cast<int>(v.value().size());
    Tensor out({n, n});
    for (int i = 0; i < n; ++i) out.data(static_cast<Eigen::Index>(i) * n + i) = v.value().data(i);
    return detail::make_node(std::move(out), {v}, [n](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            for (int i = 0; i < n; ++i) (*g)(i) += self.grad(static_cast<Eigen::Index>(i) * n + i);
    });
}

inline Var sum(const Var& a) {
    Tensor out = Tensor::scalar(a.value().data.sum());
    return detail::make_node(std::move(out), {a}, [](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) g->array() += self.grad(0);
    });
}

inline Var mean(const Var& a) {
    const double n = static_cast<double>(a.value().size());
    return scale(sum(a), 1.0 / n);
}

/// Solves sym(A) X = B with a Cholesky factorization; A must be SPD.
/// Gradients: dB = A^-1 dX, dA = -sym(dB X').
inline Var spd_solve(const Var& a, const Var& b) {
    detail::require_rank2(a, "spd_solve");
    detail::require_rank2(b, "spd_solve");
    detail::require(a.shape()[0] == a.shape()[1] && a.shape()[0] == b.shape()[0],
                    "spd_solve: " + to_string(a.shape()) + " cannot solve " + to_string(b.shape()));
    const RowMatrix am = a.value().matrix();
    const Eigen::MatrixXd sym = 0.5 * (am + am.transpose());
    auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(sym);
    if (llt->info() != Eigen::Success) throw SingularCovariance("spd_solve: matrix is not positive definite");
    const Eigen::VectorXd piv = llt->matrixLLT().diagonal().array().square();
    if (piv.size() > 0 && !(piv.minCoeff() > 1e-12 * piv.maxCoeff()))
        throw SingularCovariance("spd_solve: matrix is numerically singular");
    Tensor out(b.shape());
    out.matrix() = llt->solve(Eigen::MatrixXd(b.value().matrix()));
    const Eigen::MatrixXd x = out.matrix();
    return detail::make_node(std::move(out), {a, b}, [llt, x](Node& self) {
        const Eigen::MatrixXd gx = ConstMatrixMap(self.grad.data(), x.rows(), x.cols());
        const Eigen::MatrixXd gb = llt->solve(gx);
        if (auto* ga = detail::parent_grad(self, 0)) {
            const Eigen::MatrixXd outer = gb * x.transpose();
            MatrixMap(ga->data(), x.rows(), x.rows()) -= 0.5 * (outer + outer.transpose());
        }
        if (auto* g = detail::parent_grad(self, 1)) MatrixMap(g->data(), x.rows(), x.cols()) += gb;
    });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations

inline Var softmax_rows(const Var& a) {
    detail::require_rank2(a, "softmax_rows");
    Tensor out(a.shape());
    auto y = out.matrix();
    const auto x = a.value().matrix();
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mx = x.row(i).maxCoeff();
        y.row(i) = (x.row(i).array() - mx).exp();
        y.row(i) /= y.row(i).sum();
    }
    const RowMatrix yv = y;
    return detail::make_node(std::move(out), {a}, [yv](Node& self) {
        if (auto* g = detail::parent_grad(self, 0)) {
            const ConstMatrixMap gy(self.grad.data(), yv.rows(), yv.cols());
            MatrixMap gx(g->data(), yv.rows(), yv.cols());
            for (Eigen::Index i = 0; i < yv.rows(); ++i) {
                const double dot = gy.row(i).dot(yv.row(i));
                gx.row(i).array() += yv.row(i).array() * (gy.row(i).array() - dot);
            }
        }
    });
}

/// Layer normalization over each row, then per-feature affine gain/bias (1 x c).
inline Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5) {
    detail::require_rank2(x, "layer_norm_rows");
    const int rows = x.shape()[0];
    const int cols = x.shape()[1];
    detail::require(gain.shape() == Shape{1, cols} && bias.shape() == Shape{1, cols},
                    "layer_norm_rows: gain/bias must be 1 x " + std::to_string(cols));
    RowMatrix xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    const auto xm = x.value().matrix();
    for (int i = 0; i < rows; ++i) {
        const double mu = xm.row(i).mean();
        const double var = (xm.row(i).array() - mu).square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = (xm.row(i).array() - mu) * inv_std(i);
    }
    const Eigen::RowVectorXd g = gain.value().matrix().row(0);
    const Eigen::RowVectorXd b = bias.value().matrix().row(0);
    Tensor out({rows, cols});
    out.matrix() = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
    return detail::make_node(std::move(out), {x, gain, bias}, [xhat, inv_std, g](Node& self) {
        const auto rows = xhat.rows();
        const auto cols = xhat.cols();
        const ConstMatrixMap gy(self.grad.data(), rows, cols);
        if (auto* gx = detail::parent_grad(self, 0)) {
            MatrixMap gxm(gx->data(), rows, cols);
            for (Eigen::Index i = 0; i < rows; ++i) {
                const Eigen::RowVectorXd dxhat = gy.row(i).cwiseProduct(g);
                const double s1 = dxhat.sum();
                const double s2 = dxhat.dot(xhat.row(i));
                gxm.row(i).array() += inv_std(i) / static_cast<double>(cols) *
                                      (static_cast<double>(cols) * dxhat.array() - s1 - xhat.row(i).array() * s2);
            }
        }
        if (auto* gg = detail::parent_grad(self, 1))
            *gg += (gy.array() * xhat.array()).colwise().sum().transpose().matrix();
        if (auto* gb = detail::parent_grad(self, 2)) *gb += gy.colwise().sum().transpose();
    });
}

// ---------------------------------------------------------------------------
// Convolution and pooling on [channels, height, width] tensors

/// Stride-1 2-D cross-correlation with symmetric zero padding.
/// x: [Cin, H, W], w: [Cout, Cin, KH, KW], b: [Cout].
inline Var conv2d(const Var& x, const Var& w, const Var& b, int pad) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    detail::require(xs.size() == 3 && ws.size() == 4 && ws[1] == xs[0],
                    "conv2d: input " + to_string(xs) + " incompatible with kernel " + to_string(ws));
    detail::require(b.value().size() == ws[0], "conv2d: bias size must equal output channels");
    const int cin = xs[0], h = xs[1], wd = xs[2];
    const int cout = ws[0], kh = ws[2], kw = ws[3];
    const int oh = h + 2 * pad - kh + 1;
    const int ow = wd + 2 * pad - kw + 1;
    detail::require(oh > 0 && ow > 0, "conv2d: kernel larger than padded input");

    const Eigen::VectorXd& xv = x.value().data;
    const Eigen::VectorXd& wv = w.value().data;
    const Eigen::VectorXd& bv = b.value().data;
    auto xi = [=](int c, int r, int q) { return (static_cast<Eigen::Index>(c) * h + r) * wd + q; };
    auto wi = [=](int o, int c, int r, int q) { return ((static_cast<Eigen::Index>(o) * cin + c) * kh + r) * kw + q; };
    auto oi = [=](int o, int r, int q) { return (static_cast<Eigen::Index>(o) * oh + r) * ow + q; };

    Tensor out({cout, oh, ow});
    for (int o = 0; o < cout; ++o)
        for (int r = 0; r < oh; ++r)
            for (int q = 0; q < ow; ++q) {
                double acc = bv(o);
                for (int c = 0; c < cin; ++c)
                    for (int u = 0; u < kh; ++u) {
                        const int ir = r + u - pad;
                        if (ir < 0 || ir >= h) continue;
                        for (int v = 0; v < kw; ++v) {
                            const int iq = q + v - pad;
                            if (iq < 0 || iq >= wd) continue;
                            acc += wv(wi(o, c, u, v)) * xv(xi(c, ir, iq));
                        }
                    }
                out.data(oi(o, r, q)) = acc;
            }

    return detail::make_node(std::move(out), {x, w, b}, [=](Node& self) {
        const Eigen::VectorXd& xval = self.parents[0]->value.data;
        const Eigen::VectorXd& wval = self.parents[1]->value.data;
        auto* gx = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        auto* gb = detail::parent_grad(self, 2);
        for (int o = 0; o < cout; ++o)
            for (int r = 0; r < oh; ++r)
                for (int q = 0; q < ow; ++q) {
                    const double go = self.grad(oi(o, r, q));
                    if (go == 0.0) continue;
                    if (gb) (*gb)(o) += go;
                    for (int c = 0; c < cin; ++c)
                        for (int u = 0; u < kh; ++u) {
                            const int ir = r + u - pad;
                            if (ir < 0 || ir >= h) continue;
                            for (int v = 0; v < kw; ++v) {
                                const int iq = q + v - pad;
                                if (iq < 0 || iq >= wd) continue;
                                if (gw) (*gw)(wi(o, c, u, v)) += go * xval(xi(c, ir, iq));
                                if (gx) (*gx)(xi(c, ir, iq)) += go * wval(wi(o, c, u, v));
                            }
                        }
                }
    });
}

/// Non-overlapping max pooling on [C, H, W]; partial edge windows are kept
/// (output size ceil(H / k) x ceil(W / k)). Ties resolve to the first maximum.
inline Var max_pool2d(const Var& x, int k) {
    const auto& xs = x.shape();
    detail::require(xs.size() == 3 && k >= 1, "max_pool2d: expected [C, H, W] input");
    const int c = xs[0], h = xs[1], w = xs[2];
    const int oh = (h + k - 1) / k;
    const int ow = (w + k - 1) / k;
    Tensor out({c, oh, ow});
    std::vector<Eigen::Index> argmax(static_cast<size_t>(out.size()));
    const Eigen::VectorXd& xv = x.value().data;
    for (int ch = 0; ch < c; ++ch)
        for (int r = 0; r < oh; ++r)
            for (int q = 0; q < ow; ++q) {
                double best = -std::numeric_limits<double>::infinity();
                Eigen::Index best_i = -1;
                for (int u = r * k; u < std::min(h, r * k + k); ++u)
                    for (int v = q * k; v < std::min(w, q * k + k); ++v) {
                        const Eigen::Index idx = (static_cast<Eigen::Index>(ch) * h + u) * w + v;
                        if (xv(idx) > best || best_i < 0) {
                            best = xv(idx);
                            best_i = idx;
                        }
                    }
                const Eigen::Index o = (static_cast<Eigen::Index>(ch) * oh + r) * ow + q;
                out.data(o) = best;
                argmax[static_cast<size_t>(o)] = best_i;
            }
    return detail::make_node(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        if (auto* g = detail::parent_grad(self, 0))
            for (size_t o = 0; o < argmax.size(); ++o) (*g)(argmax[o]) += self.grad(static_cast<Eigen::Index>(o));
    });
}

// ---------------------------------------------------------------------------
// Operator sugar

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator-(const Var& a) { return neg(a); }

/// Names of the registered differentiable primitives.
inline std::vector<std::string> op_set() {
    return {"matmul",      "add",        "sub",       "mul",         "scale",      "add_scalar", "reciprocal",
            "transpose",   "reshape",    "concat_rows", "slice_rows", "softmax_rows", "layer_norm_rows",
            "gelu",        "log_sigmoid", "softplus",  "conv2d",      "max_pool2d", "sum",        "mean",
            "abs",         "spd_solve",  "diag",      "diag_embed"};
}

}  // namespace bltrader::gradnet
