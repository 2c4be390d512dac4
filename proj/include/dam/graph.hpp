#pragma once
// Reverse-mode automatic differentiation on dense matrices.
//
// A Graph is a single-use tape.  Build a forward computation by calling op
// methods (each appends a node and returns its integer id), call backward()
// once on a scalar node, then read gradients.  Parameters registered with an
// external accumulator have their gradients added into that accumulator by
// backward(), so one set of accumulators can collect gradients across many
// graphs (e.g. per-example graphs inside one optimization step).
//
// Nodes created after backward() has run are rejected; a Graph is not
// reusable across iterations — build a fresh one.

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "dam/common.hpp"
#include "dam/rng.hpp"

namespace dam {

// Groups of source-row indices; one output row per group (unweighted mean).
using MergeGroups = std::vector<std::vector<int>>;

// Multiplicative dropout mask: each entry is 0 with probability p, else
// 1/(1-p) so the expected value of (mask .* x) equals x.
template <typename S>
Matrix<S> make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng& rng) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must be in [0, 1)");
    Matrix<S> mask(rows, cols);
    const S keep = static_cast<S>(1.0 / (1.0 - p));
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            mask(r, c) = rng.uniform() < p ? S(0) : keep;
        }
    }
    return mask;
}

template <typename S>
class Graph {
    static_assert(std::is_floating_point_v<S>, "Graph requires a floating-point scalar");

public:
    explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool check_finite() const { return check_finite_; }
    void set_check_finite(bool enabled) { check_finite_ = enabled; }
    std::size_t size() const { return nodes_.size(); }

    // ---- leaves ------------------------------------------------------------

    // Constant input, owned by the graph.
    int input(Matrix<S> v) { return push("input", std::move(v), false, {}); }

    // Constant input referencing caller-owned storage (must outlive the graph).
    int input_ref(const Matrix<S>* v) {
        if (v == nullptr) throw std::invalid_argument("input_ref: null value");
        return push_external("input", v, false, nullptr);
    }

    // Differentiable parameter referencing caller-owned storage.  backward()
    // adds dLoss/dParam into *grad_accum (which must match the value's shape).
    int param(const Matrix<S>* v, Matrix<S>* grad_accum) {
        if (v == nullptr) throw std::invalid_argument("param: null value");
        if (grad_accum != nullptr &&
            (grad_accum->rows() != v->rows() || grad_accum->cols() != v->cols())) {
            throw std::invalid_argument("param: gradient accumulator shape " +
                                        shape_str(*grad_accum) + " does not match value " +
                                        shape_str(*v));
        }
        return push_external("param", v, grad_accum != nullptr, grad_accum);
    }

    // ---- accessors ---------------------------------------------------------

    const Matrix<S>& value(int id) const { return val(check_id(id)); }

    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(check_id(id))].requires_grad; }

    bool has_grad(int id) const {
        return nodes_[static_cast<std::size_t>(check_id(id))].grad_ready;
    }

    const Matrix<S>& grad(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(check_id(id))];
        if (!n.requires_grad) throw std::logic_error("grad: node does not require gradients");
        if (!n.grad_ready) throw std::logic_error("grad: backward has not reached this node");
        return n.grad;
    }

    // ---- ops ---------------------------------------------------------------

    int matmul(int a, int b, bool trans_a = false, bool trans_b = false) {
        const Matrix<S>& A = val(check_id(a));
        const Matrix<S>& B = val(check_id(b));
        const Eigen::Index inner_a = trans_a ? A.rows() : A.cols();
        const Eigen::Index inner_b = trans_b ? B.cols() : B.rows();
        if (inner_a != inner_b) shape_error("matmul", A, B);
        Matrix<S> C;
        if (!trans_a && !trans_b) C = A * B;
        else if (trans_a && !trans_b) C = A.transpose() * B;
        else if (!trans_a && trans_b) C = A * B.transpose();
        else C = A.transpose() * B.transpose();

        std::function<void()> bp;
        if (requires_any(a, b)) {
            bp = [this, a, b, trans_a, trans_b, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                const Matrix<S>& A2 = val(a);
                const Matrix<S>& B2 = val(b);
                if (!trans_a && !trans_b) {
                    add_grad(a, G * B2.transpose());
                    add_grad(b, A2.transpose() * G);
                } else if (trans_a && !trans_b) {
                    add_grad(a, B2 * G.transpose());
                    add_grad(b, A2 * G);
                } else if (!trans_a && trans_b) {
                    add_grad(a, G * B2);
                    add_grad(b, G.transpose() * A2);
                } else {
                    add_grad(a, B2.transpose() * G.transpose());
                    add_grad(b, G.transpose() * A2.transpose());
                }
            };
        }
        return push("matmul", std::move(C), requires_any(a, b), std::move(bp));
    }

    int add(int a, int b) { return add_like("add", a, b, S(1)); }
    int sub(int a, int b) { return add_like("sub", a, b, S(-1)); }

    int scale(int a, S factor) {
        const Matrix<S>& A = val(check_id(a));
        std::function<void()> bp;
        if (requires_any(a)) {
            bp = [this, a, factor, id = next_id()] {
                add_grad(a, factor * nodes_[static_cast<std::size_t>(id)].grad);
            };
        }
        return push("scale", factor * A, requires_any(a), std::move(bp));
    }

    int hadamard(int a, int b) {
        const Matrix<S>& A = val(check_id(a));
        const Matrix<S>& B = val(check_id(b));
        if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error("hadamard", A, B);
        std::function<void()> bp;
        if (requires_any(a, b)) {
            bp = [this, a, b, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(a, G.cwiseProduct(val(b)));
                add_grad(b, G.cwiseProduct(val(a)));
            };
        }
        return push("hadamard", A.cwiseProduct(B), requires_any(a, b), std::move(bp));
    }

    // A (n x m) divided element-wise by a row vector (1 x m) broadcast over
    // rows.  The divisor's gradient is -G .* value / divisor.
    int div_rowvec(int a, int row) {
        const Matrix<S>& A = val(check_id(a));
        const Matrix<S>& R = val(check_id(row));
        if (R.rows() != 1 || R.cols() != A.cols()) shape_error("div_rowvec", A, R);
        Matrix<S> C = (A.array().rowwise() / R.row(0).array()).matrix();
        std::function<void()> bp;
        if (requires_any(a, row)) {
            bp = [this, a, row, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                const Matrix<S>& R2 = val(row);
                add_grad(a, G.array().rowwise() / R2.row(0).array());
                add_grad(row, -((G.cwiseProduct(val(id)).colwise().sum()).array() /
                                R2.row(0).array()));
            };
        }
        return push("div_rowvec", std::move(C), requires_any(a, row), std::move(bp));
    }

    // Sign-preserving clamp away from zero: values in (-eps, eps) snap to
    // +/-eps (exact zero snaps to +eps).  Gradient is 1 outside the clamped
    // band and 0 inside it.
    int clamp_away_from_zero(int x, S eps) {
        if (eps <= S(0)) throw std::invalid_argument("clamp_away_from_zero: eps must be positive");
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y = X.unaryExpr([eps](S v) {
            if (v >= eps || v <= -eps) return v;
            return v < S(0) ? -eps : eps;
        });
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, eps, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                const Matrix<S> pass = val(x).unaryExpr(
                    [eps](S v) { return (v >= eps || v <= -eps) ? S(1) : S(0); });
                add_grad(x, G.cwiseProduct(pass));
            };
        }
        return push("clamp_away_from_zero", std::move(Y), requires_any(x), std::move(bp));
    }

    // A (n x m) plus a row vector (1 x m) broadcast over rows.
    int add_rowvec(int a, int row) {
        const Matrix<S>& A = val(check_id(a));
        const Matrix<S>& R = val(check_id(row));
        if (R.rows() != 1 || R.cols() != A.cols()) shape_error("add_rowvec", A, R);
        Matrix<S> C = A;
        C.rowwise() += R.row(0);
        std::function<void()> bp;
        if (requires_any(a, row)) {
            bp = [this, a, row, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(a, G);
                add_grad(row, G.colwise().sum());
            };
        }
        return push("add_rowvec", std::move(C), requires_any(a, row), std::move(bp));
    }

    // X (n x in) * W (in x out) + bias (1 x out) broadcast over rows.
    int linear(int x, int w, int bias) {
        const Matrix<S>& X = val(check_id(x));
        const Matrix<S>& W = val(check_id(w));
        const Matrix<S>& B = val(check_id(bias));
        if (X.cols() != W.rows()) shape_error("linear", X, W);
        if (B.rows() != 1 || B.cols() != W.cols()) shape_error("linear", W, B);
        Matrix<S> C = X * W;
        C.rowwise() += B.row(0);
        std::function<void()> bp;
        if (requires_any(x, w, bias)) {
            bp = [this, x, w, bias, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(x, G * val(w).transpose());
                add_grad(w, val(x).transpose() * G);
                add_grad(bias, G.colwise().sum());
            };
        }
        return push("linear", std::move(C), requires_any(x, w, bias), std::move(bp));
    }

    // Exact (erf-based) GELU: x * Phi(x).
    int gelu(int x) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y = X.unaryExpr([](S v) {
            constexpr S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
            return static_cast<S>(S(0.5) * v * (S(1) + std::erf(v * inv_sqrt2)));
        });
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                const Matrix<S> D = val(x).unaryExpr([](S v) {
                    constexpr S inv_sqrt2 = S(1) / std::numbers::sqrt2_v<S>;
                    // Gaussian pdf scale: 1/sqrt(2*pi).
                    constexpr S pdf_scale =
                        std::numbers::inv_sqrtpi_v<S> / std::numbers::sqrt2_v<S>;
                    const S phi_cdf = S(0.5) * (S(1) + std::erf(v * inv_sqrt2));
                    const S phi_pdf = pdf_scale * std::exp(S(-0.5) * v * v);
                    return phi_cdf + v * phi_pdf;
                });
                add_grad(x, G.cwiseProduct(D));
            };
        }
        return push("gelu", std::move(Y), requires_any(x), std::move(bp));
    }

    // Row-wise layer normalization over features (columns) with learnable
    // gain/bias (each 1 x m).  Population variance, epsilon inside the sqrt.
    int layernorm(int x, int gain, int bias, S eps = S(1e-5)) {
        const Matrix<S>& X = val(check_id(x));
        const Matrix<S>& Gn = val(check_id(gain));
        const Matrix<S>& Bs = val(check_id(bias));
        if (Gn.rows() != 1 || Gn.cols() != X.cols()) shape_error("layernorm", X, Gn);
        if (Bs.rows() != 1 || Bs.cols() != X.cols()) shape_error("layernorm", X, Bs);
        const Eigen::Index m = X.cols();
        Vector<S> mu = X.rowwise().mean();
        Matrix<S> centered = X;
        centered.colwise() -= mu;
        Vector<S> inv_std =
            (centered.array().square().rowwise().sum() / S(m) + eps).sqrt().inverse().matrix();
        Matrix<S> xhat = (centered.array().colwise() * inv_std.array()).matrix();
        Matrix<S> Y = (xhat.array().rowwise() * Gn.row(0).array()).matrix();
        Y.rowwise() += Bs.row(0);
        std::function<void()> bp;
        if (requires_any(x, gain, bias)) {
            bp = [this, x, gain, bias, xh = std::move(xhat), iv = std::move(inv_std),
                  id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(bias, G.colwise().sum());
                add_grad(gain, G.cwiseProduct(xh).colwise().sum());
                const Matrix<S> ghat = G.array().rowwise() * val(gain).row(0).array();
                const Vector<S> m1 = ghat.rowwise().mean();
                const Vector<S> m2 = ghat.cwiseProduct(xh).rowwise().mean();
                add_grad(x, ((ghat.array().colwise() - m1.array()) -
                             (xh.array().colwise() * m2.array()))
                                    .colwise() *
                                iv.array());
            };
        }
        return push("layernorm", std::move(Y), requires_any(x, gain, bias), std::move(bp));
    }

    // Numerically stable row-wise softmax.
    int softmax_rows(int x) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> P = X;
        for (Eigen::Index r = 0; r < P.rows(); ++r) {
            const S mx = P.row(r).maxCoeff();
            P.row(r) = (P.row(r).array() - mx).exp().matrix();
            P.row(r) /= P.row(r).sum();
        }
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                const Matrix<S>& P2 = val(id);
                const Vector<S> dot = G.cwiseProduct(P2).rowwise().sum();
                add_grad(x, P2.array() * (G.array().colwise() - dot.array()));
            };
        }
        return push("softmax_rows", std::move(P), requires_any(x), std::move(bp));
    }

    // Appends one column of zeros (the "attend to nothing" slot).
    int append_zero_col(int x) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y(X.rows(), X.cols() + 1);
        Y.leftCols(X.cols()) = X;
        Y.col(X.cols()).setZero();
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, m = X.cols(), id = next_id()] {
                add_grad(x, nodes_[static_cast<std::size_t>(id)].grad.leftCols(m));
            };
        }
        return push("append_zero_col", std::move(Y), requires_any(x), std::move(bp));
    }

    int slice_rows(int x, Eigen::Index first, Eigen::Index count) {
        const Matrix<S>& X = val(check_id(x));
        if (first < 0 || count < 1 || first + count > X.rows()) {
            throw std::invalid_argument("slice_rows: range [" + std::to_string(first) + ", " +
                                        std::to_string(first + count) + ") outside " +
                                        shape_str(X));
        }
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, first, count, id = next_id()] {
                Node& parent = nodes_[static_cast<std::size_t>(x)];
                if (!parent.requires_grad) return;
                ensure_grad(x);
                parent.grad.middleRows(first, count) += nodes_[static_cast<std::size_t>(id)].grad;
            };
        }
        return push("slice_rows", X.middleRows(first, count), requires_any(x), std::move(bp));
    }

    int slice_cols(int x, Eigen::Index first, Eigen::Index count) {
        const Matrix<S>& X = val(check_id(x));
        if (first < 0 || count < 1 || first + count > X.cols()) {
            throw std::invalid_argument("slice_cols: range [" + std::to_string(first) + ", " +
                                        std::to_string(first + count) + ") outside " +
                                        shape_str(X));
        }
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, first, count, id = next_id()] {
                Node& parent = nodes_[static_cast<std::size_t>(x)];
                if (!parent.requires_grad) return;
                ensure_grad(x);
                parent.grad.middleCols(first, count) += nodes_[static_cast<std::size_t>(id)].grad;
            };
        }
        return push("slice_cols", X.middleCols(first, count), requires_any(x), std::move(bp));
    }

    int concat_rows(const std::vector<int>& parts) { return concat("concat_rows", parts, true); }
    int concat_cols(const std::vector<int>& parts) { return concat("concat_cols", parts, false); }
    int concat_rows(int a, int b) { return concat_rows(std::vector<int>{a, b}); }
    int concat_cols(int a, int b) { return concat_cols(std::vector<int>{a, b}); }

    // Output row i is X.row(rows[i]); indices may repeat.
    int gather_rows(int x, std::vector<int> rows) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y(static_cast<Eigen::Index>(rows.size()), X.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] < 0 || rows[i] >= X.rows()) {
                throw std::invalid_argument("gather_rows: index " + std::to_string(rows[i]) +
                                            " outside " + shape_str(X));
            }
            Y.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
        }
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, idx = rows, id = next_id()] {
                Node& parent = nodes_[static_cast<std::size_t>(x)];
                if (!parent.requires_grad) return;
                ensure_grad(x);
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                for (std::size_t i = 0; i < idx.size(); ++i) {
                    parent.grad.row(idx[i]) += G.row(static_cast<Eigen::Index>(i));
                }
            };
        }
        return push("gather_rows", std::move(Y), requires_any(x), std::move(bp));
    }

    // Output row g is the unweighted mean of X's rows listed in groups[g].
    int mean_merge(int x, MergeGroups groups) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y(static_cast<Eigen::Index>(groups.size()), X.cols());
        for (std::size_t g = 0; g < groups.size(); ++g) {
            if (groups[g].empty()) throw std::invalid_argument("mean_merge: empty group");
            RowVector<S> acc = RowVector<S>::Zero(X.cols());
            for (int j : groups[g]) {
                if (j < 0 || j >= X.rows()) {
                    throw std::invalid_argument("mean_merge: index " + std::to_string(j) +
                                                " outside " + shape_str(X));
                }
                acc += X.row(j);
            }
            Y.row(static_cast<Eigen::Index>(g)) = acc / S(groups[g].size());
        }
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, gs = std::move(groups), id = next_id()] {
                Node& parent = nodes_[static_cast<std::size_t>(x)];
                if (!parent.requires_grad) return;
                ensure_grad(x);
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                for (std::size_t g = 0; g < gs.size(); ++g) {
                    const S inv = S(1) / S(gs[g].size());
                    for (int j : gs[g]) {
                        parent.grad.row(j) += inv * G.row(static_cast<Eigen::Index>(g));
                    }
                }
            };
        }
        return push("mean_merge", std::move(Y), requires_any(x), std::move(bp));
    }

    int transpose(int x) {
        const Matrix<S>& X = val(check_id(x));
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, id = next_id()] {
                add_grad(x, nodes_[static_cast<std::size_t>(id)].grad.transpose());
            };
        }
        return push("transpose", X.transpose(), requires_any(x), std::move(bp));
    }

    // Column-wise mean over rows: (n x m) -> (1 x m).
    int mean_rows(int x) {
        const Matrix<S>& X = val(check_id(x));
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, n = X.rows(), id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(x, (G / S(n)).replicate(n, 1));
            };
        }
        return push("mean_rows", X.colwise().mean(), requires_any(x), std::move(bp));
    }

    int sum_all(int x) {
        const Matrix<S>& X = val(check_id(x));
        Matrix<S> Y(1, 1);
        Y(0, 0) = X.sum();
        std::function<void()> bp;
        if (requires_any(x)) {
            bp = [this, x, r = X.rows(), c = X.cols(), id = next_id()] {
                const S g0 = nodes_[static_cast<std::size_t>(id)].grad(0, 0);
                add_grad(x, Matrix<S>::Constant(r, c, g0));
            };
        }
        return push("sum_all", std::move(Y), requires_any(x), std::move(bp));
    }

    // Scalar loss: scale * sum_i weights_i * huber_delta(pred_i - target_i).
    // The caller chooses the normalization by baking it into `scale`
    // (e.g. 1/sum(weights) for a weighted mean).
    int huber_loss(int pred, int target, int weights, S delta, S scale) {
        const Matrix<S>& P = val(check_id(pred));
        const Matrix<S>& T = val(check_id(target));
        const Matrix<S>& W = val(check_id(weights));
        if (P.rows() != T.rows() || P.cols() != T.cols()) shape_error("huber_loss", P, T);
        if (P.rows() != W.rows() || P.cols() != W.cols()) shape_error("huber_loss", P, W);
        if (delta <= S(0)) throw std::invalid_argument("huber_loss: delta must be positive");
        const Matrix<S> H = (P - T).unaryExpr([delta](S d) {
            const S a = std::abs(d);
            return a <= delta ? S(0.5) * d * d : delta * (a - S(0.5) * delta);
        });
        Matrix<S> Y(1, 1);
        Y(0, 0) = scale * W.cwiseProduct(H).sum();
        std::function<void()> bp;
        if (requires_any(pred, target, weights)) {
            bp = [this, pred, target, weights, delta, scale, id = next_id()] {
                const S g0 = nodes_[static_cast<std::size_t>(id)].grad(0, 0);
                const Matrix<S> D = val(pred) - val(target);
                const Matrix<S> DH = D.unaryExpr([delta](S d) {
                    return d > delta ? delta : (d < -delta ? -delta : d);
                });
                const Matrix<S> gp = (g0 * scale) * val(weights).cwiseProduct(DH);
                add_grad(pred, gp);
                add_grad(target, -gp);
                add_grad(weights, (g0 * scale) * D.unaryExpr([delta](S d) {
                                      const S a = std::abs(d);
                                      return a <= delta ? S(0.5) * d * d
                                                        : delta * (a - S(0.5) * delta);
                                  }));
            };
        }
        return push("huber_loss", std::move(Y), requires_any(pred, target, weights), std::move(bp));
    }

    // ---- backward ----------------------------------------------------------

    void backward(int loss) {
        check_id(loss);
        if (backward_done_) throw std::logic_error("backward: graph already differentiated");
        Node& L = nodes_[static_cast<std::size_t>(loss)];
        const Matrix<S>& loss_value = val(loss);
        if (loss_value.rows() != 1 || loss_value.cols() != 1) {
            throw std::invalid_argument("backward: loss must be 1x1, got " + shape_str(loss_value));
        }
        if (!L.requires_grad) {
            throw std::logic_error(
                "backward: loss is detached (no differentiable input feeds it)");
        }
        ensure_grad(loss);
        L.grad(0, 0) = S(1);
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.backprop && n.grad_ready) n.backprop();
        }
        for (int i : param_ids_) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (n.grad_ready && n.accum != nullptr) *n.accum += n.grad;
        }
        backward_done_ = true;
    }

private:
    struct Node {
        Matrix<S> storage;
        const Matrix<S>* value = nullptr;  // external storage when set
        Matrix<S> grad;
        Matrix<S>* accum = nullptr;
        bool requires_grad = false;
        bool grad_ready = false;
        std::function<void()> backprop;
        const char* op = "leaf";
    };

    static std::string shape_str(const Matrix<S>& m) {
        return "(" + std::to_string(m.rows()) + " x " + std::to_string(m.cols()) + ")";
    }

    [[noreturn]] static void shape_error(const char* op, const Matrix<S>& a, const Matrix<S>& b) {
        throw std::invalid_argument(std::string(op) + ": incompatible shapes " + shape_str(a) +
                                    " vs " + shape_str(b));
    }

    int check_id(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
            throw std::out_of_range("graph: invalid node id " + std::to_string(id));
        }
        return id;
    }

    const Matrix<S>& val(int id) const {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        return n.value != nullptr ? *n.value : n.storage;
    }

    bool requires_any(int a) { return nodes_[static_cast<std::size_t>(check_id(a))].requires_grad; }
    bool requires_any(int a, int b) { return requires_any(a) || requires_any(b); }
    bool requires_any(int a, int b, int c) { return requires_any(a, b) || requires_any(c); }

    int next_id() const { return static_cast<int>(nodes_.size()); }

    void ensure_grad(int id) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.grad_ready) {
            const Matrix<S>& v = n.value != nullptr ? *n.value : n.storage;
            n.grad = Matrix<S>::Zero(v.rows(), v.cols());
            n.grad_ready = true;
        }
    }

    template <typename Expr>
    void add_grad(int id, const Expr& contribution) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        ensure_grad(id);
        n.grad += contribution.matrix();
    }

    void add_grad(int id, const Matrix<S>& contribution) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.requires_grad) return;
        ensure_grad(id);
        n.grad += contribution;
    }

    int add_like(const char* name, int a, int b, S sign_b) {
        const Matrix<S>& A = val(check_id(a));
        const Matrix<S>& B = val(check_id(b));
        if (A.rows() != B.rows() || A.cols() != B.cols()) shape_error(name, A, B);
        std::function<void()> bp;
        if (requires_any(a, b)) {
            bp = [this, a, b, sign_b, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                add_grad(a, G);
                if (sign_b == S(1)) add_grad(b, G);
                else add_grad(b, (sign_b * G).eval());
            };
        }
        Matrix<S> C = sign_b == S(1) ? Matrix<S>(A + B) : Matrix<S>(A - B);
        return push(name, std::move(C), requires_any(a, b), std::move(bp));
    }

    int concat(const char* name, const std::vector<int>& parts, bool along_rows) {
        if (parts.empty()) throw std::invalid_argument(std::string(name) + ": no inputs");
        Eigen::Index total = 0;
        const Matrix<S>& first = val(check_id(parts[0]));
        bool rg = false;
        for (int p : parts) {
            const Matrix<S>& M = val(check_id(p));
            if (along_rows ? M.cols() != first.cols() : M.rows() != first.rows()) {
                shape_error(name, first, M);
            }
            total += along_rows ? M.rows() : M.cols();
            rg = rg || requires_any(p);
        }
        Matrix<S> C = along_rows ? Matrix<S>(total, first.cols()) : Matrix<S>(first.rows(), total);
        std::vector<Eigen::Index> offsets(parts.size());
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const Matrix<S>& M = val(parts[i]);
            offsets[i] = at;
            if (along_rows) {
                C.middleRows(at, M.rows()) = M;
                at += M.rows();
            } else {
                C.middleCols(at, M.cols()) = M;
                at += M.cols();
            }
        }
        std::function<void()> bp;
        if (rg) {
            bp = [this, ps = parts, offs = std::move(offsets), along_rows, id = next_id()] {
                const Matrix<S>& G = nodes_[static_cast<std::size_t>(id)].grad;
                for (std::size_t i = 0; i < ps.size(); ++i) {
                    const Matrix<S>& M = val(ps[i]);
                    if (along_rows) add_grad(ps[i], G.middleRows(offs[i], M.rows()));
                    else add_grad(ps[i], G.middleCols(offs[i], M.cols()));
                }
            };
        }
        return push(name, std::move(C), rg, std::move(bp));
    }

    int push(const char* op, Matrix<S> v, bool requires_grad, std::function<void()> bp) {
        if (backward_done_) {
            throw std::logic_error("graph: cannot extend a graph after backward()");
        }
        if (check_finite_ && !v.allFinite()) {
            throw std::runtime_error(std::string("non-finite values produced by ") + op);
        }
        Node n;
        n.storage = std::move(v);
        n.requires_grad = requires_grad;
        n.backprop = std::move(bp);
        n.op = op;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int push_external(const char* op, const Matrix<S>* v, bool requires_grad, Matrix<S>* accum) {
        if (backward_done_) {
            throw std::logic_error("graph: cannot extend a graph after backward()");
        }
        if (check_finite_ && !v->allFinite()) {
            throw std::runtime_error(std::string("non-finite values in ") + op);
        }
        Node n;
        n.value = v;
        n.requires_grad = requires_grad;
        n.accum = accum;
        n.op = op;
        nodes_.push_back(std::move(n));
        const int id = static_cast<int>(nodes_.size()) - 1;
        if (accum != nullptr) param_ids_.push_back(id);
        return id;
    }

    std::vector<Node> nodes_;
    std::vector<int> param_ids_;
    bool check_finite_ = false;
    bool backward_done_ = false;
};

}  // namespace dam
