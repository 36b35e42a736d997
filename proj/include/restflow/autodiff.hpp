#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "restflow/common.hpp"

// Reverse-mode differentiable computation over dense real matrices. Ops build
// an eager DAG of Node objects; backward(loss) walks the graph once in reverse
// topological order and accumulates exact analytic gradients into every node
// that requires them. Exactly the primitives the model needs, nothing more.

namespace restflow::ad {

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
  public:
    Matrix val;
    Matrix grad;  // allocated on demand during backward
    std::vector<NodePtr> parents;
    std::function<void()> backprop;  // pulls from this->grad into parents' grads
    bool needs_grad = false;
    const char* op = "leaf";

    Matrix& grad_buf() {
        if (grad.size() != val.size()) grad = Matrix(val.rows, val.cols, 0.0);
        return grad;
    }
};

struct Value {
    NodePtr n;

    Value() = default;
    explicit Value(NodePtr p) : n(std::move(p)) {}

    std::size_t rows() const { return n->val.rows; }
    std::size_t cols() const { return n->val.cols; }
    const Matrix& m() const { return n->val; }
    double scalar() const {
        if (n->val.size() != 1) throw ShapeError("Value::scalar on " + shape_str(n->val));
        return n->val.data[0];
    }
    bool defined() const { return static_cast<bool>(n); }
};

inline Value constant(Matrix m) {
    auto node = std::make_shared<Node>();
    node->val = std::move(m);
    node->needs_grad = false;
    node->op = "const";
    return Value(node);
}

inline Value constant_scalar(double v) { return constant(Matrix(1, 1, v)); }

// Leaf with gradient tracking (parameter or differentiable input).
inline Value leaf(Matrix m) {
    auto node = std::make_shared<Node>();
    node->val = std::move(m);
    node->needs_grad = true;
    node->op = "param";
    return Value(node);
}

namespace detail {

inline NodePtr fresh(std::size_t r, std::size_t c, std::vector<NodePtr> parents, const char* op) {
    auto node = std::make_shared<Node>();
    node->val = Matrix(r, c);
    node->parents = std::move(parents);
    node->op = op;
    for (const auto& p : node->parents)
        if (p->needs_grad) node->needs_grad = true;
    return node;
}

inline void check_same_shape(const Value& a, const Value& b, const char* op) {
    if (!a.m().same_shape(b.m()))
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.m()) + " vs " +
                         shape_str(b.m()));
}

}  // namespace detail

// ---- elementwise binary ----------------------------------------------------

inline Value add(const Value& a, const Value& b) {
    detail::check_same_shape(a, b, "add");
    auto node = detail::fresh(a.rows(), a.cols(), {a.n, b.n}, "add");
    const std::size_t n = node->val.size();
    for (std::size_t i = 0; i < n; ++i) node->val.data[i] = a.n->val.data[i] + b.n->val.data[i];
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pb = b.n.get();
        node->backprop = [self, pa, pb, n] {
            if (pa->needs_grad) {
                auto& g = pa->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i];
            }
            if (pb->needs_grad) {
                auto& g = pb->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i];
            }
        };
    }
    return Value(node);
}

inline Value sub(const Value& a, const Value& b) {
    detail::check_same_shape(a, b, "sub");
    auto node = detail::fresh(a.rows(), a.cols(), {a.n, b.n}, "sub");
    const std::size_t n = node->val.size();
    for (std::size_t i = 0; i < n; ++i) node->val.data[i] = a.n->val.data[i] - b.n->val.data[i];
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pb = b.n.get();
        node->backprop = [self, pa, pb, n] {
            if (pa->needs_grad) {
                auto& g = pa->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i];
            }
            if (pb->needs_grad) {
                auto& g = pb->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] -= self->grad.data[i];
            }
        };
    }
    return Value(node);
}

inline Value mul(const Value& a, const Value& b) {
    detail::check_same_shape(a, b, "mul");
    auto node = detail::fresh(a.rows(), a.cols(), {a.n, b.n}, "mul");
    const std::size_t n = node->val.size();
    for (std::size_t i = 0; i < n; ++i) node->val.data[i] = a.n->val.data[i] * b.n->val.data[i];
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pb = b.n.get();
        node->backprop = [self, pa, pb, n] {
            if (pa->needs_grad) {
                auto& g = pa->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i] * pb->val.data[i];
            }
            if (pb->needs_grad) {
                auto& g = pb->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i] * pa->val.data[i];
            }
        };
    }
    return Value(node);
}

inline Value div(const Value& a, const Value& b) {
    detail::check_same_shape(a, b, "div");
    auto node = detail::fresh(a.rows(), a.cols(), {a.n, b.n}, "div");
    const std::size_t n = node->val.size();
    for (std::size_t i = 0; i < n; ++i) node->val.data[i] = a.n->val.data[i] / b.n->val.data[i];
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pb = b.n.get();
        node->backprop = [self, pa, pb, n] {
            if (pa->needs_grad) {
                auto& g = pa->grad_buf();
                for (std::size_t i = 0; i < n; ++i) g.data[i] += self->grad.data[i] / pb->val.data[i];
            }
            if (pb->needs_grad) {
                auto& g = pb->grad_buf();
                for (std::size_t i = 0; i < n; ++i) {
                    double bv = pb->val.data[i];
                    g.data[i] -= self->grad.data[i] * pa->val.data[i] / (bv * bv);
                }
            }
        };
    }
    return Value(node);
}

// ---- matmul / transpose ----------------------------------------------------

inline Value matmul(const Value& a, const Value& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: lhs " + shape_str(a.m()) + " rhs " + shape_str(b.m()));
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    auto node = detail::fresh(m, n, {a.n, b.n}, "matmul");
    {
        const double* A = a.n->val.data.data();
        const double* B = b.n->val.data.data();
        double* C = node->val.data.data();
        for (std::size_t i = 0; i < m; ++i) {
            double* crow = C + i * n;
            for (std::size_t p = 0; p < k; ++p) {
                double av = A[i * k + p];
                if (av == 0.0) continue;
                const double* brow = B + p * n;
                for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pb = b.n.get();
        node->backprop = [self, pa, pb, m, k, n] {
            const double* G = self->grad.data.data();
            if (pa->needs_grad) {
                // gA += G * B^T : gA(i,p) = sum_j G(i,j) B(p,j)
                double* GA = pa->grad_buf().data.data();
                const double* B = pb->val.data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = G + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double* brow = B + p * n;
                        double acc = 0.0;
                        for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        GA[i * k + p] += acc;
                    }
                }
            }
            if (pb->needs_grad) {
                // gB += A^T * G : gB(p,j) = sum_i A(i,p) G(i,j)
                double* GB = pb->grad_buf().data.data();
                const double* A = pa->val.data.data();
                for (std::size_t i = 0; i < m; ++i) {
                    const double* grow = G + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        double av = A[i * k + p];
                        if (av == 0.0) continue;
                        double* gbrow = GB + p * n;
                        for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                    }
                }
            }
        };
    }
    return Value(node);
}

inline Value transpose(const Value& a) {
    const std::size_t r = a.rows(), c = a.cols();
    auto node = detail::fresh(c, r, {a.n}, "transpose");
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) node->val(j, i) = a.n->val(i, j);
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, r, c] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g(i, j) += self->grad(j, i);
        };
    }
    return Value(node);
}

// ---- structure: concat / slice / reshape / broadcast ------------------------

inline Value concat_rows(const std::vector<Value>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no inputs");
    std::size_t c = parts[0].cols(), r = 0;
    std::vector<NodePtr> ps;
    for (const auto& p : parts) {
        if (p.cols() != c)
            throw ShapeError("concat_rows: column mismatch " + shape_str(p.m()));
        r += p.rows();
        ps.push_back(p.n);
    }
    auto node = detail::fresh(r, c, std::move(ps), "concat_rows");
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.n->val.data.begin(), p.n->val.data.end(), node->val.data.begin() + off);
        off += p.n->val.size();
    }
    if (node->needs_grad) {
        Node* self = node.get();
        std::vector<Node*> raw;
        for (const auto& p : parts) raw.push_back(p.n.get());
        node->backprop = [self, raw] {
            std::size_t off = 0;
            for (Node* p : raw) {
                if (p->needs_grad) {
                    auto& g = p->grad_buf();
                    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self->grad.data[off + i];
                }
                off += p->val.size();
            }
        };
    }
    return Value(node);
}

inline Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    std::size_t r = parts[0].rows(), c = 0;
    std::vector<NodePtr> ps;
    for (const auto& p : parts) {
        if (p.rows() != r) throw ShapeError("concat_cols: row mismatch " + shape_str(p.m()));
        c += p.cols();
        ps.push_back(p.n);
    }
    auto node = detail::fresh(r, c, std::move(ps), "concat_cols");
    std::size_t coff = 0;
    for (const auto& p : parts) {
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < p.cols(); ++j) node->val(i, coff + j) = p.n->val(i, j);
        coff += p.cols();
    }
    if (node->needs_grad) {
        Node* self = node.get();
        std::vector<Node*> raw;
        for (const auto& p : parts) raw.push_back(p.n.get());
        node->backprop = [self, raw, r] {
            std::size_t coff = 0;
            for (Node* p : raw) {
                if (p->needs_grad) {
                    auto& g = p->grad_buf();
                    for (std::size_t i = 0; i < r; ++i)
                        for (std::size_t j = 0; j < p->val.cols; ++j)
                            g(i, j) += self->grad(i, coff + j);
                }
                coff += p->val.cols;
            }
        };
    }
    return Value(node);
}

inline Value slice_rows(const Value& a, std::size_t r0, std::size_t r1) {
    if (r0 >= r1 || r1 > a.rows())
        throw ShapeError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(a.m()));
    const std::size_t c = a.cols();
    auto node = detail::fresh(r1 - r0, c, {a.n}, "slice_rows");
    std::copy(a.n->val.data.begin() + r0 * c, a.n->val.data.begin() + r1 * c,
              node->val.data.begin());
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, r0, c] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < self->val.size(); ++i)
                g.data[r0 * c + i] += self->grad.data[i];
        };
    }
    return Value(node);
}

inline Value slice_cols(const Value& a, std::size_t c0, std::size_t c1) {
    if (c0 >= c1 || c1 > a.cols())
        throw ShapeError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + shape_str(a.m()));
    const std::size_t r = a.rows();
    auto node = detail::fresh(r, c1 - c0, {a.n}, "slice_cols");
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = c0; j < c1; ++j) node->val(i, j - c0) = a.n->val(i, j);
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, r, c0] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < self->val.cols; ++j)
                    g(i, c0 + j) += self->grad(i, j);
        };
    }
    return Value(node);
}

inline Value reshape(const Value& a, std::size_t r, std::size_t c) {
    if (r * c != a.m().size())
        throw ShapeError("reshape: " + shape_str(a.m()) + " to " + shape_str(r, c));
    auto node = detail::fresh(r, c, {a.n}, "reshape");
    node->val.data = a.n->val.data;
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self->grad.data[i];
        };
    }
    return Value(node);
}

// Repeat a 1xD row n times.
inline Value broadcast_rows(const Value& a, std::size_t n) {
    if (a.rows() != 1) throw ShapeError("broadcast_rows: need 1xD input, got " + shape_str(a.m()));
    const std::size_t c = a.cols();
    auto node = detail::fresh(n, c, {a.n}, "broadcast_rows");
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) node->val(i, j) = a.n->val.data[j];
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, n, c] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < c; ++j) g.data[j] += self->grad(i, j);
        };
    }
    return Value(node);
}

// ---- reductions --------------------------------------------------------------

inline Value sum(const Value& a) {
    auto node = detail::fresh(1, 1, {a.n}, "sum");
    double acc = 0.0;
    for (double v : a.n->val.data) acc += v;
    node->val.data[0] = acc;
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa] {
            auto& g = pa->grad_buf();
            double gv = self->grad.data[0];
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += gv;
        };
    }
    return Value(node);
}

inline Value mean(const Value& a) {
    auto node = detail::fresh(1, 1, {a.n}, "mean");
    double acc = 0.0;
    for (double v : a.n->val.data) acc += v;
    const double inv_n = 1.0 / static_cast<double>(a.m().size());
    node->val.data[0] = acc * inv_n;
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, inv_n] {
            auto& g = pa->grad_buf();
            double gv = self->grad.data[0] * inv_n;
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += gv;
        };
    }
    return Value(node);
}

// Column means over rows: NxC -> 1xC.
inline Value col_mean(const Value& a) {
    const std::size_t r = a.rows(), c = a.cols();
    auto node = detail::fresh(1, c, {a.n}, "col_mean");
    const double inv_r = 1.0 / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) node->val.data[j] += a.n->val(i, j);
    for (std::size_t j = 0; j < c; ++j) node->val.data[j] *= inv_r;
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, r, c, inv_r] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g(i, j) += self->grad.data[j] * inv_r;
        };
    }
    return Value(node);
}

// ---- elementwise unary -------------------------------------------------------

namespace detail {

template <typename Fwd, typename Dfdx>
Value unary(const Value& a, const char* op, Fwd fwd, Dfdx dfdx) {
    auto node = fresh(a.rows(), a.cols(), {a.n}, op);
    const std::size_t n = node->val.size();
    for (std::size_t i = 0; i < n; ++i) node->val.data[i] = fwd(a.n->val.data[i]);
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, n, dfdx] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < n; ++i)
                g.data[i] += self->grad.data[i] * dfdx(pa->val.data[i], self->val.data[i]);
        };
    }
    return Value(node);
}

}  // namespace detail

inline Value square(const Value& a) {
    return detail::unary(a, "square", [](double x) { return x * x; },
                         [](double x, double) { return 2.0 * x; });
}

inline Value sqrt(const Value& a) {
    return detail::unary(a, "sqrt", [](double x) { return std::sqrt(x); },
                         [](double, double y) { return 0.5 / y; });
}

inline Value exp(const Value& a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); },
                         [](double, double y) { return y; });
}

inline Value log(const Value& a) {
    return detail::unary(a, "log", [](double x) { return std::log(x); },
                         [](double x, double) { return 1.0 / x; });
}

inline Value tanh(const Value& a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); },
                         [](double, double y) { return 1.0 - y * y; });
}

inline Value gelu(const Value& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary(
        a, "gelu",
        [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            return cdf + x * pdf;
        });
}

// Numerically stable softplus; derivative is the logistic sigmoid.
inline Value softplus(const Value& a) {
    return detail::unary(
        a, "softplus",
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

inline Value scale(const Value& a, double k) {
    return detail::unary(a, "scale", [k](double x) { return x * k; },
                         [k](double, double) { return k; });
}

inline Value add_scalar(const Value& a, double k) {
    return detail::unary(a, "add_scalar", [k](double x) { return x + k; },
                         [](double, double) { return 1.0; });
}

inline Value clamp_min(const Value& a, double lo) {
    return detail::unary(a, "clamp_min", [lo](double x) { return x < lo ? lo : x; },
                         [lo](double x, double) { return x >= lo ? 1.0 : 0.0; });
}

// ---- softmax / layer norm ------------------------------------------------------

// Row softmax with optional additive mask (same shape or a single 1xC row
// applied to every row; -1e30 marks masked positions). Each row must keep at
// least one unmasked entry.
inline Value softmax_rows(const Value& a, const Matrix* addmask = nullptr) {
    const std::size_t r = a.rows(), c = a.cols();
    if (addmask && !(addmask->rows == r || addmask->rows == 1))
        throw ShapeError("softmax_rows: mask " + shape_str(*addmask) + " vs " + shape_str(a.m()));
    if (addmask && addmask->cols != c)
        throw ShapeError("softmax_rows: mask " + shape_str(*addmask) + " vs " + shape_str(a.m()));
    auto node = detail::fresh(r, c, {a.n}, "softmax");
    for (std::size_t i = 0; i < r; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < c; ++j) {
            double z = a.n->val(i, j);
            if (addmask) z += (*addmask)(addmask->rows == 1 ? 0 : i, j);
            if (z > mx) mx = z;
        }
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double z = a.n->val(i, j);
            if (addmask) z += (*addmask)(addmask->rows == 1 ? 0 : i, j);
            double e = std::exp(z - mx);
            node->val(i, j) = e;
            denom += e;
        }
        for (std::size_t j = 0; j < c; ++j) node->val(i, j) /= denom;
    }
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        node->backprop = [self, pa, r, c] {
            auto& g = pa->grad_buf();
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += self->grad(i, j) * self->val(i, j);
                for (std::size_t j = 0; j < c; ++j)
                    g(i, j) += self->val(i, j) * (self->grad(i, j) - dot);
            }
        };
    }
    return Value(node);
}

// Row-wise layer normalization with learned gain/bias (1xC each).
inline Value layer_norm(const Value& a, const Value& gamma, const Value& beta,
                        double eps = 1e-5) {
    const std::size_t r = a.rows(), c = a.cols();
    if (gamma.rows() != 1 || gamma.cols() != c || beta.rows() != 1 || beta.cols() != c)
        throw ShapeError("layer_norm: gain/bias must be 1x" + std::to_string(c));
    auto node = detail::fresh(r, c, {a.n, gamma.n, beta.n}, "layer_norm");
    // cache normalized activations and inverse stddev per row for backward
    auto xhat = std::make_shared<Matrix>(r, c);
    auto inv_sd = std::make_shared<std::vector<double>>(r);
    for (std::size_t i = 0; i < r; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += a.n->val(i, j);
        mu /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double d = a.n->val(i, j) - mu;
            var += d * d;
        }
        var /= static_cast<double>(c);
        double isd = 1.0 / std::sqrt(var + eps);
        (*inv_sd)[i] = isd;
        for (std::size_t j = 0; j < c; ++j) {
            double xh = (a.n->val(i, j) - mu) * isd;
            (*xhat)(i, j) = xh;
            node->val(i, j) = gamma.n->val.data[j] * xh + beta.n->val.data[j];
        }
    }
    if (node->needs_grad) {
        Node* self = node.get();
        Node* pa = a.n.get();
        Node* pg = gamma.n.get();
        Node* pb = beta.n.get();
        node->backprop = [self, pa, pg, pb, xhat, inv_sd, r, c] {
            for (std::size_t i = 0; i < r; ++i) {
                if (pg->needs_grad) {
                    auto& gg = pg->grad_buf();
                    for (std::size_t j = 0; j < c; ++j)
                        gg.data[j] += self->grad(i, j) * (*xhat)(i, j);
                }
                if (pb->needs_grad) {
                    auto& gb = pb->grad_buf();
                    for (std::size_t j = 0; j < c; ++j) gb.data[j] += self->grad(i, j);
                }
                if (pa->needs_grad) {
                    auto& ga = pa->grad_buf();
                    double mean_h = 0.0, mean_hx = 0.0;
                    for (std::size_t j = 0; j < c; ++j) {
                        double h = self->grad(i, j) * pg->val.data[j];
                        mean_h += h;
                        mean_hx += h * (*xhat)(i, j);
                    }
                    mean_h /= static_cast<double>(c);
                    mean_hx /= static_cast<double>(c);
                    for (std::size_t j = 0; j < c; ++j) {
                        double h = self->grad(i, j) * pg->val.data[j];
                        ga(i, j) += (h - mean_h - (*xhat)(i, j) * mean_hx) * (*inv_sd)[i];
                    }
                }
            }
        };
    }
    return Value(node);
}

// ---- backward ----------------------------------------------------------------

// Reverse accumulation from a scalar loss. Visits each reachable node exactly
// once in reverse topological order.
inline void backward(const Value& loss) {
    if (loss.m().size() != 1)
        throw ValidationError("backward: loss must be scalar, got " + shape_str(loss.m()));
    if (!loss.n->needs_grad) return;

    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.n.get(), 0);
    seen.insert(loss.n.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss.n->grad_buf().data[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop && (*it)->grad.size() == (*it)->val.size()) (*it)->backprop();
    }
}

// Operator sugar for the elementwise ops.
inline Value operator+(const Value& a, const Value& b) { return add(a, b); }
inline Value operator-(const Value& a, const Value& b) { return sub(a, b); }
inline Value operator*(const Value& a, const Value& b) { return mul(a, b); }
inline Value operator/(const Value& a, const Value& b) { return div(a, b); }

}  // namespace restflow::ad
