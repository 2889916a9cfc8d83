#pragma once

// Reverse-mode autodiff engine. Tensors are value types over a shared node;
// every op builds the forward result and, when grad mode is on and an input
// requires grad, records a backward closure on the output node. The tape is
// dynamic: each forward pass builds a fresh graph, backward() consumes it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "mtkd/error.hpp"

namespace mtkd {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '(';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ')';
    return os.str();
}

// Host-side integer matrix: token ids, pad masks, gather indices. Never on
// the tape (no gradients flow through indices).
struct IntMat {
    size_t rows = 0, cols = 0;
    std::vector<int32_t> v;

    IntMat() = default;
    IntMat(size_t r, size_t c, int32_t fill = 0) : rows(r), cols(c), v(r * c, fill) {}

    int32_t& at(size_t r, size_t c) { return v[r * cols + c]; }
    int32_t at(size_t r, size_t c) const { return v[r * cols + c]; }
    size_t size() const { return v.size(); }
};

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> data;
    std::vector<S> grad; // empty until a gradient is accumulated
    bool requires_grad = false;
    bool consumed = false; // backward already ran through this node
    std::string name;      // set for parameters
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    size_t size() const { return data.size(); }

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), S(0));
    }

    void accum_grad(const S* g, size_t n) {
        ensure_grad();
        for (size_t i = 0; i < n; ++i) grad[i] += g[i];
    }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}
} // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// RAII scope that disables tape recording (inference, finite differences).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename S>
class Tensor {
public:
    using Node = TensorNode<S>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

    static Tensor full(Shape shape, S v) {
        auto n = std::make_shared<Node>();
        n->data.assign(numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<S> data) {
        if (numel(shape) != data.size())
            fail("tensor", "data length " + std::to_string(data.size()) +
                               " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        return Tensor(std::move(n));
    }

    static Tensor scalar(S v) { return from({}, {v}); }

    // Leaf with requires_grad set; the unit of optimization and checkpointing.
    static Tensor param(Shape shape, std::vector<S> data, std::string name) {
        Tensor t = from(std::move(shape), std::move(data));
        t.n_->requires_grad = true;
        t.n_->name = std::move(name);
        return t;
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    size_t rank() const { return n_->shape.size(); }
    size_t size() const { return n_->data.size(); }
    const std::string& name() const { return n_->name; }

    std::vector<S>& data() { return n_->data; }
    const std::vector<S>& data() const { return n_->data; }

    S item() const {
        if (size() != 1) fail("tensor", "item() on tensor of shape " + shape_str(shape()));
        return n_->data[0];
    }

    S at(std::initializer_list<size_t> idx) const {
        size_t flat = 0;
        size_t i = 0;
        for (size_t ix : idx) flat = flat * n_->shape[i] + ix, ++i;
        return n_->data[flat];
    }

    bool requires_grad() const { return n_->requires_grad; }

    bool has_grad() const { return !n_->grad.empty(); }
    std::vector<S>& grad() {
        if (n_->grad.empty()) fail("tensor", "no gradient on tensor '" + n_->name + "'");
        return n_->grad;
    }
    const std::vector<S>& grad() const {
        if (n_->grad.empty()) fail("tensor", "no gradient on tensor '" + n_->name + "'");
        return n_->grad;
    }
    void zero_grad() { n_->grad.assign(n_->data.size(), S(0)); }
    void drop_grad() { n_->grad.clear(); }

    // NaN/Inf anywhere in data or an existing grad is a fault state.
    bool all_finite() const {
        for (S x : n_->data)
            if (!std::isfinite(static_cast<double>(x))) return false;
        for (S x : n_->grad)
            if (!std::isfinite(static_cast<double>(x))) return false;
        return true;
    }

    Node* node() const { return n_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape) {
    auto n = std::make_shared<TensorNode<S>>();
    n->data.assign(numel(shape), S(0));
    n->shape = std::move(shape);
    return n;
}

template <typename S>
bool record(TensorNode<S>& out, std::vector<std::shared_ptr<TensorNode<S>>> parents) {
    if (!grad_mode_enabled()) return false;
    bool any = false;
    for (auto& p : parents)
        if (p->requires_grad) any = true;
    if (!any) return false;
    out.requires_grad = true;
    out.parents = std::move(parents);
    return true;
}

// (outer, n, inner) decomposition of `shape` around `axis`.
struct AxisSplit {
    size_t outer, n, inner;
};

inline AxisSplit split_axis(const Shape& s, size_t axis) {
    AxisSplit a{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i) a.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
    return a;
}

// C(m,n) += A(m,k) * B(k,n)
template <typename S>
void mm_nn(const S* A, const S* B, S* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const S* a = A + i * k;
        S* c = C + i * n;
        for (size_t p = 0; p < k; ++p) {
            S av = a[p];
            if (av == S(0)) continue;
            const S* b = B + p * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C(m,n) += A(m,k) * B(n,k)^T
template <typename S>
void mm_nt(const S* A, const S* B, S* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const S* a = A + i * k;
        S* c = C + i * n;
        for (size_t j = 0; j < n; ++j) {
            const S* b = B + j * k;
            S acc = 0;
            for (size_t p = 0; p < k; ++p) acc += a[p] * b[p];
            c[j] += acc;
        }
    }
}

// C(k,n) += A(m,k)^T * B(m,n)
template <typename S>
void mm_tn(const S* A, const S* B, S* C, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const S* a = A + i * k;
        const S* b = B + i * n;
        for (size_t p = 0; p < k; ++p) {
            S av = a[p];
            if (av == S(0)) continue;
            S* c = C + p * n;
            for (size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// Broadcast check: b must equal the trailing axes of a (or match exactly).
inline bool trailing_broadcast_ok(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    size_t off = a.size() - b.size();
    for (size_t i = 0; i < b.size(); ++i)
        if (a[off + i] != b[i]) return false;
    return true;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with trailing-axis broadcast of the right operand.
// ---------------------------------------------------------------------------

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> binary_op(const char* opname, const Tensor<S>& a, const Tensor<S>& b, FwdFn fwd,
                    BwdFn bwd) {
    if (!detail::trailing_broadcast_ok(a.shape(), b.shape()))
        fail("tensor", std::string(opname) + ": shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()) + " are not trailing-broadcast compatible");
    auto out = detail::make_node<S>(a.shape());
    size_t bn = std::max<size_t>(b.size(), 1);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (size_t i = 0; i < ad.size(); ++i) out->data[i] = fwd(ad[i], bd[i % bn]);

    if (detail::record(*out, {a.node_ptr(), b.node_ptr()})) {
        out->backward_fn = [bwd, bn](TensorNode<S>& o) {
            auto& pa = *o.parents[0];
            auto& pb = *o.parents[1];
            bool need_a = pa.requires_grad;
            bool need_b = pb.requires_grad;
            if (need_a) pa.ensure_grad();
            if (need_b) pb.ensure_grad();
            for (size_t i = 0; i < o.data.size(); ++i) {
                S ga, gb;
                bwd(pa.data[i], pb.data[i % bn], o.grad[i], ga, gb);
                if (need_a) pa.grad[i] += ga;
                if (need_b) pb.grad[i % bn] += gb;
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](S, S, S g, S& ga, S& gb) { ga = g, gb = g; });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [](S, S, S g, S& ga, S& gb) { ga = g, gb = -g; });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S g, S& ga, S& gb) { ga = g * y, gb = g * x; });
}

template <typename S> Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S> Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S> Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// Elementwise unary ops.
// ---------------------------------------------------------------------------

template <typename S, typename FwdFn, typename BwdFn>
Tensor<S> unary_op(const Tensor<S>& a, FwdFn fwd, BwdFn bwd) {
    auto out = detail::make_node<S>(a.shape());
    const auto& ad = a.data();
    for (size_t i = 0; i < ad.size(); ++i) out->data[i] = fwd(ad[i]);
    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [bwd](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            // bwd(x, y, g) with y the op output
            for (size_t i = 0; i < o.data.size(); ++i)
                p.grad[i] += bwd(p.data[i], o.data[i], o.grad[i]);
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
    return unary_op<S>(
        a, [](S x) { return x > S(0) ? x : S(0); },
        [](S x, S, S g) { return x > S(0) ? g : S(0); });
}

template <typename S>
Tensor<S> tanh(const Tensor<S>& a) {
    return unary_op<S>(
        a, [](S x) { return std::tanh(x); }, [](S, S y, S g) { return g * (S(1) - y * y); });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
    return unary_op<S>(
        a, [](S x) { return S(1) / (S(1) + std::exp(-x)); },
        [](S, S y, S g) { return g * y * (S(1) - y); });
}

template <typename S>
Tensor<S> exp(const Tensor<S>& a) {
    return unary_op<S>(
        a, [](S x) { return std::exp(x); }, [](S, S y, S g) { return g * y; });
}

template <typename S>
Tensor<S> log(const Tensor<S>& a) {
    return unary_op<S>(
        a, [](S x) { return std::log(x); }, [](S x, S, S g) { return g / x; });
}

// x * c and x + c for a host scalar c (not differentiable w.r.t. c).
template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    return unary_op<S>(
        a, [c](S x) { return x * c; }, [c](S, S, S g) { return g * c; });
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, S c) {
    return unary_op<S>(
        a, [c](S x) { return x + c; }, [](S, S, S g) { return g; });
}

// ---------------------------------------------------------------------------
// matmul: (m,k)x(k,n), (B,m,k)x(k,n), (B,m,k)x(B,k,n)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    auto bad = [&] {
        fail("tensor",
             "matmul: incompatible shapes " + shape_str(as) + " x " + shape_str(bs));
    };
    if (as.size() < 2 || bs.size() < 2 || as.size() > 3 || bs.size() > 3) bad();
    size_t batch = as.size() == 3 ? as[0] : 1;
    size_t m = as[as.size() - 2], k = as[as.size() - 1];
    size_t kb = bs[bs.size() - 2], n = bs[bs.size() - 1];
    bool b_batched = bs.size() == 3;
    if (k != kb) bad();
    if (b_batched && (as.size() != 3 || bs[0] != batch)) bad();

    Shape out_shape = as.size() == 3 ? Shape{batch, m, n} : Shape{m, n};
    auto out = detail::make_node<S>(out_shape);
    const S* A = a.data().data();
    const S* B = b.data().data();
    S* C = out->data.data();
    for (size_t bi = 0; bi < batch; ++bi)
        detail::mm_nn(A + bi * m * k, B + (b_batched ? bi * k * n : 0), C + bi * m * n, m, k, n);

    if (detail::record(*out, {a.node_ptr(), b.node_ptr()})) {
        out->backward_fn = [batch, m, k, n, b_batched](TensorNode<S>& o) {
            auto& pa = *o.parents[0];
            auto& pb = *o.parents[1];
            const S* G = o.grad.data();
            const S* A = pa.data.data();
            const S* B = pb.data.data();
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (size_t bi = 0; bi < batch; ++bi)
                    detail::mm_nt(G + bi * m * n, B + (b_batched ? bi * k * n : 0),
                                  pa.grad.data() + bi * m * k, m, n, k);
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (size_t bi = 0; bi < batch; ++bi)
                    detail::mm_tn(A + bi * m * k, G + bi * m * n,
                                  pb.grad.data() + (b_batched ? bi * k * n : 0), m, k, n);
            }
        };
    }
    return Tensor<S>(out);
}

// Swap the last two axes (rank 2 or 3).
template <typename S>
Tensor<S> transpose(const Tensor<S>& a) {
    const Shape& s = a.shape();
    if (s.size() < 2 || s.size() > 3)
        fail("tensor", "transpose: rank must be 2 or 3, got shape " + shape_str(s));
    size_t batch = s.size() == 3 ? s[0] : 1;
    size_t m = s[s.size() - 2], n = s[s.size() - 1];
    Shape out_shape = s;
    std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
    auto out = detail::make_node<S>(out_shape);
    const S* A = a.data().data();
    S* C = out->data.data();
    for (size_t bi = 0; bi < batch; ++bi)
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < n; ++j) C[bi * m * n + j * m + i] = A[bi * m * n + i * n + j];

    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [batch, m, n](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t bi = 0; bi < batch; ++bi)
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j)
                        p.grad[bi * m * n + i * n + j] += o.grad[bi * m * n + j * m + i];
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape new_shape) {
    if (numel(new_shape) != a.size())
        fail("tensor", "reshape: cannot view " + shape_str(a.shape()) + " as " +
                           shape_str(new_shape));
    auto out = detail::make_node<S>(std::move(new_shape));
    out->data = a.data();
    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [](TensorNode<S>& o) {
            o.parents[0]->accum_grad(o.grad.data(), o.grad.size());
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Axis reductions and softmax.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax_axis(const Tensor<S>& a, size_t axis) {
    if (axis >= a.rank()) fail("tensor", "softmax_axis: axis out of range");
    auto sp = detail::split_axis(a.shape(), axis);
    auto out = detail::make_node<S>(a.shape());
    const auto& x = a.data();
    auto& y = out->data;
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t i = 0; i < sp.inner; ++i) {
            size_t base = o * sp.n * sp.inner + i;
            S mx = x[base];
            for (size_t j = 1; j < sp.n; ++j) mx = std::max(mx, x[base + j * sp.inner]);
            S sum = 0;
            for (size_t j = 0; j < sp.n; ++j) {
                S e = std::exp(x[base + j * sp.inner] - mx);
                y[base + j * sp.inner] = e;
                sum += e;
            }
            S inv = S(1) / sum;
            for (size_t j = 0; j < sp.n; ++j) y[base + j * sp.inner] *= inv;
        }

    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [sp](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t ou = 0; ou < sp.outer; ++ou)
                for (size_t i = 0; i < sp.inner; ++i) {
                    size_t base = ou * sp.n * sp.inner + i;
                    S dot = 0;
                    for (size_t j = 0; j < sp.n; ++j)
                        dot += o.grad[base + j * sp.inner] * o.data[base + j * sp.inner];
                    for (size_t j = 0; j < sp.n; ++j) {
                        size_t ix = base + j * sp.inner;
                        p.grad[ix] += o.data[ix] * (o.grad[ix] - dot);
                    }
                }
        };
    }
    return Tensor<S>(out);
}

namespace detail {
template <typename S>
Tensor<S> reduce_axis(const Tensor<S>& a, size_t axis, bool mean) {
    if (axis >= a.rank()) fail("tensor", "reduce_axis: axis out of range");
    auto sp = split_axis(a.shape(), axis);
    Shape out_shape;
    for (size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);
    auto out = make_node<S>(out_shape);
    const auto& x = a.data();
    S denom = mean ? S(1) / S(sp.n) : S(1);
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t i = 0; i < sp.inner; ++i) {
            S acc = 0;
            for (size_t j = 0; j < sp.n; ++j) acc += x[(o * sp.n + j) * sp.inner + i];
            out->data[o * sp.inner + i] = acc * denom;
        }
    if (record(*out, {a.node_ptr()})) {
        out->backward_fn = [sp, denom](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t ou = 0; ou < sp.outer; ++ou)
                for (size_t i = 0; i < sp.inner; ++i) {
                    S g = o.grad[ou * sp.inner + i] * denom;
                    for (size_t j = 0; j < sp.n; ++j)
                        p.grad[(ou * sp.n + j) * sp.inner + i] += g;
                }
        };
    }
    return Tensor<S>(out);
}
} // namespace detail

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, size_t axis) {
    return detail::reduce_axis(a, axis, true);
}

template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, size_t axis) {
    return detail::reduce_axis(a, axis, false);
}

namespace detail {
template <typename S>
Tensor<S> reduce_all(const Tensor<S>& a, bool mean) {
    auto out = make_node<S>(Shape{});
    S acc = 0;
    for (S v : a.data()) acc += v;
    S denom = mean ? S(1) / S(a.size()) : S(1);
    out->data[0] = acc * denom;
    if (record(*out, {a.node_ptr()})) {
        out->backward_fn = [denom](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            S g = o.grad[0] * denom;
            for (auto& gv : p.grad) gv += g;
        };
    }
    return Tensor<S>(out);
}
} // namespace detail

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return detail::reduce_all(a, true);
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    return detail::reduce_all(a, false);
}

// Max over one axis; gradient flows to the first argmax position.
template <typename S>
Tensor<S> max_axis(const Tensor<S>& a, size_t axis) {
    if (axis >= a.rank()) fail("tensor", "max_axis: axis out of range");
    auto sp = detail::split_axis(a.shape(), axis);
    Shape out_shape;
    for (size_t i = 0; i < a.rank(); ++i)
        if (i != axis) out_shape.push_back(a.shape()[i]);
    auto out = detail::make_node<S>(out_shape);
    auto arg = std::make_shared<std::vector<size_t>>(out->data.size());
    const auto& x = a.data();
    for (size_t o = 0; o < sp.outer; ++o)
        for (size_t i = 0; i < sp.inner; ++i) {
            size_t best = 0;
            S bv = x[o * sp.n * sp.inner + i];
            for (size_t j = 1; j < sp.n; ++j) {
                S v = x[(o * sp.n + j) * sp.inner + i];
                if (v > bv) bv = v, best = j;
            }
            out->data[o * sp.inner + i] = bv;
            (*arg)[o * sp.inner + i] = best;
        }
    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [sp, arg](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t ou = 0; ou < sp.outer; ++ou)
                for (size_t i = 0; i < sp.inner; ++i) {
                    size_t j = (*arg)[ou * sp.inner + i];
                    p.grad[(ou * sp.n + j) * sp.inner + i] += o.grad[ou * sp.inner + i];
                }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// slice / concat
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> slice(const Tensor<S>& a, size_t axis, size_t start, size_t len) {
    if (axis >= a.rank()) fail("tensor", "slice: axis out of range");
    if (start + len > a.shape()[axis])
        fail("tensor", "slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                           ") out of bounds for axis " + std::to_string(axis) + " of " +
                           shape_str(a.shape()));
    auto sp = detail::split_axis(a.shape(), axis);
    Shape out_shape = a.shape();
    out_shape[axis] = len;
    auto out = detail::make_node<S>(out_shape);
    const auto& x = a.data();
    for (size_t o = 0; o < sp.outer; ++o)
        std::copy(x.begin() + (o * sp.n + start) * sp.inner,
                  x.begin() + (o * sp.n + start + len) * sp.inner,
                  out->data.begin() + o * len * sp.inner);
    if (detail::record(*out, {a.node_ptr()})) {
        out->backward_fn = [sp, start, len](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t ou = 0; ou < sp.outer; ++ou) {
                const S* g = o.grad.data() + ou * len * sp.inner;
                S* pg = p.grad.data() + (ou * sp.n + start) * sp.inner;
                for (size_t i = 0; i < len * sp.inner; ++i) pg[i] += g[i];
            }
        };
    }
    return Tensor<S>(out);
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, size_t axis) {
    if (parts.empty()) fail("tensor", "concat: empty input list");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) fail("tensor", "concat: axis out of range");
    size_t total = 0;
    for (const auto& t : parts) {
        if (t.rank() != ref.size())
            fail("tensor", "concat: rank mismatch " + shape_str(t.shape()) + " vs " +
                               shape_str(ref));
        for (size_t i = 0; i < ref.size(); ++i)
            if (i != axis && t.shape()[i] != ref[i])
                fail("tensor", "concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                                   shape_str(ref) + " on axis " + std::to_string(i));
        total += t.shape()[axis];
    }
    Shape out_shape = ref;
    out_shape[axis] = total;
    auto out = detail::make_node<S>(out_shape);
    auto sp = detail::split_axis(out_shape, axis);

    std::vector<size_t> lens(parts.size());
    std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        lens[pi] = parts[pi].shape()[axis];
        pnodes.push_back(parts[pi].node_ptr());
    }
    for (size_t o = 0; o < sp.outer; ++o) {
        size_t off = 0;
        for (size_t pi = 0; pi < parts.size(); ++pi) {
            const auto& x = parts[pi].data();
            std::copy(x.begin() + o * lens[pi] * sp.inner,
                      x.begin() + (o + 1) * lens[pi] * sp.inner,
                      out->data.begin() + (o * sp.n + off) * sp.inner);
            off += lens[pi];
        }
    }
    if (detail::record(*out, std::move(pnodes))) {
        out->backward_fn = [sp, lens](TensorNode<S>& o) {
            for (size_t ou = 0; ou < sp.outer; ++ou) {
                size_t off = 0;
                for (size_t pi = 0; pi < o.parents.size(); ++pi) {
                    auto& p = *o.parents[pi];
                    if (p.requires_grad) {
                        p.ensure_grad();
                        const S* g = o.grad.data() + (ou * sp.n + off) * sp.inner;
                        S* pg = p.grad.data() + ou * lens[pi] * sp.inner;
                        for (size_t i = 0; i < lens[pi] * sp.inner; ++i) pg[i] += g[i];
                    }
                    off += lens[pi];
                }
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Gathers: embedding lookup and time-axis reordering.
// ---------------------------------------------------------------------------

// table (V,d), ids (R,C) -> (R,C,d); gradient scatter-adds into table rows.
template <typename S>
Tensor<S> embed_lookup(const Tensor<S>& table, const IntMat& ids) {
    if (table.rank() != 2) fail("tensor", "embed_lookup: table must be rank 2");
    size_t V = table.shape()[0], d = table.shape()[1];
    for (int32_t id : ids.v)
        if (id < 0 || static_cast<size_t>(id) >= V)
            fail("tensor", "embed_lookup: id " + std::to_string(id) + " outside vocabulary of " +
                               std::to_string(V));
    auto out = detail::make_node<S>(Shape{ids.rows, ids.cols, d});
    const auto& T = table.data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy(T.begin() + ids.v[i] * d, T.begin() + (ids.v[i] + 1) * d,
                  out->data.begin() + i * d);
    if (detail::record(*out, {table.node_ptr()})) {
        auto idv = std::make_shared<std::vector<int32_t>>(ids.v);
        out->backward_fn = [idv, d](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t i = 0; i < idv->size(); ++i) {
                const S* g = o.grad.data() + i * d;
                S* pg = p.grad.data() + (*idv)[i] * d;
                for (size_t j = 0; j < d; ++j) pg[j] += g[j];
            }
        };
    }
    return Tensor<S>(out);
}

// x (B,T,d), idx (B,T) -> out[b,t,:] = x[b, idx(b,t), :]. Used to reverse
// sequences within their true lengths for the backward LSTM direction.
template <typename S>
Tensor<S> reorder_time(const Tensor<S>& x, const IntMat& idx) {
    if (x.rank() != 3) fail("tensor", "reorder_time: input must be rank 3");
    size_t B = x.shape()[0], T = x.shape()[1], d = x.shape()[2];
    if (idx.rows != B || idx.cols != T)
        fail("tensor", "reorder_time: index shape mismatch");
    for (int32_t t : idx.v)
        if (t < 0 || static_cast<size_t>(t) >= T) fail("tensor", "reorder_time: index out of range");
    auto out = detail::make_node<S>(x.shape());
    const auto& X = x.data();
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < T; ++t)
            std::copy(X.begin() + (b * T + idx.at(b, t)) * d,
                      X.begin() + (b * T + idx.at(b, t) + 1) * d,
                      out->data.begin() + (b * T + t) * d);
    if (detail::record(*out, {x.node_ptr()})) {
        auto idv = std::make_shared<IntMat>(idx);
        out->backward_fn = [idv, B, T, d](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t b = 0; b < B; ++b)
                for (size_t t = 0; t < T; ++t) {
                    const S* g = o.grad.data() + (b * T + t) * d;
                    S* pg = p.grad.data() + (b * T + idv->at(b, t)) * d;
                    for (size_t j = 0; j < d; ++j) pg[j] += g[j];
                }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis (no affine part; compose with
// mul/add for gain and bias).
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, S eps = S(1e-5)) {
    if (x.rank() < 1) fail("tensor", "layer_norm: rank must be >= 1");
    size_t d = x.shape().back();
    size_t rows = x.size() / d;
    auto out = detail::make_node<S>(x.shape());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    const auto& X = x.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = X.data() + r * d;
        S mu = 0;
        for (size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= S(d);
        S var = 0;
        for (size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= S(d);
        S is = S(1) / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        S* yr = out->data.data() + r * d;
        for (size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * is;
    }
    if (detail::record(*out, {x.node_ptr()})) {
        out->backward_fn = [inv_std, d, rows](TensorNode<S>& o) {
            auto& p = *o.parents[0];
            p.ensure_grad();
            for (size_t r = 0; r < rows; ++r) {
                const S* g = o.grad.data() + r * d;
                const S* y = o.data.data() + r * d;
                S gmean = 0, gymean = 0;
                for (size_t j = 0; j < d; ++j) {
                    gmean += g[j];
                    gymean += g[j] * y[j];
                }
                gmean /= S(d);
                gymean /= S(d);
                S is = (*inv_std)[r];
                S* pg = p.grad.data() + r * d;
                for (size_t j = 0; j < d; ++j)
                    pg[j] += is * (g[j] - gmean - y[j] * gymean);
            }
        };
    }
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <typename S>
void backward(const Tensor<S>& loss) {
    auto* root = loss.node();
    if (root->size() != 1)
        fail("tensor", "backward: loss must be scalar, got shape " + shape_str(root->shape));
    if (root->consumed) fail("tensor", "backward: tape already consumed");
    if (!root->requires_grad)
        fail("tensor", "backward: no tape recorded for this tensor");

    // Iterative post-order DFS over parents. The topo list owns the nodes so
    // clearing parent links while unwinding cannot free anything in flight.
    using NodePtr = std::shared_ptr<TensorNode<S>>;
    std::vector<NodePtr> topo;
    std::unordered_set<TensorNode<S>*> visited;
    std::vector<std::pair<NodePtr, size_t>> stack;
    stack.push_back({loss.node_ptr(), 0});
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (node->consumed) fail("tensor", "backward: tape already consumed");
        if (next < node->parents.size()) {
            const NodePtr& child = node->parents[next++];
            if (!visited.count(child.get())) {
                visited.insert(child.get());
                stack.push_back({child, 0});
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] = S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode<S>& n = **it;
        if (n.backward_fn) {
            n.ensure_grad(); // zero grad is a valid upstream signal
            n.backward_fn(n);
            n.consumed = true;
            n.backward_fn = nullptr;
            n.parents.clear();
            n.grad = {}; // interior grads are not observable
        }
    }
}

} // namespace mtkd
