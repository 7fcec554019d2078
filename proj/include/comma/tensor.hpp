#pragma once

#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>

#include "comma/common.hpp"

namespace comma {

// Reverse-mode tape. Nodes form a DAG; each op that participates in
// differentiation stores its parents and a closure that scatters the node's
// grad into the parents' grads. Templated on the scalar type: float is the
// working precision, double exists for finite-difference checks.

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // sized lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<T>>> parents;
    std::function<void(Node<T>&)> backprop;  // empty for leaves

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

namespace detail {
inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline std::int64_t& alloc_bytes_counter() {
    thread_local std::int64_t bytes = 0;
    return bytes;
}
}  // namespace detail

// Running count of bytes allocated for tensor payloads on this thread; the
// benchmark uses deltas of this as a working-set proxy.
inline std::int64_t tensor_bytes_allocated() { return detail::alloc_bytes_counter(); }

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape construction in scope (inference, benchmarks).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), T(0), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        auto n = std::make_shared<Node<T>>();
        detail::alloc_bytes_counter() += numel(shape) * static_cast<std::int64_t>(sizeof(T));
        n->data.assign(static_cast<std::size_t>(numel(shape)), value);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad && grad_enabled();
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check(numel(shape) == static_cast<std::int64_t>(data.size()),
              strcat_msg("tensor data length ", data.size(), " does not match shape ",
                         shape_str(shape)));
        auto n = std::make_shared<Node<T>>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        n->requires_grad = requires_grad && grad_enabled();
        return Tensor(std::move(n));
    }

    static Tensor scalar(T value, bool requires_grad = false) {
        return from_data({1}, {value}, requires_grad);
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
        auto t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node()->data) v = static_cast<T>(rng.uniform(lo, hi));
        return t;
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::int64_t size() const { return node_->size(); }
    std::int64_t extent(std::size_t axis) const { return node_->shape[axis]; }
    std::size_t ndim() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const T> data() const { return {node_->data.data(), node_->data.size()}; }
    std::span<T> mutable_data() { return {node_->data.data(), node_->data.size()}; }
    std::span<const T> grad() const { return {node_->grad.data(), node_->grad.size()}; }

    T item() const {
        check(size() == 1, strcat_msg("item() on tensor of shape ", shape_str(shape())));
        return node_->data[0];
    }

    std::shared_ptr<Node<T>>& node() { return node_; }
    const std::shared_ptr<Node<T>>& node() const { return node_; }

    void zero_grad() {
        if (node_) node_->grad.clear();
    }

    // Reverse pass from a scalar root. Topological order by iterative DFS so
    // each node's grad is complete before its closure runs.
    void backward() const {
        check(size() == 1, "backward() requires a scalar root");
        check(node_->requires_grad, "backward() on a tensor outside the tape");
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        struct Frame {
            Node<T>* n;
            std::size_t next_parent;
        };
        std::vector<Frame> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            Frame& f = stack.back();
            if (f.next_parent < f.n->parents.size()) {
                Node<T>* p = f.n->parents[f.next_parent++].get();
                if (p->requires_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(f.n);
                stack.pop_back();
            }
        }
        node_->ensure_grad();
        node_->grad[0] = T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backprop) n->backprop(*n);
        }
    }

private:
    std::shared_ptr<Node<T>> node_;
};

namespace detail {

// Builds the output node of an op: records parents + closure only when the
// result actually participates in the tape.
template <class T>
Tensor<T> make_op(Shape shape, std::vector<Tensor<T>> inputs,
                  std::function<void(Node<T>&)> backprop) {
    auto n = std::make_shared<Node<T>>();
    alloc_bytes_counter() += numel(shape) * static_cast<std::int64_t>(sizeof(T));
    n->data.assign(static_cast<std::size_t>(numel(shape)), T(0));
    n->shape = std::move(shape);
    bool needs = false;
    if (grad_mode_flag()) {
        for (const auto& in : inputs) needs = needs || in.requires_grad();
    }
    n->requires_grad = needs;
    if (needs) {
        n->parents.reserve(inputs.size());
        for (auto& in : inputs) n->parents.push_back(in.node());
        n->backprop = std::move(backprop);
    }
    return Tensor<T>(std::move(n));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), strcat_msg("add: shape mismatch ", shape_str(a.shape()), " vs ",
                                             shape_str(b.shape())));
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](Node<T>& self) {
        for (int k = 0; k < 2; ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
        }
    });
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] + pb[i];
    return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), strcat_msg("sub: shape mismatch ", shape_str(a.shape()), " vs ",
                                             shape_str(b.shape())));
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pb.grad[i] -= self.grad[i];
        }
    });
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] - pb[i];
    return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    check(a.shape() == b.shape(), strcat_msg("mul: shape mismatch ", shape_str(a.shape()), " vs ",
                                             shape_str(b.shape())));
    auto out = detail::make_op<T>(a.shape(), {a, b}, [](Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pa.grad[i] += self.grad[i] * pb.data[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                pb.grad[i] += self.grad[i] * pa.data[i];
        }
    });
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < a.size(); ++i) po[i] = pa[i] * pb[i];
    return out;
}

// y = scale * x + shift, elementwise with scalar coefficients.
template <class T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift) {
    auto out = detail::make_op<T>(x.shape(), {x}, [scale](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += scale * self.grad[i];
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = scale * px[i] + shift;
    return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
    return affine(x, s, T(0));
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    auto out = detail::make_op<T>({1}, {x}, [](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        T g = self.grad[0];
        for (auto& v : p.grad) v += g;
    });
    T acc = T(0);
    for (T v : x.data()) acc += v;
    out.mutable_data()[0] = acc;
    return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
    check(numel(new_shape) == x.size(), strcat_msg("reshape: ", shape_str(x.shape()), " -> ",
                                                   shape_str(new_shape), " changes element count"));
    auto out = detail::make_op<T>(std::move(new_shape), {x}, [](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
    std::memcpy(out.mutable_data().data(), x.data().data(), sizeof(T) * x.size());
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class Fwd, class Dfn>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfn dfn) {
    auto out = detail::make_op<T>(x.shape(), {x}, [dfn](Node<T>& self) {
        auto& p = *self.parents[0];
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i] * dfn(p.data[i], self.data[i]);
    });
    const T* px = x.data().data();
    T* po = out.mutable_data().data();
    for (std::int64_t i = 0; i < x.size(); ++i) po[i] = fwd(px[i]);
    return out;
}

template <class T>
T sigmoid_scalar(T x) {
    if (x >= T(0)) {
        T e = std::exp(-x);
        return T(1) / (T(1) + e);
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace detail

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); },
        [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01)) {
    return detail::unary_op(
        x, [slope](T v) { return v > T(0) ? v : slope * v; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return detail::sigmoid_scalar(v); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v * detail::sigmoid_scalar(v); },
        [](T v, T) {
            T s = detail::sigmoid_scalar(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

// Exact (erf) formulation.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return detail::unary_op(
        x,
        [=](T v) {
            return static_cast<T>(0.5 * static_cast<double>(v) *
                                  (1.0 + std::erf(static_cast<double>(v) * inv_sqrt2)));
        },
        [=](T v, T) {
            double d = static_cast<double>(v);
            double cdf = 0.5 * (1.0 + std::erf(d * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * d * d);
            return static_cast<T>(cdf + d * pdf);
        });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op(
        x,
        [](T v) {
            // log(1+e^x), stable on both tails
            if (v > T(20)) return v;
            if (v < T(-20)) return std::exp(v);
            return std::log1p(std::exp(v));
        },
        [](T v, T) { return detail::sigmoid_scalar(v); });
}

enum class Activation { kRelu, kLeakyRelu, kSilu, kGelu, kSigmoid };

template <class T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation kind) {
    switch (kind) {
        case Activation::kRelu: return relu(x);
        case Activation::kLeakyRelu: return leaky_relu(x);
        case Activation::kSilu: return silu(x);
        case Activation::kGelu: return gelu(x);
        case Activation::kSigmoid: return sigmoid(x);
    }
    fail("unknown activation");
}

}  // namespace comma
