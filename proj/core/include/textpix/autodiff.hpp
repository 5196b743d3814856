#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "textpix/tensor.hpp"

namespace textpix {

/// A tensor with an optional gradient slot.
///
/// Gradients are materialized lazily on first accumulation and accumulate
/// additively, so using a parameter several times in one graph sums its
/// contributions. Trainable parameters carry requires_grad and a name;
/// intermediates produced by recorded operations are marked internal so
/// gradient flow reaches parameters through them.
template <typename T>
class Variable {
public:
    Tensor<T> value;
    Tensor<T> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::string name;

    Variable() = default;
    Variable(Tensor<T> v, bool req) : value(std::move(v)), requires_grad(req) {}

    bool grad_needed() const noexcept { return requires_grad || internal_; }
    void mark_internal() noexcept { internal_ = true; }

    void ensure_grad() {
        if (grad.empty()) grad = Tensor<T>::zeros(value.shape());
    }

    void zero_grad() {
        if (!grad.empty()) {
            std::fill(grad.data(), grad.data() + grad.size(), T{0});
        }
    }

    void accumulate_grad(const Tensor<T>& g) {
        if (!g.same_shape(value)) {
            throw ShapeError("gradient shape " + shape_to_string(g.shape()) +
                             " does not match value shape " + shape_to_string(value.shape()));
        }
        ensure_grad();
        for (std::int64_t i = 0; i < g.size(); ++i) grad[i] += g[i];
    }

private:
    bool internal_ = false;
};

template <typename T>
using Var = std::shared_ptr<Variable<T>>;

template <typename T>
Var<T> make_var(Tensor<T> value, bool requires_grad = false) {
    return std::make_shared<Variable<T>>(std::move(value), requires_grad);
}

template <typename T>
Var<T> make_param(Tensor<T> value, std::string name) {
    auto v = make_var(std::move(value), true);
    v->name = std::move(name);
    return v;
}

/// Ordered record of the differentiable operations of one forward pass.
/// backward() seeds the scalar loss gradient with 1 and replays the record
/// in exact reverse execution order. A tape is used once and discarded.
template <typename T>
class Tape {
public:
    void record(std::function<void()> step) { steps_.push_back(std::move(step)); }

    std::size_t size() const noexcept { return steps_.size(); }
    void clear() { steps_.clear(); }

    void backward(const Var<T>& loss) {
        if (!loss || loss->value.size() != 1) {
            throw ContractError("backward requires a scalar loss");
        }
        loss->ensure_grad();
        loss->grad[0] = T{1};
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    }

private:
    std::vector<std::function<void()>> steps_;
};

namespace detail {

template <typename T>
Var<T> op_output(Tensor<T> value, bool grad_flows) {
    auto out = make_var(std::move(value));
    if (grad_flows) out->mark_internal();
    return out;
}

}  // namespace detail

// Elementwise building blocks used by losses and by tests composing small
// differentiable functions. Layer-sized kernels live in layers.hpp.

template <typename T>
Var<T> vadd(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a->value, b->value, "vadd");
    const bool needs = a->grad_needed() || b->grad_needed();
    auto out = detail::op_output(add(a->value, b->value), needs);
    if (needs) {
        tape.record([a, b, out] {
            if (a->grad_needed()) a->accumulate_grad(out->grad);
            if (b->grad_needed()) b->accumulate_grad(out->grad);
        });
    }
    return out;
}

template <typename T>
Var<T> vmul(Tape<T>& tape, const Var<T>& a, const Var<T>& b) {
    detail::require_same_shape(a->value, b->value, "vmul");
    const bool needs = a->grad_needed() || b->grad_needed();
    auto out = detail::op_output(mul(a->value, b->value), needs);
    if (needs) {
        tape.record([a, b, out] {
            if (a->grad_needed()) a->accumulate_grad(mul(out->grad, b->value));
            if (b->grad_needed()) b->accumulate_grad(mul(out->grad, a->value));
        });
    }
    return out;
}

template <typename T>
Var<T> vscale(Tape<T>& tape, const Var<T>& a, T factor) {
    const bool needs = a->grad_needed();
    auto out = detail::op_output(scale(a->value, factor), needs);
    if (needs) {
        tape.record([a, out, factor] { a->accumulate_grad(scale(out->grad, factor)); });
    }
    return out;
}

/// out = a + alpha * b.
template <typename T>
Var<T> vaxpy(Tape<T>& tape, const Var<T>& a, const Var<T>& b, T alpha) {
    detail::require_same_shape(a->value, b->value, "vaxpy");
    const bool needs = a->grad_needed() || b->grad_needed();
    Tensor<T> value(a->value.shape(), T{0});
    for (std::int64_t i = 0; i < value.size(); ++i) value[i] = a->value[i] + alpha * b->value[i];
    value.ensure_finite("vaxpy");
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([a, b, out, alpha] {
            if (a->grad_needed()) a->accumulate_grad(out->grad);
            if (b->grad_needed()) b->accumulate_grad(scale(out->grad, alpha));
        });
    }
    return out;
}

/// Scalar sum of all elements.
template <typename T>
Var<T> sum_all(Tape<T>& tape, const Var<T>& a) {
    const bool needs = a->grad_needed();
    auto out = detail::op_output(Tensor<T>({1}, sum(a->value)), needs);
    if (needs) {
        tape.record([a, out] {
            a->accumulate_grad(Tensor<T>(a->value.shape(), out->grad[0]));
        });
    }
    return out;
}

/// Maximum relative error between the analytic gradient of f at x and a
/// central-difference estimate with step h. f must be a pure differentiable
/// scalar function of its input. Runs in 64-bit precision only.
double grad_check(const std::function<Var<double>(Tape<double>&, const Var<double>&)>& f,
                  const Tensor<double>& x, double h);

}  // namespace textpix
