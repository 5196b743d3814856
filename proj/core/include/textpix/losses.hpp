#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "textpix/autodiff.hpp"
#include "textpix/tensor.hpp"

namespace textpix {

enum class LossVariant { sum, mean };

/// Mixing configuration for the composite objective
/// total = l0 + lambda * pixel. The sum variant pairs naturally with
/// lambda = 0.8; the mean variant needs much larger values (6 by default)
/// because the pixel term is smaller by the element count.
struct LossConfig {
    LossVariant variant = LossVariant::sum;
    double lambda = 0.8;

    static LossConfig sum_variant(double lambda = 0.8) { return {LossVariant::sum, lambda}; }
    static LossConfig mean_variant(double lambda = 6.0) { return {LossVariant::mean, lambda}; }

    void validate() const {
        if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
    }
};

inline constexpr double kCrossEntropyEpsilon = 1e-12;

/// Max-shifted softmax over the last axis of [K] or [B, K]; stable for
/// arbitrarily large finite logits.
template <typename T>
Var<T> softmax(Tape<T>& tape, const Var<T>& logits) {
    const Shape& s = logits->value.shape();
    if (s.size() != 1 && s.size() != 2) {
        throw ShapeError("softmax expects rank 1 or 2, got " + shape_to_string(s));
    }
    const std::int64_t batch = s.size() == 2 ? s[0] : 1;
    const std::int64_t k = s.size() == 2 ? s[1] : s[0];

    Tensor<T> value(s, T{0});
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* row = logits->value.data() + b * k;
        T* dst = value.data() + b * k;
        T m = row[0];
        for (std::int64_t i = 1; i < k; ++i) m = std::max(m, row[i]);
        T total{0};
        for (std::int64_t i = 0; i < k; ++i) {
            dst[i] = std::exp(row[i] - m);
            total += dst[i];
        }
        const T inv = T{1} / total;
        for (std::int64_t i = 0; i < k; ++i) dst[i] *= inv;
    }

    const bool needs = logits->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([logits, out, batch, k] {
            Tensor<T> g(logits->value.shape(), T{0});
            for (std::int64_t b = 0; b < batch; ++b) {
                const T* p = out->value.data() + b * k;
                const T* go = out->grad.data() + b * k;
                T dot{0};
                for (std::int64_t i = 0; i < k; ++i) dot += go[i] * p[i];
                T* dst = g.data() + b * k;
                for (std::int64_t i = 0; i < k; ++i) dst[i] = p[i] * (go[i] - dot);
            }
            logits->accumulate_grad(g);
        });
    }
    return out;
}

namespace detail {

template <typename T>
void validate_one_hot(const Tensor<T>& one_hot, std::int64_t batch, std::int64_t k) {
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* row = one_hot.data() + b * k;
        T total{0};
        for (std::int64_t i = 0; i < k; ++i) {
            if (row[i] != T{0} && row[i] != T{1}) {
                throw ContractError("one-hot labels must contain only 0 and 1");
            }
            total += row[i];
        }
        if (total != T{1}) {
            throw ContractError("each one-hot label must have exactly one active class");
        }
    }
}

}  // namespace detail

/// -sum_i y_i log(p_i + eps) with a 1e-12 guard; rank-2 inputs are averaged
/// over the batch.
template <typename T>
Var<T> cross_entropy(Tape<T>& tape, const Var<T>& probs, const Tensor<T>& one_hot) {
    detail::require_same_shape(probs->value, one_hot, "cross_entropy");
    const Shape& s = probs->value.shape();
    if (s.size() != 1 && s.size() != 2) {
        throw ShapeError("cross_entropy expects rank 1 or 2, got " + shape_to_string(s));
    }
    const std::int64_t batch = s.size() == 2 ? s[0] : 1;
    const std::int64_t k = s.size() == 2 ? s[1] : s[0];
    detail::validate_one_hot(one_hot, batch, k);

    const T eps = static_cast<T>(kCrossEntropyEpsilon);
    T total{0};
    for (std::int64_t i = 0; i < probs->value.size(); ++i) {
        if (one_hot[i] != T{0}) {
            total -= std::log(probs->value[i] + eps);
        }
    }
    total /= static_cast<T>(batch);

    const bool needs = probs->grad_needed();
    auto out = detail::op_output(Tensor<T>({1}, total), needs);
    if (needs) {
        tape.record([probs, out, one_hot, batch, eps] {
            const T go = out->grad[0];
            const T inv_batch = T{1} / static_cast<T>(batch);
            Tensor<T> g(probs->value.shape(), T{0});
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (one_hot[i] != T{0}) {
                    g[i] = -go * inv_batch / (probs->value[i] + eps);
                }
            }
            probs->accumulate_grad(g);
        });
    }
    return out;
}

namespace detail {

template <typename T>
Var<T> pixel_loss(Tape<T>& tape, const Var<T>& image, const Tensor<T>& target, bool per_element) {
    require_same_shape(image->value, target, "pixel_loss");
    const Shape& s = image->value.shape();
    if (s.size() != 3 && s.size() != 4) {
        throw ShapeError("pixel_loss expects [C, H, W] or [B, C, H, W], got " +
                         shape_to_string(s));
    }
    const std::int64_t batch = s.size() == 4 ? s[0] : 1;
    const std::int64_t per_sample = image->value.size() / batch;

    T total{0};
    for (std::int64_t i = 0; i < image->value.size(); ++i) {
        const T d = image->value[i] - target[i];
        total += d * d;
    }
    // Per-sample loss (sum or element mean), averaged over the batch.
    T norm = T{1} / static_cast<T>(batch);
    if (per_element) norm /= static_cast<T>(per_sample);
    total *= norm;

    const bool needs = image->grad_needed();
    auto out = detail::op_output(Tensor<T>({1}, total), needs);
    if (needs) {
        tape.record([image, out, target, norm] {
            const T k = T{2} * norm * out->grad[0];
            Tensor<T> g(image->value.shape(), T{0});
            for (std::int64_t i = 0; i < g.size(); ++i) {
                g[i] = k * (image->value[i] - target[i]);
            }
            image->accumulate_grad(g);
        });
    }
    return out;
}

}  // namespace detail

/// Sum of squared per-element distances between the generated layer and the
/// target image; rank-4 inputs are averaged over the batch.
template <typename T>
Var<T> pixel_loss_sum(Tape<T>& tape, const Var<T>& image, const Tensor<T>& target) {
    return detail::pixel_loss(tape, image, target, false);
}

/// pixel_loss_sum divided by the per-sample element count.
template <typename T>
Var<T> pixel_loss_mean(Tape<T>& tape, const Var<T>& image, const Tensor<T>& target) {
    return detail::pixel_loss(tape, image, target, true);
}

template <typename T>
struct LossBreakdown {
    Var<T> l0;     // classification cross-entropy
    Var<T> pixel;  // sum or mean pixel loss, per config
    Var<T> total;  // l0 + lambda * pixel; exactly l0 when lambda == 0
};

template <typename T>
LossBreakdown<T> combined_loss(Tape<T>& tape, const Var<T>& logits, const Tensor<T>& one_hot,
                               const Var<T>& image, const Tensor<T>& target,
                               const LossConfig& cfg) {
    cfg.validate();
    LossBreakdown<T> out;
    auto probs = softmax(tape, logits);
    out.l0 = cross_entropy(tape, probs, one_hot);
    out.pixel = cfg.variant == LossVariant::sum ? pixel_loss_sum(tape, image, target)
                                                : pixel_loss_mean(tape, image, target);
    if (cfg.lambda == 0.0) {
        out.total = out.l0;
    } else {
        out.total = vaxpy(tape, out.l0, out.pixel, static_cast<T>(cfg.lambda));
    }
    return out;
}

}  // namespace textpix
