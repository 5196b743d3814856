#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "textpix/autodiff.hpp"
#include "textpix/rng.hpp"
#include "textpix/tensor.hpp"

namespace textpix {

enum class Mode { train, infer };

namespace detail {

// Most layer kernels run on [B, ...] buffers; the public operations also
// accept the single-sample rank and treat it as a batch of one.
struct BatchedMatrix {
    std::int64_t batch, rows, cols;
    bool had_batch;
};

inline BatchedMatrix batched_matrix(const Shape& s, const char* op) {
    if (s.size() == 2) return {1, s[0], s[1], false};
    if (s.size() == 3) return {s[0], s[1], s[2], true};
    throw ShapeError(std::string(op) + ": expected rank 2 or 3, got " + shape_to_string(s));
}

struct BatchedImage {
    std::int64_t batch, channels, height, width;
    bool had_batch;
};

inline BatchedImage batched_image(const Shape& s, const char* op) {
    if (s.size() == 3) return {1, s[0], s[1], s[2], false};
    if (s.size() == 4) return {s[0], s[1], s[2], s[3], true};
    throw ShapeError(std::string(op) + ": expected rank 3 or 4, got " + shape_to_string(s));
}

inline Shape with_batch(bool had_batch, std::int64_t batch, Shape rest) {
    if (!had_batch) return rest;
    Shape out;
    out.reserve(rest.size() + 1);
    out.push_back(batch);
    out.insert(out.end(), rest.begin(), rest.end());
    return out;
}

}  // namespace detail

template <typename T>
Var<T> relu(Tape<T>& tape, const Var<T>& x) {
    Tensor<T> value(x->value.shape(), T{0});
    for (std::int64_t i = 0; i < value.size(); ++i) value[i] = std::max(T{0}, x->value[i]);
    const bool needs = x->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([x, out] {
            Tensor<T> g(x->value.shape(), T{0});
            for (std::int64_t i = 0; i < g.size(); ++i) {
                g[i] = x->value[i] > T{0} ? out->grad[i] : T{0};
            }
            x->accumulate_grad(g);
        });
    }
    return out;
}

template <typename T>
Var<T> sigmoid(Tape<T>& tape, const Var<T>& x) {
    Tensor<T> value(x->value.shape(), T{0});
    for (std::int64_t i = 0; i < value.size(); ++i) {
        value[i] = T{1} / (T{1} + std::exp(-x->value[i]));
    }
    const bool needs = x->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([x, out] {
            Tensor<T> g(x->value.shape(), T{0});
            for (std::int64_t i = 0; i < g.size(); ++i) {
                const T y = out->value[i];
                g[i] = out->grad[i] * y * (T{1} - y);
            }
            x->accumulate_grad(g);
        });
    }
    return out;
}

/// W x + b for x of shape [n_in] or [B, n_in], W of shape [n_out, n_in].
template <typename T>
Var<T> dense(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const Shape& xs = x->value.shape();
    const bool had_batch = xs.size() == 2;
    if (xs.size() != 1 && xs.size() != 2) {
        throw ShapeError("dense: input must be rank 1 or 2, got " + shape_to_string(xs));
    }
    const std::int64_t batch = had_batch ? xs[0] : 1;
    const std::int64_t n_in = had_batch ? xs[1] : xs[0];
    if (weight->value.rank() != 2 || weight->value.extent(1) != n_in) {
        throw ShapeError("dense: weight " + shape_to_string(weight->value.shape()) +
                         " incompatible with input " + shape_to_string(xs));
    }
    const std::int64_t n_out = weight->value.extent(0);
    if (bias->value.size() != n_out) {
        throw ShapeError("dense: bias size must equal output size");
    }

    Tensor<T> value(detail::with_batch(had_batch, batch, {n_out}), T{0});
    const T* px = x->value.data();
    const T* pw = weight->value.data();
    const T* pb = bias->value.data();
    T* py = value.data();
    for (std::int64_t b = 0; b < batch; ++b) {
        const T* xr = px + b * n_in;
        T* yr = py + b * n_out;
        for (std::int64_t o = 0; o < n_out; ++o) {
            const T* wr = pw + o * n_in;
            T acc = pb[o];
            for (std::int64_t i = 0; i < n_in; ++i) acc += wr[i] * xr[i];
            yr[o] = acc;
        }
    }

    const bool needs = x->grad_needed() || weight->grad_needed() || bias->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([x, weight, bias, out, batch, n_in, n_out] {
            const T* g = out->grad.data();
            if (x->grad_needed()) {
                Tensor<T> gx(x->value.shape(), T{0});
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* gr = g + b * n_out;
                    T* dst = gx.data() + b * n_in;
                    for (std::int64_t o = 0; o < n_out; ++o) {
                        const T go = gr[o];
                        const T* wr = weight->value.data() + o * n_in;
                        for (std::int64_t i = 0; i < n_in; ++i) dst[i] += go * wr[i];
                    }
                }
                x->accumulate_grad(gx);
            }
            if (weight->grad_needed()) {
                Tensor<T> gw(weight->value.shape(), T{0});
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* gr = g + b * n_out;
                    const T* xr = x->value.data() + b * n_in;
                    for (std::int64_t o = 0; o < n_out; ++o) {
                        const T go = gr[o];
                        T* dst = gw.data() + o * n_in;
                        for (std::int64_t i = 0; i < n_in; ++i) dst[i] += go * xr[i];
                    }
                }
                weight->accumulate_grad(gw);
            }
            if (bias->grad_needed()) {
                Tensor<T> gb(bias->value.shape(), T{0});
                for (std::int64_t b = 0; b < batch; ++b) {
                    const T* gr = g + b * n_out;
                    for (std::int64_t o = 0; o < n_out; ++o) gb[o] += gr[o];
                }
                bias->accumulate_grad(gb);
            }
        });
    }
    return out;
}

/// 1-D convolution of a sentence matrix [L, d] (or [B, L, d]) with a filter
/// group [count, m, d], zero-padded by m-1 on both ends so the output length
/// is L + m - 1. Cross-correlation orientation, bias added per filter.
template <typename T>
Var<T> conv_text(Tape<T>& tape, const Var<T>& s, const Var<T>& weight, const Var<T>& bias) {
    const auto in = detail::batched_matrix(s->value.shape(), "conv_text");
    if (weight->value.rank() != 3) {
        throw ShapeError("conv_text: filter group must be rank 3 [count, m, d]");
    }
    const std::int64_t count = weight->value.extent(0);
    const std::int64_t m = weight->value.extent(1);
    const std::int64_t dim = weight->value.extent(2);
    if (dim != in.cols) {
        throw ShapeError("conv_text: filter depth " + std::to_string(dim) +
                         " does not match embedding dim " + std::to_string(in.cols));
    }
    if (bias->value.size() != count) {
        throw ShapeError("conv_text: bias size must equal filter count");
    }
    const std::int64_t len = in.rows;
    const std::int64_t out_len = len + m - 1;
    const std::int64_t pad_len = len + 2 * (m - 1);

    Tensor<T> value(detail::with_batch(in.had_batch, in.batch, {count, out_len}), T{0});
    std::vector<T> padded(static_cast<std::size_t>(pad_len * dim));
    for (std::int64_t b = 0; b < in.batch; ++b) {
        std::fill(padded.begin(), padded.end(), T{0});
        std::copy(s->value.data() + b * len * dim, s->value.data() + (b + 1) * len * dim,
                  padded.data() + (m - 1) * dim);
        for (std::int64_t f = 0; f < count; ++f) {
            const T* wf = weight->value.data() + f * m * dim;
            T* yr = value.data() + (b * count + f) * out_len;
            const T bf = bias->value[f];
            for (std::int64_t i = 0; i < out_len; ++i) {
                const T* window = padded.data() + i * dim;
                T acc = bf;
                for (std::int64_t j = 0; j < m * dim; ++j) acc += window[j] * wf[j];
                yr[i] = acc;
            }
        }
    }

    const bool needs = s->grad_needed() || weight->grad_needed() || bias->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        const auto batch = in.batch;
        tape.record([s, weight, bias, out, batch, count, m, dim, len, out_len, pad_len] {
            Tensor<T> gs(s->value.shape(), T{0});
            Tensor<T> gw(weight->value.shape(), T{0});
            Tensor<T> gb(bias->value.shape(), T{0});
            std::vector<T> padded(static_cast<std::size_t>(pad_len * dim));
            std::vector<T> gpad(static_cast<std::size_t>(pad_len * dim));
            for (std::int64_t b = 0; b < batch; ++b) {
                std::fill(padded.begin(), padded.end(), T{0});
                std::fill(gpad.begin(), gpad.end(), T{0});
                std::copy(s->value.data() + b * len * dim, s->value.data() + (b + 1) * len * dim,
                          padded.data() + (m - 1) * dim);
                for (std::int64_t f = 0; f < count; ++f) {
                    const T* wf = weight->value.data() + f * m * dim;
                    T* gwf = gw.data() + f * m * dim;
                    const T* gr = out->grad.data() + (b * count + f) * out_len;
                    for (std::int64_t i = 0; i < out_len; ++i) {
                        const T go = gr[i];
                        if (go == T{0}) continue;
                        const T* window = padded.data() + i * dim;
                        T* gwin = gpad.data() + i * dim;
                        for (std::int64_t j = 0; j < m * dim; ++j) {
                            gwf[j] += go * window[j];
                            gwin[j] += go * wf[j];
                        }
                        gb[f] += go;
                    }
                }
                // Crop padding rows back to the sentence rows.
                for (std::int64_t r = 0; r < len; ++r) {
                    const T* src = gpad.data() + (r + m - 1) * dim;
                    T* dst = gs.data() + (b * len + r) * dim;
                    for (std::int64_t k = 0; k < dim; ++k) dst[k] += src[k];
                }
            }
            if (s->grad_needed()) s->accumulate_grad(gs);
            if (weight->grad_needed()) weight->accumulate_grad(gw);
            if (bias->grad_needed()) bias->accumulate_grad(gb);
        });
    }
    return out;
}

/// Max over the last axis of [count, T] (or [B, count, T]); ties route the
/// gradient to the first maximal index.
template <typename T>
Var<T> max_over_time(Tape<T>& tape, const Var<T>& c) {
    const auto in = detail::batched_matrix(c->value.shape(), "max_over_time");
    Tensor<T> value(detail::with_batch(in.had_batch, in.batch, {in.rows}), T{0});
    std::vector<std::int64_t> arg(static_cast<std::size_t>(in.batch * in.rows), 0);
    for (std::int64_t b = 0; b < in.batch; ++b) {
        for (std::int64_t f = 0; f < in.rows; ++f) {
            const T* row = c->value.data() + (b * in.rows + f) * in.cols;
            std::int64_t best = 0;
            for (std::int64_t i = 1; i < in.cols; ++i) {
                if (row[i] > row[best]) best = i;
            }
            value[b * in.rows + f] = row[best];
            arg[static_cast<std::size_t>(b * in.rows + f)] = best;
        }
    }
    const bool needs = c->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        const auto batch = in.batch;
        const auto rows = in.rows;
        const auto cols = in.cols;
        tape.record([c, out, arg = std::move(arg), batch, rows, cols] {
            Tensor<T> g(c->value.shape(), T{0});
            for (std::int64_t r = 0; r < batch * rows; ++r) {
                g[r * cols + arg[static_cast<std::size_t>(r)]] += out->grad[r];
            }
            c->accumulate_grad(g);
        });
    }
    return out;
}

/// Nearest-neighbor resize of [C, H, W] (or [B, C, H, W]) to target_h x
/// target_w using src = floor(dst * in / out). Enlargement only.
template <typename T>
Var<T> upsample_nearest(Tape<T>& tape, const Var<T>& x, std::int64_t target_h,
                        std::int64_t target_w) {
    const auto in = detail::batched_image(x->value.shape(), "upsample_nearest");
    if (target_h < in.height || target_w < in.width) {
        throw ContractError("upsample_nearest cannot shrink: " + std::to_string(in.height) + "x" +
                            std::to_string(in.width) + " -> " + std::to_string(target_h) + "x" +
                            std::to_string(target_w));
    }
    std::vector<std::int64_t> row_map(static_cast<std::size_t>(target_h));
    std::vector<std::int64_t> col_map(static_cast<std::size_t>(target_w));
    for (std::int64_t i = 0; i < target_h; ++i) row_map[static_cast<std::size_t>(i)] = i * in.height / target_h;
    for (std::int64_t j = 0; j < target_w; ++j) col_map[static_cast<std::size_t>(j)] = j * in.width / target_w;

    Tensor<T> value(detail::with_batch(in.had_batch, in.batch, {in.channels, target_h, target_w}),
                    T{0});
    const std::int64_t planes = in.batch * in.channels;
    for (std::int64_t p = 0; p < planes; ++p) {
        const T* src = x->value.data() + p * in.height * in.width;
        T* dst = value.data() + p * target_h * target_w;
        for (std::int64_t i = 0; i < target_h; ++i) {
            const T* srow = src + row_map[static_cast<std::size_t>(i)] * in.width;
            T* drow = dst + i * target_w;
            for (std::int64_t j = 0; j < target_w; ++j) {
                drow[j] = srow[col_map[static_cast<std::size_t>(j)]];
            }
        }
    }

    const bool needs = x->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        const auto h = in.height;
        const auto w = in.width;
        tape.record([x, out, row_map = std::move(row_map), col_map = std::move(col_map), planes, h,
                     w, target_h, target_w] {
            Tensor<T> g(x->value.shape(), T{0});
            for (std::int64_t p = 0; p < planes; ++p) {
                const T* grow = out->grad.data() + p * target_h * target_w;
                T* dst = g.data() + p * h * w;
                for (std::int64_t i = 0; i < target_h; ++i) {
                    T* drow = dst + row_map[static_cast<std::size_t>(i)] * w;
                    const T* srow = grow + i * target_w;
                    for (std::int64_t j = 0; j < target_w; ++j) {
                        drow[col_map[static_cast<std::size_t>(j)]] += srow[j];
                    }
                }
            }
            x->accumulate_grad(g);
        });
    }
    return out;
}

/// 2-D cross-correlation of [C_in, H, W] (or [B, C_in, H, W]) with
/// [C_out, C_in, K, K] plus bias. Output spatial size is
/// (H + 2 pad - K) / stride + 1.
template <typename T>
Var<T> conv2d(Tape<T>& tape, const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
              std::int64_t stride, std::int64_t pad) {
    const auto in = detail::batched_image(x->value.shape(), "conv2d");
    if (weight->value.rank() != 4) {
        throw ShapeError("conv2d: weight must be rank 4 [C_out, C_in, K, K]");
    }
    const std::int64_t c_out = weight->value.extent(0);
    const std::int64_t c_in = weight->value.extent(1);
    const std::int64_t kh = weight->value.extent(2);
    const std::int64_t kw = weight->value.extent(3);
    if (c_in != in.channels) {
        throw ShapeError("conv2d: input has " + std::to_string(in.channels) +
                         " channels but weight expects " + std::to_string(c_in));
    }
    if (bias->value.size() != c_out) {
        throw ShapeError("conv2d: bias size must equal output channels");
    }
    if (stride <= 0 || pad < 0) {
        throw ConfigError("conv2d: stride must be positive and padding non-negative");
    }
    const std::int64_t hp = in.height + 2 * pad;
    const std::int64_t wp = in.width + 2 * pad;
    const std::int64_t ho = (hp - kh) / stride + 1;
    const std::int64_t wo = (wp - kw) / stride + 1;
    if (hp < kh || wp < kw) {
        throw ShapeError("conv2d: kernel larger than padded input");
    }

    Tensor<T> value(detail::with_batch(in.had_batch, in.batch, {c_out, ho, wo}), T{0});
    std::vector<T> padded(static_cast<std::size_t>(c_in * hp * wp));
    for (std::int64_t b = 0; b < in.batch; ++b) {
        std::fill(padded.begin(), padded.end(), T{0});
        for (std::int64_t c = 0; c < c_in; ++c) {
            for (std::int64_t r = 0; r < in.height; ++r) {
                const T* src = x->value.data() + ((b * c_in + c) * in.height + r) * in.width;
                std::copy(src, src + in.width, padded.data() + (c * hp + r + pad) * wp + pad);
            }
        }
        for (std::int64_t co = 0; co < c_out; ++co) {
            const T bias_v = bias->value[co];
            T* orow = value.data() + ((b * c_out + co) * ho) * wo;
            for (std::int64_t i = 0; i < ho; ++i) {
                for (std::int64_t j = 0; j < wo; ++j) {
                    T acc = bias_v;
                    const T* wbase = weight->value.data() + co * c_in * kh * kw;
                    for (std::int64_t c = 0; c < c_in; ++c) {
                        const T* xb = padded.data() + (c * hp + i * stride) * wp + j * stride;
                        const T* wb = wbase + c * kh * kw;
                        for (std::int64_t r = 0; r < kh; ++r) {
                            const T* xr = xb + r * wp;
                            const T* wr = wb + r * kw;
                            for (std::int64_t q = 0; q < kw; ++q) acc += xr[q] * wr[q];
                        }
                    }
                    orow[i * wo + j] = acc;
                }
            }
        }
    }

    const bool needs = x->grad_needed() || weight->grad_needed() || bias->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        const auto dims = in;
        tape.record([x, weight, bias, out, dims, c_out, c_in, kh, kw, stride, pad, hp, wp, ho,
                     wo] {
            Tensor<T> gx(x->value.shape(), T{0});
            Tensor<T> gw(weight->value.shape(), T{0});
            Tensor<T> gb(bias->value.shape(), T{0});
            std::vector<T> padded(static_cast<std::size_t>(c_in * hp * wp));
            std::vector<T> gpad(static_cast<std::size_t>(c_in * hp * wp));
            for (std::int64_t b = 0; b < dims.batch; ++b) {
                std::fill(padded.begin(), padded.end(), T{0});
                std::fill(gpad.begin(), gpad.end(), T{0});
                for (std::int64_t c = 0; c < c_in; ++c) {
                    for (std::int64_t r = 0; r < dims.height; ++r) {
                        const T* src =
                            x->value.data() + ((b * c_in + c) * dims.height + r) * dims.width;
                        std::copy(src, src + dims.width,
                                  padded.data() + (c * hp + r + pad) * wp + pad);
                    }
                }
                for (std::int64_t co = 0; co < c_out; ++co) {
                    const T* grow = out->grad.data() + ((b * c_out + co) * ho) * wo;
                    const T* wbase = weight->value.data() + co * c_in * kh * kw;
                    T* gwbase = gw.data() + co * c_in * kh * kw;
                    for (std::int64_t i = 0; i < ho; ++i) {
                        for (std::int64_t j = 0; j < wo; ++j) {
                            const T go = grow[i * wo + j];
                            if (go == T{0}) continue;
                            gb[co] += go;
                            for (std::int64_t c = 0; c < c_in; ++c) {
                                const T* xb = padded.data() + (c * hp + i * stride) * wp + j * stride;
                                T* gxb = gpad.data() + (c * hp + i * stride) * wp + j * stride;
                                const T* wb = wbase + c * kh * kw;
                                T* gwb = gwbase + c * kh * kw;
                                for (std::int64_t r = 0; r < kh; ++r) {
                                    const T* xr = xb + r * wp;
                                    T* gxr = gxb + r * wp;
                                    const T* wr = wb + r * kw;
                                    T* gwr = gwb + r * kw;
                                    for (std::int64_t q = 0; q < kw; ++q) {
                                        gwr[q] += go * xr[q];
                                        gxr[q] += go * wr[q];
                                    }
                                }
                            }
                        }
                    }
                }
                for (std::int64_t c = 0; c < c_in; ++c) {
                    for (std::int64_t r = 0; r < dims.height; ++r) {
                        const T* src = gpad.data() + (c * hp + r + pad) * wp + pad;
                        T* dst = gx.data() + ((b * c_in + c) * dims.height + r) * dims.width;
                        for (std::int64_t q = 0; q < dims.width; ++q) dst[q] += src[q];
                    }
                }
            }
            if (x->grad_needed()) x->accumulate_grad(gx);
            if (weight->grad_needed()) weight->accumulate_grad(gw);
            if (bias->grad_needed()) bias->accumulate_grad(gb);
        });
    }
    return out;
}

/// Per-channel batch normalization state.
template <typename T>
struct BatchNorm2d {
    Var<T> gamma, beta;
    Tensor<T> running_mean, running_var;
    double momentum = 0.9;
    double epsilon = 1e-5;

    static BatchNorm2d create(std::int64_t channels, const std::string& name) {
        BatchNorm2d bn;
        bn.gamma = make_param(Tensor<T>({channels}, T{1}), name + ".gamma");
        bn.beta = make_param(Tensor<T>({channels}, T{0}), name + ".beta");
        bn.running_mean = Tensor<T>({channels}, T{0});
        bn.running_var = Tensor<T>({channels}, T{1});
        return bn;
    }
};

/// Train mode normalizes with batch statistics over (B, H, W) per channel and
/// updates the running estimates; infer mode applies the running estimates.
/// Train mode needs at least two samples in the batch.
template <typename T>
Var<T> batch_norm(Tape<T>& tape, const Var<T>& x, BatchNorm2d<T>& layer, Mode mode) {
    if (x->value.rank() != 4) {
        throw ShapeError("batch_norm expects [B, C, H, W], got " +
                         shape_to_string(x->value.shape()));
    }
    const std::int64_t batch = x->value.extent(0);
    const std::int64_t channels = x->value.extent(1);
    const std::int64_t height = x->value.extent(2);
    const std::int64_t width = x->value.extent(3);
    if (layer.gamma->value.size() != channels) {
        throw ShapeError("batch_norm: parameter size does not match channel count");
    }
    if (mode == Mode::train && batch < 2) {
        throw ContractError("batch_norm in train mode needs a batch of at least 2");
    }

    const std::int64_t plane = height * width;
    const std::int64_t per_channel = batch * plane;
    std::vector<T> mean(static_cast<std::size_t>(channels), T{0});
    std::vector<T> var(static_cast<std::size_t>(channels), T{0});
    if (mode == Mode::train) {
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t c = 0; c < channels; ++c) {
                const T* src = x->value.data() + (b * channels + c) * plane;
                T acc{0};
                for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
                mean[static_cast<std::size_t>(c)] += acc;
            }
        }
        for (std::int64_t c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] /= static_cast<T>(per_channel);
        }
        for (std::int64_t b = 0; b < batch; ++b) {
            for (std::int64_t c = 0; c < channels; ++c) {
                const T* src = x->value.data() + (b * channels + c) * plane;
                const T mu = mean[static_cast<std::size_t>(c)];
                T acc{0};
                for (std::int64_t i = 0; i < plane; ++i) {
                    const T d = src[i] - mu;
                    acc += d * d;
                }
                var[static_cast<std::size_t>(c)] += acc;
            }
        }
        for (std::int64_t c = 0; c < channels; ++c) {
            var[static_cast<std::size_t>(c)] /= static_cast<T>(per_channel);
        }
        const T keep = static_cast<T>(layer.momentum);
        for (std::int64_t c = 0; c < channels; ++c) {
            layer.running_mean[c] = keep * layer.running_mean[c] +
                                    (T{1} - keep) * mean[static_cast<std::size_t>(c)];
            layer.running_var[c] =
                keep * layer.running_var[c] + (T{1} - keep) * var[static_cast<std::size_t>(c)];
        }
    } else {
        for (std::int64_t c = 0; c < channels; ++c) {
            mean[static_cast<std::size_t>(c)] = layer.running_mean[c];
            var[static_cast<std::size_t>(c)] = layer.running_var[c];
        }
    }

    std::vector<T> inv_std(static_cast<std::size_t>(channels));
    for (std::int64_t c = 0; c < channels; ++c) {
        inv_std[static_cast<std::size_t>(c)] =
            T{1} / std::sqrt(var[static_cast<std::size_t>(c)] + static_cast<T>(layer.epsilon));
    }

    Tensor<T> value(x->value.shape(), T{0});
    std::vector<T> xhat(static_cast<std::size_t>(x->value.size()));
    for (std::int64_t b = 0; b < batch; ++b) {
        for (std::int64_t c = 0; c < channels; ++c) {
            const T* src = x->value.data() + (b * channels + c) * plane;
            T* dst = value.data() + (b * channels + c) * plane;
            T* xh = xhat.data() + (b * channels + c) * plane;
            const T mu = mean[static_cast<std::size_t>(c)];
            const T is = inv_std[static_cast<std::size_t>(c)];
            const T g = layer.gamma->value[c];
            const T be = layer.beta->value[c];
            for (std::int64_t i = 0; i < plane; ++i) {
                const T n = (src[i] - mu) * is;
                xh[i] = n;
                dst[i] = n * g + be;
            }
        }
    }

    auto gamma = layer.gamma;
    auto beta = layer.beta;
    const bool needs = x->grad_needed() || gamma->grad_needed() || beta->grad_needed();
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        const bool train = mode == Mode::train;
        tape.record([x, gamma, beta, out, xhat = std::move(xhat), inv_std = std::move(inv_std),
                     batch, channels, plane, per_channel, train] {
            std::vector<T> sum_dy(static_cast<std::size_t>(channels), T{0});
            std::vector<T> sum_dy_xhat(static_cast<std::size_t>(channels), T{0});
            for (std::int64_t b = 0; b < batch; ++b) {
                for (std::int64_t c = 0; c < channels; ++c) {
                    const T* g = out->grad.data() + (b * channels + c) * plane;
                    const T* xh = xhat.data() + (b * channels + c) * plane;
                    T s1{0}, s2{0};
                    for (std::int64_t i = 0; i < plane; ++i) {
                        s1 += g[i];
                        s2 += g[i] * xh[i];
                    }
                    sum_dy[static_cast<std::size_t>(c)] += s1;
                    sum_dy_xhat[static_cast<std::size_t>(c)] += s2;
                }
            }
            if (beta->grad_needed()) {
                beta->accumulate_grad(Tensor<T>({channels}, std::vector<T>(sum_dy)));
            }
            if (gamma->grad_needed()) {
                gamma->accumulate_grad(Tensor<T>({channels}, std::vector<T>(sum_dy_xhat)));
            }
            if (x->grad_needed()) {
                Tensor<T> gx(x->value.shape(), T{0});
                const T m = static_cast<T>(per_channel);
                for (std::int64_t b = 0; b < batch; ++b) {
                    for (std::int64_t c = 0; c < channels; ++c) {
                        const T* g = out->grad.data() + (b * channels + c) * plane;
                        const T* xh = xhat.data() + (b * channels + c) * plane;
                        T* dst = gx.data() + (b * channels + c) * plane;
                        const T ga = gamma->value[c];
                        const T is = inv_std[static_cast<std::size_t>(c)];
                        if (train) {
                            const T sdy = sum_dy[static_cast<std::size_t>(c)];
                            const T sdyx = sum_dy_xhat[static_cast<std::size_t>(c)];
                            const T k = ga * is / m;
                            for (std::int64_t i = 0; i < plane; ++i) {
                                dst[i] = k * (m * g[i] - sdy - xh[i] * sdyx);
                            }
                        } else {
                            const T k = ga * is;
                            for (std::int64_t i = 0; i < plane; ++i) dst[i] = k * g[i];
                        }
                    }
                }
                x->accumulate_grad(gx);
            }
        });
    }
    return out;
}

/// Inverted dropout: each unit is zeroed with probability p in train mode and
/// survivors are scaled by 1/(1-p); inference applies no scaling at all.
template <typename T>
Var<T> dropout(Tape<T>& tape, const Var<T>& x, double p, Mode mode, Rng* rng) {
    if (!(p >= 0.0 && p < 1.0)) {
        throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(p));
    }
    const bool needs = x->grad_needed();
    if (mode == Mode::infer || p == 0.0) {
        auto out = detail::op_output(x->value, needs);
        if (needs) {
            tape.record([x, out] { x->accumulate_grad(out->grad); });
        }
        return out;
    }
    if (rng == nullptr) {
        throw ContractError("dropout in train mode needs a random source");
    }

    const T inv_keep = static_cast<T>(1.0 / (1.0 - p));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(x->value.size()));
    Tensor<T> value(x->value.shape(), T{0});
    for (std::int64_t i = 0; i < value.size(); ++i) {
        const bool keep = rng->next_uniform() >= p;
        mask[static_cast<std::size_t>(i)] = keep ? 1 : 0;
        value[i] = keep ? x->value[i] * inv_keep : T{0};
    }
    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([x, out, mask = std::move(mask), inv_keep] {
            Tensor<T> g(x->value.shape(), T{0});
            for (std::int64_t i = 0; i < g.size(); ++i) {
                if (mask[static_cast<std::size_t>(i)]) g[i] = out->grad[i] * inv_keep;
            }
            x->accumulate_grad(g);
        });
    }
    return out;
}

template <typename T>
Var<T> reshape(Tape<T>& tape, const Var<T>& x, Shape new_shape) {
    const bool needs = x->grad_needed();
    auto out = detail::op_output(x->value.reshaped(std::move(new_shape)), needs);
    if (needs) {
        tape.record([x, out] { x->accumulate_grad(out->grad.reshaped(x->value.shape())); });
    }
    return out;
}

/// [B, ...] -> [B, rest].
template <typename T>
Var<T> flatten(Tape<T>& tape, const Var<T>& x) {
    if (x->value.rank() < 2) {
        throw ShapeError("flatten expects rank >= 2");
    }
    const std::int64_t batch = x->value.extent(0);
    return reshape(tape, x, {batch, x->value.size() / batch});
}

/// Concatenates [B, n_i] inputs (or rank-1 [n_i] inputs) along the feature
/// axis.
template <typename T>
Var<T> concat_features(Tape<T>& tape, const std::vector<Var<T>>& parts) {
    if (parts.empty()) throw ContractError("concat_features: no inputs");
    const bool had_batch = parts.front()->value.rank() == 2;
    const std::int64_t batch = had_batch ? parts.front()->value.extent(0) : 1;
    std::int64_t total = 0;
    bool needs = false;
    for (const auto& p : parts) {
        if (p->value.rank() != (had_batch ? 2 : 1)) {
            throw ShapeError("concat_features: mixed ranks");
        }
        if (had_batch && p->value.extent(0) != batch) {
            throw ShapeError("concat_features: batch sizes differ");
        }
        total += had_batch ? p->value.extent(1) : p->value.extent(0);
        needs = needs || p->grad_needed();
    }

    Tensor<T> value(detail::with_batch(had_batch, batch, {total}), T{0});
    std::int64_t offset = 0;
    for (const auto& p : parts) {
        const std::int64_t n = had_batch ? p->value.extent(1) : p->value.extent(0);
        for (std::int64_t b = 0; b < batch; ++b) {
            std::copy(p->value.data() + b * n, p->value.data() + (b + 1) * n,
                      value.data() + b * total + offset);
        }
        offset += n;
    }

    auto out = detail::op_output(std::move(value), needs);
    if (needs) {
        tape.record([parts, out, batch, total, had_batch] {
            std::int64_t offset = 0;
            for (const auto& p : parts) {
                const std::int64_t n = had_batch ? p->value.extent(1) : p->value.extent(0);
                if (p->grad_needed()) {
                    Tensor<T> g(p->value.shape(), T{0});
                    for (std::int64_t b = 0; b < batch; ++b) {
                        std::copy(out->grad.data() + b * total + offset,
                                  out->grad.data() + b * total + offset + n, g.data() + b * n);
                    }
                    p->accumulate_grad(g);
                }
                offset += n;
            }
        });
    }
    return out;
}

/// Projects each row of a [n_out, n_in] weight matrix onto the L2 ball of
/// radius bound. Applied after optimizer steps; idempotent.
template <typename T>
void max_norm_constrain(Variable<T>& weight, T bound) {
    if (!(bound > T{0})) throw ConfigError("max-norm bound must be positive");
    if (weight.value.rank() != 2) {
        throw ShapeError("max_norm_constrain expects a rank-2 weight matrix");
    }
    const std::int64_t rows = weight.value.extent(0);
    const std::int64_t cols = weight.value.extent(1);
    for (std::int64_t r = 0; r < rows; ++r) {
        T* row = weight.value.data() + r * cols;
        T sq{0};
        for (std::int64_t i = 0; i < cols; ++i) sq += row[i] * row[i];
        const T norm = std::sqrt(sq);
        if (norm > bound) {
            const T f = bound / norm;
            for (std::int64_t i = 0; i < cols; ++i) row[i] *= f;
        }
    }
}

}  // namespace textpix
