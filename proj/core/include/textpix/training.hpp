#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "textpix/dataset.hpp"
#include "textpix/image_io.hpp"
#include "textpix/losses.hpp"
#include "textpix/model.hpp"

namespace textpix {

struct TrainConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t epochs = 100;
    std::int64_t batch_size = 32;
    std::uint64_t seed = 0;
    LossConfig loss;
    bool shuffle = true;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
            throw ConfigError("Adam betas must lie in [0, 1)");
        }
        if (!(eps > 0.0)) throw ConfigError("Adam epsilon must be positive");
        if (epochs < 0) throw ConfigError("epoch count must be non-negative");
        if (batch_size < 2) throw ConfigError("batch size must be at least 2");
        loss.validate();
    }
};

namespace streams {
// Stream ids for Rng::split, so the init / dropout / shuffle draws stay
// independent of each other.
inline constexpr std::uint64_t kInit = 0x11a7;
inline constexpr std::uint64_t kTrain = 0x7e41;
inline constexpr std::uint64_t kShuffle = 0x5ffe;
}  // namespace streams

/// Per-parameter first and second moments, aligned with Model::parameters().
template <typename T>
struct AdamState {
    std::vector<Tensor<T>> m, v;
    std::int64_t step = 0;

    static AdamState init(Model<T>& model) {
        AdamState state;
        for (auto& [name, param] : model.parameters()) {
            state.m.push_back(Tensor<T>::zeros(param->value.shape()));
            state.v.push_back(Tensor<T>::zeros(param->value.shape()));
        }
        return state;
    }
};

/// One Adam update over the given parameters using their accumulated
/// gradients. A missing gradient counts as zero; a non-finite gradient is a
/// numeric error naming the parameter.
template <typename T>
void adam_update(const std::vector<std::pair<std::string, Var<T>>>& params, AdamState<T>& state,
                 const TrainConfig& cfg) {
    if (params.size() != state.m.size()) {
        throw ContractError("Adam state does not match the parameter list");
    }
    ++state.step;
    const T b1 = static_cast<T>(cfg.beta1);
    const T b2 = static_cast<T>(cfg.beta2);
    const T bc1 = T{1} - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(state.step)));
    const T bc2 = T{1} - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(state.step)));
    const T lr = static_cast<T>(cfg.lr);
    const T eps = static_cast<T>(cfg.eps);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& param = *params[i].second;
        param.ensure_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (!m.same_shape(param.value)) {
            throw ContractError("Adam moment shape does not match parameter '" + params[i].first +
                                "'");
        }
        for (std::int64_t k = 0; k < param.value.size(); ++k) {
            const T g = param.grad[k];
            if (!std::isfinite(static_cast<double>(g))) {
                throw NumericError("non-finite gradient for parameter '" + params[i].first + "'");
            }
            m[k] = b1 * m[k] + (T{1} - b1) * g;
            v[k] = b2 * v[k] + (T{1} - b2) * g * g;
            const T m_hat = m[k] / bc1;
            const T v_hat = v[k] / bc2;
            param.value[k] -= lr * m_hat / (std::sqrt(v_hat) + eps);
        }
    }
}

/// Adam update plus the post-step constraints: max-norm projection of the
/// output layer rows and re-zeroing of the PAD embedding row.
template <typename T>
void optimizer_step(Model<T>& model, AdamState<T>& state, const TrainConfig& cfg) {
    adam_update(model.parameters(), state, cfg);
    max_norm_constrain(*model.output_weight(), static_cast<T>(model.config().max_norm_s));
    model.zero_pad_row();
}

struct EpochMetrics {
    std::int64_t epoch = 0;  // 1-based
    double loss_total = 0.0;
    double loss_l0 = 0.0;
    double loss_pixel = 0.0;
    double train_acc = 0.0;
    std::optional<double> val_acc;
};

std::string format_metric(double v);
void write_metrics_csv(const std::vector<EpochMetrics>& history,
                       const std::filesystem::path& path);

/// Fraction of samples whose argmax logit matches the label, in infer mode.
template <typename T>
double evaluate_accuracy(Model<T>& model, const Dataset<T>& data, std::int64_t batch_size = 32) {
    if (data.samples.empty()) throw DataError("cannot evaluate on an empty dataset");
    const std::int64_t n = data.size();
    const std::int64_t k = model.config().num_classes;
    std::int64_t correct = 0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t stop = std::min(n, start + batch_size);
        std::vector<TokenizedDoc> docs;
        docs.reserve(static_cast<std::size_t>(stop - start));
        for (std::int64_t i = start; i < stop; ++i) {
            docs.push_back(data.samples[static_cast<std::size_t>(i)].doc);
        }
        Tape<T> tape;
        auto result = model.forward(tape, docs, Mode::infer, nullptr);
        for (std::int64_t i = start; i < stop; ++i) {
            const T* row = result.logits->value.data() + (i - start) * k;
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < k; ++c) {
                if (row[c] > row[best]) best = c;
            }
            if (best == data.samples[static_cast<std::size_t>(i)].label) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

/// Mean over samples of the per-element pixel MSE between the generated
/// layer and the target image, in infer mode.
template <typename T>
double mean_pixel_mse(Model<T>& model, const Dataset<T>& data, std::int64_t batch_size = 32) {
    if (data.samples.empty()) throw DataError("cannot evaluate on an empty dataset");
    const std::int64_t n = data.size();
    double total = 0.0;
    for (std::int64_t start = 0; start < n; start += batch_size) {
        const std::int64_t stop = std::min(n, start + batch_size);
        std::vector<TokenizedDoc> docs;
        for (std::int64_t i = start; i < stop; ++i) {
            docs.push_back(data.samples[static_cast<std::size_t>(i)].doc);
        }
        Tape<T> tape;
        auto result = model.forward(tape, docs, Mode::infer, nullptr);
        const std::int64_t per_sample = result.image->value.size() / (stop - start);
        for (std::int64_t i = start; i < stop; ++i) {
            const T* f = result.image->value.data() + (i - start) * per_sample;
            const T* target = data.samples[static_cast<std::size_t>(i)].image.data();
            double acc = 0.0;
            for (std::int64_t e = 0; e < per_sample; ++e) {
                const double d = static_cast<double>(f[e]) - static_cast<double>(target[e]);
                acc += d * d;
            }
            total += acc / static_cast<double>(per_sample);
        }
    }
    return total / static_cast<double>(n);
}

/// Everything the training loop mutates; checkpoints capture exactly this.
template <typename T>
struct TrainerState {
    Model<T> model;
    AdamState<T> adam;
    Rng rng = Rng(0);  // dropout stream
    std::int64_t epoch = 0;

    static TrainerState create(const ModelConfig& cfg, std::int64_t vocab_size,
                               std::uint64_t seed) {
        TrainerState state;
        Rng init_rng = Rng(seed).split(streams::kInit);
        state.model = Model<T>::build(cfg, vocab_size, init_rng);
        state.adam = AdamState<T>::init(state.model);
        state.rng = Rng(seed).split(streams::kTrain);
        state.epoch = 0;
        return state;
    }
};

namespace detail {

template <typename T>
Tensor<T> stack_targets(const Dataset<T>& data, const std::vector<std::int64_t>& indices) {
    const auto& first = data.samples[static_cast<std::size_t>(indices.front())].image;
    Shape shape{static_cast<std::int64_t>(indices.size())};
    shape.insert(shape.end(), first.shape().begin(), first.shape().end());
    Tensor<T> out(shape, T{0});
    const std::int64_t per = first.size();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& img = data.samples[static_cast<std::size_t>(indices[b])].image;
        std::copy(img.data(), img.data() + per, out.data() + static_cast<std::int64_t>(b) * per);
    }
    return out;
}

template <typename T>
Tensor<T> one_hot_batch(const Dataset<T>& data, const std::vector<std::int64_t>& indices,
                        std::int64_t num_classes) {
    Tensor<T> out({static_cast<std::int64_t>(indices.size()), num_classes}, T{0});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        out[static_cast<std::int64_t>(b) * num_classes +
            data.samples[static_cast<std::size_t>(indices[b])].label] = T{1};
    }
    return out;
}

}  // namespace detail

/// Runs epochs state.epoch+1 .. cfg.epochs and returns one metrics row per
/// completed epoch. Deterministic given the seed: the shuffle order depends
/// only on (seed, epoch), and the dropout stream lives in the state, so a
/// checkpointed run continues exactly like an uninterrupted one.
template <typename T>
std::vector<EpochMetrics> train(TrainerState<T>& state, const Dataset<T>& train_set,
                                const TrainConfig& cfg, const Dataset<T>* val_set = nullptr) {
    cfg.validate();
    if (train_set.samples.empty()) throw ConfigError("training dataset is empty");
    if (train_set.num_classes != state.model.config().num_classes) {
        throw ConfigError("dataset has " + std::to_string(train_set.num_classes) +
                          " classes but the model expects " +
                          std::to_string(state.model.config().num_classes));
    }

    const std::int64_t n = train_set.size();
    std::vector<EpochMetrics> history;
    for (std::int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<std::int64_t> order(static_cast<std::size_t>(n));
        for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        if (cfg.shuffle) {
            Rng shuffle_rng =
                Rng(cfg.seed).split(streams::kShuffle + static_cast<std::uint64_t>(epoch));
            for (std::int64_t i = n - 1; i > 0; --i) {
                const auto j = static_cast<std::int64_t>(shuffle_rng.next_u64() %
                                                         static_cast<std::uint64_t>(i + 1));
                std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
            }
        }

        std::vector<std::vector<std::int64_t>> batches;
        for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
            const std::int64_t stop = std::min(n, start + cfg.batch_size);
            batches.emplace_back(order.begin() + start, order.begin() + stop);
        }
        // A trailing single sample cannot feed batch statistics; fold it in.
        if (batches.size() > 1 && batches.back().size() == 1) {
            batches[batches.size() - 2].push_back(batches.back().front());
            batches.pop_back();
        }

        double sum_total = 0.0, sum_l0 = 0.0, sum_pixel = 0.0;
        for (const auto& batch : batches) {
            std::vector<TokenizedDoc> docs;
            docs.reserve(batch.size());
            for (const auto i : batch) docs.push_back(train_set.samples[static_cast<std::size_t>(i)].doc);
            const auto one_hot = detail::one_hot_batch(train_set, batch, train_set.num_classes);
            const auto targets = detail::stack_targets(train_set, batch);

            Tape<T> tape;
            auto fwd = state.model.forward(tape, docs, Mode::train, &state.rng);
            auto loss = combined_loss(tape, fwd.logits, one_hot, fwd.image, targets, cfg.loss);
            tape.backward(loss.total);
            optimizer_step(state.model, state.adam, cfg);
            state.model.zero_grad();

            const auto b = static_cast<double>(batch.size());
            sum_total += static_cast<double>(loss.total->value[0]) * b;
            sum_l0 += static_cast<double>(loss.l0->value[0]) * b;
            sum_pixel += static_cast<double>(loss.pixel->value[0]) * b;
        }

        EpochMetrics row;
        row.epoch = epoch + 1;
        row.loss_total = sum_total / static_cast<double>(n);
        row.loss_l0 = sum_l0 / static_cast<double>(n);
        row.loss_pixel = sum_pixel / static_cast<double>(n);
        row.train_acc = evaluate_accuracy(state.model, train_set, cfg.batch_size);
        if (val_set != nullptr && !val_set->samples.empty()) {
            row.val_acc = evaluate_accuracy(state.model, *val_set, cfg.batch_size);
        }
        history.push_back(row);
        state.epoch = epoch + 1;
    }
    return history;
}

struct SweepRun {
    double lambda = 0.0;
    std::int64_t run = 0;
    std::int64_t epochs = 0;
    double val_acc = 0.0;
    double pixel_mse = 0.0;
};

struct SweepSummary {
    double lambda = 0.0;
    double val_acc_mean = 0.0;
    double val_acc_std = 0.0;
    double pixel_mse_mean = 0.0;
};

struct SweepResult {
    std::vector<SweepRun> runs;
    std::vector<SweepSummary> summary;
};

void write_sweep_csv(const SweepResult& result, const std::filesystem::path& runs_csv,
                     const std::filesystem::path& summary_csv);

/// Horizontal strip of same-size [3, H, W] images.
template <typename T>
Tensor<T> tile_images(const std::vector<Tensor<T>>& images) {
    if (images.empty()) throw ContractError("tile_images: no images");
    const std::int64_t h = images.front().extent(1);
    const std::int64_t w = images.front().extent(2);
    const auto k = static_cast<std::int64_t>(images.size());
    Tensor<T> out({3, h, w * k}, T{0});
    for (std::int64_t i = 0; i < k; ++i) {
        const auto& img = images[static_cast<std::size_t>(i)];
        if (img.rank() != 3 || img.extent(1) != h || img.extent(2) != w) {
            throw ShapeError("tile_images: mismatched image sizes");
        }
        for (std::int64_t c = 0; c < 3; ++c) {
            for (std::int64_t y = 0; y < h; ++y) {
                std::copy(img.data() + (c * h + y) * w, img.data() + (c * h + y + 1) * w,
                          out.data() + (c * h + y) * (w * k) + i * w);
            }
        }
    }
    return out;
}

/// Trains one fresh model per (lambda, run) pair on a deterministic 90/10
/// train/validation carve-out and reports validation accuracy per run plus
/// mean/std per lambda. When out_dir is non-empty, writes the two CSVs and
/// one generated-image strip per lambda (first run, validation documents).
template <typename T>
SweepResult lambda_sweep(const Dataset<T>& data, std::int64_t vocab_size, const ModelConfig& mcfg,
                         const std::vector<double>& lambdas, std::int64_t epochs,
                         std::int64_t runs, const TrainConfig& base,
                         const std::filesystem::path& out_dir = {}) {
    if (lambdas.empty()) throw ConfigError("lambda sweep needs at least one value");
    if (runs < 1) throw ConfigError("lambda sweep needs at least one run");
    auto [train_split, val_split] = split_validation(data, 0.1, base.seed);
    if (train_split.samples.empty()) throw ConfigError("sweep train split is empty");

    SweepResult result;
    for (const double lambda : lambdas) {
        double acc_sum = 0.0, acc_sq = 0.0, mse_sum = 0.0;
        for (std::int64_t run = 0; run < runs; ++run) {
            TrainConfig cfg = base;
            cfg.loss.lambda = lambda;
            cfg.epochs = epochs;
            cfg.seed = base.seed + static_cast<std::uint64_t>(run);
            auto state = TrainerState<T>::create(mcfg, vocab_size, cfg.seed);
            train(state, train_split, cfg, &val_split);

            SweepRun row;
            row.lambda = lambda;
            row.run = run;
            row.epochs = epochs;
            row.val_acc = val_split.samples.empty()
                              ? 0.0
                              : evaluate_accuracy(state.model, val_split, cfg.batch_size);
            row.pixel_mse = mean_pixel_mse(state.model, train_split, cfg.batch_size);
            result.runs.push_back(row);
            acc_sum += row.val_acc;
            acc_sq += row.val_acc * row.val_acc;
            mse_sum += row.pixel_mse;

            if (run == 0 && !out_dir.empty() && !val_split.samples.empty()) {
                std::vector<Tensor<T>> images;
                const auto count =
                    std::min<std::int64_t>(8, val_split.size());
                std::vector<TokenizedDoc> docs;
                for (std::int64_t i = 0; i < count; ++i) {
                    docs.push_back(val_split.samples[static_cast<std::size_t>(i)].doc);
                }
                Tape<T> tape;
                auto fwd = state.model.forward(tape, docs, Mode::infer, nullptr);
                const auto& cfg_m = state.model.config();
                for (std::int64_t i = 0; i < count; ++i) {
                    Tensor<T> img({3, cfg_m.image_height, cfg_m.image_width}, T{0});
                    std::copy(fwd.image->value.data() + i * img.size(),
                              fwd.image->value.data() + (i + 1) * img.size(), img.data());
                    images.push_back(std::move(img));
                }
                save_image(tile_images(images),
                           out_dir / ("grid_lambda_" + format_metric(lambda) + ".png"));
            }
        }
        SweepSummary summary;
        summary.lambda = lambda;
        const auto r = static_cast<double>(runs);
        summary.val_acc_mean = acc_sum / r;
        summary.pixel_mse_mean = mse_sum / r;
        if (runs > 1) {
            const double variance = (acc_sq - acc_sum * acc_sum / r) / (r - 1.0);
            summary.val_acc_std = std::sqrt(std::max(0.0, variance));
        }
        result.summary.push_back(summary);
    }

    if (!out_dir.empty()) {
        write_sweep_csv(result, out_dir / "sweep_runs.csv", out_dir / "sweep_summary.csv");
    }
    return result;
}

}  // namespace textpix
