#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "textpix/layers.hpp"
#include "textpix/losses.hpp"
#include "textpix/text.hpp"

namespace textpix {

/// Every architectural hyperparameter of the network. generator_sizes and
/// generator_channels run in lockstep: channels[0] feature maps enter at
/// sizes[0], and block i resizes to sizes[i+1] before a 5x5 convolution to
/// channels[i+1]. The last generator layer has 3 channels and a sigmoid, so
/// it reads directly as an RGB image. The classifier halves the spatial size
/// four times with stride-2 convolutions.
struct ModelConfig {
    std::int64_t embed_dim = 128;
    std::vector<std::int64_t> filter_heights = {3, 4, 5};
    std::int64_t filters_per_height = 128;
    std::int64_t seq_len = 64;
    std::vector<std::int64_t> generator_channels = {512, 256, 128, 64, 3};
    std::vector<std::int64_t> generator_sizes = {7, 13, 25, 50, 100};
    std::vector<std::int64_t> classifier_channels = {64, 32, 16, 8};
    std::vector<std::int64_t> fc_sizes = {1024, 512};
    std::int64_t num_classes = 2;
    double dropout_p = 0.5;
    double max_norm_s = 3.0;
    std::int64_t image_height = 100;
    std::int64_t image_width = 100;
    std::int64_t scale_factor = 1;

    static constexpr std::int64_t kKernel = 5;

    /// Full-size configuration: 128-dim embeddings, three groups of 128
    /// filters, generator ladder 7-13-25-50-100 and classifier ladder
    /// 100-50-25-13-7.
    static ModelConfig full(std::int64_t num_classes) {
        ModelConfig cfg;
        cfg.num_classes = num_classes;
        return cfg;
    }

    /// Down-scaled preset for fast runs; keeps the same block structure on a
    /// 32x32 canvas.
    static ModelConfig tiny(std::int64_t num_classes) {
        ModelConfig cfg;
        cfg.embed_dim = 16;
        cfg.filters_per_height = 8;
        cfg.seq_len = 16;
        cfg.generator_channels = {32, 16, 8, 4, 3};
        cfg.generator_sizes = {2, 4, 8, 16, 32};
        cfg.classifier_channels = {8, 8, 4, 4};
        cfg.fc_sizes = {32, 16};
        cfg.num_classes = num_classes;
        cfg.image_height = 32;
        cfg.image_width = 32;
        cfg.scale_factor = 16;
        return cfg;
    }

    std::int64_t feature_dim() const {
        return static_cast<std::int64_t>(filter_heights.size()) * filters_per_height;
    }

    std::int64_t bridge_dim() const {
        return generator_channels.front() * generator_sizes.front() * generator_sizes.front();
    }

    /// Spatial sizes entering each classifier convolution plus the final one.
    std::vector<std::int64_t> classifier_ladder() const {
        std::vector<std::int64_t> ladder{image_height};
        for (std::size_t i = 0; i < classifier_channels.size(); ++i) {
            ladder.push_back((ladder.back() - 1) / 2 + 1);
        }
        return ladder;
    }

    std::int64_t classifier_flat_dim() const {
        const auto ladder = classifier_ladder();
        return classifier_channels.back() * ladder.back() * ladder.back();
    }

    void validate() const {
        if (embed_dim <= 0 || filters_per_height <= 0) {
            throw ConfigError("embedding dim and filter count must be positive");
        }
        if (filter_heights.empty()) throw ConfigError("at least one filter height is required");
        for (const auto m : filter_heights) {
            if (m < 1 || m > seq_len) {
                throw ConfigError("filter height " + std::to_string(m) +
                                  " must lie in [1, seq_len]");
            }
        }
        if (seq_len < kMinSeqLen) {
            throw ConfigError("seq_len must be at least " + std::to_string(kMinSeqLen));
        }
        if (generator_sizes.size() != generator_channels.size() || generator_sizes.size() < 2) {
            throw ConfigError("generator sizes and channels must align with at least 2 stages");
        }
        for (std::size_t i = 1; i < generator_sizes.size(); ++i) {
            if (generator_sizes[i] <= generator_sizes[i - 1]) {
                throw ConfigError("generator sizes must be strictly increasing");
            }
        }
        if (image_height != image_width || generator_sizes.back() != image_height) {
            throw ConfigError("last generator size must equal the (square) image size");
        }
        if (generator_channels.back() != 3) {
            throw ConfigError("last generator layer must have 3 channels");
        }
        if (classifier_channels.size() != 4) {
            throw ConfigError("the classifier halves the image four times; need 4 channel counts");
        }
        if (classifier_ladder().back() < 1) {
            throw ConfigError("image too small for four stride-2 convolutions");
        }
        if (fc_sizes.empty()) throw ConfigError("at least one fully connected size is required");
        if (num_classes < 2) throw ConfigError("need at least 2 classes");
        if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
            throw ConfigError("dropout rate must lie in [0, 1)");
        }
        if (!(max_norm_s > 0.0)) throw ConfigError("max-norm bound must be positive");
    }
};

/// The assembled network: text encoder, up-sampling generator and
/// convolutional classifier, differentiable end to end.
template <typename T>
class Model {
public:
    struct TextGroup {
        std::int64_t height = 0;
        Var<T> weight, bias;
    };
    struct GenBlock {
        Var<T> weight, bias;
        BatchNorm2d<T> bn;
        bool has_bn = false;
        std::int64_t target_size = 0;
    };
    struct ConvBlock {
        Var<T> weight, bias;
    };
    struct DenseLayer {
        Var<T> weight, bias;
    };

    struct ForwardResult {
        Var<T> image;   // [B, 3, H, W], sigmoid-bounded
        Var<T> logits;  // [B, K]
    };

    static Model build(const ModelConfig& cfg, std::int64_t vocab_size, Rng& rng) {
        cfg.validate();
        if (vocab_size < 2) throw ConfigError("vocabulary must at least contain PAD and UNK");
        Model m;
        m.cfg_ = cfg;
        m.vocab_size_ = vocab_size;

        auto embed_t = random_scaled_normal<T>(rng, {vocab_size, cfg.embed_dim}, cfg.embed_dim);
        for (std::int64_t k = 0; k < cfg.embed_dim; ++k) embed_t[k] = T{0};  // PAD row
        m.embeddings_ = make_param(std::move(embed_t), "embedding");

        for (const auto h : cfg.filter_heights) {
            TextGroup g;
            g.height = h;
            g.weight = make_param(
                random_scaled_normal<T>(rng, {cfg.filters_per_height, h, cfg.embed_dim},
                                        h * cfg.embed_dim),
                "text_conv_h" + std::to_string(h) + ".weight");
            g.bias = make_param(Tensor<T>({cfg.filters_per_height}, T{0}),
                                "text_conv_h" + std::to_string(h) + ".bias");
            m.text_groups_.push_back(std::move(g));
        }

        m.bridge_.weight =
            make_param(random_scaled_normal<T>(rng, {cfg.bridge_dim(), cfg.feature_dim()},
                                               cfg.feature_dim()),
                       "bridge.weight");
        m.bridge_.bias = make_param(Tensor<T>({cfg.bridge_dim()}, T{0}), "bridge.bias");

        const std::int64_t k = ModelConfig::kKernel;
        const std::size_t stages = cfg.generator_channels.size() - 1;
        for (std::size_t i = 0; i < stages; ++i) {
            GenBlock b;
            const std::int64_t c_in = cfg.generator_channels[i];
            const std::int64_t c_out = cfg.generator_channels[i + 1];
            const std::string name = "gen" + std::to_string(i + 1);
            b.weight = make_param(
                random_scaled_normal<T>(rng, {c_out, c_in, k, k}, c_in * k * k), name + ".weight");
            b.bias = make_param(Tensor<T>({c_out}, T{0}), name + ".bias");
            b.target_size = cfg.generator_sizes[i + 1];
            b.has_bn = i + 1 < stages;
            if (b.has_bn) b.bn = BatchNorm2d<T>::create(c_out, name + ".bn");
            m.gen_blocks_.push_back(std::move(b));
        }

        std::int64_t c_prev = cfg.generator_channels.back();
        for (std::size_t i = 0; i < cfg.classifier_channels.size(); ++i) {
            ConvBlock b;
            const std::int64_t c_out = cfg.classifier_channels[i];
            const std::string name = "cls" + std::to_string(i + 1);
            b.weight = make_param(
                random_scaled_normal<T>(rng, {c_out, c_prev, k, k}, c_prev * k * k),
                name + ".weight");
            b.bias = make_param(Tensor<T>({c_out}, T{0}), name + ".bias");
            m.cls_blocks_.push_back(std::move(b));
            c_prev = c_out;
        }

        std::int64_t n_prev = cfg.classifier_flat_dim();
        for (std::size_t i = 0; i < cfg.fc_sizes.size(); ++i) {
            DenseLayer l;
            const std::int64_t n = cfg.fc_sizes[i];
            const std::string name = "fc" + std::to_string(i + 1);
            l.weight = make_param(random_scaled_normal<T>(rng, {n, n_prev}, n_prev),
                                  name + ".weight");
            l.bias = make_param(Tensor<T>({n}, T{0}), name + ".bias");
            m.fc_layers_.push_back(std::move(l));
            n_prev = n;
        }

        m.output_.weight = make_param(
            random_scaled_normal<T>(rng, {cfg.num_classes, n_prev}, n_prev), "output.weight");
        m.output_.bias = make_param(Tensor<T>({cfg.num_classes}, T{0}), "output.bias");
        return m;
    }

    ForwardResult forward(Tape<T>& tape, const std::vector<TokenizedDoc>& docs, Mode mode,
                          Rng* dropout_rng = nullptr) {
        if (docs.empty()) throw ContractError("forward: empty batch");
        for (const auto& doc : docs) {
            if (doc.length() != cfg_.seq_len) {
                throw ContractError("forward: document length " + std::to_string(doc.length()) +
                                    " does not match configured seq_len " +
                                    std::to_string(cfg_.seq_len));
            }
        }

        auto s = embed(tape, docs, embeddings_);  // [B, L, d]

        std::vector<Var<T>> pooled;
        pooled.reserve(text_groups_.size());
        for (auto& g : text_groups_) {
            auto c = conv_text(tape, s, g.weight, g.bias);
            auto a = relu(tape, c);
            pooled.push_back(max_over_time(tape, a));
        }
        auto features = concat_features(tape, pooled);  // [B, feature_dim]

        auto bridged = relu(tape, dense(tape, features, bridge_.weight, bridge_.bias));
        const std::int64_t batch = static_cast<std::int64_t>(docs.size());
        const std::int64_t s0 = cfg_.generator_sizes.front();
        auto h = reshape(tape, bridged, {batch, cfg_.generator_channels.front(), s0, s0});

        Var<T> image;
        for (auto& block : gen_blocks_) {
            h = upsample_nearest(tape, h, block.target_size, block.target_size);
            h = conv2d(tape, h, block.weight, block.bias, 1, (ModelConfig::kKernel - 1) / 2);
            if (block.has_bn) {
                h = relu(tape, batch_norm(tape, h, block.bn, mode));
            } else {
                image = sigmoid(tape, h);
                h = image;
            }
        }

        for (auto& block : cls_blocks_) {
            h = relu(tape,
                     conv2d(tape, h, block.weight, block.bias, 2, (ModelConfig::kKernel - 1) / 2));
        }
        h = flatten(tape, h);
        for (auto& layer : fc_layers_) {
            h = relu(tape, dense(tape, h, layer.weight, layer.bias));
        }
        h = dropout(tape, h, cfg_.dropout_p, mode, dropout_rng);
        auto logits = dense(tape, h, output_.weight, output_.bias);
        return {image, logits};
    }

    /// tokenize -> encode -> forward(infer); returns the generated image.
    Tensor<T> generate(const std::string& text, const Vocabulary& vocab) {
        return infer(text, vocab).image->value.reshaped(
            {3, cfg_.image_height, cfg_.image_width});
    }

    struct Classification {
        std::int64_t label = 0;
        Tensor<T> probabilities;
    };

    Classification classify(const std::string& text, const Vocabulary& vocab) {
        Tape<T> tape;
        auto result = infer(text, vocab, &tape);
        auto probs = softmax(tape, result.logits);
        Tensor<T> row = probs->value.reshaped({cfg_.num_classes});
        return {argmax(row), std::move(row)};
    }

    std::vector<std::pair<std::string, Var<T>>> parameters() {
        std::vector<std::pair<std::string, Var<T>>> out;
        const auto push = [&out](const Var<T>& v) { out.emplace_back(v->name, v); };
        push(embeddings_);
        for (auto& g : text_groups_) {
            push(g.weight);
            push(g.bias);
        }
        push(bridge_.weight);
        push(bridge_.bias);
        for (auto& b : gen_blocks_) {
            push(b.weight);
            push(b.bias);
            if (b.has_bn) {
                push(b.bn.gamma);
                push(b.bn.beta);
            }
        }
        for (auto& b : cls_blocks_) {
            push(b.weight);
            push(b.bias);
        }
        for (auto& l : fc_layers_) {
            push(l.weight);
            push(l.bias);
        }
        push(output_.weight);
        push(output_.bias);
        return out;
    }

    /// Non-trainable state that still belongs in checkpoints.
    std::vector<std::pair<std::string, Tensor<T>*>> buffers() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (std::size_t i = 0; i < gen_blocks_.size(); ++i) {
            if (!gen_blocks_[i].has_bn) continue;
            const std::string name = "gen" + std::to_string(i + 1) + ".bn";
            out.emplace_back(name + ".running_mean", &gen_blocks_[i].bn.running_mean);
            out.emplace_back(name + ".running_var", &gen_blocks_[i].bn.running_var);
        }
        return out;
    }

    std::int64_t parameter_count() {
        std::int64_t total = 0;
        for (const auto& [name, v] : parameters()) total += v->value.size();
        return total;
    }

    void zero_grad() {
        for (auto& [name, v] : parameters()) v->zero_grad();
    }

    /// Re-zeroes the PAD embedding row; called after every optimizer step so
    /// padding stays semantically inert.
    void zero_pad_row() {
        for (std::int64_t k = 0; k < cfg_.embed_dim; ++k) embeddings_->value[k] = T{0};
    }

    Var<T>& output_weight() { return output_.weight; }
    Var<T>& output_bias() { return output_.bias; }
    const ModelConfig& config() const noexcept { return cfg_; }
    std::int64_t vocab_size() const noexcept { return vocab_size_; }

    std::vector<TextGroup>& text_groups() { return text_groups_; }
    std::vector<GenBlock>& gen_blocks() { return gen_blocks_; }
    std::vector<ConvBlock>& cls_blocks() { return cls_blocks_; }
    std::vector<DenseLayer>& fc_layers() { return fc_layers_; }
    Var<T>& embeddings() { return embeddings_; }

private:
    ForwardResult infer(const std::string& text, const Vocabulary& vocab,
                        Tape<T>* external = nullptr) {
        if (vocab.size() < 2) throw ConfigError("vocabulary is empty");
        const auto doc = encode(tokenize(text), vocab, cfg_.seq_len);
        Tape<T> local;
        Tape<T>& tape = external ? *external : local;
        return forward(tape, {doc}, Mode::infer, nullptr);
    }

    ModelConfig cfg_;
    std::int64_t vocab_size_ = 0;
    Var<T> embeddings_;
    std::vector<TextGroup> text_groups_;
    DenseLayer bridge_;
    std::vector<GenBlock> gen_blocks_;
    std::vector<ConvBlock> cls_blocks_;
    std::vector<DenseLayer> fc_layers_;
    DenseLayer output_;
};

}  // namespace textpix
