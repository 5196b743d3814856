#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "textpix/model.hpp"

using namespace textpix;

namespace {

// Small enough for exhaustive finite differences over every parameter.
ModelConfig grad_check_config() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.filter_heights = {3, 4, 5};
    cfg.filters_per_height = 2;
    cfg.seq_len = 8;
    cfg.generator_channels = {4, 3, 3, 3, 3};
    cfg.generator_sizes = {2, 4, 8, 16, 32};
    cfg.classifier_channels = {2, 2, 2, 2};
    cfg.fc_sizes = {6, 4};
    cfg.num_classes = 3;
    cfg.dropout_p = 0.0;
    cfg.image_height = 32;
    cfg.image_width = 32;
    return cfg;
}

Vocabulary test_vocab() {
    return Vocabulary::build({{"red", "solid", "hammer", "blue", "steel", "screw", "green",
                               "clamp", "white", "tape"}},
                             1);
}

/// Closed-form parameter count from the configuration alone.
std::int64_t expected_parameter_count(const ModelConfig& cfg, std::int64_t vocab_size) {
    std::int64_t total = vocab_size * cfg.embed_dim;
    for (const auto m : cfg.filter_heights) {
        total += cfg.filters_per_height * m * cfg.embed_dim + cfg.filters_per_height;
    }
    total += cfg.bridge_dim() * cfg.feature_dim() + cfg.bridge_dim();
    const std::int64_t k2 = ModelConfig::kKernel * ModelConfig::kKernel;
    for (std::size_t i = 0; i + 1 < cfg.generator_channels.size(); ++i) {
        const auto c_in = cfg.generator_channels[i];
        const auto c_out = cfg.generator_channels[i + 1];
        total += c_out * c_in * k2 + c_out;
        if (i + 2 < cfg.generator_channels.size()) total += 2 * c_out;  // batch norm
    }
    std::int64_t c_prev = cfg.generator_channels.back();
    for (const auto c_out : cfg.classifier_channels) {
        total += c_out * c_prev * k2 + c_out;
        c_prev = c_out;
    }
    std::int64_t n_prev = cfg.classifier_flat_dim();
    for (const auto n : cfg.fc_sizes) {
        total += n * n_prev + n;
        n_prev = n;
    }
    total += cfg.num_classes * n_prev + cfg.num_classes;
    return total;
}

}  // namespace

TEST_CASE("full config dimensions") {
    const auto cfg = ModelConfig::full(52);
    cfg.validate();
    CHECK(cfg.feature_dim() == 384);
    CHECK(cfg.bridge_dim() == 25088);  // 512 * 7 * 7
    CHECK(cfg.classifier_ladder() == std::vector<std::int64_t>{100, 50, 25, 13, 7});
    CHECK(cfg.classifier_flat_dim() == 392);  // 8 * 7 * 7
}

TEST_CASE("full config parameter count matches the hand-derived closed form") {
    const std::int64_t vocab_size = 100;
    const auto cfg = ModelConfig::full(52);
    Rng rng(1);
    auto model = Model<float>::build(cfg, vocab_size, rng);
    // 15,162,171 fixed weights plus the embedding table and output layer.
    const std::int64_t expected = 15162171 + 128 * vocab_size + 513 * 52;
    CHECK(model.parameter_count() == expected);
    CHECK(model.parameter_count() == expected_parameter_count(cfg, vocab_size));
}

TEST_CASE("config validation rejects broken ladders") {
    auto cfg = ModelConfig::full(4);
    cfg.generator_sizes = {7, 13, 25, 50, 99};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::full(4);
    cfg.generator_channels = {512, 256, 128, 64, 4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::full(4);
    cfg.generator_sizes = {7, 7, 25, 50, 100};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::full(4);
    cfg.classifier_channels = {64, 32, 16};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    cfg = ModelConfig::full(1);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("custom scaled-down config builds") {
    const auto cfg = grad_check_config();
    CHECK_NOTHROW(cfg.validate());
    const auto vocab = test_vocab();
    Rng rng(2);
    auto model = Model<double>::build(cfg, vocab.size(), rng);
    CHECK(model.parameter_count() == expected_parameter_count(cfg, vocab.size()));
}

TEST_CASE("same seed gives identical initial parameters") {
    const auto cfg = ModelConfig::tiny(4);
    Rng a(9), b(9), c(10);
    auto m1 = Model<float>::build(cfg, 20, a);
    auto m2 = Model<float>::build(cfg, 20, b);
    auto m3 = Model<float>::build(cfg, 20, c);
    auto p1 = m1.parameters();
    auto p2 = m2.parameters();
    auto p3 = m3.parameters();
    REQUIRE(p1.size() == p2.size());
    bool any_differs_from_third = false;
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].first == p2[i].first);
        CHECK(p1[i].second->value.storage() == p2[i].second->value.storage());
        if (p1[i].second->value.storage() != p3[i].second->value.storage()) {
            any_differs_from_third = true;
        }
    }
    CHECK(any_differs_from_third);
}

TEST_CASE("PAD embedding row starts at zero") {
    const auto cfg = ModelConfig::tiny(4);
    Rng rng(3);
    auto model = Model<float>::build(cfg, 12, rng);
    for (std::int64_t k = 0; k < cfg.embed_dim; ++k) {
        CHECK(model.embeddings()->value(0, k) == 0.0f);
    }
}

TEST_CASE("forward produces the configured shapes with bounded image values") {
    const auto cfg = grad_check_config();
    const auto vocab = test_vocab();
    Rng rng(4);
    auto model = Model<double>::build(cfg, vocab.size(), rng);

    const auto doc = encode(tokenize("red solid hammer"), vocab, cfg.seq_len);
    Tape<double> tape;
    auto out = model.forward(tape, {doc}, Mode::infer, nullptr);
    CHECK(out.image->value.shape() == Shape{1, 3, 32, 32});
    CHECK(out.logits->value.shape() == Shape{1, 3});
    for (std::int64_t i = 0; i < out.image->value.size(); ++i) {
        CHECK(out.image->value[i] > 0.0);
        CHECK(out.image->value[i] < 1.0);
    }
}

TEST_CASE("forward rejects wrong document lengths and empty batches") {
    const auto cfg = grad_check_config();
    const auto vocab = test_vocab();
    Rng rng(5);
    auto model = Model<double>::build(cfg, vocab.size(), rng);

    TokenizedDoc bad;
    bad.ids.assign(5, 0);
    Tape<double> tape;
    CHECK_THROWS_AS(model.forward(tape, {bad}, Mode::infer, nullptr), ContractError);
    CHECK_THROWS_AS(model.forward(tape, {}, Mode::infer, nullptr), ContractError);
}

TEST_CASE("train mode needs a batch of at least two") {
    const auto cfg = grad_check_config();
    const auto vocab = test_vocab();
    Rng rng(6);
    auto model = Model<double>::build(cfg, vocab.size(), rng);
    const auto doc = encode(tokenize("red solid hammer"), vocab, cfg.seq_len);
    Tape<double> tape;
    CHECK_THROWS_AS(model.forward(tape, {doc}, Mode::train, &rng), ContractError);
    Tape<double> tape2;
    CHECK_NOTHROW(model.forward(tape2, {doc, doc}, Mode::train, &rng));
}

TEST_CASE("infer mode forward is deterministic") {
    const auto cfg = ModelConfig::tiny(4);
    const auto vocab = test_vocab();
    Rng rng(7);
    auto model = Model<float>::build(cfg, vocab.size(), rng);
    const auto doc = encode(tokenize("blue steel screw"), vocab, cfg.seq_len);

    Tape<float> t1, t2;
    auto a = model.forward(t1, {doc}, Mode::infer, nullptr);
    auto b = model.forward(t2, {doc}, Mode::infer, nullptr);
    CHECK(a.image->value.storage() == b.image->value.storage());
    CHECK(a.logits->value.storage() == b.logits->value.storage());
}

TEST_CASE("generate is total and deterministic") {
    const auto cfg = ModelConfig::tiny(4);
    const auto vocab = test_vocab();
    Rng rng(8);
    auto model = Model<float>::build(cfg, vocab.size(), rng);

    const auto img1 = model.generate("red solid hammer", vocab);
    const auto img2 = model.generate("red solid hammer", vocab);
    CHECK(img1.shape() == Shape{3, 32, 32});
    CHECK(img1.storage() == img2.storage());

    // Unknown-only text still produces a valid image.
    const auto unk = model.generate("qqqq wwww eeee", vocab);
    CHECK(unk.shape() == Shape{3, 32, 32});
    for (std::int64_t i = 0; i < unk.size(); ++i) {
        CHECK(unk[i] > 0.0f);
        CHECK(unk[i] < 1.0f);
    }
}

TEST_CASE("classify returns a proper distribution") {
    const auto cfg = ModelConfig::tiny(5);
    const auto vocab = test_vocab();
    Rng rng(9);
    auto model = Model<float>::build(cfg, vocab.size(), rng);

    const auto result = model.classify("green clamp", vocab);
    CHECK(result.probabilities.shape() == Shape{5});
    float total = 0.0f;
    for (std::int64_t i = 0; i < 5; ++i) total += result.probabilities[i];
    CHECK(std::abs(total - 1.0f) < 1e-5f);
    CHECK(result.label == argmax(result.probabilities));
}

TEST_CASE("end-to-end gradients pass finite differences on the scaled config") {
    const auto cfg = grad_check_config();
    const auto vocab = test_vocab();
    // Seed picked so no ReLU input or pooling argmax sits within the probe
    // step of a kink; finite differences are only meaningful at
    // differentiable points.
    Rng rng(5);
    auto model = Model<double>::build(cfg, vocab.size(), rng);

    const std::vector<TokenizedDoc> docs{encode(tokenize("red solid hammer"), vocab, cfg.seq_len),
                                         encode(tokenize("blue steel screw"), vocab, cfg.seq_len)};
    Tensor<double> one_hot({2, 3}, 0.0);
    one_hot(0, 0) = 1.0;
    one_hot(1, 2) = 1.0;
    Rng img_rng(1005);
    const auto targets = random_uniform<double>(img_rng, {2, 3, 32, 32}, 0.0, 1.0);
    const LossConfig loss_cfg{LossVariant::sum, 0.8};

    // Swappable slots covering every trainable tensor in the graph.
    std::vector<std::pair<std::string, Var<double>*>> slots;
    slots.emplace_back("embedding", &model.embeddings());
    for (auto& g : model.text_groups()) {
        slots.emplace_back(g.weight->name, &g.weight);
        slots.emplace_back(g.bias->name, &g.bias);
    }
    for (auto& b : model.gen_blocks()) {
        slots.emplace_back(b.weight->name, &b.weight);
        slots.emplace_back(b.bias->name, &b.bias);
        if (b.has_bn) {
            slots.emplace_back(b.bn.gamma->name, &b.bn.gamma);
            slots.emplace_back(b.bn.beta->name, &b.bn.beta);
        }
    }
    for (auto& b : model.cls_blocks()) {
        slots.emplace_back(b.weight->name, &b.weight);
        slots.emplace_back(b.bias->name, &b.bias);
    }
    for (auto& l : model.fc_layers()) {
        slots.emplace_back(l.weight->name, &l.weight);
        slots.emplace_back(l.bias->name, &l.bias);
    }
    slots.emplace_back("output.weight", &model.output_weight());
    slots.emplace_back("output.bias", &model.output_bias());

    for (auto& [name, slot] : slots) {
        const Tensor<double> x0 = (*slot)->value;
        Var<double>* target_slot = slot;
        const double err = grad_check(
            [&](Tape<double>& tape, const Var<double>& v) {
                *target_slot = v;
                auto fwd = model.forward(tape, docs, Mode::train, nullptr);
                return combined_loss(tape, fwd.logits, one_hot, fwd.image, targets, loss_cfg)
                    .total;
            },
            x0, 1e-5);
        INFO("parameter ", name);
        CHECK(err < 1e-3);
        *slot = make_param(x0, name);
    }
}
