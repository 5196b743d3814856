#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "textpix/checkpoint.hpp"
#include "textpix/training.hpp"

using namespace textpix;

namespace {

struct Fixture {
    ModelConfig cfg;
    Vocabulary vocab;
    Dataset<float> data;
};

// Solid-color targets and five-token texts, a few samples per class.
Fixture make_fixture(std::int64_t num_classes, std::int64_t per_class) {
    Fixture f;
    f.cfg = ModelConfig::tiny(num_classes);
    f.cfg.dropout_p = 0.1;

    std::vector<std::vector<std::string>> corpus;
    std::vector<std::pair<std::vector<std::string>, std::int32_t>> docs;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        for (std::int64_t s = 0; s < per_class; ++s) {
            std::vector<std::string> tokens{
                "class" + std::to_string(c), "item" + std::to_string(s),
                "tok" + std::to_string(c * 31 + s), "shade" + std::to_string(s),
                "kind" + std::to_string(c)};
            corpus.push_back(tokens);
            docs.emplace_back(std::move(tokens), static_cast<std::int32_t>(c));
        }
    }
    f.vocab = Vocabulary::build(corpus, 1);

    f.data.num_classes = num_classes;
    for (std::int64_t c = 0; c < num_classes; ++c) {
        f.data.class_names.push_back("class" + std::to_string(c));
    }
    std::size_t i = 0;
    for (auto& [tokens, label] : docs) {
        Sample<float> sample;
        sample.doc = encode(tokens, f.vocab, f.cfg.seq_len);
        sample.label = label;
        const float shade = 0.15f + 0.7f * static_cast<float>(i) / static_cast<float>(docs.size());
        sample.image = Tensor<float>({3, f.cfg.image_height, f.cfg.image_width}, shade);
        f.data.samples.push_back(std::move(sample));
        ++i;
    }
    return f;
}

std::filesystem::path temp_dir(const char* name) {
    const auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged under zero gradients") {
    TrainConfig cfg;
    auto p = make_param(Tensor<float>({3}, std::vector<float>{1.0f, -2.0f, 0.5f}), "p");
    p->ensure_grad();
    AdamState<float> state;
    state.m.push_back(Tensor<float>::zeros({3}));
    state.v.push_back(Tensor<float>::zeros({3}));
    const auto before = p->value.storage();
    adam_update<float>({{"p", p}}, state, cfg);
    CHECK(p->value.storage() == before);
    CHECK(state.step == 1);
}

TEST_CASE("first adam step moves by about lr in the gradient direction") {
    TrainConfig cfg;
    auto p = make_param(Tensor<double>({2}, std::vector<double>{1.0, 1.0}), "p");
    p->accumulate_grad(Tensor<double>({2}, std::vector<double>{0.3, -4.0}));
    AdamState<double> state;
    state.m.push_back(Tensor<double>::zeros({2}));
    state.v.push_back(Tensor<double>::zeros({2}));
    adam_update<double>({{"p", p}}, state, cfg);
    CHECK(p->value[0] == doctest::Approx(1.0 - cfg.lr).epsilon(1e-4));
    CHECK(p->value[1] == doctest::Approx(1.0 + cfg.lr).epsilon(1e-4));
}

TEST_CASE("adam drives a quadratic toward its minimum monotonically") {
    TrainConfig cfg;
    cfg.lr = 0.01;
    auto p = make_param(Tensor<double>({1}, 1.0), "theta");
    AdamState<double> state;
    state.m.push_back(Tensor<double>::zeros({1}));
    state.v.push_back(Tensor<double>::zeros({1}));
    double prev = std::abs(p->value[0]);
    for (int step = 0; step < 50; ++step) {
        p->zero_grad();
        p->accumulate_grad(Tensor<double>({1}, 2.0 * p->value[0]));
        adam_update<double>({{"theta", p}}, state, cfg);
        const double now = std::abs(p->value[0]);
        CHECK(now < prev);
        prev = now;
    }
    CHECK(prev < 1.0);
}

TEST_CASE("adam reports non-finite gradients with the parameter name") {
    TrainConfig cfg;
    auto p = make_param(Tensor<float>({1}, 1.0f), "gen1.weight");
    p->ensure_grad();
    p->grad[0] = std::numeric_limits<float>::quiet_NaN();
    AdamState<float> state;
    state.m.push_back(Tensor<float>::zeros({1}));
    state.v.push_back(Tensor<float>::zeros({1}));
    try {
        adam_update<float>({{"gen1.weight", p}}, state, cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("gen1.weight") != std::string::npos);
    }
}

TEST_CASE("optimizer_step enforces the max-norm bound and the PAD row") {
    auto f = make_fixture(3, 2);
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 1);

    // Blow up the output rows and dirty the PAD embedding row.
    auto& out_w = state.model.output_weight();
    for (std::int64_t i = 0; i < out_w->value.size(); ++i) out_w->value[i] = 2.0f;
    for (std::int64_t k = 0; k < f.cfg.embed_dim; ++k) {
        state.model.embeddings()->value(0, k) = 9.0f;
    }
    for (auto& [name, p] : state.model.parameters()) p->ensure_grad();

    TrainConfig cfg;
    optimizer_step(state.model, state.adam, cfg);

    const std::int64_t cols = out_w->value.extent(1);
    for (std::int64_t r = 0; r < out_w->value.extent(0); ++r) {
        float sq = 0.0f;
        for (std::int64_t i = 0; i < cols; ++i) {
            sq += out_w->value(r, i) * out_w->value(r, i);
        }
        CHECK(std::sqrt(sq) <= static_cast<float>(f.cfg.max_norm_s) + 1e-5f);
    }
    for (std::int64_t k = 0; k < f.cfg.embed_dim; ++k) {
        CHECK(state.model.embeddings()->value(0, k) == 0.0f);
    }
}

TEST_CASE("train with zero epochs returns no history and keeps the model") {
    auto f = make_fixture(2, 2);
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 7);
    const auto before = state.model.embeddings()->value.storage();
    TrainConfig cfg;
    cfg.epochs = 0;
    const auto history = train(state, f.data, cfg);
    CHECK(history.empty());
    CHECK(state.model.embeddings()->value.storage() == before);
    CHECK(state.epoch == 0);
}

TEST_CASE("train rejects an empty dataset") {
    auto f = make_fixture(2, 2);
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 7);
    Dataset<float> empty;
    empty.num_classes = 2;
    TrainConfig cfg;
    CHECK_THROWS_AS(train(state, empty, cfg), ConfigError);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TrainConfig{};
    cfg.beta1 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("identical seeds give identical training trajectories") {
    auto f = make_fixture(3, 2);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = 11;

    auto run = [&] {
        auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), cfg.seed);
        return train(state, f.data, cfg);
    };
    const auto h1 = run();
    const auto h2 = run();
    REQUIRE(h1.size() == h2.size());
    for (std::size_t i = 0; i < h1.size(); ++i) {
        CHECK(h1[i].loss_total == h2[i].loss_total);
        CHECK(h1[i].loss_l0 == h2[i].loss_l0);
        CHECK(h1[i].loss_pixel == h2[i].loss_pixel);
        CHECK(h1[i].train_acc == h2[i].train_acc);
    }
}

TEST_CASE("metrics CSV format and reproducibility") {
    std::vector<EpochMetrics> history;
    EpochMetrics row;
    row.epoch = 1;
    row.loss_total = 1.5;
    row.loss_l0 = 1.0;
    row.loss_pixel = 0.625;
    row.train_acc = 0.75;
    history.push_back(row);
    row.epoch = 2;
    row.val_acc = 0.5;
    history.push_back(row);

    const auto dir = temp_dir("textpix_metrics_test");
    write_metrics_csv(history, dir / "metrics.csv");
    const auto text = slurp(dir / "metrics.csv");
    CHECK(text ==
          "epoch,loss_total,loss_l0,loss_pixel,train_acc,val_acc\n"
          "1,1.5,1,0.625,0.75,\n"
          "2,1.5,1,0.625,0.75,0.5\n");

    write_metrics_csv(history, dir / "metrics2.csv");
    CHECK(slurp(dir / "metrics2.csv") == text);
}

TEST_CASE("evaluate_accuracy on perfect and degenerate cases") {
    auto f = make_fixture(2, 2);
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 3);

    Dataset<float> single;
    single.num_classes = 2;
    single.samples.push_back(f.data.samples.front());
    const double acc1 = evaluate_accuracy(state.model, single);
    CHECK((acc1 == 0.0 || acc1 == 1.0));

    Dataset<float> empty;
    empty.num_classes = 2;
    CHECK_THROWS_AS(evaluate_accuracy(state.model, empty), DataError);
}

TEST_CASE("untrained accuracy sits near chance on balanced data") {
    const std::int64_t k = 3;
    auto f = make_fixture(k, 20);  // 60 balanced samples
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 19);
    const double acc = evaluate_accuracy(state.model, f.data);
    // 3-sigma binomial band around 1/3 with n = 60.
    const double p = 1.0 / static_cast<double>(k);
    const double sigma = std::sqrt(p * (1.0 - p) / 60.0);
    CHECK(acc > p - 3.0 * sigma);
    CHECK(acc < p + 3.0 * sigma);
}

TEST_CASE("checkpoint round trip restores forward outputs bit-exactly") {
    auto f = make_fixture(3, 2);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.seed = 23;
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), cfg.seed);
    train(state, f.data, cfg);

    const auto dir = temp_dir("textpix_ckpt_test");
    save_checkpoint(dir / "model.bin", state, f.vocab, f.data.class_names);
    auto loaded = load_checkpoint<float>(dir / "model.bin");

    CHECK(loaded.state.epoch == state.epoch);
    CHECK(loaded.state.adam.step == state.adam.step);
    CHECK(loaded.class_names == f.data.class_names);
    CHECK(loaded.vocab.tokens() == f.vocab.tokens());

    const auto img_a = state.model.generate("class0 item0", f.vocab);
    const auto img_b = loaded.state.model.generate("class0 item0", f.vocab);
    CHECK(img_a.storage() == img_b.storage());
}

TEST_CASE("checkpoint save-load-save is byte identical") {
    auto f = make_fixture(2, 2);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 5);
    train(state, f.data, cfg);

    const auto dir = temp_dir("textpix_ckpt_bytes");
    save_checkpoint(dir / "a.bin", state, f.vocab, f.data.class_names);
    auto loaded = load_checkpoint<float>(dir / "a.bin");
    save_checkpoint(dir / "b.bin", loaded.state, loaded.vocab, loaded.class_names);
    CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
}

TEST_CASE("corrupt checkpoints are rejected without partial state") {
    auto f = make_fixture(2, 2);
    auto state = TrainerState<float>::create(f.cfg, f.vocab.size(), 5);
    const auto dir = temp_dir("textpix_ckpt_corrupt");
    save_checkpoint(dir / "model.bin", state, f.vocab, f.data.class_names);

    // Header garbage.
    {
        auto bytes = slurp(dir / "model.bin");
        for (std::size_t i = 8; i < 40 && i < bytes.size(); ++i) bytes[i] = 'x';
        std::ofstream out(dir / "broken.bin", std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "broken.bin"), IoError);

    // Truncated payload.
    {
        auto bytes = slurp(dir / "model.bin");
        bytes.resize(bytes.size() / 2);
        std::ofstream out(dir / "short.bin", std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "short.bin"), IoError);

    CHECK_THROWS_AS(load_checkpoint<float>(dir / "missing.bin"), IoError);
}

TEST_CASE("resumed training matches an uninterrupted run exactly") {
    auto f = make_fixture(3, 2);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 4;
    cfg.seed = 31;

    auto full_state = TrainerState<float>::create(f.cfg, f.vocab.size(), cfg.seed);
    const auto full_history = train(full_state, f.data, cfg);
    REQUIRE(full_history.size() == 6);

    TrainConfig first_leg = cfg;
    first_leg.epochs = 3;
    auto half_state = TrainerState<float>::create(f.cfg, f.vocab.size(), cfg.seed);
    train(half_state, f.data, first_leg);

    const auto dir = temp_dir("textpix_ckpt_resume");
    save_checkpoint(dir / "half.bin", half_state, f.vocab, f.data.class_names);
    auto resumed = load_checkpoint<float>(dir / "half.bin");
    CHECK(resumed.state.epoch == 3);

    const auto tail = train(resumed.state, f.data, cfg);
    REQUIRE(tail.size() == 3);
    for (std::size_t i = 0; i < tail.size(); ++i) {
        const auto& want = full_history[3 + i];
        CHECK(tail[i].epoch == want.epoch);
        CHECK(tail[i].loss_total == want.loss_total);
        CHECK(tail[i].loss_l0 == want.loss_l0);
        CHECK(tail[i].loss_pixel == want.loss_pixel);
        CHECK(tail[i].train_acc == want.train_acc);
    }

    const auto img_full = full_state.model.generate("class1 item0", f.vocab);
    const auto img_resumed = resumed.state.model.generate("class1 item0", f.vocab);
    CHECK(img_full.storage() == img_resumed.storage());
}

TEST_CASE("lambda sweep validates inputs and returns the grid") {
    auto f = make_fixture(2, 6);
    TrainConfig base;
    base.batch_size = 4;
    base.seed = 3;

    CHECK_THROWS_AS(lambda_sweep(f.data, f.vocab.size(), f.cfg, {}, 1, 1, base), ConfigError);

    const auto result = lambda_sweep<float>(f.data, f.vocab.size(), f.cfg, {0.8}, 1, 1, base);
    REQUIRE(result.runs.size() == 1);
    REQUIRE(result.summary.size() == 1);
    CHECK(result.runs.front().lambda == 0.8);
    CHECK(result.runs.front().epochs == 1);
    CHECK(result.summary.front().val_acc_std == 0.0);
    CHECK(result.summary.front().pixel_mse_mean >= 0.0);
}
