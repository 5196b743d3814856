#include "cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "textpix/checkpoint.hpp"
#include "textpix/dataset.hpp"
#include "textpix/training.hpp"

namespace textpix::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

fs::path resolve_out(std::string flag_value, const char* command) {
    if (!flag_value.empty()) return fs::path(std::move(flag_value));
    if (const char* root = std::getenv("TEXTPIX_OUT"); root != nullptr && *root != '\0') {
        return fs::path(root) / command;
    }
    throw UsageError("--out is required (or set TEXTPIX_OUT as the default output root)");
}

void write_run_record(const fs::path& path, const json& record) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write run record: " + path.string());
    out << record.dump(2) << '\n';
}

std::vector<double> parse_double_list(const std::string& text, const char* flag) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            std::size_t used = 0;
            const double v = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(v);
        } catch (const std::exception&) {
            throw UsageError(std::string(flag) + ": cannot parse '" + item + "' as a number");
        }
    }
    if (out.empty()) throw UsageError(std::string(flag) + ": empty list");
    return out;
}

struct ModelFlags {
    bool tiny = false;
    std::int64_t seq_len = 0;  // 0 = preset default
};

void add_model_flags(CLI::App* cmd, ModelFlags& flags) {
    cmd->add_flag("--tiny", flags.tiny, "Use the down-scaled 32x32 configuration");
    cmd->add_option("--seq-len", flags.seq_len, "Token sequence length (default: preset)");
}

ModelConfig make_model_config(const ModelFlags& flags, std::int64_t num_classes) {
    ModelConfig cfg = flags.tiny ? ModelConfig::tiny(num_classes) : ModelConfig::full(num_classes);
    if (flags.seq_len > 0) cfg.seq_len = flags.seq_len;
    return cfg;
}

struct TrainFlags {
    std::string manifest;
    std::string out;
    std::string loss = "sum";
    double lambda = -1.0;  // negative = variant default
    std::int64_t epochs = 100;
    std::int64_t batch_size = 32;
    double lr = 1e-3;
    double val_fraction = 0.0;
    std::uint64_t seed = 0;
    std::int64_t min_count = 1;
    bool no_shuffle = false;
    ModelFlags model;
};

LossConfig make_loss_config(const std::string& name, double lambda) {
    LossConfig cfg = name == "mean" ? LossConfig::mean_variant() : LossConfig::sum_variant();
    if (lambda >= 0.0) cfg.lambda = lambda;
    return cfg;
}

json loss_to_json(const LossConfig& cfg) {
    return json{{"variant", cfg.variant == LossVariant::sum ? "sum" : "mean"},
                {"lambda", cfg.lambda}};
}

/// Builds the vocabulary from the training part of the carve-out only, then
/// loads and splits the dataset with the same deterministic order.
struct PreparedData {
    Vocabulary vocab;
    Dataset<float> train;
    Dataset<float> val;
};

PreparedData prepare_data(const Manifest& manifest, double val_fraction, std::uint64_t seed,
                          std::int64_t min_count, const ModelConfig& cfg) {
    const std::int64_t n = static_cast<std::int64_t>(manifest.rows.size());
    const std::int64_t n_val = validation_count(n, val_fraction);
    const auto order = validation_order(n, seed);

    const auto all_tokens = manifest_tokens(manifest);
    std::vector<std::vector<std::string>> train_tokens;
    train_tokens.reserve(static_cast<std::size_t>(n - n_val));
    for (std::int64_t i = n_val; i < n; ++i) {
        train_tokens.push_back(all_tokens[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])]);
    }

    PreparedData data;
    data.vocab = Vocabulary::build(train_tokens, min_count);
    auto full = load_dataset<float>(manifest, data.vocab, cfg.seq_len, cfg.image_height,
                                    cfg.image_width);
    if (n_val == 0) {
        data.train = std::move(full);
        data.val.num_classes = data.train.num_classes;
        data.val.class_names = data.train.class_names;
    } else {
        auto [train, val] = split_validation(full, val_fraction, seed);
        data.train = std::move(train);
        data.val = std::move(val);
    }
    return data;
}

int cmd_train(const TrainFlags& flags) {
    const auto out_dir = resolve_out(flags.out, "train");
    fs::create_directories(out_dir);

    const auto manifest = load_manifest(flags.manifest);
    const auto mcfg = make_model_config(flags.model, manifest.num_classes());
    const auto data = prepare_data(manifest, flags.val_fraction, flags.seed, flags.min_count, mcfg);

    TrainConfig cfg;
    cfg.lr = flags.lr;
    cfg.epochs = flags.epochs;
    cfg.batch_size = flags.batch_size;
    cfg.seed = flags.seed;
    cfg.loss = make_loss_config(flags.loss, flags.lambda);
    cfg.shuffle = !flags.no_shuffle;

    auto state = TrainerState<float>::create(mcfg, data.vocab.size(), cfg.seed);
    const auto history =
        train(state, data.train, cfg, data.val.samples.empty() ? nullptr : &data.val);

    write_metrics_csv(history, out_dir / "metrics.csv");
    data.vocab.save(out_dir / "vocab.txt");
    save_checkpoint(out_dir / "checkpoint.bin", state, data.vocab, manifest.class_names);
    write_run_record(out_dir / "run.json",
                     json{{"command", "train"},
                          {"manifest", flags.manifest},
                          {"out", out_dir.string()},
                          {"seed", flags.seed},
                          {"epochs", flags.epochs},
                          {"batch_size", flags.batch_size},
                          {"lr", flags.lr},
                          {"val_fraction", flags.val_fraction},
                          {"min_count", flags.min_count},
                          {"shuffle", !flags.no_shuffle},
                          {"loss", loss_to_json(cfg.loss)},
                          {"model_config", json::parse(model_config_to_json(mcfg))}});

    if (!history.empty()) {
        const auto& last = history.back();
        std::cout << "epochs=" << last.epoch << " loss=" << format_metric(last.loss_total)
                  << " train_acc=" << format_metric(last.train_acc);
        if (last.val_acc) std::cout << " val_acc=" << format_metric(*last.val_acc);
        std::cout << '\n';
    } else {
        std::cout << "epochs=0\n";
    }
    return 0;
}

struct EvalFlags {
    std::string checkpoint;
    std::string manifest;
};

int cmd_eval(const EvalFlags& flags) {
    auto loaded = load_checkpoint<float>(flags.checkpoint);
    const auto manifest = load_manifest(flags.manifest);
    const auto& cfg = loaded.state.model.config();

    // Labels map through the class names recorded at training time.
    std::unordered_map<std::string, std::int32_t> index;
    for (std::size_t i = 0; i < loaded.class_names.size(); ++i) {
        index.emplace(loaded.class_names[i], static_cast<std::int32_t>(i));
    }
    Dataset<float> data;
    data.num_classes = cfg.num_classes;
    data.class_names = loaded.class_names;
    for (const auto& row : manifest.rows) {
        const auto it = index.find(row.label);
        if (it == index.end()) {
            throw DataError("label '" + row.label + "' was not present at training time");
        }
        Sample<float> s;
        s.doc = encode(tokenize(row.text), loaded.vocab, cfg.seq_len);
        s.label = it->second;
        s.image = load_image<float>(manifest.resolve(row), cfg.image_height, cfg.image_width);
        data.samples.push_back(std::move(s));
    }

    const double acc = evaluate_accuracy(loaded.state.model, data);
    std::cout << "accuracy=" << format_metric(acc) << '\n';
    return 0;
}

struct GenerateFlags {
    std::string checkpoint;
    std::string text;
    std::string out;
};

int cmd_generate(const GenerateFlags& flags) {
    if (flags.out.empty()) throw UsageError("--out is required");
    auto loaded = load_checkpoint<float>(flags.checkpoint);
    const auto image = loaded.state.model.generate(flags.text, loaded.vocab);
    save_image(image, flags.out);
    write_run_record(fs::path(flags.out + ".run.json"),
                     json{{"command", "generate"},
                          {"checkpoint", flags.checkpoint},
                          {"text", flags.text},
                          {"out", flags.out},
                          {"seed", 0}});
    std::cout << "wrote " << flags.out << '\n';
    return 0;
}

struct MixFlags {
    std::string checkpoint;
    std::string text_a;
    std::string text_b;
    std::string alphas = "0,0.25,0.5,0.75,1";
    std::string out;
};

int cmd_mix(const MixFlags& flags) {
    const auto out_dir = resolve_out(flags.out, "mix");
    fs::create_directories(out_dir);
    const auto alphas = parse_double_list(flags.alphas, "--alphas");

    auto loaded = load_checkpoint<float>(flags.checkpoint);
    const auto tokens_a = tokenize(flags.text_a);
    const auto tokens_b = tokenize(flags.text_b);

    std::vector<Tensor<float>> images;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const auto mixed = mix_tokens({tokens_a, tokens_b, alphas[i], 0});
        std::string text;
        for (const auto& token : mixed) {
            if (!text.empty()) text += ' ';
            text += token;
        }
        auto image = loaded.state.model.generate(text, loaded.vocab);
        char name[64];
        std::snprintf(name, sizeof(name), "mix_%02zu_alpha_%s.png", i,
                      format_metric(alphas[i]).c_str());
        save_image(image, out_dir / name);
        images.push_back(std::move(image));
    }
    save_image(tile_images(images), out_dir / "strip.png");
    write_run_record(out_dir / "run.json", json{{"command", "mix"},
                                                {"checkpoint", flags.checkpoint},
                                                {"text_a", flags.text_a},
                                                {"text_b", flags.text_b},
                                                {"alphas", alphas},
                                                {"out", out_dir.string()},
                                                {"seed", 0}});
    std::cout << "wrote " << alphas.size() << " images to " << out_dir.string() << '\n';
    return 0;
}

struct SweepFlags {
    std::string manifest;
    std::string out;
    std::string lambdas = "0,0.2,0.4,0.6,0.8,1,1.2,1.4,1.6,1.8,2";
    std::string loss = "sum";
    std::int64_t epochs = 20;
    std::int64_t runs = 5;
    std::int64_t batch_size = 32;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::int64_t min_count = 1;
    ModelFlags model;
};

int cmd_sweep(const SweepFlags& flags) {
    const auto out_dir = resolve_out(flags.out, "sweep");
    fs::create_directories(out_dir);
    const auto lambdas = parse_double_list(flags.lambdas, "--lambdas");

    const auto manifest = load_manifest(flags.manifest);
    const auto mcfg = make_model_config(flags.model, manifest.num_classes());
    // The sweep carves 10% for validation internally with the same order.
    const auto data = prepare_data(manifest, 0.1, flags.seed, flags.min_count, mcfg);
    Dataset<float> full;
    full.num_classes = data.train.num_classes;
    full.class_names = data.train.class_names;
    full.samples = data.val.samples;
    full.samples.insert(full.samples.end(), data.train.samples.begin(), data.train.samples.end());

    TrainConfig base;
    base.lr = flags.lr;
    base.batch_size = flags.batch_size;
    base.seed = flags.seed;
    base.loss = make_loss_config(flags.loss, -1.0);

    const auto result = lambda_sweep(full, data.vocab.size(), mcfg, lambdas, flags.epochs,
                                     flags.runs, base, out_dir);
    write_run_record(out_dir / "run.json", json{{"command", "sweep"},
                                                {"manifest", flags.manifest},
                                                {"out", out_dir.string()},
                                                {"lambdas", lambdas},
                                                {"epochs", flags.epochs},
                                                {"runs", flags.runs},
                                                {"batch_size", flags.batch_size},
                                                {"lr", flags.lr},
                                                {"loss", flags.loss},
                                                {"seed", flags.seed}});
    for (const auto& row : result.summary) {
        std::cout << "lambda=" << format_metric(row.lambda)
                  << " val_acc=" << format_metric(row.val_acc_mean) << "±"
                  << format_metric(row.val_acc_std)
                  << " pixel_mse=" << format_metric(row.pixel_mse_mean) << '\n';
    }
    return 0;
}

struct ExportFlags {
    std::string checkpoint;
    std::string manifest;
    std::string out;
    std::string tag;
};

int cmd_export(const ExportFlags& flags) {
    const auto out_dir = resolve_out(flags.out, "export");
    fs::create_directories(out_dir);
    auto loaded = load_checkpoint<float>(flags.checkpoint);
    const auto manifest = load_manifest(flags.manifest);
    const auto exported =
        export_encodings(loaded.state.model, manifest, loaded.vocab, out_dir, flags.tag);
    write_run_record(out_dir / "run.json", json{{"command", "export"},
                                                {"checkpoint", flags.checkpoint},
                                                {"manifest", flags.manifest},
                                                {"out", out_dir.string()},
                                                {"tag", flags.tag},
                                                {"seed", 0}});
    std::cout << "wrote " << exported.rows.size() << " encodings to " << out_dir.string() << '\n';
    return 0;
}

void print_machine_error(const char* kind, const std::string& message) {
    const json line{{"error", json{{"kind", kind}, {"message", message}}}};
    std::cerr << line.dump() << '\n';
}

}  // namespace

int run_main(int argc, const char* const* argv) {
    CLI::App app{"Joint text classification and image generation"};
    app.require_subcommand(1);

    TrainFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a TSV manifest");
    train_cmd->add_option("--manifest", train_flags.manifest, "Manifest TSV")->required();
    train_cmd->add_option("--out", train_flags.out, "Output directory");
    train_cmd->add_option("--lambda", train_flags.lambda, "Pixel loss weight");
    train_cmd->add_option("--loss", train_flags.loss, "Loss variant: sum|mean")
        ->check(CLI::IsMember({"sum", "mean"}));
    train_cmd->add_option("--epochs", train_flags.epochs, "Epoch count");
    train_cmd->add_option("--batch-size", train_flags.batch_size, "Batch size");
    train_cmd->add_option("--lr", train_flags.lr, "Learning rate");
    train_cmd->add_option("--val-fraction", train_flags.val_fraction,
                          "Validation carve-out fraction");
    train_cmd->add_option("--seed", train_flags.seed, "Random seed");
    train_cmd->add_option("--min-count", train_flags.min_count, "Vocabulary frequency cutoff");
    train_cmd->add_flag("--no-shuffle", train_flags.no_shuffle, "Keep manifest order per epoch");
    add_model_flags(train_cmd, train_flags.model);

    EvalFlags eval_flags;
    auto* eval_cmd = app.add_subcommand("eval", "Report accuracy on a manifest");
    eval_cmd->add_option("--checkpoint", eval_flags.checkpoint, "Checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_flags.manifest, "Manifest TSV")->required();

    GenerateFlags generate_flags;
    auto* generate_cmd = app.add_subcommand("generate", "Generate an image for a text");
    generate_cmd->add_option("--checkpoint", generate_flags.checkpoint, "Checkpoint file")
        ->required();
    generate_cmd->add_option("--text", generate_flags.text, "Input text")->required();
    generate_cmd->add_option("--out", generate_flags.out, "Output PNG path")->required();

    MixFlags mix_flags;
    auto* mix_cmd = app.add_subcommand("mix", "Generate images from mixed token prefixes");
    mix_cmd->add_option("--checkpoint", mix_flags.checkpoint, "Checkpoint file")->required();
    mix_cmd->add_option("--text-a", mix_flags.text_a, "First text")->required();
    mix_cmd->add_option("--text-b", mix_flags.text_b, "Second text")->required();
    mix_cmd->add_option("--alphas", mix_flags.alphas, "Comma-separated mix fractions");
    mix_cmd->add_option("--out", mix_flags.out, "Output directory");

    SweepFlags sweep_flags;
    auto* sweep_cmd = app.add_subcommand("sweep", "Train across lambda values");
    sweep_cmd->add_option("--manifest", sweep_flags.manifest, "Manifest TSV")->required();
    sweep_cmd->add_option("--out", sweep_flags.out, "Output directory");
    sweep_cmd->add_option("--lambdas", sweep_flags.lambdas, "Comma-separated lambda values");
    sweep_cmd->add_option("--loss", sweep_flags.loss, "Loss variant: sum|mean")
        ->check(CLI::IsMember({"sum", "mean"}));
    sweep_cmd->add_option("--epochs", sweep_flags.epochs, "Epochs per run");
    sweep_cmd->add_option("--runs", sweep_flags.runs, "Runs per lambda");
    sweep_cmd->add_option("--batch-size", sweep_flags.batch_size, "Batch size");
    sweep_cmd->add_option("--lr", sweep_flags.lr, "Learning rate");
    sweep_cmd->add_option("--seed", sweep_flags.seed, "Base random seed");
    sweep_cmd->add_option("--min-count", sweep_flags.min_count, "Vocabulary frequency cutoff");
    add_model_flags(sweep_cmd, sweep_flags.model);

    ExportFlags export_flags;
    auto* export_cmd = app.add_subcommand("export", "Export generated layers as a PNG dataset");
    export_cmd->add_option("--checkpoint", export_flags.checkpoint, "Checkpoint file")->required();
    export_cmd->add_option("--manifest", export_flags.manifest, "Manifest TSV")->required();
    export_cmd->add_option("--out", export_flags.out, "Output directory");
    export_cmd->add_option("--tag", export_flags.tag, "Suffix for the emitted manifest name");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        print_machine_error("usage", e.what());
        return 1;
    }

    try {
        if (train_cmd->parsed()) return cmd_train(train_flags);
        if (eval_cmd->parsed()) return cmd_eval(eval_flags);
        if (generate_cmd->parsed()) return cmd_generate(generate_flags);
        if (mix_cmd->parsed()) return cmd_mix(mix_flags);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_flags);
        if (export_cmd->parsed()) return cmd_export(export_flags);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        print_machine_error("usage", e.what());
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        print_machine_error("numeric", e.what());
        return 3;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        print_machine_error(to_string(e.kind()), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        print_machine_error("internal", e.what());
        return 2;
    }
}

}  // namespace textpix::cli
