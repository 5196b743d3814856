#include "textpix/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace textpix {

namespace {

using nlohmann::json;

json config_to_json_obj(const ModelConfig& cfg) {
    return json{{"embed_dim", cfg.embed_dim},
                {"filter_heights", cfg.filter_heights},
                {"filters_per_height", cfg.filters_per_height},
                {"seq_len", cfg.seq_len},
                {"generator_channels", cfg.generator_channels},
                {"generator_sizes", cfg.generator_sizes},
                {"classifier_channels", cfg.classifier_channels},
                {"fc_sizes", cfg.fc_sizes},
                {"num_classes", cfg.num_classes},
                {"dropout_p", cfg.dropout_p},
                {"max_norm_s", cfg.max_norm_s},
                {"image_height", cfg.image_height},
                {"image_width", cfg.image_width},
                {"scale_factor", cfg.scale_factor}};
}

ModelConfig config_from_json_obj(const json& j) {
    ModelConfig cfg;
    cfg.embed_dim = j.at("embed_dim").get<std::int64_t>();
    cfg.filter_heights = j.at("filter_heights").get<std::vector<std::int64_t>>();
    cfg.filters_per_height = j.at("filters_per_height").get<std::int64_t>();
    cfg.seq_len = j.at("seq_len").get<std::int64_t>();
    cfg.generator_channels = j.at("generator_channels").get<std::vector<std::int64_t>>();
    cfg.generator_sizes = j.at("generator_sizes").get<std::vector<std::int64_t>>();
    cfg.classifier_channels = j.at("classifier_channels").get<std::vector<std::int64_t>>();
    cfg.fc_sizes = j.at("fc_sizes").get<std::vector<std::int64_t>>();
    cfg.num_classes = j.at("num_classes").get<std::int64_t>();
    cfg.dropout_p = j.at("dropout_p").get<double>();
    cfg.max_norm_s = j.at("max_norm_s").get<double>();
    cfg.image_height = j.at("image_height").get<std::int64_t>();
    cfg.image_width = j.at("image_width").get<std::int64_t>();
    cfg.scale_factor = j.at("scale_factor").get<std::int64_t>();
    return cfg;
}

void put_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(bytes), 8);
}

std::uint64_t get_u64_le(std::istream& in) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (!in) throw IoError("truncated checkpoint header length");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

template <typename T>
void write_tensor_f32(std::ostream& out, const Tensor<T>& t) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(t.size()) * 4);
    for (std::int64_t i = 0; i < t.size(); ++i) {
        const auto f = static_cast<float>(t[i]);
        const auto bits = std::bit_cast<std::uint32_t>(f);
        buf[static_cast<std::size_t>(i) * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
        buf[static_cast<std::size_t>(i) * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
        buf[static_cast<std::size_t>(i) * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
        buf[static_cast<std::size_t>(i) * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
    }
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
void read_tensor_f32(std::istream& in, Tensor<T>& t) {
    std::vector<unsigned char> buf(static_cast<std::size_t>(t.size()) * 4);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!in) throw IoError("truncated checkpoint payload");
    for (std::int64_t i = 0; i < t.size(); ++i) {
        std::uint32_t bits = 0;
        bits |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 0]);
        bits |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 1]) << 8;
        bits |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 2]) << 16;
        bits |= static_cast<std::uint32_t>(buf[static_cast<std::size_t>(i) * 4 + 3]) << 24;
        t[i] = static_cast<T>(std::bit_cast<float>(bits));
    }
}

/// Tensor slots in serialization order: parameters, buffers, Adam moments.
template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> tensor_slots(TrainerState<T>& state) {
    std::vector<std::pair<std::string, Tensor<T>*>> slots;
    auto params = state.model.parameters();
    for (auto& [name, var] : params) slots.emplace_back(name, &var->value);
    for (auto& [name, tensor] : state.model.buffers()) slots.emplace_back(name, tensor);
    for (std::size_t i = 0; i < params.size(); ++i) {
        slots.emplace_back("adam.m." + params[i].first, &state.adam.m[i]);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        slots.emplace_back("adam.v." + params[i].first, &state.adam.v[i]);
    }
    return slots;
}

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) { return config_to_json_obj(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
    try {
        return config_from_json_obj(json::parse(text));
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed model config: ") + e.what());
    }
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, TrainerState<T>& state,
                     const Vocabulary& vocab, const std::vector<std::string>& class_names) {
    if (vocab.size() != state.model.vocab_size()) {
        throw ContractError("vocabulary size does not match the model's embedding table");
    }
    auto slots = tensor_slots(state);

    json manifest = json::array();
    for (const auto& [name, tensor] : slots) {
        manifest.push_back(json{{"name", name}, {"shape", tensor->shape()}});
    }
    const json header{{"format_version", kCheckpointVersion},
                      {"model_config", config_to_json_obj(state.model.config())},
                      {"vocab", vocab.tokens()},
                      {"class_names", class_names},
                      {"rng", state.rng.serialize()},
                      {"epoch", state.epoch},
                      {"adam_step", state.adam.step},
                      {"tensors", manifest}};
    const std::string header_text = header.dump();

    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
        put_u64_le(out, header_text.size());
        out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
        for (const auto& [name, tensor] : slots) write_tensor_f32(out, *tensor);
        if (!out) throw IoError("failed writing checkpoint: " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path.string());
    const auto file_size = std::filesystem::file_size(path);
    const std::uint64_t header_len = get_u64_le(in);
    if (header_len == 0 || header_len > file_size - 8) {
        throw IoError("corrupt checkpoint header: " + path.string());
    }

    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw IoError("truncated checkpoint header: " + path.string());

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception&) {
        throw IoError("corrupt checkpoint header: " + path.string());
    }

    try {
        const auto version = header.at("format_version").get<std::uint32_t>();
        if (version != kCheckpointVersion) {
            throw IoError("unsupported checkpoint format version " + std::to_string(version));
        }
        const ModelConfig cfg = config_from_json_obj(header.at("model_config"));
        auto vocab = Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>());
        auto class_names = header.at("class_names").get<std::vector<std::string>>();

        TrainerState<T> state;
        Rng build_rng(0);
        state.model = Model<T>::build(cfg, vocab.size(), build_rng);
        state.adam = AdamState<T>::init(state.model);
        state.adam.step = header.at("adam_step").get<std::int64_t>();
        state.epoch = header.at("epoch").get<std::int64_t>();
        state.rng = Rng::deserialize(header.at("rng").get<std::string>());

        auto slots = tensor_slots(state);
        const auto& manifest = header.at("tensors");
        if (manifest.size() != slots.size()) {
            throw IoError("checkpoint tensor manifest does not match the model");
        }
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const auto name = manifest[i].at("name").get<std::string>();
            const auto shape = manifest[i].at("shape").get<Shape>();
            if (name != slots[i].first || shape != slots[i].second->shape()) {
                throw IoError("checkpoint tensor '" + name + "' does not match expected '" +
                              slots[i].first + "' " + shape_to_string(slots[i].second->shape()));
            }
            read_tensor_f32(in, *slots[i].second);
        }
        char extra = 0;
        if (in.read(&extra, 1); in.gcount() != 0) {
            throw IoError("checkpoint has trailing bytes: " + path.string());
        }
        return {std::move(state), std::move(vocab), std::move(class_names)};
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt checkpoint header: ") + e.what());
    }
}

template void save_checkpoint<float>(const std::filesystem::path&, TrainerState<float>&,
                                     const Vocabulary&, const std::vector<std::string>&);
template void save_checkpoint<double>(const std::filesystem::path&, TrainerState<double>&,
                                      const Vocabulary&, const std::vector<std::string>&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::filesystem::path&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace textpix
