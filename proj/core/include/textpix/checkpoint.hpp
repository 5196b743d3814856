#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>

#include "textpix/training.hpp"

namespace textpix {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint layout: a little-endian u64 byte length, a UTF-8 JSON header
/// (format version, model config, vocabulary, rng state, epoch, Adam step
/// and the named tensor manifest with shapes), then the raw little-endian
/// float32 payload in manifest order. The payload covers parameters, batch
/// norm running statistics and both Adam moments. Writing goes through a
/// temp file and rename, so a failed save never leaves a partial
/// checkpoint, and loading validates the manifest against the rebuilt model
/// before anything is returned. Double-precision models are quantized to
/// float32 on save.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, TrainerState<T>& state,
                     const Vocabulary& vocab, const std::vector<std::string>& class_names = {});

template <typename T>
struct LoadedCheckpoint {
    TrainerState<T> state;
    Vocabulary vocab;
    std::vector<std::string> class_names;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace textpix
