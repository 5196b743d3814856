#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "textpix/image_io.hpp"
#include "textpix/model.hpp"
#include "textpix/text.hpp"

namespace textpix {

/// One dataset row: class label, image path (relative to the manifest) and
/// the raw text description.
struct ManifestRow {
    std::string label;
    std::string image_path;
    std::string text;
};

/// Ordered view of a TSV manifest. Class indices follow first appearance of
/// each label, so the same file always yields the same indexing.
struct Manifest {
    std::vector<ManifestRow> rows;
    std::vector<std::string> class_names;
    std::unordered_map<std::string, std::int32_t> class_index;
    std::filesystem::path base_dir;

    std::int64_t num_classes() const noexcept {
        return static_cast<std::int64_t>(class_names.size());
    }

    std::filesystem::path resolve(const ManifestRow& row) const { return base_dir / row.image_path; }
};

/// Parses `label<TAB>image_path<TAB>text` rows (UTF-8, LF, no header) and
/// verifies every image path resolves.
Manifest load_manifest(const std::filesystem::path& path);

/// Writes rows back in the same TSV format.
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Turns a class label into a filesystem-safe fragment.
std::string sanitize_label(const std::string& label);

template <typename T>
struct Sample {
    TokenizedDoc doc;
    std::int32_t label = 0;
    Tensor<T> image;  // [3, H, W] in [0, 1]
};

template <typename T>
struct Dataset {
    std::vector<Sample<T>> samples;
    std::int64_t num_classes = 0;
    std::vector<std::string> class_names;

    std::int64_t size() const noexcept { return static_cast<std::int64_t>(samples.size()); }
};

/// Tokenizes, encodes and loads every manifest row into memory.
template <typename T>
Dataset<T> load_dataset(const Manifest& manifest, const Vocabulary& vocab, std::int64_t seq_len,
                        std::int64_t image_h, std::int64_t image_w) {
    Dataset<T> out;
    out.num_classes = manifest.num_classes();
    out.class_names = manifest.class_names;
    out.samples.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) {
        Sample<T> s;
        s.doc = encode(tokenize(row.text), vocab, seq_len);
        s.label = manifest.class_index.at(row.label);
        s.image = load_image<T>(manifest.resolve(row), image_h, image_w);
        out.samples.push_back(std::move(s));
    }
    return out;
}

/// Tokenized corpus of a manifest, in row order; vocabulary input.
std::vector<std::vector<std::string>> manifest_tokens(const Manifest& manifest);

/// Deterministically shuffled index order used by the validation carve-out;
/// the first ceil(fraction * n) entries form the validation part. Shared by
/// split_validation and by callers that must build vocabularies from the
/// training part only.
std::vector<std::int64_t> validation_order(std::int64_t n, std::uint64_t seed);

inline std::int64_t validation_count(std::int64_t n, double fraction) {
    if (!(fraction >= 0.0 && fraction < 1.0)) {
        throw ConfigError("validation fraction must lie in [0, 1)");
    }
    return static_cast<std::int64_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

/// Deterministic carve-out: shuffles indices with the seed and moves the
/// first ceil(fraction * n) samples into the validation part.
template <typename T>
std::pair<Dataset<T>, Dataset<T>> split_validation(const Dataset<T>& data, double fraction,
                                                   std::uint64_t seed) {
    const std::int64_t n = data.size();
    const std::int64_t n_val = validation_count(n, fraction);
    const auto order = validation_order(n, seed);
    Dataset<T> train, val;
    train.num_classes = val.num_classes = data.num_classes;
    train.class_names = val.class_names = data.class_names;
    for (std::int64_t i = 0; i < n; ++i) {
        const auto& sample = data.samples[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        (i < n_val ? val : train).samples.push_back(sample);
    }
    return {std::move(train), std::move(val)};
}

/// Token-mixing input: two source token lists and the fraction taken from
/// the first one.
struct MixSpec {
    std::vector<std::string> doc_a;
    std::vector<std::string> doc_b;
    double alpha = 0.5;
    std::uint64_t seed = 0;  // reserved for future sampling modes
};

/// First ceil(alpha * |a|) tokens of doc_a followed by the first
/// ceil((1 - alpha) * |b|) tokens of doc_b, original order preserved.
std::vector<std::string> mix_tokens(const MixSpec& spec);

/// Runs the generator over every manifest row and writes each produced layer
/// as `<index>_<label>.png` plus a manifest mapping the encodings to the
/// original labels. The result is a plain image dataset.
template <typename T>
Manifest export_encodings(Model<T>& model, const Manifest& source, const Vocabulary& vocab,
                          const std::filesystem::path& out_dir, const std::string& tag = "") {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    Manifest result;
    result.base_dir = out_dir;
    result.class_names = source.class_names;
    result.class_index = source.class_index;

    std::size_t written = 0;
    try {
        for (std::size_t i = 0; i < source.rows.size(); ++i) {
            const auto& row = source.rows[i];
            const auto image = model.generate(row.text, vocab);
            char name[64];
            std::snprintf(name, sizeof(name), "%06zu_", i);
            const std::string file = std::string(name) + sanitize_label(row.label) + ".png";
            save_image(image, out_dir / file);
            result.rows.push_back({row.label, file, row.text});
            ++written;
        }
    } catch (const Error&) {
        throw IoError("encoding export aborted after " + std::to_string(written) + " of " +
                      std::to_string(source.rows.size()) + " files");
    }
    const std::string manifest_name = tag.empty() ? "manifest.tsv" : "manifest_" + tag + ".tsv";
    save_manifest(result, out_dir / manifest_name);
    return result;
}

}  // namespace textpix
