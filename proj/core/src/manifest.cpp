#include <cmath>
#include <fstream>

#include "textpix/dataset.hpp"
#include "textpix/error.hpp"

namespace textpix {

Manifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open manifest: " + path.string());

    Manifest manifest;
    manifest.base_dir = path.parent_path();

    std::string line;
    std::int64_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
        if (tab1 == std::string::npos || tab2 == std::string::npos ||
            line.find('\t', tab2 + 1) != std::string::npos) {
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": expected 3 tab-separated columns");
        }
        ManifestRow row;
        row.label = line.substr(0, tab1);
        row.image_path = line.substr(tab1 + 1, tab2 - tab1 - 1);
        row.text = line.substr(tab2 + 1);
        if (row.label.empty()) {
            throw DataError("manifest line " + std::to_string(line_no) + ": empty label");
        }
        if (row.image_path.empty()) {
            throw DataError("manifest line " + std::to_string(line_no) + ": empty image path");
        }
        if (!std::filesystem::exists(manifest.base_dir / row.image_path)) {
            throw DataError("manifest line " + std::to_string(line_no) +
                            ": image path does not resolve: " + row.image_path);
        }
        if (!manifest.class_index.contains(row.label)) {
            manifest.class_index.emplace(row.label,
                                         static_cast<std::int32_t>(manifest.class_names.size()));
            manifest.class_names.push_back(row.label);
        }
        manifest.rows.push_back(std::move(row));
    }
    if (manifest.rows.empty()) throw DataError("manifest has no rows: " + path.string());
    return manifest;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open manifest for writing: " + path.string());
    for (const auto& row : manifest.rows) {
        out << row.label << '\t' << row.image_path << '\t' << row.text << '\n';
    }
    if (!out) throw IoError("failed writing manifest: " + path.string());
}

std::string sanitize_label(const std::string& label) {
    std::string out;
    out.reserve(label.size());
    for (const char c : label) {
        const auto uc = static_cast<unsigned char>(c);
        const bool ok = (uc >= 'a' && uc <= 'z') || (uc >= 'A' && uc <= 'Z') ||
                        (uc >= '0' && uc <= '9') || uc == '-' || uc == '_';
        out.push_back(ok ? c : '_');
    }
    return out;
}

std::vector<std::int64_t> validation_order(std::int64_t n, std::uint64_t seed) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng = Rng(seed).split(0x76a1u);  // validation-split stream
    for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j =
            static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    return order;
}

std::vector<std::vector<std::string>> manifest_tokens(const Manifest& manifest) {
    std::vector<std::vector<std::string>> out;
    out.reserve(manifest.rows.size());
    for (const auto& row : manifest.rows) out.push_back(tokenize(row.text));
    return out;
}

std::vector<std::string> mix_tokens(const MixSpec& spec) {
    if (spec.doc_a.empty() || spec.doc_b.empty()) {
        throw ContractError("mix_tokens requires two non-empty documents");
    }
    if (!(spec.alpha >= 0.0 && spec.alpha <= 1.0)) {
        throw ContractError("mix alpha must lie in [0, 1]");
    }
    // The 1e-9 guard keeps exact fractions exact under rounding.
    const auto take = [](double fraction, std::size_t n) {
        return static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(n) - 1e-9));
    };
    const std::size_t from_a = take(spec.alpha, spec.doc_a.size());
    const std::size_t from_b = take(1.0 - spec.alpha, spec.doc_b.size());

    std::vector<std::string> out;
    out.reserve(from_a + from_b);
    out.insert(out.end(), spec.doc_a.begin(), spec.doc_a.begin() + static_cast<std::ptrdiff_t>(from_a));
    out.insert(out.end(), spec.doc_b.begin(), spec.doc_b.begin() + static_cast<std::ptrdiff_t>(from_b));
    return out;
}

}  // namespace textpix
