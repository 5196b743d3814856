#include "textpix/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "textpix/error.hpp"

namespace textpix {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (const char c : text) {
        const auto uc = static_cast<unsigned char>(c);
        if (std::isspace(uc) || (uc < 0x80 && std::ispunct(uc))) {
            if (!current.empty()) {
                tokens.push_back(std::move(current));
                current.clear();
            }
        } else {
            current.push_back(uc < 0x80 ? static_cast<char>(std::tolower(uc)) : c);
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& corpus,
                             std::int64_t min_count) {
    if (corpus.empty()) throw DataError("vocabulary corpus is empty");
    if (min_count < 1) throw ConfigError("min_count must be at least 1");

    // std::map keeps ties in lexicographic order for free.
    std::map<std::string, std::int64_t> counts;
    for (const auto& doc : corpus) {
        for (const auto& token : doc) ++counts[token];
    }

    std::vector<std::pair<std::string, std::int64_t>> kept;
    for (const auto& [token, count] : counts) {
        if (count >= min_count) kept.emplace_back(token, count);
    }
    if (kept.empty()) {
        throw DataError("no token reaches min_count " + std::to_string(min_count) +
                        "; vocabulary would be empty");
    }
    std::stable_sort(kept.begin(), kept.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });

    std::vector<std::string> ordered;
    ordered.reserve(kept.size());
    for (auto& [token, count] : kept) ordered.push_back(std::move(token));
    return from_tokens(std::move(ordered));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    Vocabulary vocab;
    vocab.id_to_token_ = std::move(tokens);
    vocab.token_to_id_.reserve(vocab.id_to_token_.size());
    for (std::size_t i = 0; i < vocab.id_to_token_.size(); ++i) {
        const auto [it, inserted] =
            vocab.token_to_id_.emplace(vocab.id_to_token_[i], static_cast<std::int32_t>(i) + 2);
        if (!inserted) {
            throw DataError("duplicate token '" + vocab.id_to_token_[i] + "' in vocabulary");
        }
    }
    return vocab;
}

std::int32_t Vocabulary::id_of(const std::string& token) const {
    const auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
    static const std::string pad = "<pad>";
    static const std::string unk = "<unk>";
    if (id == kPadId) return pad;
    if (id == kUnkId) return unk;
    const auto index = static_cast<std::size_t>(id - 2);
    if (id < 0 || index >= id_to_token_.size()) {
        throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                         std::to_string(size()));
    }
    return id_to_token_[index];
}

bool Vocabulary::contains(const std::string& token) const {
    return token_to_id_.contains(token);
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open vocabulary file for writing: " + path.string());
    for (const auto& token : id_to_token_) out << token << '\n';
    if (!out) throw IoError("failed writing vocabulary file: " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vocabulary file: " + path.string());
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    return from_tokens(std::move(tokens));
}

TokenizedDoc encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                    std::int64_t seq_len) {
    if (seq_len < kMinSeqLen) {
        throw ConfigError("sequence length " + std::to_string(seq_len) +
                          " is below the minimum of " + std::to_string(kMinSeqLen));
    }
    TokenizedDoc doc;
    doc.original_count = static_cast<std::int64_t>(tokens.size());
    doc.ids.assign(static_cast<std::size_t>(seq_len), kPadId);
    const std::size_t n = std::min(tokens.size(), static_cast<std::size_t>(seq_len));
    for (std::size_t i = 0; i < n; ++i) {
        doc.ids[i] = vocab.id_of(tokens[i]);
    }
    return doc;
}

}  // namespace textpix
