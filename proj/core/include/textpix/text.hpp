#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "textpix/autodiff.hpp"
#include "textpix/tensor.hpp"

namespace textpix {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnkId = 1;
inline constexpr std::int64_t kMinSeqLen = 5;

/// Lowercases, maps ASCII punctuation to spaces, and splits on whitespace.
/// Digits are kept, non-ASCII bytes pass through untouched.
std::vector<std::string> tokenize(std::string_view text);

/// Token-to-id map with PAD = 0 and UNK = 1 reserved. Corpus tokens get
/// contiguous ids from 2, ordered by descending frequency then
/// lexicographically, so rebuilding on the same corpus is reproducible.
class Vocabulary {
public:
    static Vocabulary build(const std::vector<std::vector<std::string>>& corpus,
                            std::int64_t min_count = 1);

    /// Rebuild from an ordered token list (ids 2..); used when loading
    /// serialized vocabularies.
    static Vocabulary from_tokens(std::vector<std::string> tokens);

    std::int32_t id_of(const std::string& token) const;  // UNK when absent
    const std::string& token_of(std::int32_t id) const;
    bool contains(const std::string& token) const;

    /// Number of ids, PAD and UNK included.
    std::int64_t size() const noexcept {
        return static_cast<std::int64_t>(id_to_token_.size()) + 2;
    }

    /// Corpus tokens in id order (excludes PAD/UNK).
    const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

    /// One token per line, line number = id - 2; bit-exact round trip.
    void save(const std::filesystem::path& path) const;
    static Vocabulary load(const std::filesystem::path& path);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::int32_t> token_to_id_;
};

/// Fixed-length id sequence after pad/truncate.
struct TokenizedDoc {
    std::vector<std::int32_t> ids;
    std::int64_t original_count = 0;

    std::int64_t length() const noexcept { return static_cast<std::int64_t>(ids.size()); }
};

/// Maps tokens to ids, truncates to the first seq_len tokens and right-pads
/// with PAD. seq_len must be at least kMinSeqLen so every filter height fits.
TokenizedDoc encode(const std::vector<std::string>& tokens, const Vocabulary& vocab,
                    std::int64_t seq_len);

/// Embedding lookup: row i of the output is weights[ids[i]]. Differentiable
/// with respect to the embedding matrix.
template <typename T>
Var<T> embed(Tape<T>& tape, const TokenizedDoc& doc, const Var<T>& weights) {
    if (weights->value.rank() != 2) {
        throw ShapeError("embedding matrix must be rank 2, got " +
                         shape_to_string(weights->value.shape()));
    }
    const std::int64_t vocab = weights->value.extent(0);
    const std::int64_t dim = weights->value.extent(1);
    const std::int64_t len = doc.length();

    Tensor<T> out({len, dim}, T{0});
    for (std::int64_t i = 0; i < len; ++i) {
        const std::int32_t id = doc.ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= vocab) {
            throw ShapeError("token id " + std::to_string(id) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        const T* src = weights->value.data() + static_cast<std::int64_t>(id) * dim;
        std::copy(src, src + dim, out.data() + i * dim);
    }

    const bool needs = weights->grad_needed();
    auto result = detail::op_output(std::move(out), needs);
    if (needs) {
        auto ids = doc.ids;
        tape.record([weights, result, ids = std::move(ids), dim] {
            weights->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                T* dst = weights->grad.data() + static_cast<std::int64_t>(ids[i]) * dim;
                const T* g = result->grad.data() + static_cast<std::int64_t>(i) * dim;
                for (std::int64_t k = 0; k < dim; ++k) dst[k] += g[k];
            }
        });
    }
    return result;
}

/// Batched lookup producing [B, L, d]; all docs must share one length.
template <typename T>
Var<T> embed(Tape<T>& tape, const std::vector<TokenizedDoc>& docs, const Var<T>& weights) {
    if (docs.empty()) throw ContractError("embed: empty batch");
    const std::int64_t vocab = weights->value.extent(0);
    const std::int64_t dim = weights->value.extent(1);
    const std::int64_t len = docs.front().length();
    const std::int64_t batch = static_cast<std::int64_t>(docs.size());

    Tensor<T> out({batch, len, dim}, T{0});
    std::vector<std::int32_t> flat_ids;
    flat_ids.reserve(static_cast<std::size_t>(batch * len));
    for (std::int64_t b = 0; b < batch; ++b) {
        const auto& doc = docs[static_cast<std::size_t>(b)];
        if (doc.length() != len) {
            throw ContractError("embed: documents in a batch must share one length");
        }
        for (std::int64_t i = 0; i < len; ++i) {
            const std::int32_t id = doc.ids[static_cast<std::size_t>(i)];
            if (id < 0 || id >= vocab) {
                throw ShapeError("token id " + std::to_string(id) +
                                 " outside vocabulary of size " + std::to_string(vocab));
            }
            flat_ids.push_back(id);
            const T* src = weights->value.data() + static_cast<std::int64_t>(id) * dim;
            std::copy(src, src + dim, out.data() + (b * len + i) * dim);
        }
    }

    const bool needs = weights->grad_needed();
    auto result = detail::op_output(std::move(out), needs);
    if (needs) {
        tape.record([weights, result, ids = std::move(flat_ids), dim] {
            weights->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                T* dst = weights->grad.data() + static_cast<std::int64_t>(ids[i]) * dim;
                const T* g = result->grad.data() + static_cast<std::int64_t>(i) * dim;
                for (std::int64_t k = 0; k < dim; ++k) dst[k] += g[k];
            }
        });
    }
    return result;
}

}  // namespace textpix
