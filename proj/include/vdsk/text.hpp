#pragma once

#include <array>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vdsk/tensor.hpp"

namespace vdsk {

inline constexpr int kPromptLen = 8;
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr const char* kSubjectWord = "<V>";

// Fixed word list with dense ids. "<V>" occupies a reserved id from the start
// so activating it never renumbers existing words.
struct Vocab {
    std::vector<std::string> words;
    std::map<std::string, int> word_to_id;
    bool subject_active = false;

    int size() const { return static_cast<int>(words.size()); }
    int subject_id() const;
};

Vocab default_vocab();

// returns a copy with "<V>" tokenizable; throws std::logic_error if already active
Vocab extend_vocab_subject(const Vocab& vocab);

struct PromptTokens {
    std::array<int, kPromptLen> ids{};  // right-padded with PAD
    int true_len = 0;

    bool operator==(const PromptTokens&) const = default;
};

// all-PAD sequence; the null condition for classifier-free guidance
PromptTokens null_prompt();

// lowercase, whitespace split, unknown words -> UNK, truncate at 8
PromptTokens tokenize(const Vocab& vocab, const std::string& caption);

// alias -> canonical word table, loaded from one "alias<TAB>canonical" pair per line
using SynonymTable = std::map<std::string, std::string>;

SynonymTable default_synonyms();

// Canonicalizes a free-form prompt onto the caption grammar: lowercase, map
// synonyms, drop words outside the grammar, reorder to
// "a {color} {shape} [moves {direction}]". Throws UnresolvablePrompt when the
// color or shape slot cannot be filled. With subject_ok, "<V>" fills the
// color slot.
std::string recaption(const std::string& user_prompt, const SynonymTable& synonyms,
                      bool subject_ok = false);

// Learned caption embedding table.
template <class S>
struct EmbeddingT {
    TensorT<S> table;  // [vocab, d_model]
    TensorT<S> grad;

    void init(Rng& rng, int vocab, int d_model, S stddev) {
        table = TensorT<S>::randn(rng, {vocab, d_model}, stddev);
        grad = TensorT<S>::zeros({vocab, d_model});
    }

    // rows of the table selected by token id; PAD rows participate here and
    // are masked out of attention downstream
    TensorT<S> forward(const PromptTokens& tokens) const {
        int64_t d = table.shape[1];
        TensorT<S> out({kPromptLen, d});
        for (int i = 0; i < kPromptLen; ++i) {
            int id = tokens.ids[static_cast<size_t>(i)];
            if (id < 0 || id >= table.shape[0])
                throw std::invalid_argument("token id out of vocab range");
            const S* src = table.data() + id * d;
            S* dst = out.data() + i * d;
            for (int64_t j = 0; j < d; ++j) dst[j] = src[j];
        }
        return out;
    }

    void accumulate_grad(const PromptTokens& tokens, const TensorT<S>& grad_rows) {
        int64_t d = table.shape[1];
        for (int i = 0; i < kPromptLen; ++i) {
            int id = tokens.ids[static_cast<size_t>(i)];
            S* dst = grad.data() + id * d;
            const S* src = grad_rows.data() + i * d;
            for (int64_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    }
};

using Embedding = EmbeddingT<float>;

}  // namespace vdsk
