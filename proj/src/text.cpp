#include "vdsk/text.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "vdsk/common.hpp"

namespace vdsk {

namespace {

const std::vector<std::string> kColorWords = {"red", "green", "blue", "yellow"};
const std::vector<std::string> kShapeWords = {"square", "circle", "triangle", "sprite"};
const std::vector<std::string> kDirectionWords = {"left", "right", "up", "down"};

bool contains(const std::vector<std::string>& v, const std::string& w) {
    return std::find(v.begin(), v.end(), w) != v.end();
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<std::string> split_words(const std::string& text) {
    std::istringstream in(text);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(lower(w));
    return words;
}

}  // namespace

int Vocab::subject_id() const {
    auto it = word_to_id.find(kSubjectWord);
    return it == word_to_id.end() ? -1 : it->second;
}

Vocab default_vocab() {
    Vocab v;
    v.words = {"<pad>", "<unk>", "a"};
    for (const auto& w : kColorWords) v.words.push_back(w);
    for (const auto& w : kShapeWords) v.words.push_back(w);
    v.words.push_back("moves");
    for (const auto& w : kDirectionWords) v.words.push_back(w);
    v.words.push_back(kSubjectWord);
    for (int i = 0; i < static_cast<int>(v.words.size()); ++i)
        v.word_to_id[v.words[static_cast<size_t>(i)]] = i;
    v.subject_active = false;
    return v;
}

Vocab extend_vocab_subject(const Vocab& vocab) {
    if (vocab.subject_active)
        throw std::logic_error("subject token is already active");
    Vocab out = vocab;
    out.subject_active = true;
    return out;
}

PromptTokens null_prompt() {
    PromptTokens t;
    t.ids.fill(kPadId);
    t.true_len = 0;
    return t;
}

PromptTokens tokenize(const Vocab& vocab, const std::string& caption) {
    std::vector<std::string> words = split_words(caption);
    if (words.empty()) throw std::invalid_argument("caption is empty");
    PromptTokens out;
    out.ids.fill(kPadId);
    int n = std::min<int>(kPromptLen, static_cast<int>(words.size()));
    for (int i = 0; i < n; ++i) {
        const std::string& w = words[static_cast<size_t>(i)];
        int id = kUnkId;
        auto it = vocab.word_to_id.find(w);
        if (it != vocab.word_to_id.end()) {
            id = it->second;
            if (w == kSubjectWord && !vocab.subject_active) id = kUnkId;
        }
        out.ids[static_cast<size_t>(i)] = id;
    }
    out.true_len = n;
    return out;
}

SynonymTable default_synonyms() {
    return {
        {"crimson", "red"},    {"scarlet", "red"},
        {"navy", "blue"},      {"azure", "blue"},
        {"emerald", "green"},
        {"golden", "yellow"},  {"amber", "yellow"},
        {"goes", "moves"},     {"going", "moves"},     {"go", "moves"},
        {"heads", "moves"},    {"heading", "moves"},
        {"travels", "moves"},  {"traveling", "moves"}, {"travelling", "moves"},
        {"slides", "moves"},   {"sliding", "moves"},
        {"leftward", "left"},  {"leftwards", "left"},
        {"rightward", "right"},{"rightwards", "right"},
        {"upward", "up"},      {"upwards", "up"},
        {"downward", "down"},  {"downwards", "down"},
    };
}

std::string recaption(const std::string& user_prompt, const SynonymTable& synonyms,
                      bool subject_ok) {
    std::vector<std::string> words = split_words(user_prompt);
    if (words.empty()) throw std::invalid_argument("prompt is empty");

    std::optional<std::string> color, shape, direction;
    for (std::string w : words) {
        auto syn = synonyms.find(w);
        if (syn != synonyms.end()) w = syn->second;
        if (!color && contains(kColorWords, w)) color = w;
        else if (!color && subject_ok && w == kSubjectWord) color = w;
        else if (!shape && contains(kShapeWords, w)) shape = w;
        else if (!direction && contains(kDirectionWords, w)) direction = w;
    }
    if (!color)
        throw UnresolvablePrompt("cannot resolve a color from the prompt", "color");
    if (!shape)
        throw UnresolvablePrompt("cannot resolve a shape from the prompt", "shape");

    std::string out = "a " + *color + " " + *shape;
    if (direction) out += " moves " + *direction;
    return out;
}

}  // namespace vdsk
