#include <doctest.h>

#include "vdsk/common.hpp"
#include "vdsk/synth.hpp"
#include "vdsk/text.hpp"

using namespace vdsk;

TEST_CASE("vocab ids are dense with PAD at zero and a reserved subject slot") {
    Vocab v = default_vocab();
    CHECK(v.word_to_id.at("<pad>") == kPadId);
    CHECK(v.word_to_id.at("<unk>") == kUnkId);
    CHECK(v.subject_id() >= 0);
    CHECK(!v.subject_active);
    for (int i = 0; i < v.size(); ++i)
        CHECK(v.word_to_id.at(v.words[static_cast<size_t>(i)]) == i);  // id -> word -> id
}

TEST_CASE("tokenize pads, truncates and maps unknowns") {
    Vocab v = default_vocab();
    PromptTokens t = tokenize(v, "a red square moves right");
    CHECK(t.true_len == 5);
    for (int i = 0; i < 5; ++i) CHECK(t.ids[static_cast<size_t>(i)] != kPadId);
    for (int i = 5; i < kPromptLen; ++i) CHECK(t.ids[static_cast<size_t>(i)] == kPadId);

    PromptTokens u = tokenize(v, "a zzz circle");
    CHECK(u.ids[0] == v.word_to_id.at("a"));
    CHECK(u.ids[1] == kUnkId);
    CHECK(u.ids[2] == v.word_to_id.at("circle"));

    PromptTokens long_prompt = tokenize(v, "a a a a a a a a a a");
    CHECK(long_prompt.true_len == kPromptLen);

    CHECK_THROWS_AS(tokenize(v, "   "), std::invalid_argument);
}

TEST_CASE("tokenize of generated captions never yields UNK") {
    Vocab v = default_vocab();
    for (int c = 0; c < 4; ++c)
        for (int s = 0; s < 3; ++s)
            for (int d = -1; d < 4; ++d) {
                ClipSpec spec;
                spec.color = static_cast<SpriteColor>(c);
                spec.shape = static_cast<SpriteShape>(s);
                if (d >= 0) {
                    spec.direction = static_cast<MoveDirection>(d);
                    spec.length_frames = 8;
                } else {
                    spec.length_frames = 1;
                }
                PromptTokens t = tokenize(v, caption_of(spec));
                for (int i = 0; i < t.true_len; ++i)
                    CHECK(t.ids[static_cast<size_t>(i)] != kUnkId);
            }
}

TEST_CASE("recaption canonicalizes synonyms and word order") {
    SynonymTable syn = default_synonyms();
    CHECK(recaption("please show a crimson square going right", syn) ==
          "a red square moves right");
    CHECK(recaption("a blue circle", syn) == "a blue circle");
    CHECK(recaption("rightward heads the emerald triangle", syn) ==
          "a green triangle moves right");
}

TEST_CASE("recaption is idempotent on resolvable prompts") {
    SynonymTable syn = default_synonyms();
    for (const char* prompt :
         {"a crimson square going right", "navy circle", "golden triangle drifting upward",
          "a red square moves right"}) {
        std::string once = recaption(prompt, syn);
        CHECK(recaption(once, syn) == once);
    }
}

TEST_CASE("recaption reports the missing slot") {
    SynonymTable syn = default_synonyms();
    CHECK_THROWS_AS(recaption("a fast dog", syn), UnresolvablePrompt);
    try {
        recaption("a fast dog", syn);
    } catch (const UnresolvablePrompt& e) {
        CHECK(e.missing_slot == "color");
    }
    try {
        recaption("a red thing", syn);
    } catch (const UnresolvablePrompt& e) {
        CHECK(e.missing_slot == "shape");
    }
    CHECK_THROWS_AS(recaption("", syn), std::invalid_argument);
}

TEST_CASE("subject token activates without renumbering") {
    Vocab v = default_vocab();
    PromptTokens before = tokenize(v, "a <V> square moves right");
    CHECK(before.ids[1] == kUnkId);

    Vocab vs = extend_vocab_subject(v);
    CHECK(vs.subject_active);
    CHECK_THROWS_AS(extend_vocab_subject(vs), std::logic_error);

    PromptTokens after = tokenize(vs, "a <V> square moves right");
    CHECK(after.ids[1] == vs.subject_id());

    // ordinary captions tokenize identically before and after activation
    PromptTokens plain_before = tokenize(v, "a red square moves right");
    PromptTokens plain_after = tokenize(vs, "a red square moves right");
    CHECK(plain_before == plain_after);

    // the subject word can fill the color slot once active
    SynonymTable syn = default_synonyms();
    CHECK(recaption("a <V> sprite going right", syn, true) == "a <V> sprite moves right");
    CHECK_THROWS_AS(recaption("a <V> sprite", syn, false), UnresolvablePrompt);
}

TEST_CASE("embedding lookup shape and PAD independence") {
    Rng rng(5);
    Embedding emb;
    Vocab v = default_vocab();
    emb.init(rng, v.size(), 128, 0.02f);

    PromptTokens null = null_prompt();
    Tensor rows = emb.forward(null);
    CHECK(rows.shape == std::vector<int64_t>{8, 128});
    for (int i = 1; i < kPromptLen; ++i)
        for (int j = 0; j < 128; ++j)
            CHECK(rows.at2(i, j) == rows.at2(0, j));  // all-PAD rows repeat table[0]

    // two prompts differing only in padding share their non-PAD rows
    PromptTokens a = tokenize(v, "a red square");
    PromptTokens b = tokenize(v, "a red square moves right");
    Tensor ra = emb.forward(a);
    Tensor rb = emb.forward(b);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 128; ++j)
            CHECK(ra.at2(i, j) == rb.at2(i, j));

    PromptTokens bad;
    bad.ids[0] = v.size() + 4;
    CHECK_THROWS_AS(emb.forward(bad), std::invalid_argument);
}
