#include <doctest.h>

#include <sstream>

#include "civic/error.hpp"
#include "civic/tokenizer.hpp"
#include "synthetic.hpp"

using namespace civic;
using namespace civic::tokenizer;

namespace {

std::vector<std::string> drug_corpus() {
    std::vector<std::string> c;
    for (int i = 0; i < 50; ++i) c.push_back("Imatinib inhibits BCR-ABL in patients treated with imatinib.");
    c.push_back("Mice models respond to dasatinib.");
    return c;
}

}  // namespace

TEST_SUITE("tokenizer") {
    TEST_CASE("pretokenize lowercases and isolates punctuation") {
        CHECK(pretokenize("BRAF-V600E, in Mice.") == std::vector<std::string>{"braf", "-", "v600e", ",", "in", "mice", "."});
        CHECK(pretokenize("  ").empty());
    }

    TEST_CASE("specials occupy the first five ids") {
        const Vocab v;
        REQUIRE(v.size() == kNumSpecial);
        const auto& sp = v.specials();
        CHECK(v.token(sp.bos) == "[CLS]");
        CHECK(v.token(sp.eos) == "[SEP]");
        CHECK(v.token(sp.mask) == "[MASK]");
        CHECK(v.token(sp.pad) == "[PAD]");
        CHECK(v.token(sp.unk) == "[UNK]");
    }

    TEST_CASE("frequent in-domain word becomes one token") {
        const auto v = train_vocab(drug_corpus(), 80);
        CHECK(v.find("imatinib").has_value());
        CHECK(segment_word(v, "imatinib").size() == 1);
        // An unseen word is split into several pieces.
        CHECK(segment_word(v, "sorafenib").size() > 1);
    }

    TEST_CASE("corpus aaaa learns merged pieces and round-trips") {
        const std::vector<std::string> corpus{"aaaa"};
        const auto v = train_vocab(corpus, 9);
        CHECK(v.find("a").has_value());
        CHECK(v.find("##a").has_value());
        CHECK(v.size() == 9);
        const auto seq = encode(v, "aaaa", kUnbounded);
        CHECK(seq.ids.size() < 6);  // fewer pieces than characters
        CHECK(decode(v, seq) == "aaaa");
    }

    TEST_CASE("too small a target size is rejected") {
        const std::vector<std::string> corpus{"abc"};
        CHECK_THROWS_AS(train_vocab(corpus, 6), DataError);
        CHECK_THROWS_AS(train_vocab({}, 100), DataError);
    }

    TEST_CASE("training is deterministic") {
        const auto a = train_vocab(drug_corpus(), 60);
        const auto b = train_vocab(drug_corpus(), 60);
        CHECK(a.tokens() == b.tokens());
    }

    TEST_CASE("empty text with padding") {
        const Vocab v;
        const auto seq = encode(v, "", 8, true);
        const auto& sp = v.specials();
        CHECK(seq.ids == std::vector<TokenId>{sp.bos, sp.eos, sp.pad, sp.pad, sp.pad, sp.pad, sp.pad, sp.pad});
        CHECK(seq.attention_length == 2);
        CHECK(decode(v, seq).empty());
    }

    TEST_CASE("truncation keeps eos and the prefix property") {
        const auto corpus = testing::patterned_corpus(50, 2);
        const auto v = train_vocab(corpus, 120);
        std::string long_text;
        for (int i = 0; i < 40; ++i) long_text += corpus[static_cast<std::size_t>(i)] + " ";
        const auto content = encode_content(v, long_text);
        REQUIRE(content.size() > 600);
        const auto seq = encode(v, long_text, 512);
        CHECK(seq.ids.size() == 512);
        CHECK(seq.ids.back() == v.specials().eos);
        CHECK(seq.ids.front() == v.specials().bos);

        const auto shorter = encode(v, long_text, 100);
        const auto longer = encode(v, long_text, 300);
        for (std::size_t i = 0; i + 1 < shorter.ids.size(); ++i) CHECK(shorter.ids[i] == longer.ids[i]);
        CHECK(count_long(v, std::vector<std::string>{long_text, "short"}) == 1);
    }

    TEST_CASE("round trip over a corpus sample") {
        const auto items = testing::keyword_dataset(200, 9);
        std::vector<std::string> texts;
        for (const auto& it : items) texts.push_back(it.abstract);
        const auto v = train_vocab(texts, 300);
        for (std::size_t i = 0; i < 50; ++i) {
            const auto seq = encode(v, texts[i], kUnbounded);
            CHECK(pretokenize(decode(v, seq)) == pretokenize(texts[i]));
        }
        // Characters never seen in training decode to nothing.
        CHECK(decode(v, encode(v, "mice qqq", kUnbounded)) == "mice");
    }

    TEST_CASE("unknown characters map to unk and out-of-range ids are rejected") {
        const std::vector<std::string> corpus{"abc abc"};
        const auto v = train_vocab(corpus, 12);
        const auto ids = encode_content(v, "zz");
        REQUIRE(!ids.empty());
        for (auto id : ids) CHECK(id == v.specials().unk);
        const std::vector<TokenId> bad{static_cast<TokenId>(v.size())};
        CHECK_THROWS(decode(v, bad));
    }

    TEST_CASE("concatenation bound") {
        const auto corpus = testing::patterned_corpus(30, 4);
        const auto v = train_vocab(corpus, 90);
        for (std::size_t i = 0; i + 1 < corpus.size(); ++i) {
            const auto ab = encode_content(v, corpus[i] + " " + corpus[i + 1]).size();
            CHECK(ab <= encode_content(v, corpus[i]).size() + encode_content(v, corpus[i + 1]).size());
        }
    }

    TEST_CASE("vocabulary file round-trips") {
        const auto v = train_vocab(drug_corpus(), 60);
        std::stringstream io;
        v.save(io);
        const auto back = Vocab::load(io);
        CHECK(back.tokens() == v.tokens());
        std::stringstream bad("[CLS]\nfoo\n");
        CHECK_THROWS(Vocab::load(bad));
    }
}
