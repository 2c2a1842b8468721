#include "synthetic.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "civic/rng.hpp"

namespace civic::testing {
namespace {

constexpr std::array<const char*, 12> kOnsets{"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"};
constexpr std::array<const char*, 5> kVowels{"a", "e", "i", "o", "u"};
constexpr std::array<const char*, 4> kCodas{"", "n", "r", "x"};

std::size_t draw(Rng& rng, const std::array<double, kNumLevels>& w) {
    double total = 0.0;
    for (double x : w) total += x;
    double u = rng.uniform01() * total;
    for (std::size_t i = 0; i < w.size(); ++i) {
        if (u < w[i]) return i;
        u -= w[i];
    }
    return w.size() - 1;
}

std::string join(const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) {
        if (!out.empty()) out += ' ';
        out += w;
    }
    return out;
}

}  // namespace

std::vector<std::string> filler_lexicon(std::size_t count) {
    std::vector<std::string> out;
    const std::set<std::string> banned(kClassKeywords.begin(), kClassKeywords.end());
    for (std::size_t i = 0; out.size() < count; ++i) {
        std::size_t k = i;
        std::string w;
        for (int syl = 0; syl < 3; ++syl) {
            w += kOnsets[k % kOnsets.size()];
            k /= kOnsets.size();
            w += kVowels[k % kVowels.size()];
            k /= kVowels.size();
        }
        w += kCodas[k % kCodas.size()];
        if (!banned.count(w)) out.push_back(w);
    }
    return out;
}

std::vector<ingest::EvidenceItem> keyword_dataset(std::size_t n, std::uint64_t seed, std::array<double, kNumLevels> priors,
                                                  double second_label_rate) {
    Rng rng(seed);
    const auto lexicon = filler_lexicon(300);
    std::set<std::string> seen;
    std::vector<ingest::EvidenceItem> items;
    while (items.size() < n) {
        ingest::EvidenceItem item;
        const std::size_t first = draw(rng, priors);
        item.labels.set(first);
        if (rng.bernoulli(second_label_rate)) {
            auto w = priors;
            w[first] = 0.0;
            item.labels.set(draw(rng, w));
        }
        std::vector<std::string> words(20 + rng.uniform_index(21));
        for (auto& w : words) w = lexicon[rng.uniform_index(lexicon.size())];
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            if (!item.labels.test(c)) continue;
            const auto pos = static_cast<std::ptrdiff_t>(rng.uniform_index(words.size() + 1));
            words.insert(words.begin() + pos, kClassKeywords[c]);
        }
        item.abstract = join(words) + ".";
        if (!seen.insert(item.abstract).second) continue;
        item.pubmed_id = static_cast<std::int64_t>(items.size() + 1);
        item.source_evidence_ids = {static_cast<std::int64_t>(items.size() + 1)};
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<ingest::EvidenceItem> civic_like_dataset(std::size_t n, std::uint64_t seed) {
    return keyword_dataset(n, seed, {150, 1363, 1135, 948, 44}, 0.08);
}

std::vector<ingest::EvidenceItem> single_label_fixture(std::size_t per_level, std::uint64_t seed) {
    Rng rng(seed);
    const auto lexicon = filler_lexicon(300);
    std::vector<ingest::EvidenceItem> items;
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        for (std::size_t k = 0; k < per_level; ++k) {
            std::vector<std::string> words(12);
            for (auto& w : words) w = lexicon[rng.uniform_index(lexicon.size())];
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.uniform_index(words.size() + 1)), kClassKeywords[c]);
            ingest::EvidenceItem item;
            item.abstract = "item " + std::to_string(items.size()) + " " + join(words);
            item.labels.set(c);
            item.pubmed_id = static_cast<std::int64_t>(items.size() + 1);
            items.push_back(std::move(item));
        }
    }
    return items;
}

std::vector<std::string> patterned_corpus(std::size_t n, std::uint64_t seed, std::size_t templates, std::size_t template_length,
                                          std::size_t lexicon_size) {
    Rng rng(seed);
    const auto lexicon = filler_lexicon(lexicon_size);
    std::vector<std::vector<std::string>> tpl(templates);
    for (auto& t : tpl) {
        std::vector<std::size_t> idx(lexicon.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        rng.shuffle(std::span<std::size_t>(idx));
        for (std::size_t i = 0; i < template_length; ++i) t.push_back(lexicon[idx[i % idx.size()]]);
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::string> words;
        const std::size_t chunks = 2 + rng.uniform_index(2);
        for (std::size_t c = 0; c < chunks; ++c) {
            const auto& t = tpl[rng.uniform_index(tpl.size())];
            words.insert(words.end(), t.begin(), t.end());
        }
        out.push_back(join(words));
    }
    return out;
}

std::string evidence_nodes_json(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    const auto lexicon = filler_lexicon(100);
    nlohmann::json nodes = nlohmann::json::array();
    for (std::size_t i = 1; i <= n; ++i) {
        const std::size_t level = rng.uniform_index(kNumLevels);
        std::string abstract = kClassKeywords[level];
        for (int k = 0; k < 10; ++k) abstract += " " + lexicon[rng.uniform_index(lexicon.size())];
        nodes.push_back({{"id", static_cast<std::int64_t>(i)},
                         {"status", "ACCEPTED"},
                         {"evidenceLevel", std::string(1, static_cast<char>('A' + level))},
                         {"significance", "SENSITIVITYRESPONSE"},
                         {"disease", {{"name", "Disease " + std::to_string(i % 7)}}},
                         {"therapies", nlohmann::json::array({{{"name", "Drug " + std::to_string(i % 5)}}})},
                         {"molecularProfile", {{"name", "GENE" + std::to_string(i) + " V600E"}}},
                         {"source", {{"citationId", std::to_string(1000 + i)}, {"abstract", abstract}}}});
    }
    return nodes.dump();
}

}  // namespace civic::testing
