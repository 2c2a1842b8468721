#include "civic/tokenizer.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include <ostream>
#include <queue>
#include <set>
#include <stdexcept>
#include <unordered_set>

#include "civic/error.hpp"

namespace civic::tokenizer {
namespace {

bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_ascii_punct(unsigned char c) {
    return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

std::size_t utf8_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead & 0xE0) == 0xC0) return 2;
    if ((lead & 0xF0) == 0xE0) return 3;
    if ((lead & 0xF8) == 0xF0) return 4;
    return 1;
}

std::string_view strip_continuation(std::string_view piece) {
    if (piece.starts_with(kContinuation)) piece.remove_prefix(kContinuation.size());
    return piece;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
    std::vector<std::string> words;
    std::string current;
    const auto flush = [&] {
        if (!current.empty()) words.push_back(std::move(current));
        current.clear();
    };
    for (char raw : text) {
        const auto c = static_cast<unsigned char>(raw);
        if (is_ascii_space(c)) {
            flush();
        } else if (is_ascii_punct(c)) {
            flush();
            words.emplace_back(1, raw);
        } else {
            current += (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : raw;
        }
    }
    flush();
    return words;
}

std::vector<std::string> utf8_units(std::string_view text) {
    std::vector<std::string> units;
    std::size_t i = 0;
    while (i < text.size()) {
        std::size_t len = utf8_length(static_cast<unsigned char>(text[i]));
        if (i + len > text.size()) len = 1;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        units.emplace_back(text.substr(i, len));
        i += len;
    }
    return units;
}

const std::vector<std::string>& Vocab::special_tokens() {
    static const std::vector<std::string> tokens{"[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]"};
    return tokens;
}

Vocab::Vocab() { *this = from_tokens(special_tokens()); }

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
    const auto& specials = special_tokens();
    if (tokens.size() < kNumSpecial || !std::equal(specials.begin(), specials.end(), tokens.begin())) {
        throw DataError("vocabulary must start with the five special tokens [CLS] [SEP] [MASK] [PAD] [UNK]");
    }
    Vocab v(RawTag{});
    v.tokens_ = std::move(tokens);
    v.index_.clear();
    v.index_.reserve(v.tokens_.size());
    v.max_piece_bytes_ = 1;
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
        const auto& t = v.tokens_[i];
        if (t.empty() || t.find('\n') != std::string::npos) throw DataError("invalid vocabulary entry at line " + std::to_string(i + 1));
        if (!v.index_.emplace(t, static_cast<TokenId>(i)).second) throw DataError("duplicate vocabulary entry '" + t + "'");
        if (i >= kNumSpecial) v.max_piece_bytes_ = std::max(v.max_piece_bytes_, t.size());
    }
    return v;
}

const std::string& Vocab::token(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
    const auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

void Vocab::save(std::ostream& out) const {
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(std::istream& in) {
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        tokens.push_back(line);
    }
    while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
    return from_tokens(std::move(tokens));
}

Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size) {
    if (corpus.empty()) throw DataError("cannot train a vocabulary on an empty corpus");

    std::map<std::string, std::int64_t> word_freq;
    for (const auto& doc : corpus)
        for (auto& w : pretokenize(doc)) ++word_freq[std::move(w)];

    // Symbol table shared by base characters and merged pieces.
    std::vector<std::string> symbols;
    std::unordered_map<std::string, int> symbol_id;
    const auto intern = [&](const std::string& s) {
        auto [it, inserted] = symbol_id.try_emplace(s, static_cast<int>(symbols.size()));
        if (inserted) symbols.push_back(s);
        return it->second;
    };

    std::vector<std::vector<int>> words;
    std::vector<std::int64_t> freqs;
    std::map<std::string, std::int64_t> base_freq;
    for (const auto& [word, freq] : word_freq) {
        const auto units = utf8_units(word);
        std::vector<int> syms;
        for (std::size_t i = 0; i < units.size(); ++i) {
            std::string piece = i == 0 ? units[i] : std::string(kContinuation) + units[i];
            base_freq[piece] += freq;
            syms.push_back(intern(piece));
        }
        words.push_back(std::move(syms));
        freqs.push_back(freq);
    }

    if (target_size <= kNumSpecial + base_freq.size()) {
        throw DataError("target vocabulary size " + std::to_string(target_size) + " must exceed special tokens plus " +
                        std::to_string(base_freq.size()) + " base characters");
    }

    std::vector<std::string> vocab_tokens = Vocab::special_tokens();
    std::unordered_set<std::string> in_vocab(vocab_tokens.begin(), vocab_tokens.end());
    {
        std::vector<std::pair<std::string, std::int64_t>> base(base_freq.begin(), base_freq.end());
        std::stable_sort(base.begin(), base.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
        for (auto& [piece, f] : base) {
            if (in_vocab.insert(piece).second) vocab_tokens.push_back(piece);
        }
    }

    using PairKey = std::uint64_t;
    const auto make_key = [](int a, int b) { return (static_cast<PairKey>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b); };
    const auto first_of = [](PairKey k) { return static_cast<int>(k >> 32); };
    const auto second_of = [](PairKey k) { return static_cast<int>(k & 0xFFFFFFFFu); };

    std::unordered_map<PairKey, std::int64_t> pair_count;
    std::unordered_map<PairKey, std::set<std::size_t>> pair_words;
    for (std::size_t w = 0; w < words.size(); ++w) {
        for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
            const PairKey k = make_key(words[w][i], words[w][i + 1]);
            pair_count[k] += freqs[w];
            pair_words[k].insert(w);
        }
    }

    struct Candidate {
        std::int64_t count;
        PairKey key;
    };
    // Highest count first; ties resolved by the lexicographically smaller pair of pieces.
    const auto worse = [&](const Candidate& x, const Candidate& y) {
        if (x.count != y.count) return x.count < y.count;
        const auto& xa = symbols[static_cast<std::size_t>(first_of(x.key))];
        const auto& ya = symbols[static_cast<std::size_t>(first_of(y.key))];
        if (xa != ya) return xa > ya;
        return symbols[static_cast<std::size_t>(second_of(x.key))] > symbols[static_cast<std::size_t>(second_of(y.key))];
    };
    std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse)> heap(worse);
    for (const auto& [k, c] : pair_count) heap.push({c, k});

    while (vocab_tokens.size() < target_size && !heap.empty()) {
        const Candidate top = heap.top();
        heap.pop();
        const auto current = pair_count.find(top.key);
        if (current == pair_count.end() || current->second != top.count || top.count <= 0) continue;

        const int a = first_of(top.key);
        const int b = second_of(top.key);
        const std::string merged = symbols[static_cast<std::size_t>(a)] + std::string(strip_continuation(symbols[static_cast<std::size_t>(b)]));
        const int merged_id = intern(merged);
        if (in_vocab.insert(merged).second) vocab_tokens.push_back(merged);

        const auto affected = pair_words[top.key];
        std::set<PairKey> touched;
        for (std::size_t w : affected) {
            auto& syms = words[w];
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                const PairKey k = make_key(syms[i], syms[i + 1]);
                pair_count[k] -= freqs[w];
                touched.insert(k);
            }
            std::vector<int> next;
            next.reserve(syms.size());
            for (std::size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == a && syms[i + 1] == b) {
                    next.push_back(merged_id);
                    ++i;
                } else {
                    next.push_back(syms[i]);
                }
            }
            syms = std::move(next);
            for (std::size_t i = 0; i + 1 < syms.size(); ++i) {
                const PairKey k = make_key(syms[i], syms[i + 1]);
                pair_count[k] += freqs[w];
                pair_words[k].insert(w);
                touched.insert(k);
            }
        }
        for (PairKey k : touched) {
            const auto c = pair_count[k];
            if (c > 0) heap.push({c, k});
        }
    }
    return Vocab::from_tokens(std::move(vocab_tokens));
}

std::vector<TokenId> segment_word(const Vocab& vocab, std::string_view word) {
    std::vector<TokenId> out;
    const auto units = utf8_units(word);
    std::vector<std::size_t> offsets;
    offsets.reserve(units.size() + 1);
    std::size_t pos = 0;
    for (const auto& u : units) {
        offsets.push_back(pos);
        pos += u.size();
    }
    offsets.push_back(pos);

    std::size_t start = 0;
    std::string candidate;
    while (start < units.size()) {
        std::optional<TokenId> found;
        std::size_t found_end = start;
        for (std::size_t end = units.size(); end > start; --end) {
            const std::size_t bytes = offsets[end] - offsets[start];
            if (bytes > vocab.max_piece_bytes_) continue;
            candidate.clear();
            if (start > 0) candidate += kContinuation;
            candidate.append(word.substr(offsets[start], bytes));
            if (auto id = vocab.find(candidate)) {
                found = id;
                found_end = end;
                break;
            }
        }
        if (found) {
            out.push_back(*found);
            start = found_end;
        } else {
            out.push_back(vocab.specials().unk);
            ++start;
        }
    }
    return out;
}

std::vector<TokenId> encode_content(const Vocab& vocab, std::string_view text) {
    std::vector<TokenId> ids;
    for (const auto& word : pretokenize(text)) {
        const auto pieces = segment_word(vocab, word);
        ids.insert(ids.end(), pieces.begin(), pieces.end());
    }
    return ids;
}

TokenSequence wrap(const Vocab& vocab, std::span<const TokenId> content, std::size_t max_len, bool pad_to_max) {
    if (max_len < 2) throw std::invalid_argument("max_len must be at least 2");
    const auto& sp = vocab.specials();
    const std::size_t kept = std::min(content.size(), max_len - 2);
    TokenSequence seq;
    seq.ids.reserve(pad_to_max ? max_len : kept + 2);
    seq.ids.push_back(sp.bos);
    seq.ids.insert(seq.ids.end(), content.begin(), content.begin() + static_cast<std::ptrdiff_t>(kept));
    seq.ids.push_back(sp.eos);
    seq.attention_length = seq.ids.size();
    if (pad_to_max) seq.ids.resize(max_len, sp.pad);
    return seq;
}

TokenSequence encode(const Vocab& vocab, std::string_view text, std::size_t max_len, bool pad_to_max) {
    const auto content = encode_content(vocab, text);
    return wrap(vocab, content, max_len, pad_to_max);
}

TokenSequence pad_to(const Vocab& vocab, TokenSequence seq, std::size_t length) {
    if (seq.ids.size() < length) seq.ids.resize(length, vocab.specials().pad);
    return seq;
}

std::string decode(const Vocab& vocab, std::span<const TokenId> ids) {
    std::string out;
    for (TokenId id : ids) {
        const auto& piece = vocab.token(id);
        if (vocab.is_special(id)) continue;
        if (piece.starts_with(kContinuation) && piece.size() > kContinuation.size()) {
            out.append(piece, kContinuation.size());
        } else {
            if (!out.empty()) out += ' ';
            out += piece;
        }
    }
    return out;
}

std::size_t count_long(const Vocab& vocab, std::span<const std::string> texts, std::size_t limit) {
    std::size_t n = 0;
    for (const auto& t : texts) n += (encode_content(vocab, t).size() + 2 > limit) ? 1 : 0;
    return n;
}

}  // namespace civic::tokenizer
