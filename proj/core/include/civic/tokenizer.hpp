#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace civic::tokenizer {

using TokenId = std::int32_t;

/// Ids of the reserved tokens; they always occupy the first five vocabulary slots.
struct SpecialIds {
    TokenId bos{0};
    TokenId eos{1};
    TokenId mask{2};
    TokenId pad{3};
    TokenId unk{4};
};

inline constexpr std::size_t kNumSpecial = 5;
inline constexpr std::string_view kContinuation = "##";
inline constexpr std::size_t kUnbounded = std::numeric_limits<std::size_t>::max();

/// Lowercases ASCII, splits on whitespace, and emits each ASCII punctuation
/// character as its own word.
std::vector<std::string> pretokenize(std::string_view text);

/// Splits a UTF-8 string into code points (invalid bytes become single-byte units).
std::vector<std::string> utf8_units(std::string_view text);

class Vocab {
public:
    Vocab();

    /// Builds from an ordered token list whose first five entries are the special tokens.
    static Vocab from_tokens(std::vector<std::string> tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(std::string_view token) const;
    const SpecialIds& specials() const noexcept { return specials_; }
    bool is_special(TokenId id) const noexcept { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecial; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    /// One token per line; line number is the id.
    void save(std::ostream& out) const;
    static Vocab load(std::istream& in);

    static const std::vector<std::string>& special_tokens();

private:
    struct RawTag {};
    explicit Vocab(RawTag) {}

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, TokenId> index_;
    SpecialIds specials_;
    std::size_t max_piece_bytes_{1};

    friend std::vector<TokenId> segment_word(const Vocab&, std::string_view);
};

/// Learns a subword vocabulary by repeated merging of the most frequent
/// adjacent symbol pair inside words. Word-initial pieces are bare,
/// continuation pieces carry the "##" prefix.
Vocab train_vocab(std::span<const std::string> corpus, std::size_t target_size);

/// Greedy longest-match segmentation of one pretokenized word.
std::vector<TokenId> segment_word(const Vocab& vocab, std::string_view word);

/// Content token ids of a text (no special tokens, no truncation).
std::vector<TokenId> encode_content(const Vocab& vocab, std::string_view text);

struct TokenSequence {
    std::vector<TokenId> ids;
    std::size_t attention_length{0};

    std::size_t size() const noexcept { return ids.size(); }
    friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// [bos, content..., eos], with content truncated so the total fits in max_len.
/// When pad_to_max is set the result is padded with pad ids up to max_len.
TokenSequence encode(const Vocab& vocab, std::string_view text, std::size_t max_len, bool pad_to_max = false);

/// Builds a sequence from content ids, applying the same wrapping and truncation as encode.
TokenSequence wrap(const Vocab& vocab, std::span<const TokenId> content, std::size_t max_len, bool pad_to_max = false);

/// Appends pad ids until the sequence has `length` ids.
TokenSequence pad_to(const Vocab& vocab, TokenSequence seq, std::size_t length);

/// Joins word pieces with spaces and glues "##" continuations; special tokens are skipped.
std::string decode(const Vocab& vocab, std::span<const TokenId> ids);
inline std::string decode(const Vocab& vocab, const TokenSequence& seq) { return decode(vocab, seq.ids); }

/// Number of texts whose content plus bos/eos exceeds `limit` tokens.
std::size_t count_long(const Vocab& vocab, std::span<const std::string> texts, std::size_t limit = 512);

}  // namespace civic::tokenizer
