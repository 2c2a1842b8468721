#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "civic/ingest.hpp"
#include "civic/labels.hpp"
#include "civic/neural.hpp"
#include "civic/tokenizer.hpp"

namespace civic::attribution {

using neural::Matrix;

enum class BaselineKind { ZeroEmbedding, PadSequence };
enum class Rule { Midpoint, LeftRiemann };

struct AttributionConfig {
    BaselineKind baseline{BaselineKind::PadSequence};
    int steps{256};
    Level target{Level::A};
    Rule rule{Rule::Midpoint};

    void validate() const;
};

/// F(x) together with dF/dx, x shaped like the attribution matrix.
using ValueAndGradient = std::function<neural::InputGradient(const Matrix&)>;

struct IgResult {
    Matrix attributions;
    double f_input{0.0};
    double f_baseline{0.0};

    double total() const { return attributions.sum(); }
    /// |sum of attributions - (F(x) - F(x'))|
    double residual() const;
};

/// Path integral from baseline to input, approximated with `steps` gradient evaluations.
/// Throws NumericError on a non-finite gradient.
IgResult integrated_gradients(const ValueAndGradient& f, const Matrix& input, const Matrix& baseline, int steps, Rule rule = Rule::Midpoint);

/// Embedded baseline for the active prefix of `seq`: zeros, or [bos, pad..., eos] with positions.
Matrix baseline_for(const neural::EncoderModel& model, const tokenizer::TokenSequence& seq, BaselineKind kind);

/// Attribution of the target-class logit with respect to embedding + positional encoding of the active prefix.
IgResult integrated_gradients(const neural::EncoderModel& model, const tokenizer::TokenSequence& seq, const AttributionConfig& config);

struct TokenAttribution {
    std::string token;
    std::size_t position{0};
    double score{0.0};
};

struct TokenAttributionList {
    std::vector<TokenAttribution> tokens;
    double residual{0.0};
};

/// Row sums of an attribution matrix.
std::vector<double> token_scores(const Matrix& attributions);

/// One entry per row of the attribution matrix; texts[i] labels row i.
TokenAttributionList token_attributions(const IgResult& result, std::span<const std::string> texts);

struct RankedToken {
    std::string token;
    double score{0.0};
};

using TopTokens = std::array<std::vector<RankedToken>, kNumLevels>;

/// Descending by score, ties by token text; at most k entries.
std::vector<RankedToken> rank_totals(const std::map<std::string, double>& totals, std::size_t k);

/// For each class, IG over the items labeled with it; scores summed per token text over items, specials excluded.
TopTokens top_tokens_per_class(const neural::EncoderModel& model, const tokenizer::Vocab& vocab, std::span<const ingest::EvidenceItem> items,
                               std::size_t k, AttributionConfig config);

/// Ranked columns per class, one row per rank.
void write_top_tokens_table(std::ostream& out, const TopTokens& top);

// --- axioms on small networks -----------------------------------------------

/// F(x) = w2 . tanh(x W1 + b1) + b2 with x a 1 x d row.
struct ToyMlp {
    Matrix w1;  // d x h
    Matrix b1;  // 1 x h
    Matrix w2;  // h x 1
    double b2{0.0};

    neural::InputGradient operator()(const Matrix& x) const;
    static ToyMlp random(std::size_t inputs, std::size_t hidden, std::uint64_t seed);
};

struct AxiomReport {
    double sensitivity_a{0.0};          // attribution on the single differing feature
    double sensitivity_b{0.0};          // largest |attribution| on the ignored feature
    double invariance_max_diff{0.0};    // between permuted twins
    bool sensitivity_a_ok{false};
    bool sensitivity_b_ok{false};
    bool invariance_ok{false};

    bool passed() const { return sensitivity_a_ok && sensitivity_b_ok && invariance_ok; }
};

using ToyFactory = std::function<ToyMlp(std::uint64_t seed)>;

AxiomReport axiom_suite(const ToyFactory& factory, std::uint64_t seed, int steps = 256);

}  // namespace civic::attribution
