#include "civic/fewshot.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "civic/error.hpp"
#include "civic/log.hpp"

namespace civic::fewshot {
namespace {

constexpr std::string_view kTargetMarker = "Target abstract:\n";
constexpr std::string_view kInstruction =
    "Answer with the applicable evidence levels only, as comma-separated capital letters (for example: B or C,D).";

}  // namespace

const std::array<LevelDefinition, kNumLevels>& level_definitions() {
    static const std::array<LevelDefinition, kNumLevels> defs{{
        {Level::A, "Validated association", "Association proven or accepted by consensus in human medicine.",
         "Typically already part of routine care or the focus of large clinical trials."},
        {Level::B, "Clinical evidence", "Supported by clinical trials or other primary data from patients.",
         "Observed in more than one patient; functional data helps but is optional."},
        {Level::C, "Case study", "Single case reports published in clinical journals.",
         "Backed by one patient, or by a very small group such as two or three patients or one family."},
        {Level::D, "Preclinical evidence", "Supported by in vivo or in vitro models.",
         "Any support comes from model systems such as mice, cell lines or molecular assays."},
        {Level::E, "Inferential association", "Indirect evidence.",
         "At least one step away from a direct link between the molecular profile and clinical relevance."},
    }};
    return defs;
}

std::string default_preamble() {
    return "You grade the clinical evidence that a biomedical abstract provides for a cancer variant. "
           "Each abstract can support one or more of the evidence levels defined below.";
}

std::vector<Example> sample_examples(std::span<const ingest::EvidenceItem> train, int n, Rng& rng) {
    if (n < 0) throw std::invalid_argument("number of shots must be >= 0");
    std::vector<Example> out;
    if (n == 0) return out;
    std::vector<char> used(train.size(), 0);
    for (Level level : kAllLevels) {
        std::vector<std::size_t> pool;
        for (std::size_t i = 0; i < train.size(); ++i)
            if (!used[i] && train[i].labels.test(level)) pool.push_back(i);
        if (pool.size() < static_cast<std::size_t>(n)) {
            throw DataError(std::string("class ") + level_letter(level) + " has " + std::to_string(pool.size()) +
                            " unused training items, need " + std::to_string(n));
        }
        // Partial Fisher-Yates: the first n slots are a uniform sample without replacement.
        for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
            const std::size_t j = k + static_cast<std::size_t>(rng.uniform_index(pool.size() - k));
            std::swap(pool[k], pool[j]);
            used[pool[k]] = 1;
            out.push_back({train[pool[k]].abstract, train[pool[k]].labels});
        }
    }
    return out;
}

std::size_t estimate_tokens(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return (words * 4 + 2) / 3;
}

std::string build_prompt(const PromptSpec& spec, std::size_t token_budget) {
    std::ostringstream p;
    p << spec.preamble << "\n\nEvidence levels:\n";
    for (const auto& d : level_definitions())
        p << level_letter(d.level) << " - " << d.name << ": " << d.definition << ' ' << d.description << '\n';
    if (!spec.examples.empty()) {
        p << "\nExamples:\n";
        for (const auto& ex : spec.examples) p << "\nAbstract: " << ex.abstract << "\nLevels: " << ex.labels.to_string() << '\n';
    }
    p << '\n' << kTargetMarker << spec.target_abstract << "\n\n" << kInstruction << '\n';
    std::string prompt = p.str();
    const std::size_t tokens = estimate_tokens(prompt);
    if (tokens > token_budget) {
        throw DataError("prompt needs about " + std::to_string(tokens) + " tokens, over the budget of " + std::to_string(token_budget));
    }
    return prompt;
}

std::string extract_target_abstract(std::string_view prompt) {
    const auto start = prompt.rfind(kTargetMarker);
    if (start == std::string_view::npos) return {};
    const auto body = start + kTargetMarker.size();
    const auto end = prompt.find("\n\n" + std::string(kInstruction), body);
    return std::string(prompt.substr(body, end == std::string_view::npos ? std::string_view::npos : end - body));
}

ParsedResponse parse_response(std::string_view text) {
    LabelVector upper, lower;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (!std::isalpha(c)) continue;
        std::size_t j = i;
        while (j < text.size() && std::isalnum(static_cast<unsigned char>(text[j]))) ++j;
        if (j - i == 1) {
            if (c >= 'A' && c <= 'E') upper.set(static_cast<std::size_t>(c - 'A'));
            else if (c >= 'a' && c <= 'e') lower.set(static_cast<std::size_t>(c - 'a'));
        }
        i = j;
    }
    ParsedResponse r;
    r.labels = upper.any() ? upper : lower;
    r.parseable = r.labels.any();
    return r;
}

std::unique_ptr<LlmClient> constant_client(std::string answer) {
    return std::make_unique<MockClient>([answer = std::move(answer)](const std::string&) { return answer; });
}

std::unique_ptr<LlmClient> oracle_client(std::span<const ingest::EvidenceItem> items) {
    std::map<std::string, std::string> gold;
    for (const auto& item : items) gold[item.abstract] = item.labels.to_string();
    return std::make_unique<MockClient>([gold = std::move(gold)](const std::string& prompt) {
        const auto it = gold.find(extract_target_abstract(prompt));
        return it == gold.end() ? std::string() : it->second;
    });
}

std::vector<ingest::EvidenceItem> reduce_test_set(std::span<const ingest::EvidenceItem> test, int per_level, std::uint64_t seed) {
    if (per_level < 0) throw std::invalid_argument("items per level must be >= 0");
    std::vector<std::size_t> order(test.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<char> used(test.size(), 0);
    std::vector<ingest::EvidenceItem> out;
    for (Level level : kAllLevels) {
        int taken = 0;
        for (std::size_t i : order) {
            if (taken == per_level) break;
            if (used[i] || !test[i].labels.test(level)) continue;
            used[i] = 1;
            out.push_back(test[i]);
            ++taken;
        }
        if (taken < per_level) {
            throw DataError(std::string("test split has only ") + std::to_string(taken) + " unused items for class " + level_letter(level));
        }
    }
    return out;
}

std::vector<ShotResult> evaluate_fewshot(LlmClient& client, std::span<const ingest::EvidenceItem> train,
                                         std::span<const ingest::EvidenceItem> reduced_test, const FewShotOptions& options) {
    if (options.repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
    if (reduced_test.empty()) throw DataError("reduced test set is empty");
    std::vector<LabelVector> gold;
    for (const auto& item : reduced_test) gold.push_back(item.labels);

    std::vector<ShotResult> results;
    for (int shots : options.shots) {
        ShotResult sr;
        sr.shots = shots;
        std::vector<eval::MetricsReport> ok;
        for (int rep = 1; rep <= options.repetitions; ++rep) {
            RepetitionResult rr;
            rr.repetition = rep;
            Rng rng(Rng::derive(options.seed, static_cast<std::uint64_t>(shots) * 1000u + static_cast<std::uint64_t>(rep)));
            try {
                std::vector<LabelVector> predicted;
                for (const auto& item : reduced_test) {
                    PromptSpec spec{default_preamble(), sample_examples(train, shots, rng), item.abstract};
                    const std::string prompt = build_prompt(spec, options.token_budget);
                    FewShotPrediction p;
                    p.raw_response = client.complete(prompt);
                    const auto parsed = parse_response(p.raw_response);
                    p.predicted = parsed.labels;
                    p.parseable = parsed.parseable;
                    predicted.push_back(p.predicted);
                    rr.predictions.push_back(std::move(p));
                }
                rr.metrics = eval::compute_metrics(predicted, gold);
                ok.push_back(rr.metrics);
            } catch (const ClientError& e) {
                rr.failed = true;
                rr.error = e.what();
                log::warn(std::to_string(shots) + "-shot repetition " + std::to_string(rep) + " failed: " + e.what());
            }
            sr.repetitions.push_back(std::move(rr));
        }
        sr.successful = ok.size();
        if (ok.empty()) log::warn(std::to_string(shots) + "-shot evaluation has no successful repetition");
        else sr.mean = eval::aggregate_seeds(ok).mean;
        results.push_back(std::move(sr));
    }
    return results;
}

}  // namespace civic::fewshot
