#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "civic/eval.hpp"
#include "civic/ingest.hpp"
#include "civic/labels.hpp"
#include "civic/rng.hpp"

namespace civic::fewshot {

/// Bumped whenever the prompt wording changes.
inline constexpr std::string_view kPromptTemplateVersion = "1";
inline constexpr std::array<int, 7> kDefaultShots{0, 1, 2, 3, 4, 5, 10};
inline constexpr std::size_t kDefaultTokenBudget = 128000;

struct LevelDefinition {
    Level level;
    std::string_view name;
    std::string_view definition;
    std::string_view description;
};

const std::array<LevelDefinition, kNumLevels>& level_definitions();

struct Example {
    std::string abstract;
    LabelVector labels;
};

struct PromptSpec {
    std::string preamble;
    std::vector<Example> examples;
    std::string target_abstract;
};

std::string default_preamble();

/// n distinct training items per class, classes in A..E order. An item is used at most once per call.
/// Throws DataError naming the first class with too few members.
std::vector<Example> sample_examples(std::span<const ingest::EvidenceItem> train, int n, Rng& rng);

/// Rough token count: whitespace-separated words scaled by 4/3.
std::size_t estimate_tokens(std::string_view text);

/// Throws DataError when the estimated prompt length exceeds token_budget.
std::string build_prompt(const PromptSpec& spec, std::size_t token_budget = kDefaultTokenBudget);

/// The target abstract embedded in a prompt built by build_prompt, or empty.
std::string extract_target_abstract(std::string_view prompt);

struct ParsedResponse {
    LabelVector labels;
    bool parseable{false};
};

/// Standalone letters A-E. Uppercase letters win; lowercase ones count only when no uppercase letter is present.
ParsedResponse parse_response(std::string_view text);

class ClientError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;
    /// Returns the completion text. Throws ClientError on failure.
    virtual std::string complete(const std::string& prompt) = 0;
};

class MockClient final : public LlmClient {
public:
    explicit MockClient(std::function<std::string(const std::string&)> respond) : respond_(std::move(respond)) {}
    std::string complete(const std::string& prompt) override { return respond_(prompt); }

private:
    std::function<std::string(const std::string&)> respond_;
};

/// Always answers `answer`.
std::unique_ptr<LlmClient> constant_client(std::string answer);

/// Answers the gold labels of the prompt's target abstract; unknown abstracts get an empty reply.
std::unique_ptr<LlmClient> oracle_client(std::span<const ingest::EvidenceItem> items);

struct LiveClientConfig {
    std::string endpoint;  // full chat-completions URL
    std::string model;
    std::string api_key;
    double temperature{0.0};
    std::chrono::seconds timeout{120};

    /// From LLM_ENDPOINT, LLM_MODEL and LLM_API_KEY. Throws ClientError if any is unset.
    static LiveClientConfig from_env();
};

/// JSON chat-completion request over HTTP(S) with a single user message.
class HttpChatClient final : public LlmClient {
public:
    explicit HttpChatClient(LiveClientConfig config);
    std::string complete(const std::string& prompt) override;

private:
    LiveClientConfig config_;
};

/// n items per level chosen without overlap, classes in A..E order. Throws DataError if a level runs short.
std::vector<ingest::EvidenceItem> reduce_test_set(std::span<const ingest::EvidenceItem> test, int per_level, std::uint64_t seed);

struct FewShotPrediction {
    LabelVector predicted;
    std::string raw_response;
    bool parseable{false};
};

struct RepetitionResult {
    int repetition{1};
    bool failed{false};
    std::string error;
    std::vector<FewShotPrediction> predictions;
    eval::MetricsReport metrics;
};

struct ShotResult {
    int shots{0};
    std::vector<RepetitionResult> repetitions;
    eval::MetricsReport mean;
    std::size_t successful{0};
};

struct FewShotOptions {
    std::vector<int> shots{kDefaultShots.begin(), kDefaultShots.end()};
    int repetitions{3};
    std::uint64_t seed{0};
    std::size_t token_budget{kDefaultTokenBudget};
};

/// Items are evaluated in the given order; every call draws a fresh example sample.
/// A failing call marks its repetition failed; failed repetitions are left out of the mean.
std::vector<ShotResult> evaluate_fewshot(LlmClient& client, std::span<const ingest::EvidenceItem> train,
                                         std::span<const ingest::EvidenceItem> reduced_test, const FewShotOptions& options);

}  // namespace civic::fewshot
