#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "civic/error.hpp"
#include "civic/labels.hpp"

namespace civic::ingest {

enum class CurationStatus { Accepted, UnderReview, Other };

/// One row of the CIViC evidence table as returned by the GraphQL API.
struct RawEvidenceRecord {
    std::int64_t evidence_id{0};
    std::string abstract;
    std::int64_t pubmed_id{0};
    std::string molecular_profile;
    std::string disease;
    std::vector<std::string> therapies;
    std::string significance;
    std::optional<Level> evidence_level;
    CurationStatus status{CurationStatus::Other};
};

/// One abstract with the union of the evidence levels attached to it.
struct EvidenceItem {
    std::string abstract;
    std::int64_t pubmed_id{0};
    LabelVector labels;
    std::vector<std::int64_t> source_evidence_ids;
};

struct SplitRatios {
    double train{0.8};
    double validation{0.1};
    double test{0.1};

    std::array<double, 3> as_array() const { return {train, validation, test}; }
};

struct DatasetSplit {
    std::vector<EvidenceItem> train;
    std::vector<EvidenceItem> validation;
    std::vector<EvidenceItem> test;
    std::uint64_t split_seed{0};
    SplitRatios ratios;
};

/// Transport failure while paging through the API. Carries the cursor of
/// the page that could not be fetched so the caller can resume.
class FetchError : public std::runtime_error {
public:
    FetchError(const std::string& what, std::optional<std::string> cursor, bool retryable)
        : std::runtime_error(what), cursor_(std::move(cursor)), retryable_(retryable) {}

    const std::optional<std::string>& cursor() const noexcept { return cursor_; }
    bool retryable() const noexcept { return retryable_; }

private:
    std::optional<std::string> cursor_;
    bool retryable_;
};

/// Response body that does not match the expected evidence-item schema.
class ParseError : public DataError {
public:
    ParseError(const std::string& field, const std::string& detail)
        : DataError("malformed evidence record: field '" + field + "': " + detail), field_(field) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

struct FetchOptions {
    int max_attempts{3};
    std::chrono::milliseconds retry_backoff{500};
    std::chrono::seconds timeout{60};
    std::optional<std::string> start_cursor;
};

/// GraphQL query used for every page. Variables: $first (page size), $after (cursor).
extern const std::string_view kEvidenceQuery;

/// Pages through the evidence-item connection until hasNextPage is false.
/// Records come back sorted by evidence id.
std::vector<RawEvidenceRecord> fetch_evidence(const std::string& endpoint_url, int page_size,
                                              const FetchOptions& options = {});

/// Parses evidence nodes from JSON. Accepts a bare array of nodes, an object
/// with a "nodes" array, or a full GraphQL response envelope.
std::vector<RawEvidenceRecord> parse_evidence_json(std::string_view json_text);

/// Drops records that lack an abstract or level, lack any of the metadata
/// columns, are not Accepted/UnderReview, or share their
/// (abstract, disease, significance, profile, therapies) tuple with another record.
std::vector<RawEvidenceRecord> filter_records(std::span<const RawEvidenceRecord> records);

/// Groups records by abstract; a label slot is set when any record for that abstract carries the level.
/// Output is ordered by the smallest evidence id of each group.
std::vector<EvidenceItem> compile_multilabel(std::span<const RawEvidenceRecord> records);

/// Deterministic multi-label stratified split (iterative proportional assignment).
DatasetSplit stratified_split(std::span<const EvidenceItem> items, SplitRatios ratios, std::uint64_t seed);

std::array<std::size_t, kNumLevels> class_counts(std::span<const EvidenceItem> items);

/// One JSON object per line with a "split" field; LF line endings.
void write_split_jsonl(std::ostream& out, const DatasetSplit& split);
DatasetSplit read_split_jsonl(std::istream& in);

/// Items without a split field (or from a plain item list) are returned in file order.
std::vector<EvidenceItem> read_items_jsonl(std::istream& in);

}  // namespace civic::ingest
