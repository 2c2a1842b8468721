#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "civic/ingest.hpp"

namespace civic::testing {

/// Pseudo-words built from syllables; none collides with a class keyword.
std::vector<std::string> filler_lexicon(std::size_t count);

/// Keyword inserted into abstracts of each class in keyword_dataset.
inline constexpr std::array<const char*, kNumLevels> kClassKeywords{"randomized", "patients", "case", "mice", "inferred"};

/// Multi-label items: one label drawn from `priors`, a second one with probability `second_label_rate`.
/// Each label contributes its keyword at a random position among 20-40 filler words. Abstracts are unique.
std::vector<ingest::EvidenceItem> keyword_dataset(std::size_t n, std::uint64_t seed,
                                                  std::array<double, kNumLevels> priors = {0.1, 0.3, 0.25, 0.25, 0.1},
                                                  double second_label_rate = 0.2);

/// Class frequencies close to the public CIViC evidence table (about 8% multi-label, E near 1%).
std::vector<ingest::EvidenceItem> civic_like_dataset(std::size_t n, std::uint64_t seed);

/// Single-label items, `per_level` per class, classes in A..E order.
std::vector<ingest::EvidenceItem> single_label_fixture(std::size_t per_level, std::uint64_t seed);

/// Texts made of fixed word templates chained at random, so masked words are predictable from their neighbours.
std::vector<std::string> patterned_corpus(std::size_t n, std::uint64_t seed, std::size_t templates = 8, std::size_t template_length = 16,
                                          std::size_t lexicon = 48);

/// A small raw-record fixture in GraphQL node form, ids 1..n.
std::string evidence_nodes_json(std::size_t n, std::uint64_t seed);

}  // namespace civic::testing
