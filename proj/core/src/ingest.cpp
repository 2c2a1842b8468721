#include "civic/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <tuple>
#include <unordered_map>

#include <json.hpp>

#include "civic/rng.hpp"

namespace civic::ingest {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

bool blank(std::string_view s) { return trim(s).empty(); }

using UniquenessKey = std::tuple<std::string, std::string, std::string, std::string, std::vector<std::string>>;

UniquenessKey uniqueness_key(const RawEvidenceRecord& r) {
    std::vector<std::string> therapies;
    therapies.reserve(r.therapies.size());
    for (const auto& t : r.therapies) therapies.emplace_back(trim(t));
    std::sort(therapies.begin(), therapies.end());
    return {std::string(trim(r.abstract)), std::string(trim(r.disease)), std::string(trim(r.significance)),
            std::string(trim(r.molecular_profile)), std::move(therapies)};
}

bool passes_record_rules(const RawEvidenceRecord& r) {
    if (r.status != CurationStatus::Accepted && r.status != CurationStatus::UnderReview) return false;
    if (blank(r.abstract) || !r.evidence_level) return false;
    if (blank(r.disease) || blank(r.significance) || blank(r.molecular_profile)) return false;
    if (r.therapies.empty()) return false;
    return std::none_of(r.therapies.begin(), r.therapies.end(), [](const std::string& t) { return blank(t); });
}

ordered_json item_to_json(const EvidenceItem& item, std::string_view split) {
    ordered_json labels = ordered_json::object();
    for (Level l : kAllLevels) labels[std::string(1, level_letter(l))] = item.labels.test(l);
    ordered_json j;
    j["abstract"] = item.abstract;
    j["pubmed_id"] = item.pubmed_id;
    j["labels"] = std::move(labels);
    j["evidence_ids"] = item.source_evidence_ids;
    if (!split.empty()) j["split"] = split;
    return j;
}

EvidenceItem item_from_json(const nlohmann::json& j, std::size_t line_no) {
    const auto where = [&](const char* field) { return "line " + std::to_string(line_no) + "." + field; };
    EvidenceItem item;
    try {
        item.abstract = j.at("abstract").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(where("abstract"), e.what());
    }
    if (auto it = j.find("pubmed_id"); it != j.end() && !it->is_null()) {
        if (!it->is_number_integer()) throw ParseError(where("pubmed_id"), "expected integer");
        item.pubmed_id = it->get<std::int64_t>();
    }
    const auto labels = j.find("labels");
    if (labels == j.end() || !labels->is_object()) throw ParseError(where("labels"), "expected object with keys A..E");
    for (Level l : kAllLevels) {
        const std::string key(1, level_letter(l));
        const auto slot = labels->find(key);
        if (slot == labels->end() || !slot->is_boolean()) throw ParseError(where("labels"), "missing boolean for " + key);
        item.labels.set(l, slot->get<bool>());
    }
    if (auto it = j.find("evidence_ids"); it != j.end()) {
        if (!it->is_array()) throw ParseError(where("evidence_ids"), "expected array");
        for (const auto& id : *it) {
            if (!id.is_number_integer()) throw ParseError(where("evidence_ids"), "expected integers");
            item.source_evidence_ids.push_back(id.get<std::int64_t>());
        }
    }
    return item;
}

// Largest-remainder apportionment of n items to the given ratios.
std::array<std::size_t, 3> apportion(std::size_t n, const std::array<double, 3>& ratios) {
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
        const double exact = ratios[s] * static_cast<double>(n);
        sizes[s] = static_cast<std::size_t>(std::floor(exact));
        remainders[s] = exact - static_cast<double>(sizes[s]);
        assigned += sizes[s];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    return sizes;
}

}  // namespace

std::vector<RawEvidenceRecord> filter_records(std::span<const RawEvidenceRecord> records) {
    std::vector<const RawEvidenceRecord*> eligible;
    std::map<UniquenessKey, std::size_t> occurrences;
    for (const auto& r : records) {
        if (!passes_record_rules(r)) continue;
        eligible.push_back(&r);
        ++occurrences[uniqueness_key(r)];
    }
    std::vector<RawEvidenceRecord> out;
    out.reserve(eligible.size());
    for (const auto* r : eligible) {
        if (occurrences[uniqueness_key(*r)] == 1) out.push_back(*r);
    }
    return out;
}

std::vector<EvidenceItem> compile_multilabel(std::span<const RawEvidenceRecord> records) {
    std::vector<const RawEvidenceRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& r : records) sorted.push_back(&r);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto* a, const auto* b) { return a->evidence_id < b->evidence_id; });

    std::vector<EvidenceItem> items;
    std::unordered_map<std::string, std::size_t> by_abstract;
    for (const auto* r : sorted) {
        const std::string key(trim(r->abstract));
        if (key.empty()) continue;
        auto [it, inserted] = by_abstract.try_emplace(key, items.size());
        if (inserted) {
            EvidenceItem item;
            item.abstract = key;
            item.pubmed_id = r->pubmed_id;
            items.push_back(std::move(item));
        }
        EvidenceItem& item = items[it->second];
        if (r->evidence_level) item.labels.set(*r->evidence_level);
        item.source_evidence_ids.push_back(r->evidence_id);
    }
    std::erase_if(items, [](const EvidenceItem& item) { return !item.labels.any(); });
    return items;
}

std::array<std::size_t, kNumLevels> class_counts(std::span<const EvidenceItem> items) {
    std::array<std::size_t, kNumLevels> counts{};
    for (const auto& item : items)
        for (std::size_t c = 0; c < kNumLevels; ++c) counts[c] += item.labels.test(c) ? 1 : 0;
    return counts;
}

namespace {

using SplitTable = std::array<std::array<double, kNumLevels>, 3>;

unsigned signature(const LabelVector& labels) {
    unsigned sig = 0;
    for (std::size_t c = 0; c < kNumLevels; ++c)
        if (labels.test(c)) sig |= 1u << c;
    return sig;
}

// Sum over splits and classes of the squared deviation of the class share from its target share.
double imbalance(const SplitTable& assigned, const SplitTable& target, const std::array<std::size_t, 3>& sizes) {
    double total = 0.0;
    for (std::size_t s = 0; s < 3; ++s) {
        if (sizes[s] == 0) continue;
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            const double d = (assigned[s][c] - target[s][c]) / static_cast<double>(sizes[s]);
            total += d * d;
        }
    }
    return total;
}

// Swaps items with different label sets between splits while the imbalance drops. Split sizes are unchanged.
void rebalance(std::span<const EvidenceItem> items, const std::array<std::size_t, 3>& sizes, const SplitTable& target, SplitTable& assigned,
               std::vector<int>& split_of, const std::vector<std::size_t>& order) {
    constexpr unsigned kSignatures = 1u << kNumLevels;
    std::array<std::array<std::vector<std::size_t>, kSignatures>, 3> pools;
    for (std::size_t idx : order) pools[static_cast<std::size_t>(split_of[idx])][signature(items[idx].labels)].push_back(idx);

    const auto apply = [&](SplitTable& t, std::size_t a, std::size_t b, unsigned u, unsigned v) {
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            const double du = (u >> c) & 1u, dv = (v >> c) & 1u;
            t[a][c] += dv - du;
            t[b][c] += du - dv;
        }
    };

    double current = imbalance(assigned, target, sizes);
    for (std::size_t iteration = 0; iteration < items.size(); ++iteration) {
        double best = current;
        std::size_t best_a = 0, best_b = 0;
        unsigned best_u = 0, best_v = 0;
        for (std::size_t a = 0; a < 3; ++a) {
            for (std::size_t b = a + 1; b < 3; ++b) {
                for (unsigned u = 0; u < kSignatures; ++u) {
                    if (pools[a][u].empty()) continue;
                    for (unsigned v = 0; v < kSignatures; ++v) {
                        if (u == v || pools[b][v].empty()) continue;
                        SplitTable trial = assigned;
                        apply(trial, a, b, u, v);
                        const double score = imbalance(trial, target, sizes);
                        if (score < best - 1e-15) {
                            best = score;
                            best_a = a;
                            best_b = b;
                            best_u = u;
                            best_v = v;
                        }
                    }
                }
            }
        }
        if (best >= current) break;
        const std::size_t i = pools[best_a][best_u].back();
        const std::size_t j = pools[best_b][best_v].back();
        pools[best_a][best_u].pop_back();
        pools[best_b][best_v].pop_back();
        pools[best_b][best_u].push_back(i);
        pools[best_a][best_v].push_back(j);
        split_of[i] = static_cast<int>(best_b);
        split_of[j] = static_cast<int>(best_a);
        apply(assigned, best_a, best_b, best_u, best_v);
        current = best;
    }
}

}  // namespace

DatasetSplit stratified_split(std::span<const EvidenceItem> items, SplitRatios ratios, std::uint64_t seed) {
    const auto r = ratios.as_array();
    for (double x : r) {
        if (!(x >= 0.0) || x > 1.0) throw DataError("split ratios must lie in [0, 1]");
    }
    if (std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9) throw DataError("split ratios must sum to 1");

    {
        std::set<std::string_view> seen;
        for (const auto& item : items) {
            if (!seen.insert(item.abstract).second) throw DataError("duplicate abstract in split input; compile_multilabel first");
        }
    }

    const std::size_t n = items.size();
    const auto sizes = apportion(n, r);
    for (std::size_t s = 0; s < 3; ++s) {
        if (r[s] > 0.0 && sizes[s] == 0) {
            throw DataError("too few items (" + std::to_string(n) + ") to populate every split with the requested ratios");
        }
    }

    const auto overall = class_counts(items);
    std::array<std::array<double, kNumLevels>, 3> target{};
    for (std::size_t s = 0; s < 3; ++s)
        for (std::size_t c = 0; c < kNumLevels; ++c) target[s][c] = r[s] * static_cast<double>(overall[c]);

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(order));

    // Rarest label first.
    const auto rarest = [&](std::size_t idx) {
        std::size_t best = kNumLevels;
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            if (!items[idx].labels.test(c)) continue;
            if (best == kNumLevels || overall[c] < overall[best]) best = c;
        }
        return best;
    };
    std::vector<std::size_t> rarest_of(n);
    for (std::size_t i = 0; i < n; ++i) rarest_of[i] = rarest(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const std::size_t ca = rarest_of[a], cb = rarest_of[b];
        const std::size_t fa = ca < kNumLevels ? overall[ca] : n + 1;
        const std::size_t fb = cb < kNumLevels ? overall[cb] : n + 1;
        return fa < fb;
    });

    std::array<std::array<double, kNumLevels>, 3> assigned{};
    std::array<std::size_t, 3> filled{};
    std::vector<int> split_of(n, -1);
    for (std::size_t idx : order) {
        const auto& labels = items[idx].labels;
        const std::size_t key_class = rarest_of[idx];
        int best = -1;
        double best_primary = 0.0, best_secondary = 0.0;
        std::size_t best_room = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            if (filled[s] >= sizes[s]) continue;
            const double primary = key_class < kNumLevels ? target[s][key_class] - assigned[s][key_class] : 0.0;
            double secondary = 0.0;
            for (std::size_t c = 0; c < kNumLevels; ++c)
                if (labels.test(c)) secondary += target[s][c] - assigned[s][c];
            const std::size_t room = sizes[s] - filled[s];
            const bool better = best < 0 || primary > best_primary + 1e-12 ||
                                (std::abs(primary - best_primary) <= 1e-12 &&
                                 (secondary > best_secondary + 1e-12 ||
                                  (std::abs(secondary - best_secondary) <= 1e-12 && room > best_room)));
            if (better) {
                best = static_cast<int>(s);
                best_primary = primary;
                best_secondary = secondary;
                best_room = room;
            }
        }
        const auto s = static_cast<std::size_t>(best);
        split_of[idx] = best;
        ++filled[s];
        for (std::size_t c = 0; c < kNumLevels; ++c)
            if (labels.test(c)) assigned[s][c] += 1.0;
    }
    rebalance(items, sizes, target, assigned, split_of, order);

    DatasetSplit out;
    out.split_seed = seed;
    out.ratios = ratios;
    std::array<std::vector<EvidenceItem>*, 3> dest{&out.train, &out.validation, &out.test};
    // Within a split, items keep the shuffled order so the output does not leak input order.
    std::vector<std::size_t> shuffled(n);
    std::iota(shuffled.begin(), shuffled.end(), std::size_t{0});
    Rng order_rng(Rng::derive(seed, 1));
    order_rng.shuffle(std::span<std::size_t>(shuffled));
    for (std::size_t idx : shuffled) dest[static_cast<std::size_t>(split_of[idx])]->push_back(items[idx]);
    return out;
}

void write_split_jsonl(std::ostream& out, const DatasetSplit& split) {
    const std::array<std::pair<std::string_view, const std::vector<EvidenceItem>*>, 3> parts{
        {{"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}}};
    for (const auto& [name, items] : parts) {
        for (const auto& item : *items) out << item_to_json(item, name).dump() << '\n';
    }
}

DatasetSplit read_split_jsonl(std::istream& in) {
    DatasetSplit split;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no), e.what());
        }
        auto item = item_from_json(j, line_no);
        const auto it = j.find("split");
        if (it == j.end() || !it->is_string()) throw ParseError("line " + std::to_string(line_no) + ".split", "expected train|validation|test");
        const auto name = it->get<std::string>();
        if (name == "train") split.train.push_back(std::move(item));
        else if (name == "validation") split.validation.push_back(std::move(item));
        else if (name == "test") split.test.push_back(std::move(item));
        else throw ParseError("line " + std::to_string(line_no) + ".split", "unknown split '" + name + "'");
    }
    return split;
}

std::vector<EvidenceItem> read_items_jsonl(std::istream& in) {
    std::vector<EvidenceItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError("line " + std::to_string(line_no), e.what());
        }
        items.push_back(item_from_json(j, line_no));
    }
    return items;
}

}  // namespace civic::ingest
