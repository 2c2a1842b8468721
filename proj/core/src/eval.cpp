#include "civic/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "civic/error.hpp"
#include "civic/log.hpp"

namespace civic::eval {
namespace {

using json = nlohmann::ordered_json;

double safe_div(double num, double den) { return den > 0.0 ? num / den : 0.0; }

double f1_of(std::size_t tp, std::size_t fp, std::size_t fn) {
    return safe_div(2.0 * static_cast<double>(tp), static_cast<double>(2 * tp + fp + fn));
}

// F1 as the exact fraction 2tp / (2tp + fp + fn) so ties compare without rounding.
struct F1Fraction {
    std::uint64_t num{0}, den{0};
    bool operator<(const F1Fraction& o) const {
        const unsigned __int128 lhs = static_cast<unsigned __int128>(num) * (o.den ? o.den : 1);
        const unsigned __int128 rhs = static_cast<unsigned __int128>(o.num) * (den ? den : 1);
        return lhs < rhs;
    }
    bool operator==(const F1Fraction& o) const { return !(*this < o) && !(o < *this); }
};

F1Fraction fraction(std::size_t tp, std::size_t fp, std::size_t fn) {
    if (tp == 0) return {0, 1};
    return {2 * tp, 2 * tp + fp + fn};
}

void check_aligned(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw std::invalid_argument(std::string(what) + ": " + std::to_string(a) + " vs " + std::to_string(b) + " items");
}

std::vector<double> column(std::span<const Scores> scores, std::size_t c) {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i][c];
    return out;
}

std::vector<bool> column(std::span<const LabelVector> labels, std::size_t c) {
    std::vector<bool> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = labels[i].test(c);
    return out;
}

Distribution summarize(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    const double median = n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    return {values.front(), median, values.back()};
}

std::string pct(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << 100.0 * v;
    return s.str();
}

LabelVector labels_from_json(const json& j) {
    LabelVector v;
    for (Level l : kAllLevels) {
        const std::string key(1, level_letter(l));
        if (j.contains(key)) v.set(l, j.at(key).is_boolean() ? j.at(key).get<bool>() : j.at(key).get<int>() != 0);
    }
    return v;
}

json labels_to_json(const LabelVector& v) {
    json j = json::object();
    for (Level l : kAllLevels) j[std::string(1, level_letter(l))] = v.test(l);
    return j;
}

}  // namespace

std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& labels) {
    check_aligned(scores.size(), labels.size(), "scores and labels differ in length");
    if (scores.empty()) throw std::invalid_argument("precision-recall curve needs at least one item");
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));

    std::vector<PrPoint> curve;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        const std::size_t fn = positives - tp;
        curve.push_back({s, safe_div(static_cast<double>(tp), static_cast<double>(tp + fp)),
                         safe_div(static_cast<double>(tp), static_cast<double>(positives)), f1_of(tp, fp, fn)});
        for (; i < order.size() && scores[order[i]] == s; ++i) {
            if (labels[order[i]]) ++tp;
            else ++fp;
        }
    }
    std::reverse(curve.begin(), curve.end());
    return curve;
}

double calibrate_threshold(std::span<const double> scores, const std::vector<bool>& labels) {
    check_aligned(scores.size(), labels.size(), "scores and labels differ in length");
    const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), true));
    if (positives == 0) {
        log::warn("class has no validation positives; using threshold 0.5");
        return kDefaultThreshold;
    }
    std::vector<double> candidates(scores.begin(), scores.end());
    candidates.push_back(kDefaultThreshold);
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    // Walk candidates from the largest down so ties keep the larger threshold.
    double best_t = candidates.back();
    F1Fraction best{0, 1};
    bool have = false;
    std::size_t tp = 0, fp = 0, k = 0;
    for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
        for (; k < order.size() && scores[order[k]] > *it; ++k) {
            if (labels[order[k]]) ++tp;
            else ++fp;
        }
        const F1Fraction f = fraction(tp, fp, positives - tp);
        if (!have || best < f) {
            best = f;
            best_t = *it;
            have = true;
        }
    }
    return best_t;
}

ThresholdSet calibrate_thresholds(std::span<const Scores> scores, std::span<const LabelVector> labels) {
    check_aligned(scores.size(), labels.size(), "scores and labels differ in length");
    ThresholdSet out{};
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        const auto s = column(scores, c);
        const auto y = column(labels, c);
        if (std::find(y.begin(), y.end(), true) == y.end()) {
            log::warn(std::string("class ") + level_letter(kAllLevels[c]) + " has no validation positives; using threshold 0.5");
            out[c] = kDefaultThreshold;
            continue;
        }
        out[c] = calibrate_threshold(s, y);
    }
    return out;
}

std::vector<LabelVector> apply_thresholds(std::span<const Scores> scores, const ThresholdSet& thresholds) {
    std::vector<LabelVector> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        for (std::size_t c = 0; c < kNumLevels; ++c) out[i].set(c, scores[i][c] > thresholds[c]);
    return out;
}

ConfusionCounts confusion(std::span<const LabelVector> predicted, std::span<const LabelVector> gold) {
    check_aligned(predicted.size(), gold.size(), "predictions and gold labels differ in length");
    ConfusionCounts cc;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            auto& k = cc.classes[c];
            const bool p = predicted[i].test(c), g = gold[i].test(c);
            if (p && g) ++k.tp;
            else if (p) ++k.fp;
            else if (g) ++k.fn;
            else ++k.tn;
        }
    }
    return cc;
}

double weighted_f1(const std::array<double, kNumLevels>& f1, const std::array<std::size_t, kNumLevels>& support) {
    std::size_t total = 0;
    for (auto s : support) total += s;
    if (total == 0) {
        log::warn("total support is zero; weighted F1 set to 0");
        return 0.0;
    }
    double acc = 0.0;
    for (std::size_t c = 0; c < kNumLevels; ++c) acc += static_cast<double>(support[c]) / static_cast<double>(total) * f1[c];
    return acc;
}

MetricsReport metrics_from_counts(const ConfusionCounts& counts) {
    MetricsReport r;
    std::size_t total = 0;
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        const auto& k = counts.classes[c];
        r.precision[c] = safe_div(static_cast<double>(k.tp), static_cast<double>(k.tp + k.fp));
        r.recall[c] = safe_div(static_cast<double>(k.tp), static_cast<double>(k.tp + k.fn));
        const double pr = r.precision[c] + r.recall[c];
        r.f1[c] = pr > 0.0 ? 2.0 * r.precision[c] * r.recall[c] / pr : 0.0;
        r.support[c] = k.tp + k.fn;
        total += r.support[c];
    }
    for (std::size_t c = 0; c < kNumLevels; ++c)
        r.weights[c] = total ? static_cast<double>(r.support[c]) / static_cast<double>(total) : 0.0;
    r.weighted_f1 = weighted_f1(r.f1, r.support);
    return r;
}

MetricsReport compute_metrics(std::span<const LabelVector> predicted, std::span<const LabelVector> gold) {
    return metrics_from_counts(confusion(predicted, gold));
}

SeedAggregate aggregate_seeds(std::span<const MetricsReport> reports) {
    if (reports.empty()) throw std::invalid_argument("cannot aggregate zero reports");
    SeedAggregate agg;
    agg.mean.support = reports.front().support;
    const double n = static_cast<double>(reports.size());
    for (const auto& r : reports) {
        for (std::size_t c = 0; c < kNumLevels; ++c) {
            agg.mean.precision[c] += r.precision[c] / n;
            agg.mean.recall[c] += r.recall[c] / n;
            agg.mean.f1[c] += r.f1[c] / n;
            agg.mean.weights[c] += r.weights[c] / n;
        }
        agg.mean.weighted_f1 += r.weighted_f1 / n;
        agg.weighted_f1_values.push_back(r.weighted_f1);
    }
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        std::vector<double> v;
        for (const auto& r : reports) v.push_back(r.f1[c]);
        agg.f1[c] = summarize(std::move(v));
    }
    agg.weighted_f1 = summarize(agg.weighted_f1_values);
    return agg;
}

MisclassificationReport misclassification_analysis(std::span<const std::vector<LabelVector>> predictions, std::span<const LabelVector> gold) {
    if (predictions.size() < 2) throw std::invalid_argument("misclassification analysis needs at least two models");
    for (std::size_t m = 0; m < predictions.size(); ++m) {
        if (predictions[m].size() != gold.size())
            throw DataError("model " + std::to_string(m) + " predicts " + std::to_string(predictions[m].size()) + " items but gold has " +
                            std::to_string(gold.size()));
    }
    const std::size_t models = predictions.size();
    std::vector<std::vector<char>> wrong(models, std::vector<char>(gold.size()));
    MisclassificationReport r;
    r.correct_models.assign(gold.size(), 0);
    for (std::size_t m = 0; m < models; ++m) {
        for (std::size_t i = 0; i < gold.size(); ++i) {
            wrong[m][i] = !(predictions[m][i] == gold[i]);
            if (!wrong[m][i]) ++r.correct_models[i];
        }
    }
    r.overlap.assign(models, std::vector<double>(models, 100.0));
    for (std::size_t a = 0; a < models; ++a) {
        for (std::size_t b = 0; b < models; ++b) {
            std::size_t inter = 0, uni = 0;
            for (std::size_t i = 0; i < gold.size(); ++i) {
                inter += wrong[a][i] && wrong[b][i];
                uni += wrong[a][i] || wrong[b][i];
            }
            r.overlap[a][b] = uni ? 100.0 * static_cast<double>(inter) / static_cast<double>(uni) : 100.0;
        }
    }
    r.histogram.assign(models + 1, 0);
    for (auto k : r.correct_models) ++r.histogram[k];
    return r;
}

void write_metrics_csv(std::ostream& out, std::span<const NamedReport> rows) {
    out << "model,F1_A,F1_B,F1_C,F1_D,F1_E,weighted_F1\n";
    for (const auto& row : rows) {
        out << row.name;
        for (double f : row.report.f1) out << ',' << pct(f, 4);
        out << ',' << pct(row.report.weighted_f1, 4) << '\n';
    }
}

void write_metrics_table(std::ostream& out, std::span<const NamedReport> rows) {
    std::size_t width = 5;
    for (const auto& row : rows) width = std::max(width, row.name.size());
    out << std::left << std::setw(static_cast<int>(width)) << "model";
    for (Level l : kAllLevels) out << std::right << std::setw(8) << (std::string("F1_") + level_letter(l));
    out << std::right << std::setw(13) << "weighted F1" << '\n';
    for (const auto& row : rows) {
        out << std::left << std::setw(static_cast<int>(width)) << row.name;
        for (double f : row.report.f1) out << std::right << std::setw(8) << pct(f, 1);
        out << std::right << std::setw(13) << pct(row.report.weighted_f1, 1) << '\n';
    }
}

void write_seed_distribution_csv(std::ostream& out, std::span<const MetricsReport> reports) {
    const auto agg = aggregate_seeds(reports);
    out << "run,F1_A,F1_B,F1_C,F1_D,F1_E,weighted_F1\n";
    for (std::size_t i = 0; i < reports.size(); ++i) {
        out << "seed_" << i;
        for (double f : reports[i].f1) out << ',' << pct(f, 4);
        out << ',' << pct(reports[i].weighted_f1, 4) << '\n';
    }
    const auto stat_row = [&](const char* name, auto pick) {
        out << name;
        for (const auto& d : agg.f1) out << ',' << pct(pick(d), 4);
        out << ',' << pct(pick(agg.weighted_f1), 4) << '\n';
    };
    stat_row("min", [](const Distribution& d) { return d.min; });
    stat_row("median", [](const Distribution& d) { return d.median; });
    stat_row("max", [](const Distribution& d) { return d.max; });
    out << "mean";
    for (double f : agg.mean.f1) out << ',' << pct(f, 4);
    out << ',' << pct(agg.mean.weighted_f1, 4) << '\n';
}

void write_overlap_table(std::ostream& out, std::span<const std::string> names, const MisclassificationReport& report) {
    std::size_t width = 6;
    for (const auto& n : names) width = std::max(width, n.size() + 2);
    const int w = static_cast<int>(width);
    out << std::left << std::setw(w) << "";
    for (const auto& n : names) out << std::right << std::setw(w) << n;
    out << '\n';
    for (std::size_t a = 0; a < report.overlap.size(); ++a) {
        out << std::left << std::setw(w) << (a < names.size() ? names[a] : std::to_string(a));
        for (double v : report.overlap[a]) {
            std::ostringstream s;
            s << std::fixed << std::setprecision(1) << v;
            out << std::right << std::setw(w) << s.str();
        }
        out << '\n';
    }
    out << "\ncorrect models  items\n";
    for (std::size_t k = 0; k < report.histogram.size(); ++k) out << std::setw(14) << k << std::setw(7) << report.histogram[k] << '\n';
}

void write_overlap_csv(std::ostream& out, std::span<const std::string> names, const MisclassificationReport& report) {
    out << "model";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (std::size_t a = 0; a < report.overlap.size(); ++a) {
        out << (a < names.size() ? names[a] : std::to_string(a));
        for (double v : report.overlap[a]) out << ',' << std::fixed << std::setprecision(4) << v;
        out << '\n';
    }
}

void write_predictions_jsonl(std::ostream& out, std::span<const PredictionRecord> records) {
    for (const auto& r : records) {
        json probs = json::object();
        for (Level l : kAllLevels) probs[std::string(1, level_letter(l))] = r.probabilities[index_of(l)];
        json j{{"id", r.id}, {"probabilities", probs}, {"predicted", labels_to_json(r.predicted)}, {"gold", labels_to_json(r.gold)}};
        out << j.dump() << '\n';
    }
}

std::vector<PredictionRecord> read_predictions_jsonl(std::istream& in) {
    std::vector<PredictionRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            PredictionRecord r;
            r.id = j.value("id", std::to_string(lineno));
            if (j.contains("probabilities")) {
                for (Level l : kAllLevels) r.probabilities[index_of(l)] = j.at("probabilities").value(std::string(1, level_letter(l)), 0.0);
            }
            r.predicted = labels_from_json(j.at("predicted"));
            r.gold = labels_from_json(j.at("gold"));
            out.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw DataError("predictions line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

void write_thresholds_json(std::ostream& out, const ThresholdSet& thresholds) {
    json j = json::object();
    for (Level l : kAllLevels) j[std::string(1, level_letter(l))] = thresholds[index_of(l)];
    out << j.dump(2) << '\n';
}

ThresholdSet read_thresholds_json(std::istream& in) {
    ThresholdSet t{};
    try {
        const json j = json::parse(in);
        for (Level l : kAllLevels) t[index_of(l)] = j.at(std::string(1, level_letter(l))).get<double>();
    } catch (const json::exception& e) {
        throw DataError(std::string("thresholds file: ") + e.what());
    }
    return t;
}

}  // namespace civic::eval
