#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "civic/labels.hpp"

namespace civic::eval {

/// Per-class probabilities of one item.
using Scores = std::array<double, kNumLevels>;
using ThresholdSet = std::array<double, kNumLevels>;

inline constexpr double kDefaultThreshold = 0.5;

struct PrPoint {
    double threshold{0.0};
    double precision{0.0};
    double recall{0.0};
    double f1{0.0};
};

/// One point per distinct score, ascending by threshold. At threshold t the
/// items with score > t are predicted positive.
std::vector<PrPoint> pr_curve(std::span<const double> scores, const std::vector<bool>& labels);

/// Best-F1 threshold among the distinct scores and 0.5; ties go to the larger threshold.
/// Returns 0.5 with a warning when the class has no positives.
double calibrate_threshold(std::span<const double> scores, const std::vector<bool>& labels);

ThresholdSet calibrate_thresholds(std::span<const Scores> scores, std::span<const LabelVector> labels);

/// Positive iff probability > threshold.
std::vector<LabelVector> apply_thresholds(std::span<const Scores> scores, const ThresholdSet& thresholds);

struct ClassCounts {
    std::size_t tp{0}, fp{0}, fn{0}, tn{0};
    std::size_t total() const { return tp + fp + fn + tn; }
};

struct ConfusionCounts {
    std::array<ClassCounts, kNumLevels> classes{};
};

ConfusionCounts confusion(std::span<const LabelVector> predicted, std::span<const LabelVector> gold);

struct MetricsReport {
    std::array<double, kNumLevels> precision{};
    std::array<double, kNumLevels> recall{};
    std::array<double, kNumLevels> f1{};
    std::array<std::size_t, kNumLevels> support{};
    std::array<double, kNumLevels> weights{};
    double weighted_f1{0.0};
};

MetricsReport metrics_from_counts(const ConfusionCounts& counts);
MetricsReport compute_metrics(std::span<const LabelVector> predicted, std::span<const LabelVector> gold);

/// Support-weighted mean of per-class F1. Zero total support gives 0 and a warning.
double weighted_f1(const std::array<double, kNumLevels>& f1, const std::array<std::size_t, kNumLevels>& support);

struct Distribution {
    double min{0.0}, median{0.0}, max{0.0};
};

struct SeedAggregate {
    MetricsReport mean;
    std::array<Distribution, kNumLevels> f1;
    Distribution weighted_f1;
    std::vector<double> weighted_f1_values;
};

SeedAggregate aggregate_seeds(std::span<const MetricsReport> reports);

struct MisclassificationReport {
    /// overlap[i][j] = 100 * |E_i ∩ E_j| / |E_i ∪ E_j| over the error sets; 100 when both are empty.
    std::vector<std::vector<double>> overlap;
    /// Per item, how many models predicted all five slots correctly.
    std::vector<std::size_t> correct_models;
    /// histogram[k] = number of items that exactly k models got right.
    std::vector<std::size_t> histogram;
};

MisclassificationReport misclassification_analysis(std::span<const std::vector<LabelVector>> predictions, std::span<const LabelVector> gold);

// --- reports -----------------------------------------------------------------

struct NamedReport {
    std::string name;
    MetricsReport report;
};

/// Columns: model, F1_A..F1_E, weighted_F1 (percent).
void write_metrics_csv(std::ostream& out, std::span<const NamedReport> rows);
void write_metrics_table(std::ostream& out, std::span<const NamedReport> rows);

/// One row per seed plus min/median/max rows, for box-plot rendering.
void write_seed_distribution_csv(std::ostream& out, std::span<const MetricsReport> reports);

void write_overlap_table(std::ostream& out, std::span<const std::string> model_names, const MisclassificationReport& report);
void write_overlap_csv(std::ostream& out, std::span<const std::string> model_names, const MisclassificationReport& report);

struct PredictionRecord {
    std::string id;
    Scores probabilities{};
    LabelVector predicted;
    LabelVector gold;
};

void write_predictions_jsonl(std::ostream& out, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_predictions_jsonl(std::istream& in);

void write_thresholds_json(std::ostream& out, const ThresholdSet& thresholds);
ThresholdSet read_thresholds_json(std::istream& in);

}  // namespace civic::eval
