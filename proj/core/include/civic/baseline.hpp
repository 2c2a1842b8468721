#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "civic/labels.hpp"

namespace civic::baseline {

/// (feature index, value) pairs sorted by index.
using SparseVector = std::vector<std::pair<std::uint32_t, double>>;

/// Unigram and bigram terms of a text, using the tokenizer's word split
/// with punctuation-only words dropped. Bigrams are "w1 w2".
std::vector<std::string> ngram_terms(std::string_view text);

class TfidfModel {
public:
    TfidfModel() = default;
    TfidfModel(std::vector<std::string> features, std::vector<std::size_t> doc_freq, std::size_t doc_count);

    std::size_t dimension() const noexcept { return features_.size(); }
    std::size_t document_count() const noexcept { return doc_count_; }
    const std::vector<std::string>& features() const noexcept { return features_; }
    const std::vector<std::size_t>& document_frequencies() const noexcept { return doc_freq_; }
    const std::vector<double>& idf() const noexcept { return idf_; }
    std::optional<std::uint32_t> index_of(std::string_view term) const;

private:
    std::vector<std::string> features_;
    std::vector<std::size_t> doc_freq_;
    std::vector<double> idf_;
    std::unordered_map<std::string, std::uint32_t> index_;
    std::size_t doc_count_{0};
};

/// Smoothed idf: ln((1 + D) / (1 + df)) + 1. Features are sorted lexicographically.
TfidfModel fit_tfidf(std::span<const std::string> train_texts);

/// Raw term counts times idf, L2-normalized. Terms outside the fitted vocabulary are dropped.
SparseVector transform(const TfidfModel& model, std::string_view text);

struct BinaryLogistic {
    std::vector<double> weights;
    double bias{0.0};
};

struct OvrOptions {
    double reg{1.0};
    double grad_tol{1e-6};
    int max_iterations{20000};
};

struct ClassTrainReport {
    int iterations{0};
    double final_grad_norm{0.0};
    bool converged{false};
    bool degenerate{false};
    std::vector<double> loss_trace;
};

class OvrLogisticModel {
public:
    OvrLogisticModel() = default;
    OvrLogisticModel(std::array<BinaryLogistic, kNumLevels> classes, double reg);

    std::size_t dimension() const noexcept { return classes_[0].weights.size(); }
    double regularization() const noexcept { return reg_; }
    const BinaryLogistic& classifier(Level level) const noexcept { return classes_[index_of(level)]; }
    const std::array<BinaryLogistic, kNumLevels>& classifiers() const noexcept { return classes_; }

private:
    std::array<BinaryLogistic, kNumLevels> classes_{};
    double reg_{1.0};
};

double sigmoid(double z) noexcept;

/// Fits one L2-regularized logistic regression per level on
///   J(w, b) = (1/N) [ sum_i logloss_i + (reg/2) |w|^2 ]
/// by full-batch gradient descent with backtracking (Armijo) line search.
OvrLogisticModel train_ovr(std::span<const SparseVector> features, std::span<const LabelVector> labels, std::size_t dimension,
                           const OvrOptions& options = {}, std::array<ClassTrainReport, kNumLevels>* reports = nullptr);

/// sigmoid(w . x + b) per level. Throws std::invalid_argument when x has an index outside the model dimension.
std::array<double, kNumLevels> predict_proba(const OvrLogisticModel& model, const SparseVector& x);
std::array<double, kNumLevels> predict_proba(const OvrLogisticModel& model, std::span<const double> dense);

struct BaselineModel {
    TfidfModel tfidf;
    OvrLogisticModel classifier;
};

/// tf-idf fitted on the training texts, then one-vs-rest logistic regression.
BaselineModel fit_baseline(std::span<const std::string> texts, std::span<const LabelVector> labels, const OvrOptions& options = {},
                           std::array<ClassTrainReport, kNumLevels>* reports = nullptr);

std::array<double, kNumLevels> predict_proba(const BaselineModel& model, std::string_view text);

/// {"features": [...], "document_frequencies": [...], "document_count": D, "idf": [...],
///  "reg": r, "classes": {"A": {"weights": [...], "bias": b}, ...}}
void save_baseline(std::ostream& out, const BaselineModel& model);
BaselineModel load_baseline(std::istream& in);

}  // namespace civic::baseline
