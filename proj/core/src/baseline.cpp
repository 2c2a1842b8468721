#include "civic/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "civic/error.hpp"
#include "civic/log.hpp"
#include "civic/tokenizer.hpp"

namespace civic::baseline {
namespace {

bool punctuation_only(const std::string& word) {
    return std::all_of(word.begin(), word.end(), [](char c) {
        const auto u = static_cast<unsigned char>(c);
        return u < 128 && std::ispunct(u);
    });
}

// Per-class training data in dense-label form.
struct Problem {
    std::span<const SparseVector> x;
    std::vector<double> y;
    std::size_t dim;
    double reg;
};

double dot(const SparseVector& x, const std::vector<double>& w) {
    double s = 0.0;
    for (const auto& [i, v] : x) s += w[i] * v;
    return s;
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double objective(const Problem& p, const std::vector<double>& w, double b) {
    const double n = static_cast<double>(p.x.size());
    double loss = 0.0;
    for (std::size_t i = 0; i < p.x.size(); ++i) {
        const double z = dot(p.x[i], w) + b;
        loss += softplus(z) - p.y[i] * z;
    }
    double norm2 = 0.0;
    for (double v : w) norm2 += v * v;
    return (loss + 0.5 * p.reg * norm2) / n;
}

double gradient(const Problem& p, const std::vector<double>& w, double b, std::vector<double>& gw, double& gb) {
    const double n = static_cast<double>(p.x.size());
    std::fill(gw.begin(), gw.end(), 0.0);
    gb = 0.0;
    double loss = 0.0;
    for (std::size_t i = 0; i < p.x.size(); ++i) {
        const double z = dot(p.x[i], w) + b;
        loss += softplus(z) - p.y[i] * z;
        const double r = sigmoid(z) - p.y[i];
        for (const auto& [j, v] : p.x[i]) gw[j] += r * v;
        gb += r;
    }
    double norm2 = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        gw[j] = (gw[j] + p.reg * w[j]) / n;
        norm2 += w[j] * w[j];
    }
    gb /= n;
    return (loss + 0.5 * p.reg * norm2) / n;
}

BinaryLogistic fit_binary(const Problem& p, const OvrOptions& opt, ClassTrainReport& report) {
    std::vector<double> w(p.dim, 0.0), gw(p.dim, 0.0), w_prev, gw_prev;
    double b = 0.0, gb = 0.0, b_prev = 0.0, gb_prev = 0.0;
    double j = gradient(p, w, b, gw, gb);
    report.loss_trace.push_back(j);

    const auto grad_norm = [&] {
        double s = gb * gb;
        for (double g : gw) s += g * g;
        return std::sqrt(s);
    };

    double step = 1.0;
    std::vector<double> w_try(p.dim);
    for (int it = 0; it < opt.max_iterations; ++it) {
        const double gnorm = grad_norm();
        report.final_grad_norm = gnorm;
        report.iterations = it;
        if (gnorm < opt.grad_tol) {
            report.converged = true;
            return {std::move(w), b};
        }
        if (it > 0) {
            // Barzilai-Borwein trial step, then backtrack until the Armijo condition holds.
            double ss = (b - b_prev) * (b - b_prev), sy = (b - b_prev) * (gb - gb_prev);
            for (std::size_t k = 0; k < p.dim; ++k) {
                const double s = w[k] - w_prev[k];
                ss += s * s;
                sy += s * (gw[k] - gw_prev[k]);
            }
            step = (sy > 0.0 && std::isfinite(ss / sy)) ? std::clamp(ss / sy, 1e-10, 1e10) : 1.0;
        }
        const double g2 = gnorm * gnorm;
        double j_try = 0.0, b_try = 0.0;
        for (int backtrack = 0;; ++backtrack) {
            for (std::size_t k = 0; k < p.dim; ++k) w_try[k] = w[k] - step * gw[k];
            b_try = b - step * gb;
            j_try = objective(p, w_try, b_try);
            if (j_try <= j - 1e-4 * step * g2) break;
            step *= 0.5;
            if (backtrack > 60) {
                // No representable descent left; the gradient is at round-off level.
                report.final_grad_norm = gnorm;
                return {std::move(w), b};
            }
        }
        w_prev = w;
        gw_prev = gw;
        b_prev = b;
        gb_prev = gb;
        w.swap(w_try);
        b = b_try;
        j = gradient(p, w, b, gw, gb);
        report.loss_trace.push_back(j);
    }
    report.final_grad_norm = grad_norm();
    report.iterations = opt.max_iterations;
    report.converged = report.final_grad_norm < opt.grad_tol;
    return {std::move(w), b};
}

}  // namespace

double sigmoid(double z) noexcept {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

std::vector<std::string> ngram_terms(std::string_view text) {
    std::vector<std::string> words;
    for (auto& w : tokenizer::pretokenize(text)) {
        if (!punctuation_only(w)) words.push_back(std::move(w));
    }
    std::vector<std::string> terms = words;
    for (std::size_t i = 0; i + 1 < words.size(); ++i) terms.push_back(words[i] + " " + words[i + 1]);
    return terms;
}

TfidfModel::TfidfModel(std::vector<std::string> features, std::vector<std::size_t> doc_freq, std::size_t doc_count)
    : features_(std::move(features)), doc_freq_(std::move(doc_freq)), doc_count_(doc_count) {
    if (features_.size() != doc_freq_.size()) throw DataError("tf-idf feature and frequency lists differ in length");
    idf_.resize(features_.size());
    for (std::size_t i = 0; i < features_.size(); ++i) {
        idf_[i] = std::log((1.0 + static_cast<double>(doc_count_)) / (1.0 + static_cast<double>(doc_freq_[i]))) + 1.0;
        index_.emplace(features_[i], static_cast<std::uint32_t>(i));
    }
}

std::optional<std::uint32_t> TfidfModel::index_of(std::string_view term) const {
    const auto it = index_.find(std::string(term));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TfidfModel fit_tfidf(std::span<const std::string> train_texts) {
    if (train_texts.empty()) throw DataError("cannot fit tf-idf on an empty corpus");
    std::map<std::string, std::size_t> df;
    for (const auto& text : train_texts) {
        auto terms = ngram_terms(text);
        std::sort(terms.begin(), terms.end());
        terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
        for (auto& t : terms) ++df[std::move(t)];
    }
    std::vector<std::string> features;
    std::vector<std::size_t> freqs;
    features.reserve(df.size());
    freqs.reserve(df.size());
    for (auto& [term, f] : df) {
        features.push_back(term);
        freqs.push_back(f);
    }
    return TfidfModel(std::move(features), std::move(freqs), train_texts.size());
}

SparseVector transform(const TfidfModel& model, std::string_view text) {
    std::map<std::uint32_t, double> counts;
    for (const auto& term : ngram_terms(text)) {
        if (auto idx = model.index_of(term)) counts[*idx] += 1.0;
    }
    SparseVector out;
    out.reserve(counts.size());
    double norm2 = 0.0;
    for (const auto& [idx, count] : counts) {
        const double v = count * model.idf()[idx];
        out.emplace_back(idx, v);
        norm2 += v * v;
    }
    if (norm2 > 0.0) {
        const double inv = 1.0 / std::sqrt(norm2);
        for (auto& [idx, v] : out) v *= inv;
    }
    return out;
}

OvrLogisticModel::OvrLogisticModel(std::array<BinaryLogistic, kNumLevels> classes, double reg)
    : classes_(std::move(classes)), reg_(reg) {
    for (const auto& c : classes_) {
        if (c.weights.size() != classes_[0].weights.size()) throw DataError("per-class weight vectors differ in dimension");
    }
}

OvrLogisticModel train_ovr(std::span<const SparseVector> features, std::span<const LabelVector> labels, std::size_t dimension,
                           const OvrOptions& options, std::array<ClassTrainReport, kNumLevels>* reports) {
    if (features.size() != labels.size()) throw std::invalid_argument("feature rows and labels differ in count");
    if (features.empty()) throw DataError("cannot train on zero rows");
    if (!(options.reg > 0.0)) throw std::invalid_argument("regularization strength must be positive");
    for (const auto& row : features)
        for (const auto& [idx, v] : row)
            if (idx >= dimension) throw std::invalid_argument("feature index exceeds declared dimension");

    std::array<BinaryLogistic, kNumLevels> classes;
    std::array<ClassTrainReport, kNumLevels> local;
    for (Level level : kAllLevels) {
        const auto c = index_of(level);
        Problem p{features, std::vector<double>(labels.size()), dimension, options.reg};
        std::size_t positives = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
            p.y[i] = labels[i].test(level) ? 1.0 : 0.0;
            positives += labels[i].test(level) ? 1 : 0;
        }
        if (positives == 0 || positives == labels.size()) {
            local[c].degenerate = true;
            log::warn(std::string("class ") + level_letter(level) + " is " + (positives == 0 ? "all-negative" : "all-positive") +
                      " in training data; fitting anyway");
        }
        classes[c] = fit_binary(p, options, local[c]);
        if (!local[c].converged) {
            log::warn(std::string("class ") + level_letter(level) + " stopped at gradient norm " + std::to_string(local[c].final_grad_norm));
        }
    }
    if (reports) *reports = std::move(local);
    return OvrLogisticModel(std::move(classes), options.reg);
}

std::array<double, kNumLevels> predict_proba(const OvrLogisticModel& model, const SparseVector& x) {
    for (const auto& [idx, v] : x)
        if (idx >= model.dimension()) throw std::invalid_argument("feature index " + std::to_string(idx) + " exceeds model dimension");
    std::array<double, kNumLevels> out{};
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        const auto& clf = model.classifiers()[c];
        out[c] = sigmoid(dot(x, clf.weights) + clf.bias);
    }
    return out;
}

std::array<double, kNumLevels> predict_proba(const OvrLogisticModel& model, std::span<const double> dense) {
    if (dense.size() != model.dimension())
        throw std::invalid_argument("feature vector has dimension " + std::to_string(dense.size()) + ", model expects " +
                                    std::to_string(model.dimension()));
    std::array<double, kNumLevels> out{};
    for (std::size_t c = 0; c < kNumLevels; ++c) {
        const auto& clf = model.classifiers()[c];
        out[c] = sigmoid(std::inner_product(dense.begin(), dense.end(), clf.weights.begin(), 0.0) + clf.bias);
    }
    return out;
}

void save_baseline(std::ostream& out, const BaselineModel& model) {
    nlohmann::ordered_json j;
    j["features"] = model.tfidf.features();
    j["document_frequencies"] = model.tfidf.document_frequencies();
    j["document_count"] = model.tfidf.document_count();
    j["idf"] = model.tfidf.idf();
    j["reg"] = model.classifier.regularization();
    nlohmann::ordered_json classes = nlohmann::ordered_json::object();
    for (Level l : kAllLevels) {
        const auto& clf = model.classifier.classifier(l);
        classes[std::string(1, level_letter(l))] = {{"weights", clf.weights}, {"bias", clf.bias}};
    }
    j["classes"] = std::move(classes);
    out << j.dump() << '\n';
}

BaselineModel load_baseline(std::istream& in) {
    nlohmann::json j;
    try {
        in >> j;
        BaselineModel m;
        m.tfidf = TfidfModel(j.at("features").get<std::vector<std::string>>(),
                             j.at("document_frequencies").get<std::vector<std::size_t>>(), j.at("document_count").get<std::size_t>());
        std::array<BinaryLogistic, kNumLevels> classes;
        for (Level l : kAllLevels) {
            const auto& c = j.at("classes").at(std::string(1, level_letter(l)));
            classes[index_of(l)] = {c.at("weights").get<std::vector<double>>(), c.at("bias").get<double>()};
            if (classes[index_of(l)].weights.size() != m.tfidf.dimension()) throw DataError("classifier dimension does not match tf-idf features");
        }
        m.classifier = OvrLogisticModel(std::move(classes), j.at("reg").get<double>());
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed baseline model: ") + e.what());
    }
}

BaselineModel fit_baseline(std::span<const std::string> texts, std::span<const LabelVector> labels, const OvrOptions& options,
                           std::array<ClassTrainReport, kNumLevels>* reports) {
    if (texts.size() != labels.size()) throw std::invalid_argument("texts and labels differ in length");
    BaselineModel m;
    m.tfidf = fit_tfidf(texts);
    std::vector<SparseVector> features;
    features.reserve(texts.size());
    for (const auto& t : texts) features.push_back(transform(m.tfidf, t));
    m.classifier = train_ovr(features, labels, m.tfidf.dimension(), options, reports);
    return m;
}

std::array<double, kNumLevels> predict_proba(const BaselineModel& model, std::string_view text) {
    return predict_proba(model.classifier, transform(model.tfidf, text));
}

}  // namespace civic::baseline
