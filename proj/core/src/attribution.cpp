#include "civic/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "civic/error.hpp"
#include "civic/rng.hpp"

namespace civic::attribution {

void AttributionConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("integration steps must be >= 1");
}

double IgResult::residual() const { return std::abs(total() - (f_input - f_baseline)); }

IgResult integrated_gradients(const ValueAndGradient& f, const Matrix& input, const Matrix& baseline, int steps, Rule rule) {
    if (steps < 1) throw std::invalid_argument("integration steps must be >= 1");
    if (input.rows() != baseline.rows() || input.cols() != baseline.cols()) throw std::invalid_argument("input and baseline shapes differ");
    const Matrix delta = input - baseline;
    Matrix grad_sum = Matrix::Zero(input.rows(), input.cols());
    const double offset = rule == Rule::Midpoint ? 0.5 : 1.0;
    for (int k = 1; k <= steps; ++k) {
        const double alpha = (static_cast<double>(k) - offset) / static_cast<double>(steps);
        const auto g = f(baseline + alpha * delta);
        if (!g.gradient.allFinite()) throw NumericError("non-finite gradient at integration step " + std::to_string(k));
        grad_sum += g.gradient;
    }
    IgResult r;
    r.attributions = delta.cwiseProduct(grad_sum) / static_cast<double>(steps);
    r.f_input = f(input).value;
    r.f_baseline = f(baseline).value;
    return r;
}

Matrix baseline_for(const neural::EncoderModel& model, const tokenizer::TokenSequence& seq, BaselineKind kind) {
    const std::size_t len = std::min(seq.attention_length, seq.ids.size());
    if (kind == BaselineKind::ZeroEmbedding) return Matrix::Zero(static_cast<Eigen::Index>(len), model.config.embed_dim);
    const tokenizer::SpecialIds sp;
    std::vector<tokenizer::TokenId> ids(len, sp.pad);
    if (len > 0) ids.front() = sp.bos;
    if (len > 1) ids.back() = sp.eos;
    return neural::embed(model, ids);
}

IgResult integrated_gradients(const neural::EncoderModel& model, const tokenizer::TokenSequence& seq, const AttributionConfig& config) {
    config.validate();
    const std::size_t len = std::min(seq.attention_length, seq.ids.size());
    if (len == 0) throw std::invalid_argument("cannot attribute an empty sequence");
    const std::span<const tokenizer::TokenId> ids(seq.ids.data(), len);
    const Matrix x = neural::embed(model, ids);
    const Matrix baseline = baseline_for(model, seq, config.baseline);
    const std::vector<char> active(len, 1);
    const std::size_t label = index_of(config.target);
    const ValueAndGradient f = [&](const Matrix& e) { return neural::cls_logit_input_gradient(model, e, active, label); };
    return integrated_gradients(f, x, baseline, config.steps, config.rule);
}

std::vector<double> token_scores(const Matrix& attributions) {
    std::vector<double> out(static_cast<std::size_t>(attributions.rows()));
    for (Eigen::Index i = 0; i < attributions.rows(); ++i) out[static_cast<std::size_t>(i)] = attributions.row(i).sum();
    return out;
}

TokenAttributionList token_attributions(const IgResult& result, std::span<const std::string> texts) {
    const auto scores = token_scores(result.attributions);
    if (texts.size() != scores.size()) throw std::invalid_argument("token text count does not match attribution rows");
    TokenAttributionList out;
    out.residual = result.residual();
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) throw NumericError("non-finite attribution at position " + std::to_string(i));
        out.tokens.push_back({texts[i], i, scores[i]});
    }
    return out;
}

std::vector<RankedToken> rank_totals(const std::map<std::string, double>& totals, std::size_t k) {
    std::vector<RankedToken> ranked;
    for (const auto& [tok, s] : totals) ranked.push_back({tok, s});
    std::stable_sort(ranked.begin(), ranked.end(), [](const RankedToken& a, const RankedToken& b) { return a.score > b.score; });
    if (ranked.size() > k) ranked.resize(k);
    return ranked;
}

TopTokens top_tokens_per_class(const neural::EncoderModel& model, const tokenizer::Vocab& vocab, std::span<const ingest::EvidenceItem> items,
                               std::size_t k, AttributionConfig config) {
    if (items.empty()) throw std::invalid_argument("top-token ranking needs at least one item");
    TopTokens top;
    for (Level level : kAllLevels) {
        config.target = level;
        std::map<std::string, double> totals;
        for (const auto& item : items) {
            if (!item.labels.test(level)) continue;
            const auto seq = tokenizer::encode(vocab, item.abstract, static_cast<std::size_t>(model.config.context_width));
            const auto ig = integrated_gradients(model, seq, config);
            const auto scores = token_scores(ig.attributions);
            for (std::size_t i = 0; i < scores.size(); ++i) {
                if (vocab.is_special(seq.ids[i])) continue;
                totals[vocab.token(seq.ids[i])] += scores[i];
            }
        }
        top[index_of(level)] = rank_totals(totals, k);
    }
    return top;
}

void write_top_tokens_table(std::ostream& out, const TopTokens& top) {
    std::size_t rows = 0, width = 8;
    for (const auto& col : top) {
        rows = std::max(rows, col.size());
        for (const auto& t : col) width = std::max(width, t.token.size() + 4);
    }
    const int w = static_cast<int>(width);
    out << std::left << std::setw(6) << "rank";
    for (Level l : kAllLevels) out << std::setw(w) << std::string(1, level_letter(l));
    out << '\n';
    for (std::size_t r = 0; r < rows; ++r) {
        out << std::setw(6) << (std::to_string(r + 1) + ".");
        for (const auto& col : top) out << std::setw(w) << (r < col.size() ? col[r].token : std::string());
        out << '\n';
    }
}

neural::InputGradient ToyMlp::operator()(const Matrix& x) const {
    const Matrix pre = x * w1 + b1;
    const Matrix act = pre.array().tanh().matrix();
    neural::InputGradient out;
    out.value = (act * w2)(0, 0) + b2;
    const Matrix dpre = (w2.transpose().array() * (1.0 - act.array().square())).matrix();
    out.gradient = dpre * w1.transpose();
    return out;
}

ToyMlp ToyMlp::random(std::size_t inputs, std::size_t hidden, std::uint64_t seed) {
    Rng rng(seed);
    const auto fill = [&](Matrix& m, double scale) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    };
    ToyMlp t;
    t.w1.resize(static_cast<Eigen::Index>(inputs), static_cast<Eigen::Index>(hidden));
    t.b1.resize(1, static_cast<Eigen::Index>(hidden));
    t.w2.resize(static_cast<Eigen::Index>(hidden), 1);
    fill(t.w1, 1.0 / std::sqrt(static_cast<double>(inputs)));
    fill(t.b1, 0.1);
    fill(t.w2, 1.0 / std::sqrt(static_cast<double>(hidden)));
    t.b2 = 0.1 * rng.normal();
    return t;
}

AxiomReport axiom_suite(const ToyFactory& factory, std::uint64_t seed, int steps) {
    AxiomReport report;
    Rng rng(Rng::derive(seed, 7));
    ToyMlp net = factory(seed);
    const auto d = net.w1.rows();
    const auto h = net.w1.cols();
    if (d < 2 || h < 2) throw std::invalid_argument("axiom suite needs at least two inputs and two hidden units");
    Matrix x(1, d);
    for (Eigen::Index i = 0; i < d; ++i) x(0, i) = rng.normal();

    // Sensitivity (a): baseline equals the input except in feature 0.
    {
        Matrix baseline = x;
        baseline(0, 0) = x(0, 0) + 2.0;
        const auto r = integrated_gradients(net, x, baseline, steps);
        report.sensitivity_a = r.attributions(0, 0);
        const bool outputs_differ = std::abs(r.f_input - r.f_baseline) > 1e-9;
        report.sensitivity_a_ok = outputs_differ && std::abs(report.sensitivity_a) > 0.0;
    }
    // Sensitivity (b): the last feature has no outgoing weights.
    {
        ToyMlp dead = net;
        dead.w1.row(d - 1).setZero();
        const auto r = integrated_gradients(dead, x, Matrix::Zero(1, d), steps);
        report.sensitivity_b = std::abs(r.attributions(0, d - 1));
        report.sensitivity_b_ok = report.sensitivity_b <= 1e-10;
    }
    // Implementation invariance: reversing the hidden units gives the same function.
    {
        ToyMlp twin = net;
        for (Eigen::Index j = 0; j < h; ++j) {
            twin.w1.col(j) = net.w1.col(h - 1 - j);
            twin.b1(0, j) = net.b1(0, h - 1 - j);
            twin.w2(j, 0) = net.w2(h - 1 - j, 0);
        }
        const Matrix baseline = Matrix::Zero(1, d);
        const auto a = integrated_gradients(net, x, baseline, steps);
        const auto b = integrated_gradients(twin, x, baseline, steps);
        report.invariance_max_diff = (a.attributions - b.attributions).cwiseAbs().maxCoeff();
        report.invariance_ok = report.invariance_max_diff <= 1e-8;
    }
    return report;
}

}  // namespace civic::attribution
