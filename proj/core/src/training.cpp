#include "civic/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "civic/error.hpp"

namespace civic::training {
namespace {

using neural::Matrix;

bool is_content(tokenizer::TokenId id) { return id >= static_cast<tokenizer::TokenId>(tokenizer::kNumSpecial); }

template <class F>
void zip_tensors(Parameters& a, const Parameters& b, F&& f) {
    std::vector<const Matrix*> rhs;
    b.for_each([&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
    std::size_t i = 0;
    a.for_each([&](const std::string&, Matrix& m) { f(m, *rhs[i++]); });
}

void add_scaled(Parameters& into, const Parameters& g, double scale) {
    zip_tensors(into, g, [scale](Matrix& a, const Matrix& b) { a.noalias() += scale * b; });
}

}  // namespace

void MaskingPolicy::validate() const {
    const auto unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!unit(mask_rate) || !unit(random_rate) || !unit(revert_rate)) throw std::invalid_argument("masking rates must lie in [0, 1]");
    if (random_rate + revert_rate > 1.0) throw std::invalid_argument("random_rate + revert_rate must not exceed 1");
}

MaskedSequence mask_tokens(const TokenSequence& seq, const MaskingPolicy& policy, int vocab_size, Rng& rng) {
    policy.validate();
    const auto num_special = static_cast<int>(tokenizer::kNumSpecial);
    if (vocab_size <= num_special) throw std::invalid_argument("vocabulary has no content tokens to draw replacements from");
    MaskedSequence out{seq, {}, {}};
    const std::size_t active = std::min(seq.attention_length, seq.ids.size());
    for (std::size_t i = 0; i < active; ++i) {
        if (!is_content(seq.ids[i])) continue;
        if (!rng.bernoulli(policy.mask_rate)) continue;
        out.targets.positions.push_back(i);
        out.targets.target_ids.push_back(seq.ids[i]);
        const double u = rng.uniform01();
        if (u < policy.random_rate) {
            out.actions.push_back(MaskAction::Random);
            out.sequence.ids[i] = num_special + static_cast<tokenizer::TokenId>(rng.uniform_index(static_cast<std::uint64_t>(vocab_size - num_special)));
        } else if (u < policy.random_rate + policy.revert_rate) {
            out.actions.push_back(MaskAction::Revert);
        } else {
            out.actions.push_back(MaskAction::Mask);
            out.sequence.ids[i] = tokenizer::SpecialIds{}.mask;
        }
    }
    return out;
}

void TrainSchedule::validate() const {
    if (steps < 0 || batch_size < 1 || grad_accumulation < 1 || warmup_steps < 0) throw std::invalid_argument("schedule counts must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (max_grad_norm && !(*max_grad_norm > 0.0)) throw std::invalid_argument("max gradient norm must be positive");
}

double scheduled_learning_rate(const TrainSchedule& s, int step) {
    if (s.decay == DecayKind::Constant) return s.learning_rate;
    if (step < s.warmup_steps) return s.learning_rate * static_cast<double>(step + 1) / static_cast<double>(s.warmup_steps);
    const int decay_span = s.steps - s.warmup_steps;
    if (decay_span <= 0) return s.learning_rate;
    return s.learning_rate * std::max(0.0, static_cast<double>(s.steps - step) / static_cast<double>(decay_span));
}

AdamOptimizer::AdamOptimizer(const Parameters& like, AdamConfig config)
    : config_(config), m_(like.zeros_like()), v_(like.zeros_like()) {}

void AdamOptimizer::step(Parameters& params, const Parameters& gradients, double learning_rate) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    std::vector<Matrix*> ms, vs;
    m_.for_each([&](const std::string&, Matrix& m) { ms.push_back(&m); });
    v_.for_each([&](const std::string&, Matrix& v) { vs.push_back(&v); });
    std::size_t i = 0;
    zip_tensors(params, gradients, [&](Matrix& p, const Matrix& g) {
        Matrix& m = *ms[i];
        Matrix& v = *vs[i];
        ++i;
        m = config_.beta1 * m + (1.0 - config_.beta1) * g;
        v = config_.beta2 * v + (1.0 - config_.beta2) * g.cwiseAbs2();
        p.array() -= learning_rate * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.epsilon);
    });
}

double global_grad_norm(const Parameters& gradients) {
    double s = 0.0;
    gradients.for_each([&](const std::string&, const Matrix& g) { s += g.squaredNorm(); });
    return std::sqrt(s);
}

double clip_grad_norm(Parameters& gradients, double max_norm) {
    const double norm = global_grad_norm(gradients);
    if (norm > max_norm) {
        const double scale = max_norm / norm;
        gradients.for_each([&](const std::string&, Matrix& g) { g *= scale; });
    }
    return norm;
}

PretrainResult pretrain_mlm(EncoderModel& model, std::span<const TokenSequence> corpus, const TrainSchedule& schedule, const MaskingPolicy& policy) {
    schedule.validate();
    policy.validate();
    PretrainResult result;
    if (schedule.steps == 0) return result;
    if (corpus.empty()) throw DataError("pretraining corpus is empty");
    const bool any_content = std::any_of(corpus.begin(), corpus.end(), [](const TokenSequence& s) {
        return std::any_of(s.ids.begin(), s.ids.begin() + static_cast<std::ptrdiff_t>(std::min(s.attention_length, s.ids.size())), is_content);
    });
    if (!any_content || policy.mask_rate <= 0.0) throw DataError("pretraining corpus has no maskable content tokens");

    Rng rng(schedule.seed);
    AdamOptimizer adam(model.params);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    std::size_t cursor = 0;
    const auto next_index = [&] {
        if (cursor == order.size()) {
            rng.shuffle(std::span<std::size_t>(order));
            cursor = 0;
        }
        return order[cursor++];
    };

    for (int step = 0; step < schedule.steps; ++step) {
        Parameters accumulated = model.params.zeros_like();
        double step_loss = 0.0;
        for (int micro = 0; micro < schedule.grad_accumulation; ++micro) {
            std::vector<TokenSequence> batch;
            std::vector<neural::MlmTargets> targets;
            std::size_t masked = 0;
            while (masked == 0) {
                batch.clear();
                targets.clear();
                for (int b = 0; b < schedule.batch_size; ++b) {
                    auto m = mask_tokens(corpus[next_index()], policy, model.config.vocab_size, rng);
                    masked += m.targets.positions.size();
                    batch.push_back(std::move(m.sequence));
                    targets.push_back(std::move(m.targets));
                }
            }
            neural::GradientResult gr;
            try {
                gr = neural::backward_mlm(model, batch, targets);
            } catch (const NumericError& e) {
                throw NumericError("pretraining diverged at step " + std::to_string(step) + ": " + e.what());
            }
            step_loss += gr.loss / schedule.grad_accumulation;
            add_scaled(accumulated, gr.gradients, 1.0 / schedule.grad_accumulation);
        }
        if (!std::isfinite(step_loss)) throw NumericError("pretraining loss became non-finite at step " + std::to_string(step));
        if (schedule.max_grad_norm) clip_grad_norm(accumulated, *schedule.max_grad_norm);
        adam.step(model.params, accumulated, scheduled_learning_rate(schedule, step));
        result.loss_trace.push_back(step_loss);
    }
    return result;
}

double heldout_mlm_loss(const EncoderModel& model, std::span<const TokenSequence> heldout, const MaskingPolicy& policy, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& seq : heldout) {
        const auto masked = mask_tokens(seq, policy, model.config.vocab_size, rng);
        if (masked.targets.positions.empty()) continue;
        const auto enc = neural::forward_encode(model, std::span<const TokenSequence>(&masked.sequence, 1));
        const neural::MlmTargets& t = masked.targets;
        Matrix picked(static_cast<Eigen::Index>(t.positions.size()), enc[0].cols());
        for (std::size_t k = 0; k < t.positions.size(); ++k) picked.row(static_cast<Eigen::Index>(k)) = enc[0].row(static_cast<Eigen::Index>(t.positions[k]));
        const Matrix logits = picked * model.params.mlm_head;
        for (Eigen::Index k = 0; k < logits.rows(); ++k) {
            const double m = logits.row(k).maxCoeff();
            total += m + std::log((logits.row(k).array() - m).exp().sum()) - logits(k, t.target_ids[static_cast<std::size_t>(k)]);
            ++count;
        }
    }
    if (count == 0) throw DataError("held-out set produced no masked positions");
    return total / static_cast<double>(count);
}

EncoderModel extend_context(const EncoderModel& model, int new_width) {
    const int old_width = model.config.context_width;
    if (new_width <= 0 || new_width % old_width != 0) {
        throw std::invalid_argument("new context width " + std::to_string(new_width) + " is not a positive multiple of " + std::to_string(old_width));
    }
    EncoderModel out = model;
    out.config.context_width = new_width;
    const auto& old_table = model.params.position_embedding;
    Matrix table(new_width, old_table.cols());
    for (int copy = 0; copy < new_width / old_width; ++copy) table.middleRows(copy * old_width, old_width) = old_table;
    out.params.position_embedding = std::move(table);
    return out;
}

EncodedSplit encode_split(const tokenizer::Vocab& vocab, const ingest::DatasetSplit& split, std::size_t max_len) {
    const auto encode_all = [&](const std::vector<ingest::EvidenceItem>& items) {
        std::vector<LabeledSequence> out;
        out.reserve(items.size());
        for (const auto& item : items) out.push_back({tokenizer::encode(vocab, item.abstract, max_len), item.labels});
        return out;
    };
    return {encode_all(split.train), encode_all(split.validation), encode_all(split.test)};
}

double dataset_loss(const EncoderModel& model, std::span<const LabeledSequence> data) {
    if (data.empty()) throw DataError("cannot compute the loss of an empty dataset");
    double total = 0.0;
    for (const auto& item : data) {
        const auto enc = neural::forward_encode(model, std::span<const TokenSequence>(&item.sequence, 1));
        total += neural::loss_multilabel(neural::cls_logits(model, enc[0]), item.labels);
    }
    return total / static_cast<double>(data.size());
}

std::vector<std::array<double, kNumLevels>> predict_probabilities(const EncoderModel& model, std::span<const TokenSequence> data) {
    std::vector<std::array<double, kNumLevels>> out;
    out.reserve(data.size());
    for (const auto& seq : data) {
        const auto enc = neural::forward_encode(model, std::span<const TokenSequence>(&seq, 1));
        const auto z = neural::cls_logits(model, enc[0]);
        std::array<double, kNumLevels> p{};
        for (std::size_t c = 0; c < kNumLevels && static_cast<Eigen::Index>(c) < z.size(); ++c)
            p[c] = 1.0 / (1.0 + std::exp(-z(static_cast<Eigen::Index>(c))));
        out.push_back(p);
    }
    return out;
}

std::vector<std::array<double, kNumLevels>> predict_probabilities(const EncoderModel& model, std::span<const LabeledSequence> data) {
    std::vector<TokenSequence> seqs;
    seqs.reserve(data.size());
    for (const auto& d : data) seqs.push_back(d.sequence);
    return predict_probabilities(model, std::span<const TokenSequence>(seqs));
}

FinetuneResult finetune(const EncoderModel& model, const EncodedSplit& split, const FinetuneOptions& options) {
    if (split.validation.empty()) throw DataError("fine-tuning requires a non-empty validation split");
    if (split.train.empty()) throw DataError("fine-tuning requires a non-empty training split");
    if (options.epochs < 0 || options.batch_size < 1) throw std::invalid_argument("epochs must be >= 0 and batch size >= 1");
    if (!(options.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");

    FinetuneResult result{model, 0, 0.0, {}};
    EncoderModel current = model;
    const double initial_val = dataset_loss(current, split.validation);
    result.best_validation_loss = initial_val;
    result.trace.push_back({0, dataset_loss(current, split.train), initial_val});

    AdamOptimizer adam(current.params);
    Rng rng(options.seed);
    std::vector<std::size_t> order(split.train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t batch = static_cast<std::size_t>(options.batch_size);

    for (int epoch = 1; epoch <= options.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(order));
        double train_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t end = std::min(order.size(), start + batch);
            std::vector<TokenSequence> seqs;
            std::vector<LabelVector> labels;
            for (std::size_t k = start; k < end; ++k) {
                seqs.push_back(split.train[order[k]].sequence);
                labels.push_back(split.train[order[k]].labels);
            }
            neural::GradientResult gr;
            try {
                gr = neural::backward_multilabel(current, seqs, labels);
            } catch (const NumericError& e) {
                throw NumericError("fine-tuning diverged in epoch " + std::to_string(epoch) + ": " + e.what());
            }
            if (!std::isfinite(gr.loss)) throw NumericError("fine-tuning loss became non-finite in epoch " + std::to_string(epoch));
            train_loss += gr.loss * static_cast<double>(end - start);
            adam.step(current.params, gr.gradients, options.learning_rate);
        }
        train_loss /= static_cast<double>(order.size());
        const double val = dataset_loss(current, split.validation);
        if (!std::isfinite(val)) throw NumericError("validation loss became non-finite in epoch " + std::to_string(epoch));
        result.trace.push_back({epoch, train_loss, val});
        if (val < result.best_validation_loss) {
            result.best_validation_loss = val;
            result.best_epoch = epoch;
            result.best = current;
        }
    }
    return result;
}

void FinetuneGrid::validate() const {
    if (learning_rates.empty() || batch_sizes.empty() || seeds.empty()) throw std::invalid_argument("hyperparameter grid must be non-empty");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
}

GridResult hyperparam_search(const ModelFactory& factory, const EncodedSplit& split, const FinetuneGrid& grid) {
    grid.validate();
    GridResult result;
    for (int batch : grid.batch_sizes) {
        for (double lr : grid.learning_rates) {
            GridCell cell{lr, batch, {}, 0.0};
            for (std::uint64_t seed : grid.seeds) {
                double best = std::numeric_limits<double>::infinity();
                try {
                    best = finetune(factory(seed), split, {lr, batch, grid.epochs, seed}).best_validation_loss;
                } catch (const NumericError&) {
                }
                cell.best_losses.push_back(best);
            }
            cell.mean_loss = std::accumulate(cell.best_losses.begin(), cell.best_losses.end(), 0.0) / static_cast<double>(cell.best_losses.size());
            result.cells.push_back(std::move(cell));
        }
    }
    for (std::size_t i = 1; i < result.cells.size(); ++i) {
        if (result.cells[i].mean_loss < result.cells[result.best].mean_loss) result.best = i;
    }
    return result;
}

std::string format_grid_table(const GridResult& result) {
    std::vector<double> lrs;
    std::vector<int> batches;
    for (const auto& c : result.cells) {
        if (std::find(lrs.begin(), lrs.end(), c.learning_rate) == lrs.end()) lrs.push_back(c.learning_rate);
        if (std::find(batches.begin(), batches.end(), c.batch_size) == batches.end()) batches.push_back(c.batch_size);
    }
    std::ostringstream out;
    out << std::left << std::setw(12) << "batch\\lr";
    for (double lr : lrs) {
        std::ostringstream h;
        h << std::setprecision(3) << lr;
        out << std::right << std::setw(12) << h.str();
    }
    out << '\n';
    for (int b : batches) {
        out << std::left << std::setw(12) << b;
        for (double lr : lrs) {
            const auto it = std::find_if(result.cells.begin(), result.cells.end(), [&](const GridCell& c) { return c.batch_size == b && c.learning_rate == lr; });
            std::ostringstream v;
            if (it == result.cells.end()) {
                v << "-";
            } else {
                const bool best = static_cast<std::size_t>(it - result.cells.begin()) == result.best;
                if (std::isinf(it->mean_loss)) v << "inf";
                else v << std::fixed << std::setprecision(3) << it->mean_loss;
                if (best) v << '*';
            }
            out << std::right << std::setw(12) << v.str();
        }
        out << '\n';
    }
    return out.str();
}

std::vector<FinetuneResult> multi_seed_run(const ModelFactory& factory, const EncodedSplit& split, double learning_rate, int batch_size,
                                           int epochs, std::span<const std::uint64_t> seeds) {
    std::vector<FinetuneResult> runs;
    runs.reserve(seeds.size());
    for (std::uint64_t seed : seeds) runs.push_back(finetune(factory(seed), split, {learning_rate, batch_size, epochs, seed}));
    return runs;
}

}  // namespace civic::training
