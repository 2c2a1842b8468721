#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "civic/ingest.hpp"
#include "civic/neural.hpp"
#include "civic/rng.hpp"
#include "civic/tokenizer.hpp"

namespace civic::training {

using neural::EncoderModel;
using neural::Parameters;
using tokenizer::TokenSequence;

// --- masking ---------------------------------------------------------------

/// Selection rate and the conditional replacement split of selected tokens:
/// random_rate of them get a random vocabulary token, revert_rate keep the
/// original, the remainder become [MASK].
struct MaskingPolicy {
    double mask_rate{0.15};
    double random_rate{0.10};
    double revert_rate{0.10};

    void validate() const;
};

enum class MaskAction : std::uint8_t { Mask, Random, Revert };

struct MaskedSequence {
    TokenSequence sequence;
    neural::MlmTargets targets;
    std::vector<MaskAction> actions;  // parallel to targets.positions
};

/// Selects content positions independently with probability mask_rate; special tokens are never selected.
/// Random replacements are drawn uniformly from the non-special vocabulary.
MaskedSequence mask_tokens(const TokenSequence& seq, const MaskingPolicy& policy, int vocab_size, Rng& rng);

// --- optimization ----------------------------------------------------------

enum class DecayKind { Constant, LinearWarmupLinearDecay };

struct TrainSchedule {
    int steps{3000};
    int batch_size{8};
    int grad_accumulation{16};
    double learning_rate{3e-4};
    int warmup_steps{500};
    DecayKind decay{DecayKind::LinearWarmupLinearDecay};
    std::optional<double> max_grad_norm{5.0};
    std::uint64_t seed{0};

    void validate() const;
    int effective_batch_size() const { return batch_size * grad_accumulation; }
};

/// Learning rate at a 0-based update step.
double scheduled_learning_rate(const TrainSchedule& schedule, int step);

struct AdamConfig {
    double beta1{0.9};
    double beta2{0.999};
    double epsilon{1e-6};
};

/// Adam without weight decay.
class AdamOptimizer {
public:
    AdamOptimizer(const Parameters& like, AdamConfig config = {});

    void step(Parameters& params, const Parameters& gradients, double learning_rate);
    long steps_taken() const noexcept { return t_; }

private:
    AdamConfig config_;
    Parameters m_;
    Parameters v_;
    long t_{0};
};

double global_grad_norm(const Parameters& gradients);

/// Rescales gradients in place so their global norm is at most max_norm. Returns the norm before clipping.
double clip_grad_norm(Parameters& gradients, double max_norm);

// --- pretraining -----------------------------------------------------------

struct PretrainResult {
    std::vector<double> loss_trace;  // one entry per update step
};

/// MLM pretraining with Adam, the schedule's learning-rate shape, and gradient clipping.
/// Throws NumericError (message includes the step) when the loss becomes non-finite.
PretrainResult pretrain_mlm(EncoderModel& model, std::span<const TokenSequence> corpus, const TrainSchedule& schedule,
                            const MaskingPolicy& policy = {});

/// Mean MLM loss on held-out sequences with masking drawn from `seed`.
double heldout_mlm_loss(const EncoderModel& model, std::span<const TokenSequence> heldout, const MaskingPolicy& policy, std::uint64_t seed);

/// Positional table tiled to new_width by concatenating copies of the current table.
/// Throws std::invalid_argument unless new_width is a positive multiple of the current width.
EncoderModel extend_context(const EncoderModel& model, int new_width);

// --- fine-tuning -----------------------------------------------------------

struct LabeledSequence {
    TokenSequence sequence;
    LabelVector labels;
};

struct EncodedSplit {
    std::vector<LabeledSequence> train;
    std::vector<LabeledSequence> validation;
    std::vector<LabeledSequence> test;
};

EncodedSplit encode_split(const tokenizer::Vocab& vocab, const ingest::DatasetSplit& split, std::size_t max_len);

struct FinetuneOptions {
    double learning_rate{6e-6};
    int batch_size{16};
    int epochs{20};
    std::uint64_t seed{0};
};

struct EpochRecord {
    int epoch{0};  // 0 = before training
    double train_loss{0.0};
    double validation_loss{0.0};
};

struct FinetuneResult {
    EncoderModel best;
    int best_epoch{0};
    double best_validation_loss{0.0};
    std::vector<EpochRecord> trace;
};

/// Mean multi-label loss over a dataset.
double dataset_loss(const EncoderModel& model, std::span<const LabeledSequence> data);

/// Sigmoid probabilities per item.
std::vector<std::array<double, kNumLevels>> predict_probabilities(const EncoderModel& model, std::span<const TokenSequence> data);
std::vector<std::array<double, kNumLevels>> predict_probabilities(const EncoderModel& model, std::span<const LabeledSequence> data);

/// Multi-label BCE fine-tuning with constant learning rate and per-epoch shuffling.
/// Returns the checkpoint with the lowest validation loss (the initial model counts as epoch 0).
FinetuneResult finetune(const EncoderModel& model, const EncodedSplit& split, const FinetuneOptions& options);

struct FinetuneGrid {
    std::vector<double> learning_rates{1e-6, 3e-6, 6e-6};
    std::vector<int> batch_sizes{16, 32};
    int epochs{20};
    std::vector<std::uint64_t> seeds{0, 1, 2};

    void validate() const;
};

struct GridCell {
    double learning_rate{0.0};
    int batch_size{0};
    std::vector<double> best_losses;  // per seed; +inf when that run diverged
    double mean_loss{std::numeric_limits<double>::infinity()};
};

struct GridResult {
    std::vector<GridCell> cells;  // learning rates vary fastest within each batch size
    std::size_t best{0};
};

using ModelFactory = std::function<EncoderModel(std::uint64_t seed)>;

/// Every cell is fine-tuned once per seed; the cell with the lowest mean best-validation loss wins.
/// A run that diverges contributes +inf to its cell.
GridResult hyperparam_search(const ModelFactory& factory, const EncodedSplit& split, const FinetuneGrid& grid);

/// Aligned-text table: one row per batch size, one column per learning rate.
std::string format_grid_table(const GridResult& result);

/// k independent fine-tunes with the given hyperparameters, one per seed.
std::vector<FinetuneResult> multi_seed_run(const ModelFactory& factory, const EncodedSplit& split, double learning_rate, int batch_size,
                                           int epochs, std::span<const std::uint64_t> seeds);

}  // namespace civic::training
