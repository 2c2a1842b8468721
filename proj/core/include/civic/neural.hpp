#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "civic/labels.hpp"
#include "civic/tokenizer.hpp"

namespace civic::neural {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::RowVectorXd;
using tokenizer::TokenId;
using tokenizer::TokenSequence;

struct ModelConfig {
    int num_blocks{2};
    int context_width{128};
    int embed_dim{64};
    int hidden_dim{256};  // feed-forward width
    int num_heads{4};
    int vocab_size{8192};
    int num_labels{static_cast<int>(kNumLevels)};

    /// Throws std::invalid_argument on non-positive dims or embed_dim % num_heads != 0.
    void validate() const;
    int head_dim() const { return embed_dim / num_heads; }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Pre-layer-norm encoder block. Vectors are stored as 1 x k matrices so
/// every tensor shares one type.
struct BlockParams {
    Matrix ln1_gain, ln1_bias;
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln2_gain, ln2_bias;
    Matrix w1, b1, w2, b2;
};

struct Parameters {
    Matrix token_embedding;     // v x e
    Matrix position_embedding;  // n x e
    std::vector<BlockParams> blocks;
    Matrix final_gain, final_bias;  // 1 x e
    Matrix mlm_head;                // e x v, logits = X W
    Matrix cls_head;                // e x l, logits = e_cls W

    /// Visits every tensor in checkpoint order with a dotted name.
    template <class F>
    void for_each(F&& f) {
        visit(*this, f);
    }
    template <class F>
    void for_each(F&& f) const {
        visit(*this, f);
    }

    /// Same shapes, all zeros.
    Parameters zeros_like() const;
    std::size_t count() const;

private:
    template <class Self, class F>
    static void visit(Self& p, F& f) {
        f("token_embedding", p.token_embedding);
        f("position_embedding", p.position_embedding);
        for (std::size_t i = 0; i < p.blocks.size(); ++i) {
            auto& b = p.blocks[i];
            const std::string prefix = "blocks." + std::to_string(i) + ".";
            f(prefix + "ln1_gain", b.ln1_gain);
            f(prefix + "ln1_bias", b.ln1_bias);
            f(prefix + "wq", b.wq);
            f(prefix + "bq", b.bq);
            f(prefix + "wk", b.wk);
            f(prefix + "bk", b.bk);
            f(prefix + "wv", b.wv);
            f(prefix + "bv", b.bv);
            f(prefix + "wo", b.wo);
            f(prefix + "bo", b.bo);
            f(prefix + "ln2_gain", b.ln2_gain);
            f(prefix + "ln2_bias", b.ln2_bias);
            f(prefix + "w1", b.w1);
            f(prefix + "b1", b.b1);
            f(prefix + "w2", b.w2);
            f(prefix + "b2", b.b2);
        }
        f("final_gain", p.final_gain);
        f("final_bias", p.final_bias);
        f("mlm_head", p.mlm_head);
        f("cls_head", p.cls_head);
    }
};

struct EncoderModel {
    ModelConfig config;
    Parameters params;
};

/// Closed-form parameter count for a config.
std::size_t parameter_count(const ModelConfig& config);

/// Normal(0, 0.02) weights, unit layer-norm gains, zero biases. Deterministic in seed.
EncoderModel init_model(const ModelConfig& config, std::uint64_t seed);

/// Final encodings of one sequence, one row per id (pad rows included).
using BatchEncodings = std::vector<Matrix>;

/// Throws std::invalid_argument if a sequence is longer than the context width.
BatchEncodings forward_encode(const EncoderModel& model, std::span<const TokenSequence> batch);

/// Token embedding plus positional encoding, rows = ids.size().
Matrix embed(const EncoderModel& model, std::span<const TokenId> ids);

/// Runs the blocks on an already-embedded input. key_active marks rows that
/// may be attended to; inactive rows get an additive -inf before softmax.
Matrix encode_embedded(const EncoderModel& model, const Matrix& embedded, std::span<const char> key_active);

/// X * W_mlm.
Matrix mlm_logits(const EncoderModel& model, const Matrix& encodings);

/// Row 0 of the encodings times W_cls.
RowVector cls_logits(const EncoderModel& model, const Matrix& encodings);

struct MlmTargets {
    std::vector<std::size_t> positions;
    std::vector<TokenId> target_ids;
};

/// Mean cross-entropy over masked positions of the whole batch.
/// Throws std::invalid_argument when the batch has no masked positions.
double loss_mlm(std::span<const Matrix> logits, std::span<const MlmTargets> targets);

/// Mean over labels of sigmoid binary cross-entropy.
double loss_multilabel(const RowVector& logits, const LabelVector& labels);

struct GradientResult {
    double loss{0.0};
    Parameters gradients;
};

/// Forward + loss + exact reverse-mode gradients. loss_mlm is averaged over all
/// masked positions of the batch; every parameter receives a gradient tensor.
/// Throws NumericError naming the tensor if any gradient is non-finite.
GradientResult backward_mlm(const EncoderModel& model, std::span<const TokenSequence> batch, std::span<const MlmTargets> targets);

/// Multi-label loss averaged over the batch.
GradientResult backward_multilabel(const EncoderModel& model, std::span<const TokenSequence> batch,
                                   std::span<const LabelVector> labels);

/// Value of one classification logit and its gradient with respect to the
/// embedded input (embedding + positional encoding).
struct InputGradient {
    double value{0.0};
    Matrix gradient;
};
InputGradient cls_logit_input_gradient(const EncoderModel& model, const Matrix& embedded, std::span<const char> key_active,
                                       std::size_t label);

/// Key mask for a token sequence: positions at or beyond attention_length are inactive.
std::vector<char> key_mask(const TokenSequence& seq);

/// All tensors finite.
bool all_finite(const Parameters& params);

}  // namespace civic::neural
