#include "civic/neural.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "civic/error.hpp"
#include "civic/rng.hpp"

namespace civic::neural {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInitStd = 0.02;

Matrix zeros(Eigen::Index r, Eigen::Index c) { return Matrix::Zero(r, c); }

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

struct LayerNormCache {
    Matrix xhat;
    Eigen::VectorXd rstd;
};

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    cache.xhat.resize(rows, cols);
    cache.rstd.resize(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x.row(i).mean();
        const double var = (x.row(i).array() - mean).square().mean();
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.rstd(i) = rstd;
        cache.xhat.row(i) = (x.row(i).array() - mean) * rstd;
    }
    Matrix y = cache.xhat.array().rowwise() * gain.row(0).array();
    y.array().rowwise() += bias.row(0).array();
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const LayerNormCache& cache, const Matrix& gain, Matrix& dgain, Matrix& dbias) {
    dgain.row(0) += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
    dbias.row(0) += dy.colwise().sum();
    Matrix dxhat = dy.array().rowwise() * gain.row(0).array();
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_d = dxhat.row(i).mean();
        const double mean_dx = (dxhat.row(i).array() * cache.xhat.row(i).array()).mean();
        dx.row(i) = cache.rstd(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
    }
    return dx;
}

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix y = x * w;
    y.rowwise() += b.row(0);
    return y;
}

struct BlockCache {
    LayerNormCache ln1, ln2;
    Matrix h1, q, k, v;
    std::vector<Matrix> probs;
    Matrix attn;
    Matrix h2, pre, act;
};

struct Trace {
    std::vector<BlockCache> blocks;
    LayerNormCache final_ln;
    Matrix out;
};

Matrix run_block(const ModelConfig& cfg, const BlockParams& p, const Matrix& x, std::span<const char> key_active, BlockCache& c) {
    const auto rows = x.rows();
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    c.h1 = layer_norm(x, p.ln1_gain, p.ln1_bias, c.ln1);
    c.q = affine(c.h1, p.wq, p.bq);
    c.k = affine(c.h1, p.wk, p.bk);
    c.v = affine(c.h1, p.wv, p.bv);
    c.attn.resize(rows, cfg.embed_dim);
    c.probs.resize(static_cast<std::size_t>(cfg.num_heads));
    for (int h = 0; h < cfg.num_heads; ++h) {
        Matrix s = (c.q.middleCols(h * dh, dh) * c.k.middleCols(h * dh, dh).transpose()) * scale;
        for (Eigen::Index j = 0; j < rows; ++j) {
            if (!key_active[static_cast<std::size_t>(j)]) s.col(j).setConstant(-std::numeric_limits<double>::infinity());
        }
        for (Eigen::Index i = 0; i < rows; ++i) {
            const double m = s.row(i).maxCoeff();
            s.row(i) = (s.row(i).array() - m).exp();
            s.row(i) /= s.row(i).sum();
        }
        c.attn.middleCols(h * dh, dh) = s * c.v.middleCols(h * dh, dh);
        c.probs[static_cast<std::size_t>(h)] = std::move(s);
    }
    Matrix x_mid = x + affine(c.attn, p.wo, p.bo);

    c.h2 = layer_norm(x_mid, p.ln2_gain, p.ln2_bias, c.ln2);
    c.pre = affine(c.h2, p.w1, p.b1);
    c.act = c.pre.unaryExpr([](double z) { return gelu(z); });
    return x_mid + affine(c.act, p.w2, p.b2);
}

Matrix block_backward(const ModelConfig& cfg, const BlockParams& p, const BlockCache& c, const Matrix& d_out, BlockParams& g) {
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // feed-forward branch
    g.w2.noalias() += c.act.transpose() * d_out;
    g.b2.row(0) += d_out.colwise().sum();
    Matrix d_pre = (d_out * p.w2.transpose()).array() * c.pre.unaryExpr([](double z) { return gelu_grad(z); }).array();
    g.w1.noalias() += c.h2.transpose() * d_pre;
    g.b1.row(0) += d_pre.colwise().sum();
    Matrix d_h2 = d_pre * p.w1.transpose();
    Matrix d_mid = d_out + layer_norm_backward(d_h2, c.ln2, p.ln2_gain, g.ln2_gain, g.ln2_bias);

    // attention branch
    g.wo.noalias() += c.attn.transpose() * d_mid;
    g.bo.row(0) += d_mid.colwise().sum();
    Matrix d_attn = d_mid * p.wo.transpose();
    Matrix dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (int h = 0; h < cfg.num_heads; ++h) {
        const Matrix& probs = c.probs[static_cast<std::size_t>(h)];
        const auto d_head = d_attn.middleCols(h * dh, dh);
        Matrix d_probs = d_head * c.v.middleCols(h * dh, dh).transpose();
        dv.middleCols(h * dh, dh) = probs.transpose() * d_head;
        Matrix d_scores = probs.array() * (d_probs.array().colwise() - (d_probs.array() * probs.array()).rowwise().sum());
        dq.middleCols(h * dh, dh) = (d_scores * c.k.middleCols(h * dh, dh)) * scale;
        dk.middleCols(h * dh, dh) = (d_scores.transpose() * c.q.middleCols(h * dh, dh)) * scale;
    }
    g.wq.noalias() += c.h1.transpose() * dq;
    g.bq.row(0) += dq.colwise().sum();
    g.wk.noalias() += c.h1.transpose() * dk;
    g.bk.row(0) += dk.colwise().sum();
    g.wv.noalias() += c.h1.transpose() * dv;
    g.bv.row(0) += dv.colwise().sum();
    Matrix d_h1 = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
    return d_mid + layer_norm_backward(d_h1, c.ln1, p.ln1_gain, g.ln1_gain, g.ln1_bias);
}

Matrix forward_trace(const EncoderModel& model, const Matrix& embedded, std::span<const char> key_active, Trace& trace) {
    if (static_cast<std::size_t>(embedded.rows()) != key_active.size()) throw std::invalid_argument("key mask length differs from input rows");
    if (embedded.rows() > model.config.context_width) throw std::invalid_argument("sequence longer than the context width");
    trace.blocks.resize(model.params.blocks.size());
    Matrix x = embedded;
    for (std::size_t b = 0; b < model.params.blocks.size(); ++b) x = run_block(model.config, model.params.blocks[b], x, key_active, trace.blocks[b]);
    trace.out = layer_norm(x, model.params.final_gain, model.params.final_bias, trace.final_ln);
    return trace.out;
}

// Returns the gradient with respect to the embedded input.
Matrix backward_trace(const EncoderModel& model, const Trace& trace, const Matrix& d_encodings, Parameters& g) {
    Matrix d = layer_norm_backward(d_encodings, trace.final_ln, model.params.final_gain, g.final_gain, g.final_bias);
    for (std::size_t b = model.params.blocks.size(); b-- > 0;) d = block_backward(model.config, model.params.blocks[b], trace.blocks[b], d, g.blocks[b]);
    return d;
}

void accumulate_embedding(std::span<const TokenId> ids, const Matrix& d_embedded, Parameters& g) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = static_cast<Eigen::Index>(i);
        g.token_embedding.row(ids[i]) += d_embedded.row(row);
        g.position_embedding.row(row) += d_embedded.row(row);
    }
}

void check_ids(const EncoderModel& model, const TokenSequence& seq) {
    if (seq.ids.size() > static_cast<std::size_t>(model.config.context_width)) {
        throw std::invalid_argument("sequence of length " + std::to_string(seq.ids.size()) + " exceeds context width " +
                                    std::to_string(model.config.context_width));
    }
    if (seq.attention_length == 0 || seq.attention_length > seq.ids.size()) throw std::invalid_argument("attention_length must be in [1, size]");
    for (TokenId id : seq.ids) {
        if (id < 0 || id >= model.config.vocab_size) throw std::invalid_argument("token id " + std::to_string(id) + " out of vocabulary range");
    }
}

// Active prefix only; pads neither attend nor are attended to, so this is exact for non-pad rows.
std::span<const TokenId> active_ids(const TokenSequence& seq) { return std::span<const TokenId>(seq.ids).first(seq.attention_length); }

void ensure_finite(const Parameters& g) {
    g.for_each([](const std::string& name, const Matrix& m) {
        if (!m.allFinite()) throw NumericError("non-finite gradient in tensor '" + name + "'");
    });
}

}  // namespace

void ModelConfig::validate() const {
    if (num_blocks < 1 || context_width < 1 || embed_dim < 1 || hidden_dim < 1 || num_heads < 1 || vocab_size < 1 || num_labels < 1) {
        throw std::invalid_argument("model dimensions must all be positive");
    }
    if (embed_dim % num_heads != 0) {
        throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) + " is not divisible by num_heads " + std::to_string(num_heads));
    }
}

Parameters Parameters::zeros_like() const {
    Parameters z = *this;
    z.for_each([](const std::string&, Matrix& m) { m.setZero(); });
    return z;
}

std::size_t Parameters::count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
}

std::size_t parameter_count(const ModelConfig& c) {
    const std::size_t v = static_cast<std::size_t>(c.vocab_size), n = static_cast<std::size_t>(c.context_width);
    const std::size_t e = static_cast<std::size_t>(c.embed_dim), h = static_cast<std::size_t>(c.hidden_dim);
    const std::size_t l = static_cast<std::size_t>(c.num_labels), blocks = static_cast<std::size_t>(c.num_blocks);
    const std::size_t per_block = 2 * e + 4 * (e * e + e) + 2 * e + (e * h + h) + (h * e + e);
    return v * e + n * e + blocks * per_block + 2 * e + e * v + e * l;
}

EncoderModel init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const auto e = config.embed_dim, h = config.hidden_dim;
    EncoderModel model{config, {}};
    Parameters& p = model.params;
    p.token_embedding = zeros(config.vocab_size, e);
    p.position_embedding = zeros(config.context_width, e);
    p.blocks.resize(static_cast<std::size_t>(config.num_blocks));
    for (auto& b : p.blocks) {
        b.ln1_gain = Matrix::Ones(1, e);
        b.ln1_bias = zeros(1, e);
        b.wq = zeros(e, e);
        b.bq = zeros(1, e);
        b.wk = zeros(e, e);
        b.bk = zeros(1, e);
        b.wv = zeros(e, e);
        b.bv = zeros(1, e);
        b.wo = zeros(e, e);
        b.bo = zeros(1, e);
        b.ln2_gain = Matrix::Ones(1, e);
        b.ln2_bias = zeros(1, e);
        b.w1 = zeros(e, h);
        b.b1 = zeros(1, h);
        b.w2 = zeros(h, e);
        b.b2 = zeros(1, e);
    }
    p.final_gain = Matrix::Ones(1, e);
    p.final_bias = zeros(1, e);
    p.mlm_head = zeros(e, config.vocab_size);
    p.cls_head = zeros(e, config.num_labels);

    Rng rng(seed);
    p.for_each([&](const std::string& name, Matrix& m) {
        // gains and biases keep their constant initialization
        if (m.rows() == 1 && name != "token_embedding" && name != "position_embedding") return;
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = kInitStd * rng.normal();
    });
    return model;
}

std::vector<char> key_mask(const TokenSequence& seq) {
    std::vector<char> mask(seq.ids.size(), 0);
    for (std::size_t i = 0; i < std::min(seq.attention_length, seq.ids.size()); ++i) mask[i] = 1;
    return mask;
}

Matrix embed(const EncoderModel& model, std::span<const TokenId> ids) {
    if (ids.size() > static_cast<std::size_t>(model.config.context_width)) throw std::invalid_argument("sequence longer than the context width");
    Matrix x(static_cast<Eigen::Index>(ids.size()), model.config.embed_dim);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= model.config.vocab_size) throw std::invalid_argument("token id out of vocabulary range");
        const auto row = static_cast<Eigen::Index>(i);
        x.row(row) = model.params.token_embedding.row(ids[i]) + model.params.position_embedding.row(row);
    }
    return x;
}

Matrix encode_embedded(const EncoderModel& model, const Matrix& embedded, std::span<const char> key_active) {
    Trace trace;
    return forward_trace(model, embedded, key_active, trace);
}

BatchEncodings forward_encode(const EncoderModel& model, std::span<const TokenSequence> batch) {
    BatchEncodings out;
    out.reserve(batch.size());
    for (const auto& seq : batch) {
        check_ids(model, seq);
        const auto mask = key_mask(seq);
        out.push_back(encode_embedded(model, embed(model, seq.ids), mask));
    }
    return out;
}

Matrix mlm_logits(const EncoderModel& model, const Matrix& encodings) { return encodings * model.params.mlm_head; }

RowVector cls_logits(const EncoderModel& model, const Matrix& encodings) { return encodings.row(0) * model.params.cls_head; }

double loss_mlm(std::span<const Matrix> logits, std::span<const MlmTargets> targets) {
    if (logits.size() != targets.size()) throw std::invalid_argument("logits and targets differ in batch size");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < logits.size(); ++b) {
        const auto& t = targets[b];
        if (t.positions.size() != t.target_ids.size()) throw std::invalid_argument("masked positions and targets differ in length");
        for (std::size_t k = 0; k < t.positions.size(); ++k) {
            const auto row = logits[b].row(static_cast<Eigen::Index>(t.positions[k]));
            const double m = row.maxCoeff();
            const double lse = m + std::log((row.array() - m).exp().sum());
            total += lse - row(t.target_ids[k]);
            ++count;
        }
    }
    if (count == 0) throw std::invalid_argument("no masked positions in batch");
    return total / static_cast<double>(count);
}

double loss_multilabel(const RowVector& logits, const LabelVector& labels) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.size(); ++c) {
        const double z = logits(c);
        const double y = labels.test(static_cast<std::size_t>(c)) ? 1.0 : 0.0;
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        total += softplus - y * z;
    }
    return total / static_cast<double>(logits.size());
}

GradientResult backward_mlm(const EncoderModel& model, std::span<const TokenSequence> batch, std::span<const MlmTargets> targets) {
    if (batch.size() != targets.size()) throw std::invalid_argument("batch and targets differ in size");
    std::size_t total_masked = 0;
    for (const auto& t : targets) total_masked += t.positions.size();
    if (total_masked == 0) throw std::invalid_argument("no masked positions in batch");
    const double inv = 1.0 / static_cast<double>(total_masked);

    GradientResult result{0.0, model.params.zeros_like()};
    Parameters& g = result.gradients;
    Trace trace;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        check_ids(model, batch[b]);
        const auto ids = active_ids(batch[b]);
        const std::vector<char> mask(ids.size(), 1);
        const Matrix x = forward_trace(model, embed(model, ids), mask, trace);
        const auto& t = targets[b];
        if (t.positions.empty()) {
            continue;
        }
        Matrix picked(static_cast<Eigen::Index>(t.positions.size()), x.cols());
        for (std::size_t k = 0; k < t.positions.size(); ++k) {
            if (t.positions[k] >= ids.size()) throw std::invalid_argument("masked position outside the active sequence");
            picked.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(t.positions[k]));
        }
        Matrix logits = picked * model.params.mlm_head;
        for (Eigen::Index k = 0; k < logits.rows(); ++k) {
            const double m = logits.row(k).maxCoeff();
            logits.row(k) = (logits.row(k).array() - m).exp();
            const double z = logits.row(k).sum();
            const auto target = t.target_ids[static_cast<std::size_t>(k)];
            result.loss -= std::log(logits(k, target) / z);
            logits.row(k) /= z;
            logits(k, target) -= 1.0;
        }
        logits *= inv;  // now d loss / d logits
        g.mlm_head.noalias() += picked.transpose() * logits;
        const Matrix d_picked = logits * model.params.mlm_head.transpose();
        Matrix d_x = Matrix::Zero(x.rows(), x.cols());
        for (std::size_t k = 0; k < t.positions.size(); ++k) d_x.row(static_cast<Eigen::Index>(t.positions[k])) += d_picked.row(static_cast<Eigen::Index>(k));
        accumulate_embedding(ids, backward_trace(model, trace, d_x, g), g);
    }
    result.loss *= inv;
    ensure_finite(g);
    return result;
}

GradientResult backward_multilabel(const EncoderModel& model, std::span<const TokenSequence> batch, std::span<const LabelVector> labels) {
    if (batch.size() != labels.size()) throw std::invalid_argument("batch and labels differ in size");
    if (batch.empty()) throw std::invalid_argument("empty batch");
    const double scale = 1.0 / (static_cast<double>(batch.size()) * model.config.num_labels);

    GradientResult result{0.0, model.params.zeros_like()};
    Parameters& g = result.gradients;
    Trace trace;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        check_ids(model, batch[b]);
        const auto ids = active_ids(batch[b]);
        const std::vector<char> mask(ids.size(), 1);
        const Matrix x = forward_trace(model, embed(model, ids), mask, trace);
        const RowVector z = x.row(0) * model.params.cls_head;
        result.loss += loss_multilabel(z, labels[b]) / static_cast<double>(batch.size());
        RowVector dz(z.size());
        for (Eigen::Index c = 0; c < z.size(); ++c) {
            const double y = labels[b].test(static_cast<std::size_t>(c)) ? 1.0 : 0.0;
            dz(c) = (1.0 / (1.0 + std::exp(-z(c))) - y) * scale;
        }
        g.cls_head.noalias() += x.row(0).transpose() * dz;
        Matrix d_x = Matrix::Zero(x.rows(), x.cols());
        d_x.row(0) = dz * model.params.cls_head.transpose();
        accumulate_embedding(ids, backward_trace(model, trace, d_x, g), g);
    }
    ensure_finite(g);
    return result;
}

InputGradient cls_logit_input_gradient(const EncoderModel& model, const Matrix& embedded, std::span<const char> key_active, std::size_t label) {
    if (label >= static_cast<std::size_t>(model.config.num_labels)) throw std::invalid_argument("label index out of range");
    Trace trace;
    const Matrix x = forward_trace(model, embedded, key_active, trace);
    const auto col = static_cast<Eigen::Index>(label);
    InputGradient out;
    out.value = x.row(0).dot(model.params.cls_head.col(col).transpose());
    Matrix d_x = Matrix::Zero(x.rows(), x.cols());
    d_x.row(0) = model.params.cls_head.col(col).transpose();
    // Block gradients are computed along the way and discarded; embedding and head tensors are never touched.
    Parameters scratch;
    scratch.blocks = model.params.blocks;
    for (auto& b : scratch.blocks) {
        for (Matrix* m : {&b.ln1_gain, &b.ln1_bias, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv, &b.wo, &b.bo, &b.ln2_gain, &b.ln2_bias, &b.w1, &b.b1,
                          &b.w2, &b.b2})
            m->setZero();
    }
    scratch.final_gain = Matrix::Zero(1, model.config.embed_dim);
    scratch.final_bias = Matrix::Zero(1, model.config.embed_dim);
    out.gradient = backward_trace(model, trace, d_x, scratch);
    if (!out.gradient.allFinite()) throw NumericError("non-finite input gradient");
    return out;
}

bool all_finite(const Parameters& params) {
    bool ok = true;
    params.for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
    return ok;
}

}  // namespace civic::neural
