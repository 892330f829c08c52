// SPDX-License-Identifier: Apache-2.0
#include "stitch/toy_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "stitch/errors.hpp"

namespace stitch {

namespace {

constexpr double kRmsNormEps = 1e-5;

// Uniform double in [-1, 1) from the top 53 bits of a mt19937_64 draw. The
// generator is fully specified by the standard, so the stream is identical
// on every platform.
class SeededUniform {
public:
    explicit SeededUniform(std::uint64_t seed) : rng_(seed) {}

    double next() {
        const double unit = static_cast<double>(rng_() >> 11) * 0x1.0p-53;
        return 2.0 * unit - 1.0;
    }

    void fill(std::vector<double>& out, std::size_t count, double scale, double offset = 0.0) {
        out.resize(count);
        for (std::size_t i = 0; i < count; ++i) out[i] = offset + scale * next();
    }

private:
    std::mt19937_64 rng_;
};

// y = W x for row-major W[rows][cols], x of length cols.
void matvec(std::span<const double> w, std::span<const double> x,
            std::span<double> y, std::int64_t rows, std::int64_t cols) {
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* wr = w.data() + r * cols;
        double acc = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) acc += wr[c] * x[static_cast<std::size_t>(c)];
        y[static_cast<std::size_t>(r)] = acc;
    }
}

void rms_norm_row(std::span<const double> x, std::span<const double> weight,
                  std::span<double> y) {
    double sum_sq = 0.0;
    for (double v : x) sum_sq += v * v;
    const double inv = 1.0 / std::sqrt(sum_sq / static_cast<double>(x.size()) + kRmsNormEps);
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * inv * weight[i];
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

}  // namespace

void ToyModelConfig::validate() const {
    if (num_layers < 1 || hidden_size < 1 || num_heads < 1 || intermediate_size < 1 ||
        vocab_size < 1 || !(rope_theta > 0.0)) {
        throw ValidationError("InvalidConfig", "all model dimensions must be positive");
    }
    if (hidden_size % num_heads != 0) {
        throw ValidationError("InvalidConfig",
                              "hidden size " + std::to_string(hidden_size) +
                                  " is not divisible by " + std::to_string(num_heads) + " heads");
    }
}

ModelConfig ToyModelConfig::to_model_config() const {
    ModelConfig cfg;
    cfg.num_layers = num_layers;
    cfg.hidden_size = hidden_size;
    cfg.num_heads = num_heads;
    cfg.intermediate_size = intermediate_size;
    cfg.vocab_size = vocab_size;
    cfg.rope_theta = rope_theta;
    cfg.raw = cfg.to_json();
    return cfg;
}

Checkpoint generate_toy_checkpoint(const ToyModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    SeededUniform rng(seed);

    Checkpoint ckpt;
    ckpt.config = cfg.to_model_config();

    const auto add_tensor = [&](const std::string& name, std::vector<std::int64_t> shape,
                                double scale, double offset = 0.0) {
        std::int64_t numel = 1;
        for (auto d : shape) numel *= d;
        std::vector<double> values;
        rng.fill(values, static_cast<std::size_t>(numel), scale, offset);
        TensorRecord rec;
        rec.dtype = cfg.dtype;
        rec.shape = std::move(shape);
        rec.data = encode_values(values, cfg.dtype);
        ckpt.tensors.emplace(name, std::move(rec));
    };

    const double hidden_scale = 0.5 * std::sqrt(3.0 / cfg.hidden_size);
    const double inter_scale = 0.5 * std::sqrt(3.0 / cfg.intermediate_size);

    // Fixed generation order; the container writer sorts names independently.
    add_tensor("model.embed_tokens.weight", {cfg.vocab_size, cfg.hidden_size}, hidden_scale);
    const LayerNameTemplate tmpl = LayerNameTemplate::llama();
    for (int layer = 0; layer < cfg.num_layers; ++layer) {
        add_tensor(tmpl.render(layer, "input_layernorm.weight"), {cfg.hidden_size}, 0.1, 1.0);
        add_tensor(tmpl.render(layer, "mlp.down_proj.weight"),
                   {cfg.hidden_size, cfg.intermediate_size}, inter_scale);
        add_tensor(tmpl.render(layer, "mlp.gate_proj.weight"),
                   {cfg.intermediate_size, cfg.hidden_size}, hidden_scale);
        add_tensor(tmpl.render(layer, "mlp.up_proj.weight"),
                   {cfg.intermediate_size, cfg.hidden_size}, hidden_scale);
        add_tensor(tmpl.render(layer, "post_attention_layernorm.weight"), {cfg.hidden_size}, 0.1,
                   1.0);
        add_tensor(tmpl.render(layer, "self_attn.k_proj.weight"),
                   {cfg.hidden_size, cfg.hidden_size}, hidden_scale);
        add_tensor(tmpl.render(layer, "self_attn.o_proj.weight"),
                   {cfg.hidden_size, cfg.hidden_size}, hidden_scale);
        add_tensor(tmpl.render(layer, "self_attn.q_proj.weight"),
                   {cfg.hidden_size, cfg.hidden_size}, hidden_scale);
        add_tensor(tmpl.render(layer, "self_attn.v_proj.weight"),
                   {cfg.hidden_size, cfg.hidden_size}, hidden_scale);
    }
    add_tensor("model.norm.weight", {cfg.hidden_size}, 0.1, 1.0);
    add_tensor("lm_head.weight", {cfg.vocab_size, cfg.hidden_size}, hidden_scale);
    return ckpt;
}

ToyModel::ToyModel(const Checkpoint& ckpt) {
    const ModelConfig& mc = ckpt.config;
    cfg_.num_layers = mc.num_layers;
    cfg_.hidden_size = mc.hidden_size;
    cfg_.num_heads = mc.num_heads;
    cfg_.intermediate_size = mc.intermediate_size;
    cfg_.vocab_size = mc.vocab_size;
    cfg_.rope_theta = mc.rope_theta;
    cfg_.validate();

    const LayerNameTemplate tmpl = LayerNameTemplate::llama();
    const std::vector<int> indices = block_indices(ckpt, tmpl);
    if (static_cast<int>(indices.size()) != cfg_.num_layers) {
        throw ValidationError("IncompleteCheckpoint",
                              "config declares " + std::to_string(cfg_.num_layers) +
                                  " layers but " + std::to_string(indices.size()) +
                                  " block indices are present");
    }
    for (int i = 0; i < cfg_.num_layers; ++i) {
        if (indices[static_cast<std::size_t>(i)] != i) {
            throw ValidationError("IncompleteCheckpoint", "block indices are not contiguous from 0");
        }
    }

    const auto decode_named = [&](const std::string& name,
                                  std::vector<std::int64_t> expected_shape) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) {
            throw ValidationError("IncompleteCheckpoint", "missing tensor '" + name + "'");
        }
        if (it->second.shape != expected_shape) {
            throw ValidationError("IncompleteCheckpoint",
                                  "tensor '" + name + "' has a shape inconsistent with the config");
        }
        std::vector<double> values = decode_values(it->second.data, it->second.dtype);
        for (double v : values) {
            if (!std::isfinite(v)) {
                throw ValidationError("NonFiniteTensor",
                                      "tensor '" + name + "' contains a non-finite value");
            }
        }
        return values;
    };

    const std::int64_t h = cfg_.hidden_size;
    const std::int64_t inter = cfg_.intermediate_size;
    const std::int64_t vocab = cfg_.vocab_size;

    embed_ = decode_named("model.embed_tokens.weight", {vocab, h});
    final_norm_ = decode_named("model.norm.weight", {h});
    head_ = decode_named("lm_head.weight", {vocab, h});

    blocks_.resize(static_cast<std::size_t>(cfg_.num_layers));
    for (int layer = 0; layer < cfg_.num_layers; ++layer) {
        Block& b = blocks_[static_cast<std::size_t>(layer)];
        b.input_norm = decode_named(tmpl.render(layer, "input_layernorm.weight"), {h});
        b.post_attn_norm = decode_named(tmpl.render(layer, "post_attention_layernorm.weight"), {h});
        b.wq = decode_named(tmpl.render(layer, "self_attn.q_proj.weight"), {h, h});
        b.wk = decode_named(tmpl.render(layer, "self_attn.k_proj.weight"), {h, h});
        b.wv = decode_named(tmpl.render(layer, "self_attn.v_proj.weight"), {h, h});
        b.wo = decode_named(tmpl.render(layer, "self_attn.o_proj.weight"), {h, h});
        b.w_gate = decode_named(tmpl.render(layer, "mlp.gate_proj.weight"), {inter, h});
        b.w_up = decode_named(tmpl.render(layer, "mlp.up_proj.weight"), {inter, h});
        b.w_down = decode_named(tmpl.render(layer, "mlp.down_proj.weight"), {h, inter});
    }
}

Mat ToyModel::embed_tokens(const std::vector<TokenId>& tokens) const {
    if (tokens.empty()) {
        throw ValidationError("EmptyInput", "token sequence is empty");
    }
    Mat out(static_cast<std::int64_t>(tokens.size()), cfg_.hidden_size);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const TokenId id = tokens[t];
        if (id < 0 || id >= cfg_.vocab_size) {
            throw ValidationError("TokenOutOfRange",
                                  "token id " + std::to_string(id) + " is outside [0, " +
                                      std::to_string(cfg_.vocab_size - 1) + "]");
        }
        const double* row = embed_.data() + static_cast<std::size_t>(id) * cfg_.hidden_size;
        for (int c = 0; c < cfg_.hidden_size; ++c) out.at(static_cast<std::int64_t>(t), c) = row[c];
    }
    return out;
}

Mat ToyModel::apply_block(const Mat& hidden, int block) const {
    if (block < 0 || block >= cfg_.num_layers) {
        throw ValidationError("LayerOutOfRange",
                              "block " + std::to_string(block) + " is outside [0, " +
                                  std::to_string(cfg_.num_layers - 1) + "]");
    }
    const Block& b = blocks_[static_cast<std::size_t>(block)];
    const std::int64_t seq = hidden.rows;
    const std::int64_t h = cfg_.hidden_size;
    const int heads = cfg_.num_heads;
    const std::int64_t head_dim = h / heads;
    const std::int64_t inter = cfg_.intermediate_size;

    // Attention with pre-norm, rotary positions (half-split pairing) and a
    // causal mask.
    Mat q(seq, h), k(seq, h), v(seq, h);
    {
        std::vector<double> normed(static_cast<std::size_t>(h));
        for (std::int64_t t = 0; t < seq; ++t) {
            rms_norm_row(std::span(hidden.data).subspan(static_cast<std::size_t>(t * h),
                                                        static_cast<std::size_t>(h)),
                         b.input_norm, normed);
            matvec(b.wq, normed, std::span(q.data).subspan(static_cast<std::size_t>(t * h),
                                                           static_cast<std::size_t>(h)), h, h);
            matvec(b.wk, normed, std::span(k.data).subspan(static_cast<std::size_t>(t * h),
                                                           static_cast<std::size_t>(h)), h, h);
            matvec(b.wv, normed, std::span(v.data).subspan(static_cast<std::size_t>(t * h),
                                                           static_cast<std::size_t>(h)), h, h);
        }
    }

    const std::int64_t half = head_dim / 2;
    std::vector<double> freqs(static_cast<std::size_t>(half));
    for (std::int64_t j = 0; j < half; ++j) {
        freqs[static_cast<std::size_t>(j)] = std::pow(
            cfg_.rope_theta, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
    }
    for (std::int64_t t = 0; t < seq; ++t) {
        for (int head = 0; head < heads; ++head) {
            double* qh = q.data.data() + t * h + static_cast<std::int64_t>(head) * head_dim;
            double* kh = k.data.data() + t * h + static_cast<std::int64_t>(head) * head_dim;
            for (std::int64_t j = 0; j < half; ++j) {
                const double angle = static_cast<double>(t) * freqs[static_cast<std::size_t>(j)];
                const double c = std::cos(angle);
                const double s = std::sin(angle);
                const double q0 = qh[j], q1 = qh[j + half];
                qh[j] = q0 * c - q1 * s;
                qh[j + half] = q0 * s + q1 * c;
                const double k0 = kh[j], k1 = kh[j + half];
                kh[j] = k0 * c - k1 * s;
                kh[j + half] = k0 * s + k1 * c;
            }
        }
    }

    Mat attn(seq, h);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    std::vector<double> scores;
    for (int head = 0; head < heads; ++head) {
        const std::int64_t off = static_cast<std::int64_t>(head) * head_dim;
        for (std::int64_t t = 0; t < seq; ++t) {
            scores.assign(static_cast<std::size_t>(t + 1), 0.0);
            double max_score = -std::numeric_limits<double>::infinity();
            for (std::int64_t u = 0; u <= t; ++u) {
                double dot = 0.0;
                for (std::int64_t j = 0; j < head_dim; ++j) {
                    dot += q.at(t, off + j) * k.at(u, off + j);
                }
                scores[static_cast<std::size_t>(u)] = dot * scale;
                max_score = std::max(max_score, scores[static_cast<std::size_t>(u)]);
            }
            double denom = 0.0;
            for (std::int64_t u = 0; u <= t; ++u) {
                scores[static_cast<std::size_t>(u)] =
                    std::exp(scores[static_cast<std::size_t>(u)] - max_score);
                denom += scores[static_cast<std::size_t>(u)];
            }
            for (std::int64_t j = 0; j < head_dim; ++j) {
                double acc = 0.0;
                for (std::int64_t u = 0; u <= t; ++u) {
                    acc += scores[static_cast<std::size_t>(u)] * v.at(u, off + j);
                }
                attn.at(t, off + j) = acc / denom;
            }
        }
    }

    Mat out(seq, h);
    {
        std::vector<double> proj(static_cast<std::size_t>(h));
        for (std::int64_t t = 0; t < seq; ++t) {
            matvec(b.wo, std::span(attn.data).subspan(static_cast<std::size_t>(t * h),
                                                      static_cast<std::size_t>(h)),
                   proj, h, h);
            for (std::int64_t c = 0; c < h; ++c) out.at(t, c) = hidden.at(t, c) + proj[static_cast<std::size_t>(c)];
        }
    }

    // Gated feed-forward over the post-attention norm.
    {
        std::vector<double> normed(static_cast<std::size_t>(h));
        std::vector<double> gate(static_cast<std::size_t>(inter));
        std::vector<double> up(static_cast<std::size_t>(inter));
        std::vector<double> down(static_cast<std::size_t>(h));
        for (std::int64_t t = 0; t < seq; ++t) {
            rms_norm_row(std::span(out.data).subspan(static_cast<std::size_t>(t * h),
                                                     static_cast<std::size_t>(h)),
                         b.post_attn_norm, normed);
            matvec(b.w_gate, normed, gate, inter, h);
            matvec(b.w_up, normed, up, inter, h);
            for (std::int64_t i = 0; i < inter; ++i) {
                gate[static_cast<std::size_t>(i)] =
                    silu(gate[static_cast<std::size_t>(i)]) * up[static_cast<std::size_t>(i)];
            }
            matvec(b.w_down, gate, down, h, inter);
            for (std::int64_t c = 0; c < h; ++c) out.at(t, c) += down[static_cast<std::size_t>(c)];
        }
    }
    return out;
}

Mat ToyModel::readout(const Mat& hidden) const {
    const std::int64_t h = cfg_.hidden_size;
    const std::int64_t vocab = cfg_.vocab_size;
    Mat logits(hidden.rows, vocab);
    std::vector<double> normed(static_cast<std::size_t>(h));
    for (std::int64_t t = 0; t < hidden.rows; ++t) {
        rms_norm_row(std::span(hidden.data).subspan(static_cast<std::size_t>(t * h),
                                                    static_cast<std::size_t>(h)),
                     final_norm_, normed);
        matvec(head_, normed, std::span(logits.data).subspan(static_cast<std::size_t>(t * vocab),
                                                             static_cast<std::size_t>(vocab)),
               vocab, h);
    }
    return logits;
}

ForwardTrace ToyModel::forward(const std::vector<TokenId>& tokens) const {
    ForwardTrace trace;
    trace.hidden.reserve(static_cast<std::size_t>(cfg_.num_layers) + 1);
    trace.hidden.push_back(embed_tokens(tokens));
    for (int layer = 0; layer < cfg_.num_layers; ++layer) {
        trace.hidden.push_back(apply_block(trace.hidden.back(), layer));
    }
    trace.logits = readout(trace.hidden.back());
    return trace;
}

Mat ToyModel::early_exit_logits(const std::vector<TokenId>& tokens, int layer) const {
    if (layer < 0 || layer >= cfg_.num_layers) {
        throw ValidationError("LayerOutOfRange",
                              "block " + std::to_string(layer) + " is outside [0, " +
                                  std::to_string(cfg_.num_layers - 1) + "]");
    }
    Mat hidden = embed_tokens(tokens);
    for (int b = 0; b <= layer; ++b) hidden = apply_block(hidden, b);
    return readout(hidden);
}

ForwardTrace forward(const Checkpoint& ckpt, const std::vector<TokenId>& tokens) {
    return ToyModel(ckpt).forward(tokens);
}

Mat early_exit_logits(const Checkpoint& ckpt, const std::vector<TokenId>& tokens, int layer) {
    return ToyModel(ckpt).early_exit_logits(tokens, layer);
}

}  // namespace stitch
