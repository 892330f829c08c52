// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stitch/checkpoint.hpp"

namespace stitch {

using TokenId = std::int32_t;

// Desk-scale pre-norm decoder configuration: RMS-normalized attention with
// rotary positions and a gated SiLU feed-forward, untied output head.
struct ToyModelConfig {
    int num_layers = 4;
    int hidden_size = 32;
    int num_heads = 4;
    int intermediate_size = 80;
    int vocab_size = 256;
    double rope_theta = 10000.0;
    Dtype dtype = Dtype::F32;

    void validate() const;  // positive fields, hidden_size % num_heads == 0
    ModelConfig to_model_config() const;
};

// Row-major tokens x width matrix of 64-bit activations.
struct Mat {
    std::int64_t rows = 0;
    std::int64_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::int64_t r, std::int64_t c) : rows(r), cols(c), data(static_cast<std::size_t>(r * c), 0.0) {}
    double& at(std::int64_t r, std::int64_t c) { return data[static_cast<std::size_t>(r * cols + c)]; }
    double at(std::int64_t r, std::int64_t c) const { return data[static_cast<std::size_t>(r * cols + c)]; }
};

// Hidden states at every block boundary (index 0 is the embedding output,
// index b+1 the output of block b) plus final logits per token position.
struct ForwardTrace {
    std::vector<Mat> hidden;
    Mat logits;
};

// Deterministic seeded toy checkpoint. The init draws from mt19937_64(seed)
// mapped to uniform [-1, 1) via (next() >> 11) * 2^-53 * 2 - 1, in a fixed
// tensor order (embedding, blocks 0..N-1 suffix-sorted, final norm, head).
// Projection scales are 0.5 * sqrt(3 / fan_in); norm weights are 1 + 0.1u.
Checkpoint generate_toy_checkpoint(const ToyModelConfig& cfg, std::uint64_t seed);

// Checkpoint decoded once into 64-bit weights, ready for repeated forwards.
class ToyModel {
public:
    explicit ToyModel(const Checkpoint& ckpt);

    ForwardTrace forward(const std::vector<TokenId>& tokens) const;
    Mat early_exit_logits(const std::vector<TokenId>& tokens, int layer) const;

    // One block applied to a hidden-state matrix; exposed so tests can re-run
    // individual blocks against spliced traces.
    Mat apply_block(const Mat& hidden, int block) const;

    // Final RMS norm + output head.
    Mat readout(const Mat& hidden) const;

    int num_layers() const { return cfg_.num_layers; }
    const ToyModelConfig& config() const { return cfg_; }

private:
    struct Block {
        std::vector<double> input_norm, post_attn_norm;
        std::vector<double> wq, wk, wv, wo;        // [hidden, hidden]
        std::vector<double> w_gate, w_up, w_down;  // gate/up [inter, hidden], down [hidden, inter]
    };

    ToyModelConfig cfg_;
    std::vector<double> embed_;     // [vocab, hidden]
    std::vector<double> final_norm_;
    std::vector<double> head_;      // [vocab, hidden]
    std::vector<Block> blocks_;

    Mat embed_tokens(const std::vector<TokenId>& tokens) const;
};

// Convenience wrappers that load the checkpoint per call.
ForwardTrace forward(const Checkpoint& ckpt, const std::vector<TokenId>& tokens);
Mat early_exit_logits(const Checkpoint& ckpt, const std::vector<TokenId>& tokens, int layer);

}  // namespace stitch
