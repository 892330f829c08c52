// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "stitch/dtype.hpp"
#include "stitch/interp.hpp"

namespace stitch {

// One tensor as stored: dtype tag, shape, and raw little-endian payload.
struct TensorRecord {
    Dtype dtype = Dtype::F32;
    std::vector<std::int64_t> shape;
    std::vector<std::byte> data;

    std::int64_t numel() const;
};

// Sidecar model metadata. Unknown keys from an existing config file are
// preserved verbatim in `raw` and written back untouched; the splicer only
// ever updates the layer count.
struct ModelConfig {
    int num_layers = 0;
    int hidden_size = 0;
    int num_heads = 0;
    int intermediate_size = 0;
    int vocab_size = 0;
    double rope_theta = 10000.0;

    nlohmann::json raw = nlohmann::json::object();

    static ModelConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    void set_num_layers(int n);
};

// Full model weight map plus config metadata. Tensor iteration order is
// lexicographic by name, which is also the serialized order.
struct Checkpoint {
    std::map<std::string, TensorRecord> tensors;
    ModelConfig config;
};

// Block-tensor naming scheme: `prefix_pattern` contains the literal `{i}`
// placeholder, e.g. "model.layers.{i}.". Names that do not match the pattern
// (embeddings, final norm, output head) are pass-through tensors.
struct LayerNameTemplate {
    std::string prefix_pattern = "model.layers.{i}.";
    std::set<std::string> expected_suffixes;

    static LayerNameTemplate llama();

    std::string render(int index, const std::string& suffix) const;
};

// The named tensor set of one transformer block, decoded to 64-bit values.
struct LayerBundle {
    int index = 0;
    std::map<std::string, ParameterVector> tensors;  // keyed by suffix
};

// Sidecar config path for a checkpoint path: "model.safetensors" maps to
// "model.config.json"; other extensions get ".config.json" appended.
std::filesystem::path config_path_for(const std::filesystem::path& checkpoint_path);

// Reads a safetensors container (8-byte little-endian header length, JSON
// header, raw payload) and its sidecar config. Validates dtypes, shapes and
// that the data offsets tile the payload exactly. The config-vs-block-count
// consistency check is deliberately soft here so inspection tools can report
// on inconsistent files; see layer_count_consistent().
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Writes the container with lexicographic tensor order and contiguous
// offsets, plus the sidecar config. Byte-deterministic for equal inputs.
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

// (block index, suffix) for block tensors, empty for pass-through tensors.
std::optional<std::pair<int, std::string>> parse_layer_index(
    const std::string& name, const LayerNameTemplate& tmpl);

// Distinct block indices present in tensor names, ascending.
std::vector<int> block_indices(const Checkpoint& ckpt, const LayerNameTemplate& tmpl);

// True when config.num_layers equals the number of distinct block indices.
bool layer_count_consistent(const Checkpoint& ckpt, const LayerNameTemplate& tmpl);

// All tensors of one block decoded to 64-bit ParameterVectors. Requires every
// expected suffix to be present and all values finite; extra suffixes inside
// the block are included.
LayerBundle extract_layer_bundle(const Checkpoint& ckpt, int index,
                                 const LayerNameTemplate& tmpl);

}  // namespace stitch
