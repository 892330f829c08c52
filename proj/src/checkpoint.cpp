// SPDX-License-Identifier: Apache-2.0
#include "stitch/checkpoint.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "stitch/errors.hpp"

namespace stitch {

namespace {

constexpr std::uint64_t kMaxHeaderBytes = 100ull * 1024 * 1024;

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
        if (d < 0) throw IoError("MalformedHeader", "negative dimension in tensor shape");
        n *= d;
    }
    return n;
}

int read_config_int(const nlohmann::json& j, const char* key, int fallback) {
    if (!j.contains(key)) return fallback;
    if (!j.at(key).is_number_integer()) {
        throw IoError("MalformedConfig", std::string("config key '") + key + "' is not an integer");
    }
    return j.at(key).get<int>();
}

}  // namespace

std::int64_t TensorRecord::numel() const {
    return shape_numel(shape);
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    if (!j.is_object()) {
        throw IoError("MalformedConfig", "config root is not a JSON object");
    }
    if (!j.contains("num_hidden_layers")) {
        throw IoError("MalformedConfig", "config is missing 'num_hidden_layers'");
    }
    ModelConfig cfg;
    cfg.raw = j;
    cfg.num_layers = read_config_int(j, "num_hidden_layers", 0);
    cfg.hidden_size = read_config_int(j, "hidden_size", 0);
    cfg.num_heads = read_config_int(j, "num_attention_heads", 0);
    cfg.intermediate_size = read_config_int(j, "intermediate_size", 0);
    cfg.vocab_size = read_config_int(j, "vocab_size", 0);
    if (j.contains("rope_theta")) {
        cfg.rope_theta = j.at("rope_theta").get<double>();
    }
    return cfg;
}

nlohmann::json ModelConfig::to_json() const {
    nlohmann::json j = raw.is_object() ? raw : nlohmann::json::object();
    j["num_hidden_layers"] = num_layers;
    if (!j.contains("hidden_size")) j["hidden_size"] = hidden_size;
    if (!j.contains("num_attention_heads")) j["num_attention_heads"] = num_heads;
    if (!j.contains("intermediate_size")) j["intermediate_size"] = intermediate_size;
    if (!j.contains("vocab_size")) j["vocab_size"] = vocab_size;
    if (!j.contains("rope_theta")) j["rope_theta"] = rope_theta;
    return j;
}

void ModelConfig::set_num_layers(int n) {
    num_layers = n;
    if (raw.is_object()) raw["num_hidden_layers"] = n;
}

LayerNameTemplate LayerNameTemplate::llama() {
    LayerNameTemplate t;
    t.prefix_pattern = "model.layers.{i}.";
    t.expected_suffixes = {
        "input_layernorm.weight",
        "self_attn.q_proj.weight",
        "self_attn.k_proj.weight",
        "self_attn.v_proj.weight",
        "self_attn.o_proj.weight",
        "post_attention_layernorm.weight",
        "mlp.gate_proj.weight",
        "mlp.up_proj.weight",
        "mlp.down_proj.weight",
    };
    return t;
}

std::string LayerNameTemplate::render(int index, const std::string& suffix) const {
    const auto pos = prefix_pattern.find("{i}");
    if (pos == std::string::npos) {
        throw ValidationError("BadTemplate", "layer template has no '{i}' placeholder");
    }
    return prefix_pattern.substr(0, pos) + std::to_string(index) +
           prefix_pattern.substr(pos + 3) + suffix;
}

std::optional<std::pair<int, std::string>> parse_layer_index(
    const std::string& name, const LayerNameTemplate& tmpl) {
    const auto pos = tmpl.prefix_pattern.find("{i}");
    if (pos == std::string::npos) {
        throw ValidationError("BadTemplate", "layer template has no '{i}' placeholder");
    }
    const std::string head = tmpl.prefix_pattern.substr(0, pos);
    const std::string tail = tmpl.prefix_pattern.substr(pos + 3);

    if (name.size() <= head.size() || name.compare(0, head.size(), head) != 0) {
        return std::nullopt;
    }
    std::size_t i = head.size();
    std::size_t digits_end = i;
    while (digits_end < name.size() && std::isdigit(static_cast<unsigned char>(name[digits_end]))) {
        ++digits_end;
    }
    if (digits_end == i) return std::nullopt;
    if (name.compare(digits_end, tail.size(), tail) != 0) return std::nullopt;

    const std::size_t suffix_begin = digits_end + tail.size();
    if (suffix_begin >= name.size()) return std::nullopt;

    int index = 0;
    try {
        index = std::stoi(name.substr(i, digits_end - i));
    } catch (const std::exception&) {
        return std::nullopt;
    }
    return std::make_pair(index, name.substr(suffix_begin));
}

std::filesystem::path config_path_for(const std::filesystem::path& checkpoint_path) {
    std::filesystem::path p = checkpoint_path;
    if (p.extension() == ".safetensors") {
        p.replace_extension(".config.json");
    } else {
        p += ".config.json";
    }
    return p;
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) {
        throw IoError("IoFailure", "cannot open '" + path.string() + "'");
    }
    file.seekg(0, std::ios::end);
    const std::uint64_t file_size = static_cast<std::uint64_t>(file.tellg());
    file.seekg(0);

    if (file_size < 8) {
        throw IoError("MalformedHeader", "file is shorter than the 8-byte header length field");
    }
    std::uint64_t header_len = 0;
    file.read(reinterpret_cast<char*>(&header_len), 8);
    if (header_len > kMaxHeaderBytes || header_len > file_size - 8) {
        throw IoError("MalformedHeader",
                      "declared header length " + std::to_string(header_len) +
                          " does not fit in the file");
    }

    std::string header_text(header_len, '\0');
    file.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!file) {
        throw IoError("TruncatedData", "could not read the declared JSON header");
    }

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_text);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("MalformedHeader", std::string("header is not valid JSON: ") + e.what());
    }
    if (!header.is_object()) {
        throw IoError("MalformedHeader", "header root is not a JSON object");
    }

    const std::uint64_t data_len = file_size - 8 - header_len;
    std::vector<std::byte> payload(data_len);
    if (data_len > 0) {
        file.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(data_len));
        if (!file) {
            throw IoError("TruncatedData", "could not read the tensor payload");
        }
    }

    Checkpoint ckpt;
    struct Region {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Region> regions;

    for (const auto& [name, meta] : header.items()) {
        if (name == "__metadata__") continue;
        if (!meta.is_object() || !meta.contains("dtype") || !meta.contains("shape") ||
            !meta.contains("data_offsets")) {
            throw IoError("MalformedHeader", "tensor '" + name + "' entry is incomplete");
        }
        TensorRecord rec;
        rec.dtype = dtype_from_name(meta.at("dtype").get<std::string>());
        try {
            rec.shape = meta.at("shape").get<std::vector<std::int64_t>>();
        } catch (const nlohmann::json::exception&) {
            throw IoError("MalformedHeader", "tensor '" + name + "' has a malformed shape");
        }
        const auto offsets = meta.at("data_offsets");
        if (!offsets.is_array() || offsets.size() != 2) {
            throw IoError("MalformedHeader", "tensor '" + name + "' has malformed data_offsets");
        }
        const std::uint64_t begin = offsets.at(0).get<std::uint64_t>();
        const std::uint64_t end = offsets.at(1).get<std::uint64_t>();
        if (end < begin) {
            throw IoError("MalformedHeader", "tensor '" + name + "' has end offset before begin");
        }
        if (end > data_len) {
            throw IoError("TruncatedData",
                          "tensor '" + name + "' extends past the end of the file");
        }
        const std::uint64_t expected =
            static_cast<std::uint64_t>(shape_numel(rec.shape)) * dtype_size(rec.dtype);
        if (end - begin != expected) {
            throw IoError("MalformedHeader",
                          "tensor '" + name + "' declares " + std::to_string(end - begin) +
                              " bytes but shape and dtype require " + std::to_string(expected));
        }
        rec.data.assign(payload.begin() + static_cast<std::ptrdiff_t>(begin),
                        payload.begin() + static_cast<std::ptrdiff_t>(end));
        regions.push_back({begin, end, name});
        ckpt.tensors.emplace(name, std::move(rec));
    }

    // Regions must tile the payload exactly: no overlaps, no gaps.
    std::sort(regions.begin(), regions.end(),
              [](const Region& a, const Region& b) { return a.begin < b.begin; });
    std::uint64_t cursor = 0;
    for (const auto& r : regions) {
        if (r.begin < cursor) {
            throw IoError("OffsetOverlap", "tensor '" + r.name + "' overlaps the previous region");
        }
        if (r.begin > cursor) {
            throw IoError("MalformedHeader",
                          "gap in the data region before tensor '" + r.name + "'");
        }
        cursor = r.end;
    }
    if (cursor != data_len) {
        throw IoError("MalformedHeader", "data region has trailing bytes not claimed by any tensor");
    }

    const auto config_path = config_path_for(path);
    std::ifstream config_file(config_path);
    if (!config_file) {
        throw IoError("MissingConfig", "cannot open sidecar config '" + config_path.string() + "'");
    }
    nlohmann::json config_json;
    try {
        config_file >> config_json;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("MalformedConfig", std::string("sidecar config is not valid JSON: ") + e.what());
    }
    ckpt.config = ModelConfig::from_json(config_json);
    return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, rec] : ckpt.tensors) {
        const std::uint64_t expected =
            static_cast<std::uint64_t>(rec.numel()) * dtype_size(rec.dtype);
        if (rec.data.size() != expected) {
            throw ValidationError("ShapeMismatch",
                                  "tensor '" + name + "' holds " + std::to_string(rec.data.size()) +
                                      " bytes but shape and dtype require " +
                                      std::to_string(expected));
        }
        nlohmann::json meta;
        meta["dtype"] = std::string(dtype_name(rec.dtype));
        meta["shape"] = rec.shape;
        meta["data_offsets"] = {offset, offset + expected};
        header[name] = std::move(meta);
        offset += expected;
    }

    std::string header_text = header.dump();
    while ((8 + header_text.size()) % 8 != 0) header_text.push_back(' ');

    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) {
        throw IoError("IoFailure", "cannot open '" + path.string() + "' for writing");
    }
    const std::uint64_t header_len = header_text.size();
    file.write(reinterpret_cast<const char*>(&header_len), 8);
    file.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, rec] : ckpt.tensors) {
        file.write(reinterpret_cast<const char*>(rec.data.data()),
                   static_cast<std::streamsize>(rec.data.size()));
    }
    if (!file) {
        throw IoError("IoFailure", "failed while writing '" + path.string() + "'");
    }
    file.close();

    std::ofstream config_file(config_path_for(path), std::ios::trunc);
    if (!config_file) {
        throw IoError("IoFailure", "cannot write sidecar config for '" + path.string() + "'");
    }
    config_file << ckpt.config.to_json().dump(2) << "\n";
    if (!config_file) {
        throw IoError("IoFailure", "failed while writing the sidecar config");
    }
}

std::vector<int> block_indices(const Checkpoint& ckpt, const LayerNameTemplate& tmpl) {
    std::set<int> indices;
    for (const auto& [name, rec] : ckpt.tensors) {
        if (auto parsed = parse_layer_index(name, tmpl)) {
            indices.insert(parsed->first);
        }
    }
    return std::vector<int>(indices.begin(), indices.end());
}

bool layer_count_consistent(const Checkpoint& ckpt, const LayerNameTemplate& tmpl) {
    return static_cast<int>(block_indices(ckpt, tmpl).size()) == ckpt.config.num_layers;
}

LayerBundle extract_layer_bundle(const Checkpoint& ckpt, int index,
                                 const LayerNameTemplate& tmpl) {
    LayerBundle bundle;
    bundle.index = index;
    for (const auto& [name, rec] : ckpt.tensors) {
        auto parsed = parse_layer_index(name, tmpl);
        if (!parsed || parsed->first != index) continue;
        ParameterVector pv;
        pv.name = name;
        pv.source_dtype = rec.dtype;
        pv.shape = rec.shape;
        pv.values = decode_values(rec.data, rec.dtype);
        for (double v : pv.values) {
            if (!std::isfinite(v)) {
                throw ValidationError("NonFiniteTensor",
                                      "tensor '" + name + "' contains a non-finite value");
            }
        }
        bundle.tensors.emplace(parsed->second, std::move(pv));
    }
    if (bundle.tensors.empty()) {
        throw ValidationError("MissingLayer",
                              "checkpoint has no block with index " + std::to_string(index));
    }
    for (const auto& suffix : tmpl.expected_suffixes) {
        if (!bundle.tensors.contains(suffix)) {
            throw ValidationError("IncompleteBlock",
                                  "block " + std::to_string(index) + " is missing '" + suffix + "'");
        }
    }
    return bundle;
}

}  // namespace stitch
