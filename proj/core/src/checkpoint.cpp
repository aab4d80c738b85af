// Copyright 2026 The mmembed Authors
// SPDX-License-Identifier: Apache-2.0

#include "mmembed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmembed/error.hpp"

namespace mmembed {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'M', 'E', 'M', 'B', 'C', 'K', 'P'};

json config_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"mlp_ratio", c.mlp_ratio},
              {"vocab_size", c.vocab_size},
              {"visual_tokens", c.visual_tokens},
              {"patches", c.patches},
              {"patch_dim", c.patch_dim},
              {"t2i_layers", c.t2i_layers},
              {"max_positions", c.max_positions},
              {"pad_prompt_length", c.pad_prompt_length},
              {"missing_image", std::string(to_string(c.missing_image))},
              {"disable_aux_encoder", c.disable_aux_encoder},
              {"disable_padding", c.disable_padding},
              {"half_padding", c.half_padding},
              {"pseudo_through_projector", c.pseudo_through_projector}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.visual_tokens = j.at("visual_tokens").get<std::size_t>();
  c.patches = j.at("patches").get<std::size_t>();
  c.patch_dim = j.at("patch_dim").get<std::size_t>();
  c.t2i_layers = j.at("t2i_layers").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.pad_prompt_length = j.at("pad_prompt_length").get<std::size_t>();
  c.missing_image = parse_missing_image_mode(j.at("missing_image").get<std::string>());
  c.disable_aux_encoder = j.at("disable_aux_encoder").get<bool>();
  c.disable_padding = j.at("disable_padding").get<bool>();
  c.half_padding = j.at("half_padding").get<bool>();
  c.pseudo_through_projector = j.at("pseudo_through_projector").get<bool>();
  return c;
}

std::uint64_t fnv1a(const char* p, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(p[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  return v;
}

json read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = read_pod<std::uint64_t>(in, "header length");
  if (len == 0 || len > (64u << 20)) throw CheckpointError("implausible header length");
  std::string text(len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(len))) {
    throw CheckpointError("truncated checkpoint header");
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

}  // namespace

std::string model_config_to_json(const ModelConfig& c) { return config_json(c).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
}

std::string describe_config_mismatch(const ModelConfig& expected, const ModelConfig& actual) {
  const json a = config_json(expected), b = config_json(actual);
  std::string out;
  for (const auto& [key, value] : a.items()) {
    if (b.at(key) != value) {
      if (!out.empty()) out += "; ";
      out += key + ": config " + value.dump() + " vs checkpoint " + b.at(key).dump();
    }
  }
  return out;
}

void save_checkpoint(Model& model, std::ostream& out) {
  json tensors = json::array();
  std::string payload;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name}, {"shape", p.tensor->shape()}});
    const auto d = p.tensor->data();
    payload.append(reinterpret_cast<const char*>(d.data()), d.size() * sizeof(double));
  }
  json adapters = json::array();
  std::size_t index = 0;
  model.for_each_linear([&](const std::string&, Linear& l) {
    if (l.has_adapter()) {
      adapters.push_back({{"linear", index}, {"rank", l.adapter_rank}, {"scale", l.adapter_scale}});
    }
    ++index;
  });
  const json header{{"model_config", config_json(model.config())},
                    {"adapters", adapters},
                    {"tensors", tensors},
                    {"payload_bytes", payload.size()},
                    {"checksum", fnv1a(payload.data(), payload.size())}};
  const std::string text = header.dump();
  out.write(kMagic, 8);
  write_pod<std::uint32_t>(out, kCheckpointVersion);
  write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw CheckpointError("failed writing checkpoint");
}

void save_checkpoint(Model& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  save_checkpoint(model, f);
}

Model load_checkpoint(std::istream& in) {
  const json header = read_header(in);
  ModelConfig config;
  std::size_t payload_bytes = 0;
  std::uint64_t checksum = 0;
  try {
    config = config_from(header.at("model_config"));
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
    checksum = header.at("checksum").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
  std::string payload(payload_bytes, '\0');
  if (!in.read(payload.data(), static_cast<std::streamsize>(payload_bytes))) {
    throw CheckpointError("truncated checkpoint payload");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after payload");
  if (fnv1a(payload.data(), payload.size()) != checksum) {
    throw CheckpointError("checkpoint payload checksum mismatch");
  }

  Model model = [&] {
    try {
      return Model(config, 0);
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint holds an invalid config: ") + e.what());
    }
  }();
  try {
    std::map<std::size_t, std::pair<std::size_t, double>> ranks;
    for (const auto& a : header.at("adapters")) {
      ranks[a.at("linear").get<std::size_t>()] = {a.at("rank").get<std::size_t>(), a.at("scale").get<double>()};
    }
    std::size_t index = 0;
    Rng unused(0);
    model.for_each_linear([&](const std::string&, Linear& l) {
      if (auto it = ranks.find(index++); it != ranks.end()) {
        l.attach_adapter(it->second.first, it->second.second, unused);
      }
    });
    const auto params = model.parameters();
    const auto& tensors = header.at("tensors");
    if (tensors.size() != params.size()) {
      throw CheckpointError("checkpoint has " + std::to_string(tensors.size()) + " tensors, config expects " +
                            std::to_string(params.size()));
    }
    std::size_t offset = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto name = tensors[i].at("name").get<std::string>();
      const auto shape = tensors[i].at("shape").get<Shape>();
      if (name != params[i].name || shape != params[i].tensor->shape()) {
        throw CheckpointError("tensor '" + name + "' " + shape_string(shape) + " does not match expected '" +
                              params[i].name + "' " + shape_string(params[i].tensor->shape()));
      }
      auto dst = params[i].tensor->data();
      const std::size_t bytes = dst.size() * sizeof(double);
      if (offset + bytes > payload.size()) throw CheckpointError("payload shorter than tensor table");
      std::memcpy(dst.data(), payload.data() + offset, bytes);
      offset += bytes;
    }
    if (offset != payload.size()) throw CheckpointError("payload longer than tensor table");
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("bad adapter entry: ") + e.what());
  }
  return model;
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(f);
}

ModelConfig peek_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  try {
    return config_from(read_header(f).at("model_config"));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  }
}

}  // namespace mmembed
