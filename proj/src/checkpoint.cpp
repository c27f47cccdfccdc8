// Copyright 2026 The qilin-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "qilin/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "qilin/errors.hpp"
#include "qilin/io.hpp"

namespace qilin::trainer {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'Q', 'L', 'N', 'M'};
constexpr std::size_t kPrefix = 16;  // magic + version + header length

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(std::string_view b, std::size_t at, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  }
  return v;
}

[[noreturn]] void corrupt(std::size_t offset, const std::string& what) {
  throw IntegrityError("checkpoint corrupt at offset " + std::to_string(offset) +
                       ": " + what);
}

json index_of(const std::vector<model::ConstNamedTensor>& tensors,
              std::uint64_t& offset) {
  json arr = json::array();
  for (const model::ConstNamedTensor& t : tensors) {
    arr.push_back({{"name", t.name}, {"shape", t.tensor->shape()}, {"offset", offset}});
    offset += t.tensor->numel() * 8;
  }
  return arr;
}

void append_payload(std::string& out,
                    const std::vector<model::ConstNamedTensor>& tensors) {
  for (const model::ConstNamedTensor& t : tensors) {
    for (double d : t.tensor->data()) {
      put_u64(out, std::bit_cast<std::uint64_t>(d));
    }
  }
}

// Reads tensors described by index into the named tensors of the target.
void fill(const json& index, const std::vector<model::NamedTensor>& targets,
          std::string_view payload, std::size_t payload_at,
          const char* what) {
  if (!index.is_array() || index.size() != targets.size()) {
    corrupt(payload_at, std::string(what) + " tensor index has wrong length");
  }
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const json& e = index[i];
    Tensor& t = *targets[i].tensor;
    if (e.at("name").get<std::string>() != targets[i].name) {
      corrupt(payload_at, "expected tensor " + targets[i].name + ", found " +
                              e.at("name").get<std::string>());
    }
    if (e.at("shape").get<autograd::Shape>() != t.shape()) {
      corrupt(payload_at, "shape of " + targets[i].name +
                              " disagrees with the config");
    }
    const std::uint64_t off = e.at("offset").get<std::uint64_t>();
    const std::size_t bytes = t.numel() * 8;
    if (off > payload.size() || payload.size() - off < bytes) {
      corrupt(payload_at + off, "payload of " + targets[i].name + " truncated");
    }
    std::span<double> d = t.data();
    for (std::size_t j = 0; j < d.size(); ++j) {
      d[j] = std::bit_cast<double>(get_le(payload, off + 8 * j, 8));
    }
  }
}

}  // namespace

json model_config_to_json(const model::ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"max_seq_len", c.max_seq_len}, {"dropout", c.dropout},
          {"ffn_mult", c.ffn_mult}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.dropout = j.value("dropout", c.dropout);
    c.ffn_mult = j.value("ffn_mult", c.ffn_mult);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

json lora_config_to_json(const model::LoraConfig& c) {
  return {{"rank", c.rank}, {"alpha", c.alpha}, {"dropout", c.dropout},
          {"targets", c.targets}};
}

model::LoraConfig lora_config_from_json(const json& j) {
  model::LoraConfig c;
  try {
    c.rank = j.value("rank", c.rank);
    c.alpha = j.value("alpha", c.alpha);
    c.dropout = j.value("dropout", c.dropout);
    c.targets = j.value("targets", c.targets);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("lora config: ") + e.what());
  }
  return c;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string serialize_checkpoint(const ModelState& state) {
  const model::ModelParams& p = state.params;
  const std::vector<model::ConstNamedTensor> base = p.named();
  std::vector<model::ConstNamedTensor> adapter;
  if (state.adapter) {
    adapter = std::as_const(*state.adapter).named();
  }
  std::uint64_t offset = 0;
  json header;
  header["config"] = model_config_to_json(p.config);
  header["tensors"] = index_of(base, offset);
  if (state.adapter) {
    header["adapter"] = {{"config", lora_config_to_json(state.adapter->config)},
                         {"tensors", index_of(adapter, offset)}};
  } else {
    header["adapter"] = nullptr;
  }
  header["vocab"] = state.vocab.serialize();
  header["metadata"] = {{"stage", state.stage}, {"step", state.step},
                        {"seed", state.seed}};
  header["payload_bytes"] = offset;
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset + 8);
  append_payload(out, base);
  append_payload(out, adapter);
  put_u64(out, fnv1a64(out));
  return out;
}

ModelState parse_checkpoint(std::string_view b) {
  if (b.size() < kPrefix + 8) {
    corrupt(b.size(), "file too short for a checkpoint");
  }
  if (std::memcmp(b.data(), kMagic, 4) != 0) {
    corrupt(0, "bad magic");
  }
  const std::uint32_t version = static_cast<std::uint32_t>(get_le(b, 4, 4));
  if (version != kCheckpointVersion) {
    corrupt(4, "unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(b, 8, 8);
  if (header_len > b.size() - kPrefix - 8) {
    corrupt(8, "header length " + std::to_string(header_len) +
                   " runs past the end of the file");
  }
  const std::size_t body = b.size() - 8;
  const std::uint64_t stored = get_le(b, body, 8);
  if (fnv1a64(b.substr(0, body)) != stored) {
    corrupt(body, "checksum mismatch");
  }
  json header;
  try {
    header = json::parse(b.substr(kPrefix, header_len));
  } catch (const json::parse_error& e) {
    corrupt(kPrefix + e.byte, "malformed header");
  }
  const std::size_t payload_at = kPrefix + header_len;
  const std::string_view payload = b.substr(payload_at, body - payload_at);
  ModelState s;
  try {
    if (header.at("payload_bytes").get<std::uint64_t>() != payload.size()) {
      corrupt(payload_at, "payload size disagrees with the header");
    }
    const model::ModelConfig cfg = model_config_from_json(header.at("config"));
    cfg.validate();
    s.params = model::ModelParams::zeros(cfg);
    fill(header.at("tensors"), s.params.named(), payload, payload_at, "model");
    const json& a = header.at("adapter");
    if (!a.is_null()) {
      model::LoraConfig lc = lora_config_from_json(a.at("config"));
      lc.validate();
      model::LoraAdapter adapter = model::attach_lora(s.params, lc, 0);
      fill(a.at("tensors"), adapter.named(), payload, payload_at, "adapter");
      s.adapter = std::move(adapter);
    }
    s.vocab = model::Vocab::parse(header.at("vocab").get<std::string>());
    const json& m = header.at("metadata");
    s.stage = m.at("stage").get<std::string>();
    s.step = m.at("step").get<std::size_t>();
    s.seed = m.at("seed").get<std::uint64_t>();
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    corrupt(kPrefix, std::string("invalid header: ") + e.what());
  }
  return s;
}

void save_checkpoint(const ModelState& state, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace qilin::trainer
