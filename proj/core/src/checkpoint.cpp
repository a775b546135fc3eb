// SPDX-License-Identifier: Apache-2.0
#include "rhythmid/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "rhythmid/fileio.hpp"

namespace rhythmid {

using ojson = nlohmann::ordered_json;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::rhythm_only:
      return "rhythm_only";
    case ModelKind::fusion:
      return "fusion";
    case ModelKind::xvector_baseline:
      return "xvector_baseline";
  }
  return "unknown";
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "rhythm_only") return ModelKind::rhythm_only;
  if (name == "fusion") return ModelKind::fusion;
  if (name == "xvector_baseline") return ModelKind::xvector_baseline;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

const RhythmEncoderModel<float>* LoadedCheckpoint::rhythm() const {
  return dynamic_cast<const RhythmEncoderModel<float>*>(model.get());
}

namespace {

ojson encoder_json(const RhythmEncoderConfig& c) {
  return {{"d_model", c.d_model},
          {"n_heads", c.n_heads},
          {"n_layers", c.n_layers},
          {"ffn_dim", c.ffn_dim},
          {"attn_window_radius", c.attn_window_radius},
          {"dropout_rate", c.dropout_rate},
          {"max_len", c.max_len},
          {"vocab_size", c.vocab_size},
          {"n_speakers", c.n_speakers},
          {"activation", c.activation == Activation::gelu ? "gelu" : "relu"},
          {"attention", c.attention == AttentionImpl::banded ? "banded" : "dense"}};
}

RhythmEncoderConfig encoder_from(const ojson& j) {
  RhythmEncoderConfig c;
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.attn_window_radius = j.at("attn_window_radius").get<std::size_t>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.max_len = j.at("max_len").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_speakers = j.at("n_speakers").get<std::size_t>();
  c.activation = j.value("activation", "gelu") == "relu" ? Activation::relu : Activation::gelu;
  c.attention = j.value("attention", "banded") == "dense" ? AttentionImpl::dense
                                                            : AttentionImpl::banded;
  c.validate();
  return c;
}

ojson fusion_json(const FusionConfig& c) {
  return {{"xvector_dim", c.xvector_dim},
          {"projection_dim", c.projection_dim},
          {"op", c.op == FusionOp::concat ? "concat" : "sum"}};
}

FusionConfig fusion_from(const ojson& j) {
  FusionConfig c;
  c.xvector_dim = j.at("xvector_dim").get<std::size_t>();
  c.projection_dim = j.at("projection_dim").get<std::size_t>();
  c.op = j.at("op").get<std::string>() == "sum" ? FusionOp::sum : FusionOp::concat;
  return c;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

template <typename U>
void put_le(std::ostream& out, U value) {
  unsigned char bytes[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
}

template <typename U>
U get_le(std::istream& in) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof bytes)) {
    throw std::runtime_error("checkpoint truncated");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return static_cast<U>(v);
}

void write_checkpoint(std::ostream& out, ojson header,
                      const std::vector<NamedParameter<float>>& params,
                      const CheckpointMeta& meta) {
  header["vocab_fingerprint"] = hex64(meta.vocab_fingerprint);
  header["speakers"] = meta.speakers;
  ojson list = ojson::array();
  for (const auto& p : params) list.push_back({{"name", p.name}, {"shape", p.tensor.shape()}});
  header["parameters"] = std::move(list);
  const std::string text = header.dump();

  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& p : params) {
    for (float v : p.tensor.values()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

// Overwrites `params` in order from the payload, checking names and shapes.
void read_payload(std::istream& in, const ojson& header,
                  const std::vector<NamedParameter<float>>& params) {
  const auto& listed = header.at("parameters");
  if (listed.size() != params.size()) {
    throw std::runtime_error("checkpoint lists " + std::to_string(listed.size()) +
                             " parameters, model expects " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto name = listed[i].at("name").get<std::string>();
    auto shape = listed[i].at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].tensor.shape()) {
      throw std::runtime_error("checkpoint parameter " + std::to_string(i) + " is '" + name + "' " +
                               shape_to_string(shape) + ", model expects '" + params[i].name +
                               "' " + shape_to_string(params[i].tensor.shape()));
    }
    Tensor<float> t = params[i].tensor;
    for (float& v : t.mutable_values()) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  }
}

}  // namespace

std::string encoder_config_to_json(const RhythmEncoderConfig& config) {
  return encoder_json(config).dump();
}

RhythmEncoderConfig encoder_config_from_json(const std::string& text) {
  return encoder_from(ojson::parse(text));
}

void save_checkpoint(std::ostream& out, const RhythmEncoderModel<float>& model,
                     const CheckpointMeta& meta) {
  ojson header = {{"kind", to_string(ModelKind::rhythm_only)},
                  {"encoder", encoder_json(model.config())}};
  write_checkpoint(out, std::move(header), model.parameters(), meta);
}

void save_checkpoint(std::ostream& out, const FusionAssembly<float>& model,
                     const CheckpointMeta& meta) {
  ojson header = {{"kind", to_string(ModelKind::fusion)},
                  {"encoder", encoder_json(model.rhythm().config())},
                  {"fusion", fusion_json(model.config())},
                  {"n_speakers", model.num_speakers()}};
  write_checkpoint(out, std::move(header), model.parameters(), meta);
}

void save_checkpoint(std::ostream& out, const XVectorBaseline<float>& model,
                     const CheckpointMeta& meta) {
  ojson header = {{"kind", to_string(ModelKind::xvector_baseline)},
                  {"xvector_dim", model.xvector_dim()},
                  {"n_speakers", model.num_speakers()}};
  write_checkpoint(out, std::move(header), model.parameters(), meta);
}

void save_checkpoint(std::ostream& out, const SpeakerClassifier<float>& model,
                     const CheckpointMeta& meta) {
  if (auto* r = dynamic_cast<const RhythmEncoderModel<float>*>(&model)) {
    save_checkpoint(out, *r, meta);
  } else if (auto* f = dynamic_cast<const FusionAssembly<float>*>(&model)) {
    save_checkpoint(out, *f, meta);
  } else if (auto* b = dynamic_cast<const XVectorBaseline<float>*>(&model)) {
    save_checkpoint(out, *b, meta);
  } else {
    throw std::invalid_argument("save_checkpoint: unsupported model type");
  }
}

void save_checkpoint(const std::filesystem::path& path, const SpeakerClassifier<float>& model,
                     const CheckpointMeta& meta) {
  write_file_atomic(path, [&](std::ostream& out) { save_checkpoint(out, model, meta); });
}

LoadedCheckpoint load_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw std::runtime_error("not a rhythmid checkpoint (bad magic)");
  }
  const auto version = get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(in);
  if (header_len > (1ULL << 30)) throw std::runtime_error("checkpoint header too large");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
    throw std::runtime_error("checkpoint truncated");
  }

  LoadedCheckpoint loaded;
  try {
    ojson header = ojson::parse(text);
    loaded.kind = model_kind_from_string(header.at("kind").get<std::string>());
    loaded.meta.vocab_fingerprint =
        std::stoull(header.at("vocab_fingerprint").get<std::string>(), nullptr, 16);
    loaded.meta.speakers = header.at("speakers").get<std::vector<std::string>>();

    Rng scratch(0);
    switch (loaded.kind) {
      case ModelKind::rhythm_only: {
        loaded.encoder = encoder_from(header.at("encoder"));
        auto model = std::make_unique<RhythmEncoderModel<float>>(*loaded.encoder, scratch);
        read_payload(in, header, model->parameters());
        loaded.model = std::move(model);
        break;
      }
      case ModelKind::fusion: {
        loaded.encoder = encoder_from(header.at("encoder"));
        loaded.fusion = fusion_from(header.at("fusion"));
        RhythmEncoderModel<float> rhythm(*loaded.encoder, scratch);
        auto model = std::make_unique<FusionAssembly<float>>(
            std::move(rhythm), *loaded.fusion, header.at("n_speakers").get<std::size_t>(),
            scratch);
        read_payload(in, header, model->parameters());
        loaded.model = std::move(model);
        break;
      }
      case ModelKind::xvector_baseline: {
        auto model = std::make_unique<XVectorBaseline<float>>(
            header.at("xvector_dim").get<std::size_t>(),
            header.at("n_speakers").get<std::size_t>(), scratch);
        read_payload(in, header, model->parameters());
        loaded.model = std::move(model);
        break;
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed checkpoint header: ") + e.what());
  }
  if (loaded.model->num_speakers() != loaded.meta.speakers.size()) {
    throw std::runtime_error("checkpoint speaker table does not match the model head");
  }
  return loaded;
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return load_checkpoint(in);
}

}  // namespace rhythmid
