#include "pama/checkpoint.hpp"

#include <algorithm>
#include <string>

#include <nlohmann/json.hpp>

#include "pama/config.hpp"
#include "pama/detail/bytes.hpp"

namespace pama {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'M', 'C'};
constexpr std::uint64_t kPreamble = 12;  // magic + version + json_len

struct Section {
  std::string name;
  std::uint64_t offset = 0;  // bytes into the blob
  std::uint64_t length = 0;  // bytes
  std::size_t rows = 0;
  std::size_t cols = 0;
};

void append(detail::ByteWriter& blob, std::vector<Section>& index, const std::string& name, const Tensor& t) {
  const std::uint64_t offset = blob.bytes().size();
  for (double v : t.data()) blob.f32(static_cast<float>(v));
  index.push_back({name, offset, blob.bytes().size() - offset, t.rows(), t.cols()});
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter blob;
  std::vector<Section> index;
  for (const Parameter& p : ckpt.model.set) append(blob, index, p.name, p.value);
  if (ckpt.optimizer) {
    std::size_t i = 0;
    for (const Parameter& p : ckpt.model.set) {
      append(blob, index, "adam.m/" + p.name, ckpt.optimizer->m[i]);
      append(blob, index, "adam.v/" + p.name, ckpt.optimizer->v[i]);
      ++i;
    }
  }

  nlohmann::json sections = nlohmann::json::array();
  for (const Section& s : index) {
    sections.push_back({{"name", s.name},
                        {"dtype", "f32"},
                        {"offset", s.offset},
                        {"length", s.length},
                        {"shape", {s.rows, s.cols}}});
  }
  nlohmann::json header = {{"model", to_json(ckpt.model.config)},
                           {"geometry", to_json(ckpt.geometry)},
                           {"step", ckpt.step},
                           {"sections", sections}};
  if (ckpt.optimizer) header["adam_step"] = ckpt.optimizer->step;
  const std::string text = header.dump();

  detail::ByteWriter out;
  out.raw(std::span(reinterpret_cast<const std::uint8_t*>(kMagic), 4));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(text.size()));
  out.text(text);
  out.raw(blob.bytes());
  return out.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes, "checkpoint");
  const auto magic = in.take(4);
  if (!std::equal(magic.begin(), magic.end(), reinterpret_cast<const std::uint8_t*>(kMagic))) {
    throw FormatError("checkpoint: bad magic, expected \"PAMC\"", 0);
  }
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version), 4);
  }
  const std::uint32_t json_len = in.u32();
  if (json_len > in.remaining()) throw FormatError("checkpoint: header length exceeds file size", 8);
  const auto text = in.take(json_len);

  nlohmann::json header;
  ModelConfig model;
  GeometryConfig geometry;
  std::uint64_t step = 0;
  std::optional<std::uint64_t> adam_step;
  std::vector<Section> index;
  try {
    header = nlohmann::json::parse(text.begin(), text.end());
    model = model_config_from_json(header.at("model"), "checkpoint.model");
    geometry = geometry_config_from_json(header.at("geometry"), "checkpoint.geometry");
    step = header.at("step").get<std::uint64_t>();
    if (header.contains("adam_step")) adam_step = header.at("adam_step").get<std::uint64_t>();
    for (const auto& s : header.at("sections")) {
      if (s.at("dtype").get<std::string>() != "f32") throw FormatError("checkpoint: unsupported dtype", kPreamble);
      const auto shape = s.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw FormatError("checkpoint: section shape must have two entries", kPreamble);
      index.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::uint64_t>(),
                       s.at("length").get<std::uint64_t>(), shape[0], shape[1]});
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header: ") + e.what(), kPreamble);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: invalid header: ") + e.what(), kPreamble);
  }

  const std::uint64_t blob_start = kPreamble + json_len;
  const std::span<const std::uint8_t> blob = bytes.subspan(blob_start);
  Checkpoint ckpt{ModelParams::init(model, 0), geometry, std::nullopt, step};
  if (adam_step) {
    ckpt.optimizer = AdamState::zeros_like(ckpt.model.set);
    ckpt.optimizer->step = *adam_step;
  }

  std::vector<bool> filled(ckpt.model.set.size(), false);
  std::uint64_t blob_used = 0;
  for (const Section& s : index) {
    if (s.offset > blob.size() || s.length > blob.size() - s.offset) {
      throw SectionBoundsError("checkpoint: section \"" + s.name + "\" [" + std::to_string(s.offset) + ", +" +
                                   std::to_string(s.length) + ") exceeds blob of " + std::to_string(blob.size()) +
                                   " bytes",
                               blob_start + std::min<std::uint64_t>(s.offset, blob.size()));
    }
    if (s.length != 4ULL * s.rows * s.cols) {
      throw FormatError("checkpoint: section \"" + s.name + "\" length does not match its shape", kPreamble);
    }
    blob_used = std::max(blob_used, s.offset + s.length);

    std::string name = s.name;
    Tensor* target = nullptr;
    if (name.starts_with("adam.m/") || name.starts_with("adam.v/")) {
      if (!ckpt.optimizer) throw FormatError("checkpoint: optimizer section without adam_step", kPreamble);
      const bool first = name[5] == 'm';
      name = name.substr(7);
      const auto id = ckpt.model.set.find(name);
      if (!id) throw FormatError("checkpoint: unknown section \"" + s.name + "\"", kPreamble);
      target = first ? &ckpt.optimizer->m[*id] : &ckpt.optimizer->v[*id];
    } else {
      const auto id = ckpt.model.set.find(name);
      if (!id) throw FormatError("checkpoint: unknown section \"" + s.name + "\"", kPreamble);
      target = &ckpt.model.set[*id].value;
      filled[*id] = true;
    }
    if (target->rows() != s.rows || target->cols() != s.cols) {
      throw FormatError("checkpoint: section \"" + s.name + "\" has shape " + std::to_string(s.rows) + "x" +
                            std::to_string(s.cols) + ", model expects " + std::to_string(target->rows()) + "x" +
                            std::to_string(target->cols()),
                        kPreamble);
    }
    detail::ByteReader r(blob.subspan(s.offset, s.length), "checkpoint section");
    for (double& v : target->data()) v = r.f32();
  }
  for (ParamId i = 0; i < filled.size(); ++i) {
    if (!filled[i]) {
      throw FormatError("checkpoint: missing section \"" + ckpt.model.set[i].name + "\"", kPreamble);
    }
  }
  if (blob_used != blob.size()) {
    throw FormatError("checkpoint: " + std::to_string(blob.size() - blob_used) + " trailing bytes after the blob",
                      blob_start + blob_used);
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  detail::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_checkpoint(bytes);
  } catch (const SectionBoundsError& e) {
    throw SectionBoundsError(path.string() + ": " + e.message(), e.offset());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected) {
  ModelConfig have = ckpt.model.config;
  ModelConfig want = expected;
  have.n_classes = want.n_classes = 0;
  if (have == want) return;
  throw HyperparameterMismatch("checkpoint hyperparameters " + to_json(ckpt.model.config).dump() +
                               " do not match configuration " + to_json(expected).dump());
}

}  // namespace pama
