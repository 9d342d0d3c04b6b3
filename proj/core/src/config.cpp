#include "pama/config.hpp"

#include <fstream>
#include <string>

#include "pama/detail/bytes.hpp"
#include "pama/detail/strict_json.hpp"
#include "pama/errors.hpp"

namespace pama {

namespace {

TrainMode parse_mode(const std::string& s, const std::string& path) {
  if (s == "pretrain") return TrainMode::pretrain;
  if (s == "finetune") return TrainMode::finetune;
  if (s == "probe") return TrainMode::probe;
  throw ConfigError(path + ".mode: expected pretrain, finetune or probe, got \"" + s + "\"");
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::probe: return "probe";
  }
  return "?";
}

nlohmann::json to_json(const GeometryConfig& g) {
  return {{"patches_per_anchor", g.patches_per_anchor},
          {"polar_bins", g.polar_bins},
          {"max_distance", g.max_distance},
          {"kmeans_iters", g.kmeans_iters},
          {"seed", g.seed}};
}

GeometryConfig geometry_config_from_json(const nlohmann::json& j, const std::string& path) {
  GeometryConfig g;
  detail::StrictReader r(j, path);
  r.get("patches_per_anchor", g.patches_per_anchor);
  r.get("polar_bins", g.polar_bins);
  r.get("max_distance", g.max_distance);
  r.get("kmeans_iters", g.kmeans_iters);
  r.get("seed", g.seed);
  r.finish();
  g.validate();
  return g;
}

nlohmann::json to_json(const ModelConfig& m) {
  return {{"dim", m.dim},
          {"heads", m.heads},
          {"enc_depth", m.enc_depth},
          {"dec_depth", m.dec_depth},
          {"mlp_ratio", m.mlp_ratio},
          {"polar_bins", m.polar_bins},
          {"max_distance", m.max_distance},
          {"max_anchors", m.max_anchors},
          {"n_classes", m.n_classes},
          {"reorient", m.reorient}};
}

ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path) {
  return model_config_from_json(j, ModelConfig{}, path);
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig m, const std::string& path) {
  detail::StrictReader r(j, path);
  r.get("dim", m.dim);
  r.get("heads", m.heads);
  r.get("enc_depth", m.enc_depth);
  r.get("dec_depth", m.dec_depth);
  r.get("mlp_ratio", m.mlp_ratio);
  r.get("polar_bins", m.polar_bins);
  r.get("max_distance", m.max_distance);
  r.get("max_anchors", m.max_anchors);
  r.get("n_classes", m.n_classes);
  r.get("reorient", m.reorient);
  r.finish();
  m.validate();
  return m;
}

nlohmann::json to_json(const TrainConfig& t) {
  return {{"mode", to_string(t.mode)},
          {"lr", t.lr},
          {"weight_decay", t.weight_decay},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"warmup_frac", t.warmup_frac},
          {"seed", t.seed},
          {"mask_ratio", t.mask_ratio},
          {"p_drop", t.p_drop},
          {"early_stop_patience", t.early_stop_patience},
          {"label_fraction", t.label_fraction},
          {"threads", t.threads}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig t, const std::string& path) {
  detail::StrictReader r(j, path);
  std::string mode;
  if (r.get("mode", mode)) t.mode = parse_mode(mode, path);
  r.get("lr", t.lr);
  r.get("weight_decay", t.weight_decay);
  r.get("beta1", t.beta1);
  r.get("beta2", t.beta2);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("warmup_frac", t.warmup_frac);
  r.get("seed", t.seed);
  r.get("mask_ratio", t.mask_ratio);
  r.get("p_drop", t.p_drop);
  r.get("early_stop_patience", t.early_stop_patience);
  r.get("label_fraction", t.label_fraction);
  r.get("threads", t.threads);
  r.finish();
  t.validate();
  return t;
}

RunConfig::RunConfig() {
  model.dim = synth.feature_dim;
  model.max_anchors = 16;
  pretrain.mode = TrainMode::pretrain;
  finetune.mode = TrainMode::finetune;
  finetune.lr = 1e-4;
  probe.mode = TrainMode::probe;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::StrictReader r(j, "config");
  if (const auto* s = r.child("synth")) {
    c.synth = synth_spec_from_json(*s);
    c.model.dim = c.synth.feature_dim;
  }
  if (const auto* m = r.child("model")) c.model = model_config_from_json(*m, c.model, "model");
  if (const auto* t = r.child("pretrain")) c.pretrain = train_config_from_json(*t, c.pretrain, "pretrain");
  if (const auto* t = r.child("finetune")) c.finetune = train_config_from_json(*t, c.finetune, "finetune");
  if (const auto* t = r.child("probe")) c.probe = train_config_from_json(*t, c.probe, "probe");
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"synth", to_json(c.synth)},
          {"model", to_json(c.model)},
          {"pretrain", to_json(c.pretrain)},
          {"finetune", to_json(c.finetune)},
          {"probe", to_json(c.probe)}};
}

}  // namespace pama
