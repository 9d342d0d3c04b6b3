// pama: data generation, training, probing, attention inspection and the
// complexity bench. One JSON object goes to stdout per run; progress goes
// to stderr.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pama/bench.hpp"
#include "pama/checkpoint.hpp"
#include "pama/config.hpp"
#include "pama/errors.hpp"
#include "pama/model.hpp"
#include "pama/synth.hpp"
#include "pama/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

struct Options {
  std::string config;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string bag;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::optional<double> label_fraction;
  std::size_t block = 0;
  std::size_t head = 0;
  bool verbose = false;
};

pama::RunConfig load_config(const Options& o, bool required) {
  if (o.config.empty()) {
    if (required) throw pama::UsageError("--config is required");
    return {};
  }
  if (!fs::exists(o.config)) throw pama::UsageError("--config: file not found: " + o.config);
  return pama::load_run_config(o.config);
}

/// Seed precedence: PAMA_SEED, then --seed, then the config file.
std::optional<std::uint64_t> seed_override(const Options& o) {
  if (const char* env = std::getenv("PAMA_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const std::exception&) {
      throw pama::ConfigError(std::string("PAMA_SEED is not an unsigned integer: ") + env);
    }
  }
  return o.seed;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw pama::UsageError(std::string(flag) + " is required");
}

void apply_overrides(pama::TrainConfig& t, const Options& o) {
  if (const auto s = seed_override(o)) t.seed = *s;
  if (o.threads) t.threads = *o.threads;
  if (o.label_fraction) t.label_fraction = *o.label_fraction;
  t.validate();
}

/// Appends each record to out/log.jsonl and echoes it to stderr when verbose.
class JsonlLog {
 public:
  JsonlLog(const fs::path& path, bool verbose) : verbose_(verbose) {
    fs::create_directories(path.parent_path());
    file_.open(path, std::ios::trunc);
    if (!file_) throw pama::IoError("cannot write " + path.string());
  }
  void operator()(const json& record) {
    file_ << record.dump() << '\n';
    file_.flush();
    if (verbose_) std::cerr << record.dump() << '\n';
  }
  pama::LogSink sink() {
    return [this](const json& r) { (*this)(r); };
  }

 private:
  std::ofstream file_;
  bool verbose_;
};

pama::ModelConfig model_for(const pama::RunConfig& cfg, const pama::Dataset& data) {
  pama::ModelConfig m = cfg.model;
  if (m.dim != data.spec.feature_dim) {
    throw pama::ConfigError("model.dim " + std::to_string(m.dim) + " does not match dataset feature_dim " +
                            std::to_string(data.spec.feature_dim));
  }
  if (m.polar_bins != data.spec.geometry.polar_bins || m.max_distance != data.spec.geometry.max_distance) {
    throw pama::ConfigError("model polar_bins/max_distance do not match the dataset geometry");
  }
  return m;
}

json metrics_json(const pama::FinetuneResult& r) {
  json j = pama::to_json(r.test);
  j["val"] = pama::to_json(r.val);
  j["best_epoch"] = r.best_epoch + 1;
  return j;
}

json cmd_gen_data(const Options& o) {
  pama::RunConfig cfg = load_config(o, true);
  require(o.out, "--out");
  if (const auto s = seed_override(o)) cfg.synth.seed = *s;
  const pama::Manifest m = pama::gen_dataset(cfg.synth, o.out);
  const std::string manifest = (fs::path(o.out) / "manifest.json").string();
  std::cerr << "wrote " << m.entries.size() << " bags, manifest " << manifest << '\n';
  return {{"manifest", manifest}, {"bags", m.entries.size()}, {"seed", cfg.synth.seed}};
}

json cmd_pretrain(const Options& o) {
  pama::RunConfig cfg = load_config(o, false);
  require(o.data, "--data");
  require(o.out, "--out");
  apply_overrides(cfg.pretrain, o);
  const pama::Dataset data = pama::load_dataset(o.data);
  JsonlLog log(fs::path(o.out) / "log.jsonl", o.verbose);
  log({{"mode", "pretrain"}, {"config", pama::to_json(cfg.pretrain)}, {"model", pama::to_json(cfg.model)}});
  const pama::PretrainResult r = pama::pretrain(data, model_for(cfg, data), cfg.pretrain, log.sink());
  const fs::path ckpt = fs::path(o.out) / "checkpoint.pamc";
  pama::save_checkpoint(r.best, ckpt);
  return {{"checkpoint", ckpt.string()},
          {"best_epoch", r.best_epoch + 1},
          {"first_train_loss", r.train_loss.front()},
          {"final_train_loss", r.train_loss.back()},
          {"best_val_loss", r.val_loss[r.best_epoch]},
          {"train_loss", r.train_loss},
          {"val_loss", r.val_loss}};
}

json cmd_supervised(const Options& o, bool probe) {
  pama::RunConfig cfg = load_config(o, false);
  require(o.data, "--data");
  require(o.out, "--out");
  pama::TrainConfig& t = probe ? cfg.probe : cfg.finetune;
  apply_overrides(t, o);
  const pama::Dataset data = pama::load_dataset(o.data);
  std::optional<pama::Checkpoint> init;
  if (!o.checkpoint.empty()) init = pama::load_checkpoint(o.checkpoint);
  JsonlLog log(fs::path(o.out) / "log.jsonl", o.verbose);
  const char* mode = probe ? "probe" : "finetune";
  log({{"mode", mode}, {"config", pama::to_json(t)}, {"checkpoint", o.checkpoint.empty() ? json() : json(o.checkpoint)}});
  if (!init) std::cerr << mode << ": no --checkpoint given, starting from random initialization\n";
  const pama::ModelConfig model = model_for(cfg, data);
  const pama::FinetuneResult r =
      probe ? pama::linear_probe(data, init, model, t, log.sink()) : pama::finetune(data, init, model, t, log.sink());
  const fs::path ckpt = fs::path(o.out) / "checkpoint.pamc";
  pama::save_checkpoint(r.checkpoint, ckpt);
  json j = metrics_json(r);
  j["checkpoint"] = ckpt.string();
  j["init"] = init ? "checkpoint" : "random";
  j["label_fraction"] = t.label_fraction;
  return j;
}

json cmd_inspect(const Options& o) {
  require(o.checkpoint, "--checkpoint");
  require(o.bag, "--bag");
  require(o.out, "--out");
  const pama::Checkpoint ckpt = pama::load_checkpoint(o.checkpoint);
  const pama::SlideBag bag = pama::load_bag(o.bag);
  const pama::ModelConfig& mc = ckpt.model.config;
  if (o.block >= mc.enc_depth) {
    throw pama::UsageError("--block " + std::to_string(o.block) + " out of range [0, " + std::to_string(mc.enc_depth) +
                           ")");
  }
  if (o.head >= mc.heads) {
    throw pama::UsageError("--head " + std::to_string(o.head) + " out of range [0, " + std::to_string(mc.heads) + ")");
  }
  const std::vector<pama::AttnState> states = pama::inspect_attention(bag, ckpt.model);
  const pama::AttnState& st = states[o.block];
  const pama::Tensor& a = st.anchor_to_patch[o.head];
  const pama::IndexMatrix& p = st.polar[o.head];
  const std::size_t n_p = bag.n_patches();
  const fs::path out(o.out);
  fs::create_directories(out);

  // Column 0 of A is the class token; the per-anchor maps cover patches only
  // and are renormalised over them.
  for (std::size_t i = 0; i < bag.n_anchors(); ++i) {
    const fs::path file = out / ("anchor_" + std::to_string(i) + ".csv");
    std::ofstream csv(file);
    if (!csv) throw pama::IoError("cannot write " + file.string());
    csv.precision(17);
    double mass = 0.0;
    for (std::size_t j = 0; j < n_p; ++j) mass += a(i, j + 1);
    csv << "col,row,score\n";
    for (std::size_t j = 0; j < n_p; ++j) {
      csv << bag.coords[j].col << ',' << bag.coords[j].row << ',' << a(i, j + 1) / mass << '\n';
    }
  }
  const fs::path hist_file = out / "polar_histogram.csv";
  std::ofstream hist(hist_file);
  if (!hist) throw pama::IoError("cannot write " + hist_file.string());
  hist.precision(17);
  hist << "anchor,bin,attention,is_reoriented_axis\n";
  const std::uint32_t bins = mc.polar_bins;
  for (std::size_t i = 0; i < bag.n_anchors(); ++i) {
    std::vector<double> h(bins, 0.0);
    for (std::size_t j = 0; j < p.cols; ++j) h[p(i, j)] += a(i, j);
    const auto axis = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
    for (std::uint32_t b = 0; b < bins; ++b) {
      hist << i << ',' << b << ',' << h[b] << ',' << (b == axis ? "true" : "false") << '\n';
    }
  }
  return {{"out", out.string()},
          {"anchors", bag.n_anchors()},
          {"patches", n_p},
          {"block", o.block},
          {"head", o.head},
          {"histogram", hist_file.string()}};
}

json cmd_bench(const Options& o) {
  pama::RunConfig cfg = load_config(o, false);
  const std::string out = o.out.empty() ? "bench.csv" : o.out;
  const std::uint64_t seed = seed_override(o).value_or(0);
  const std::size_t sizes[] = {256, 512, 1024, 2048, 4096};
  const std::size_t n_anchors = 16;
  const pama::PacaDims dims = cfg.model.paca_dims();
  const auto rows = pama::complexity_bench(sizes, n_anchors, dims, seed);

  fs::path path(out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream csv(path);
  if (!csv) throw pama::IoError("cannot write " + path.string());
  csv << "n_p,paca_macs,self_attn_macs,paca_ms,self_ms\n";
  json j_rows = json::array();
  for (const auto& r : rows) {
    csv << r.n_patches << ',' << r.paca_macs << ',' << r.self_attn_macs << ',' << r.paca_ms << ',' << r.self_ms
        << '\n';
    j_rows.push_back({{"n_p", r.n_patches},
                      {"paca_macs", r.paca_macs},
                      {"self_attn_macs", r.self_attn_macs},
                      {"paca_ms", r.paca_ms},
                      {"self_ms", r.self_ms}});
    std::cerr << "n_p=" << r.n_patches << " paca_macs=" << r.paca_macs << " self_attn_macs=" << r.self_attn_macs
              << '\n';
  }
  const auto ratio = [](std::uint64_t a, std::uint64_t b) { return static_cast<double>(a) / static_cast<double>(b); };
  const std::size_t last = rows.size() - 1;
  return {{"csv", path.string()},
          {"n_anchors", n_anchors},
          {"dim", dims.dim},
          {"rows", j_rows},
          {"paca_doubling", ratio(rows[last].paca_macs, rows[last - 1].paca_macs)},
          {"self_attn_doubling", ratio(rows[last].self_attn_macs, rows[last - 1].self_attn_macs)}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pama: position-aware masked autoencoder for slide bags"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--out", o.out, "output directory (bench: CSV path)");
    sub->add_option("--seed", o.seed, "seed override (PAMA_SEED takes precedence)");
    sub->add_flag("-v,--verbose", o.verbose, "echo log records to stderr");
  };
  const auto training = [&](CLI::App* sub) {
    common(sub);
    sub->add_option("--data", o.data, "dataset directory written by gen-data");
    sub->add_option("--threads", o.threads, "worker threads for the per-bag batch (deterministic)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  common(gen);
  CLI::App* pre = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  training(pre);
  CLI::App* fine = app.add_subcommand("finetune", "supervised fine-tuning of the whole model");
  training(fine);
  fine->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint (omit for random init)");
  fine->add_option("--label-fraction", o.label_fraction, "share of labeled training bags to use");
  CLI::App* probe = app.add_subcommand("probe", "linear probe on a frozen encoder");
  training(probe);
  probe->add_option("--checkpoint", o.checkpoint, "pretrained checkpoint (omit for random init)");
  probe->add_option("--label-fraction", o.label_fraction, "share of labeled training bags to use");
  CLI::App* inspect = app.add_subcommand("inspect-attention", "dump anchor attention maps and polar histograms");
  common(inspect);
  inspect->add_option("--checkpoint", o.checkpoint, "model checkpoint");
  inspect->add_option("--bag", o.bag, "PAMB bag file");
  inspect->add_option("--block", o.block, "encoder block index");
  inspect->add_option("--head", o.head, "attention head index");
  CLI::App* bench = app.add_subcommand("bench", "MAC counts and timings: PACA vs full self-attention");
  common(bench);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    json result;
    if (gen->parsed()) result = cmd_gen_data(o);
    else if (pre->parsed()) result = cmd_pretrain(o);
    else if (fine->parsed()) result = cmd_supervised(o, false);
    else if (probe->parsed()) result = cmd_supervised(o, true);
    else if (inspect->parsed()) result = cmd_inspect(o);
    else if (bench->parsed()) result = cmd_bench(o);
    std::cout << result.dump() << std::endl;
    return kOk;
  } catch (const pama::UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const pama::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const pama::HyperparameterMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
}
