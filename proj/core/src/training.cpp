#include "pama/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <thread>

#include "pama/config.hpp"
#include "pama/detail/bytes.hpp"
#include "pama/errors.hpp"

namespace pama {

namespace {

// Stream ids for Rng::derive; one per source of randomness.
enum Stream : std::uint64_t {
  kShuffle = 1,
  kTrainBag = 2,
  kValPlan = 3,
  kLabelSubset = 4,
  kInit = 5,
};

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
  return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

/// Loss and per-parameter gradient of one bag.
using BagObjective = std::function<Var(Binding&, std::size_t bag)>;

struct BatchResult {
  double loss = 0.0;  // mean over the batch
  std::vector<Tensor> grads;  // mean over the batch
};

/// Runs `objective` on each bag of `batch`, optionally spread over threads,
/// and reduces losses and gradients in batch order so the result does not
/// depend on the thread count.
BatchResult run_batch(const ParamSet& params, std::span<const std::size_t> batch, const BagObjective& objective,
                      const Binding::Predicate& trainable, std::size_t threads) {
  std::vector<double> losses(batch.size());
  std::vector<std::vector<Tensor>> grads(batch.size());
  const auto work = [&](std::size_t slot) {
    Tape tape;
    Binding bind(tape, params, trainable);
    const Var loss = objective(bind, batch[slot]);
    tape.backward(loss);
    losses[slot] = loss.value()[0];
    grads[slot] = bind.gradients();
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(threads, 1), batch.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(n_threads);
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < batch.size(); i += n_threads) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  BatchResult out;
  out.grads = std::move(grads[0]);
  out.loss = losses[0];
  for (std::size_t i = 1; i < batch.size(); ++i) {
    out.loss += losses[i];
    for (std::size_t p = 0; p < out.grads.size(); ++p) {
      auto dst = out.grads[p].data();
      auto src = grads[i][p].data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.loss *= inv;
  for (Tensor& g : out.grads) {
    for (double& v : g.data()) v *= inv;
  }
  return out;
}

std::vector<std::size_t> shuffled(std::span<const std::size_t> items, std::uint64_t seed) {
  std::vector<std::size_t> out(items.begin(), items.end());
  Rng rng(seed);
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.uniform_index(i)]);
  return out;
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

AdamConfig adam_config(const TrainConfig& cfg) {
  AdamConfig a;
  a.beta1 = cfg.beta1;
  a.beta2 = cfg.beta2;
  a.weight_decay = cfg.weight_decay;
  return a;
}

void emit(const LogSink& log, nlohmann::json record) {
  if (log) log(record);
}

std::vector<std::uint32_t> labels_of(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::uint32_t> labels;
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (!data.bags[i].label) throw UsageError("bag " + data.entries[i].file + " is unlabeled");
    labels.push_back(*data.bags[i].label);
  }
  return labels;
}

void check_labels(const Dataset& data, std::span<const std::size_t> indices, std::uint32_t n_classes) {
  for (std::uint32_t label : labels_of(data, indices)) {
    if (label >= n_classes) {
      throw DataError("class id " + std::to_string(label) + " >= n_classes " + std::to_string(n_classes));
    }
  }
}

Tensor softmax_scores(Tensor logits) {
  kernels::softmax_rows_inplace(logits);
  return logits;
}

ModelConfig with_classes(ModelConfig cfg, std::uint32_t n_classes) {
  cfg.n_classes = n_classes;
  return cfg;
}

ModelParams initial_model(const std::optional<Checkpoint>& init, const ModelConfig& cfg, std::uint64_t seed) {
  if (!init) return ModelParams::init(cfg, seed);
  require_compatible(*init, cfg);
  return transfer_encoder(init->model, cfg, seed);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: betas must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(warmup_frac >= 0.0 && warmup_frac <= 1.0)) throw ConfigError("train: warmup_frac must lie in [0, 1]");
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("train: mask_ratio must lie in (0, 1)");
  if (!(p_drop >= 0.0 && p_drop < 1.0)) throw ConfigError("train: p_drop must lie in [0, 1)");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("train: label_fraction must lie in (0, 1]");
  if (threads < 1) throw ConfigError("train: threads must be >= 1");
}

std::vector<std::size_t> Dataset::split(const std::string& name) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].split == name) out.push_back(i);
  }
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const auto bytes = detail::read_file(dir / "manifest.json");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError((dir / "manifest.json").string() + ": " + e.what());
  }
  Manifest m = manifest_from_json(j);
  if (m.entries.empty()) throw DataError(dir.string() + ": dataset has no bags");
  Dataset data;
  data.spec = m.spec;
  for (ManifestEntry& e : m.entries) {
    SlideBag bag = load_bag(dir / e.file);
    if (bag.label && *bag.label != e.label) {
      throw DataError(e.file + ": bag label " + std::to_string(*bag.label) + " disagrees with manifest class " +
                      std::to_string(e.label));
    }
    data.bags.push_back(std::move(bag));
    data.entries.push_back(std::move(e));
  }
  return data;
}

Dataset restrict_classes(const Dataset& data, std::span<const std::uint32_t> classes) {
  if (classes.size() < 2) throw ConfigError("restrict_classes: need at least two classes");
  std::map<std::uint32_t, std::uint32_t> remap;
  for (std::uint32_t c : classes) {
    if (c >= data.spec.n_classes) throw ConfigError("restrict_classes: class " + std::to_string(c) + " out of range");
    remap.emplace(c, static_cast<std::uint32_t>(remap.size()));
  }
  Dataset out;
  out.spec = data.spec;
  out.spec.n_classes = static_cast<std::uint32_t>(remap.size());
  out.spec.classes.clear();
  for (std::uint32_t c : classes) out.spec.classes.push_back(data.spec.classes[c]);
  out.spec.arrangement_pair = {0, 1};
  for (std::size_t i = 0; i < data.bags.size(); ++i) {
    const auto it = remap.find(data.entries[i].label);
    if (it == remap.end()) continue;
    ManifestEntry e = data.entries[i];
    e.label = it->second;
    SlideBag bag = data.bags[i];
    bag.label = it->second;
    out.entries.push_back(std::move(e));
    out.bags.push_back(std::move(bag));
  }
  return out;
}

std::vector<std::size_t> label_subset(const Dataset& data, std::span<const std::size_t> indices, double fraction,
                                      std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label_subset: fraction must lie in (0, 1]");
  if (fraction == 1.0) return {indices.begin(), indices.end()};
  const std::vector<std::size_t> order = shuffled(indices, Rng::derive(seed, {kLabelSubset}));
  const auto want = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(indices.size()))));

  // One bag per class first, then fill in permutation order.
  std::vector<std::size_t> chosen;
  std::vector<bool> taken(order.size(), false);
  std::map<std::uint32_t, bool> seen;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::uint32_t label = data.entries[order[i]].label;
    if (!seen[label]) {
      seen[label] = true;
      chosen.push_back(order[i]);
      taken[i] = true;
    }
  }
  for (std::size_t i = 0; i < order.size() && chosen.size() < want; ++i) {
    if (!taken[i]) chosen.push_back(order[i]);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

ModelParams transfer_encoder(const ModelParams& source, const ModelConfig& cfg, std::uint64_t seed) {
  ModelConfig a = source.config;
  ModelConfig b = cfg;
  a.n_classes = b.n_classes = 0;
  if (!(a == b)) {
    throw HyperparameterMismatch("source model " + to_json(source.config).dump() + " does not match " +
                                 to_json(cfg).dump());
  }
  ModelParams out = ModelParams::init(cfg, seed);
  for (ParamId i = 0; i < out.set.size(); ++i) {
    if (out.is_head_param(i)) continue;
    const auto id = source.set.find(out.set[i].name);
    if (!id) throw HyperparameterMismatch("source model lacks parameter " + out.set[i].name);
    out.set[i].value = source.set[*id].value;
  }
  return out;
}

Tensor predict(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices,
               std::size_t threads) {
  const std::size_t c = params.config.n_classes;
  Tensor scores(indices.size(), c);
  const auto work = [&](std::size_t slot) {
    Tape tape;
    Binding bind(tape, params.set, [](ParamId) { return false; });
    Rng rng(0);
    const Var logits = classify(bind, data.bags[indices[slot]], params, false, 0.0, rng);
    const Tensor probs = softmax_scores(logits.value());
    std::copy(probs.data().begin(), probs.data().end(), scores.row(slot).begin());
  };
  const std::size_t n_threads = std::min(std::max<std::size_t>(threads, 1), indices.size());
  if (n_threads <= 1) {
    for (std::size_t i = 0; i < indices.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < indices.size(); i += n_threads) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return scores;
}

Metrics evaluate_model(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices,
                       std::size_t threads) {
  return evaluate(labels_of(data, indices), predict(params, data, indices, threads));
}

PretrainResult pretrain(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg, const LogSink& log) {
  cfg.validate();
  const std::vector<std::size_t> train = data.split("train");
  std::vector<std::size_t> val = data.split("val");
  if (train.empty()) throw DataError("pretrain: dataset has no training bags");
  if (val.empty()) val = train;

  ModelConfig mcfg = model;
  mcfg.n_classes = 0;
  PretrainResult result;
  result.best = Checkpoint{ModelParams::init(mcfg, Rng::derive(cfg.seed, {kInit})), data.spec.geometry, {}, 0};
  ModelParams params = result.best.model;
  AdamState adam = AdamState::zeros_like(params.set);
  const AdamConfig acfg = adam_config(cfg);
  const std::size_t per_epoch = steps_per_epoch(train.size(), cfg.batch_size);
  const std::uint64_t total = per_epoch * cfg.epochs;

  // Validation masks are fixed across epochs so the curve is comparable.
  std::vector<MaskPlan> val_plans;
  for (std::size_t i : val) {
    Rng rng(Rng::derive(cfg.seed, {kValPlan, i}));
    val_plans.push_back(make_mask_plan(data.bags[i].n_patches(), cfg.mask_ratio, rng));
  }

  double best_val = INFINITY;
  std::uint64_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    const std::vector<std::size_t> order = shuffled(train, Rng::derive(cfg.seed, {kShuffle, epoch}));
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      const BatchResult res = run_batch(
          params.set, batch,
          [&](Binding& bind, std::size_t i) {
            Rng rng(Rng::derive(cfg.seed, {kTrainBag, epoch, i}));
            const MaskPlan plan = make_mask_plan(data.bags[i].n_patches(), cfg.mask_ratio, rng);
            return pretrain_loss(bind, data.bags[i], plan, params, true, cfg.p_drop, rng);
          },
          {}, cfg.threads);
      lr = cosine_lr(cfg.lr, step, total, cfg.warmup_frac);
      adam_step(params.set, res.grads, adam, acfg, lr);
      loss_sum += res.loss * static_cast<double>(batch.size());
      ++step;
    }
    const double train_loss = loss_sum / static_cast<double>(train.size());

    double val_sum = 0.0;
    for (std::size_t v = 0; v < val.size(); ++v) {
      Tape tape;
      Binding bind(tape, params.set, [](ParamId) { return false; });
      Rng rng(0);
      val_sum += pretrain_loss(bind, data.bags[val[v]], val_plans[v], params, false, 0.0, rng).value()[0];
    }
    const double val_loss = val_sum / static_cast<double>(val.size());
    result.train_loss.push_back(train_loss);
    result.val_loss.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      result.best = Checkpoint{params, data.spec.geometry, adam, step};
    }
    const double ms = elapsed_ms(t0);
    emit(log, {{"mode", "pretrain"}, {"epoch", epoch + 1}, {"split", "train"}, {"loss", train_loss}, {"lr", lr},
               {"wall_ms", ms}});
    emit(log, {{"mode", "pretrain"}, {"epoch", epoch + 1}, {"split", "val"}, {"loss", val_loss}, {"lr", lr},
               {"wall_ms", ms}});
  }
  return result;
}

namespace {

/// Shared early-stopping loop: `train_epoch` runs one epoch and returns its
/// mean training loss; `evaluate_split` scores a split with the current
/// parameters. Keeps the parameters of the best validation macro-F1.
template <typename TrainEpoch, typename EvalSplit>
FinetuneResult early_stopping_loop(const char* mode, ModelParams& params, const GeometryConfig& geometry,
                                   const TrainConfig& cfg, const LogSink& log, TrainEpoch&& train_epoch,
                                   EvalSplit&& evaluate_split) {
  FinetuneResult result;
  double best_f1 = -1.0;
  std::size_t since_best = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = Clock::now();
    double lr = 0.0;
    const double train_loss = train_epoch(epoch, lr);
    const Metrics val = evaluate_split("val");
    result.val_macro_f1.push_back(val.macro_f1);
    const double ms = elapsed_ms(t0);
    emit(log, {{"mode", mode}, {"epoch", epoch + 1}, {"split", "train"}, {"loss", train_loss}, {"lr", lr},
               {"wall_ms", ms}});
    emit(log, {{"mode", mode}, {"epoch", epoch + 1}, {"split", "val"}, {"metrics", to_json(val)}, {"lr", lr},
               {"wall_ms", ms}});
    if (val.macro_f1 > best_f1) {
      best_f1 = val.macro_f1;
      since_best = 0;
      result.best_epoch = epoch;
      result.val = val;
      result.checkpoint = Checkpoint{params, geometry, std::nullopt, epoch + 1};
    } else if (cfg.early_stop_patience > 0 && ++since_best >= cfg.early_stop_patience) {
      break;
    }
  }
  params = result.checkpoint.model;
  result.test = evaluate_split("test");
  emit(log, {{"mode", mode}, {"epoch", result.best_epoch + 1}, {"split", "test"}, {"metrics", to_json(result.test)}});
  return result;
}

}  // namespace

FinetuneResult finetune(const Dataset& data, const std::optional<Checkpoint>& init, const ModelConfig& model,
                        const TrainConfig& cfg, const LogSink& log) {
  cfg.validate();
  const ModelConfig mcfg = with_classes(model, data.n_classes());
  const std::vector<std::size_t> all_train = data.split("train");
  if (all_train.empty()) throw DataError("finetune: dataset has no training bags");
  const std::vector<std::size_t> train = label_subset(data, all_train, cfg.label_fraction, cfg.seed);
  std::vector<std::size_t> val = data.split("val");
  if (val.empty()) val = train;
  const std::vector<std::size_t> test = data.split("test");
  check_labels(data, train, mcfg.n_classes);
  check_labels(data, val, mcfg.n_classes);
  check_labels(data, test, mcfg.n_classes);

  ModelParams params = initial_model(init, mcfg, Rng::derive(cfg.seed, {kInit}));
  emit(log, {{"mode", "finetune"}, {"init", init ? "checkpoint" : "random"}, {"train_bags", train.size()}});
  AdamState adam = AdamState::zeros_like(params.set);
  const AdamConfig acfg = adam_config(cfg);
  const std::uint64_t total = steps_per_epoch(train.size(), cfg.batch_size) * cfg.epochs;
  std::uint64_t step = 0;

  const auto train_epoch = [&](std::size_t epoch, double& lr) {
    const std::vector<std::size_t> order = shuffled(train, Rng::derive(cfg.seed, {kShuffle, epoch}));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      const BatchResult res = run_batch(
          params.set, batch,
          [&](Binding& bind, std::size_t i) {
            Rng rng(Rng::derive(cfg.seed, {kTrainBag, epoch, i}));
            const Var logits = classify(bind, data.bags[i], params, true, cfg.p_drop, rng);
            return cross_entropy(logits, *data.bags[i].label);
          },
          {}, cfg.threads);
      lr = cosine_lr(cfg.lr, step, total, cfg.warmup_frac);
      adam_step(params.set, res.grads, adam, acfg, lr);
      loss_sum += res.loss * static_cast<double>(batch.size());
      ++step;
    }
    return loss_sum / static_cast<double>(train.size());
  };
  const auto evaluate_split = [&](const std::string& split) {
    const std::vector<std::size_t>& idx = split == "val" ? val : test;
    return evaluate_model(params, data, idx, cfg.threads);
  };
  return early_stopping_loop("finetune", params, data.spec.geometry, cfg, log, train_epoch, evaluate_split);
}

FinetuneResult linear_probe(const Dataset& data, const std::optional<Checkpoint>& init, const ModelConfig& model,
                            const TrainConfig& cfg, const LogSink& log) {
  cfg.validate();
  const ModelConfig mcfg = with_classes(model, data.n_classes());
  const std::vector<std::size_t> all_train = data.split("train");
  if (all_train.empty()) throw DataError("probe: dataset has no training bags");
  const std::vector<std::size_t> train = label_subset(data, all_train, cfg.label_fraction, cfg.seed);
  std::vector<std::size_t> val = data.split("val");
  if (val.empty()) val = train;
  const std::vector<std::size_t> test = data.split("test");
  check_labels(data, train, mcfg.n_classes);
  check_labels(data, val, mcfg.n_classes);
  check_labels(data, test, mcfg.n_classes);

  ModelParams params = initial_model(init, mcfg, Rng::derive(cfg.seed, {kInit}));
  emit(log, {{"mode", "probe"}, {"init", init ? "checkpoint" : "random"}, {"train_bags", train.size()}});

  // The encoder is frozen and evaluated without dropout, so each bag's class
  // embedding is fixed; compute it once.
  std::vector<Tensor> embedding(data.bags.size());
  {
    std::vector<std::size_t> needed(train);
    needed.insert(needed.end(), val.begin(), val.end());
    needed.insert(needed.end(), test.begin(), test.end());
    std::sort(needed.begin(), needed.end());
    needed.erase(std::unique(needed.begin(), needed.end()), needed.end());
    const auto work = [&](std::size_t i) {
      Tape tape;
      Binding bind(tape, params.set, [](ParamId) { return false; });
      Rng rng(0);
      embedding[i] = class_embedding(bind, data.bags[i], params, false, 0.0, rng).value();
    };
    const std::size_t n_threads = std::min(cfg.threads, needed.size());
    if (n_threads <= 1) {
      for (std::size_t i : needed) work(i);
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < n_threads; ++t) {
        pool.emplace_back([&, t] {
          for (std::size_t k = t; k < needed.size(); k += n_threads) work(needed[k]);
        });
      }
      for (auto& th : pool) th.join();
    }
  }

  // Standardise each embedding dimension with training-split statistics
  // (a parameter-free batch norm in front of the head).
  const std::size_t d = mcfg.dim;
  std::vector<double> mean(d, 0.0), inv_std(d, 0.0);
  {
    std::vector<double> var(d, 0.0);
    for (std::size_t i : train) {
      for (std::size_t c = 0; c < d; ++c) mean[c] += embedding[i][c];
    }
    for (double& m : mean) m /= static_cast<double>(train.size());
    for (std::size_t i : train) {
      for (std::size_t c = 0; c < d; ++c) var[c] += (embedding[i][c] - mean[c]) * (embedding[i][c] - mean[c]);
    }
    for (std::size_t c = 0; c < d; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] / static_cast<double>(train.size()) + 1e-6);
    for (Tensor& e : embedding) {
      if (e.empty()) continue;
      for (std::size_t c = 0; c < d; ++c) e[c] = (e[c] - mean[c]) * inv_std[c];
    }
  }

  const ParamId head_w = *params.head_w;
  const ParamId head_b = *params.head_b;
  const auto head_only = [&](ParamId id) { return id == head_w || id == head_b; };
  const auto head_logits = [&](Binding& bind, std::size_t i) {
    return add_row(matmul(bind.tape().constant(embedding[i]), bind(head_w)), bind(head_b));
  };

  AdamState adam = AdamState::zeros_like(params.set);
  const AdamConfig acfg = adam_config(cfg);
  const std::uint64_t total = steps_per_epoch(train.size(), cfg.batch_size) * cfg.epochs;
  std::uint64_t step = 0;

  const auto train_epoch = [&](std::size_t epoch, double& lr) {
    const std::vector<std::size_t> order = shuffled(train, Rng::derive(cfg.seed, {kShuffle, epoch}));
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> batch(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      const BatchResult res = run_batch(
          params.set, batch,
          [&](Binding& bind, std::size_t i) { return cross_entropy(head_logits(bind, i), *data.bags[i].label); },
          head_only, 1);
      lr = cosine_lr(cfg.lr, step, total, cfg.warmup_frac);
      adam_step(params.set, res.grads, adam, acfg, lr, head_only);
      loss_sum += res.loss * static_cast<double>(batch.size());
      ++step;
    }
    return loss_sum / static_cast<double>(train.size());
  };
  const auto evaluate_split = [&](const std::string& split) {
    const std::vector<std::size_t>& idx = split == "val" ? val : test;
    Tensor scores(idx.size(), mcfg.n_classes);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      Tape tape;
      Binding bind(tape, params.set, [](ParamId) { return false; });
      const Tensor probs = softmax_scores(head_logits(bind, idx[k]).value());
      std::copy(probs.data().begin(), probs.data().end(), scores.row(k).begin());
    }
    return evaluate(labels_of(data, idx), scores);
  };
  FinetuneResult result = early_stopping_loop("probe", params, data.spec.geometry, cfg, log, train_epoch,
                                              evaluate_split);

  // Fold the standardisation into the saved head so classify() on the raw
  // class embedding gives the same logits (up to float rounding).
  ModelParams& out = result.checkpoint.model;
  Tensor& w = out.set[*out.head_w].value;
  Tensor& b = out.set[*out.head_b].value;
  for (std::size_t k = 0; k < mcfg.n_classes; ++k) {
    double shift = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      shift += mean[c] * inv_std[c] * w(c, k);
      w(c, k) = static_cast<float>(w(c, k) * inv_std[c]);
    }
    b(0, k) = static_cast<float>(b(0, k) - shift);
  }
  return result;
}

}  // namespace pama
