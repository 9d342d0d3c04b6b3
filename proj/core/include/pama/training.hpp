#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pama/checkpoint.hpp"
#include "pama/metrics.hpp"
#include "pama/model.hpp"
#include "pama/optim.hpp"
#include "pama/synth.hpp"

namespace pama {

enum class TrainMode { pretrain, finetune, probe };

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  double lr = 1e-3;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double warmup_frac = 0.1;
  std::uint64_t seed = 0;
  double mask_ratio = 0.75;  // r
  double p_drop = 0.0;       // anchor dropout
  std::size_t early_stop_patience = 10;  // epochs without val macro-F1 gain; 0 disables
  double label_fraction = 1.0;           // share of labeled train bags used (finetune, probe)
  std::size_t threads = 1;               // >1: bags of a batch run in parallel, reduced in bag order

  void validate() const;
};

/// Bags of a generated dataset plus their manifest rows (same order).
struct Dataset {
  SynthSpec spec;
  std::vector<ManifestEntry> entries;
  std::vector<SlideBag> bags;

  std::vector<std::size_t> split(const std::string& name) const;
  std::uint32_t n_classes() const { return spec.n_classes; }
};

/// Reads dir/manifest.json and every bag it lists.
Dataset load_dataset(const std::filesystem::path& dir);

/// Keeps only bags of the listed classes and relabels them 0..k-1 in list order.
Dataset restrict_classes(const Dataset& data, std::span<const std::uint32_t> classes);

/// Seeded subset of `indices` holding round(fraction * n) bags, at least one per class present.
std::vector<std::size_t> label_subset(const Dataset& data, std::span<const std::size_t> indices, double fraction,
                                      std::uint64_t seed);

/// Receives one JSON record per epoch and split.
using LogSink = std::function<void(const nlohmann::json&)>;

struct PretrainResult {
  Checkpoint best;  // lowest validation reconstruction loss
  std::vector<double> train_loss;  // per-epoch mean masked MSE over training bags
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
};

PretrainResult pretrain(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg,
                        const LogSink& log = {});

struct FinetuneResult {
  Checkpoint checkpoint;  // parameters from the best validation epoch
  Metrics val;
  Metrics test;
  std::size_t best_epoch = 0;
  std::vector<double> val_macro_f1;
};

/// Full fine-tuning with cross-entropy on class-token logits. `init` supplies
/// pretrained weights (the task head is always fresh); without it the model
/// starts from random parameters built from `model`.
FinetuneResult finetune(const Dataset& data, const std::optional<Checkpoint>& init, const ModelConfig& model,
                        const TrainConfig& cfg, const LogSink& log = {});

/// Frozen encoder, trainable task head. Class embeddings are computed once.
FinetuneResult linear_probe(const Dataset& data, const std::optional<Checkpoint>& init, const ModelConfig& model,
                            const TrainConfig& cfg, const LogSink& log = {});

/// Eval-mode softmax scores on the given bags, one row per bag.
Tensor predict(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices,
               std::size_t threads = 1);

Metrics evaluate_model(const ModelParams& params, const Dataset& data, std::span<const std::size_t> indices,
                       std::size_t threads = 1);

/// Model built for `cfg` whose encoder-side parameters come from `source`.
/// Throws HyperparameterMismatch when the architectures differ.
ModelParams transfer_encoder(const ModelParams& source, const ModelConfig& cfg, std::uint64_t seed);

}  // namespace pama
