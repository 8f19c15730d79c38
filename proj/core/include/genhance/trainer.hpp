#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "genhance/model.hpp"
#include "genhance/objectives.hpp"
#include "genhance/seqcore.hpp"

namespace genhance {

/// How the reconstruction / LM negative log-likelihood enters the total loss.
enum class ReconReduction {
  /// Mean over every predicted token, end marker included.
  token_mean,
  /// Sum over positions, mean over the batch.
  sequence_sum,
};
std::string_view to_string(ReconReduction r);
ReconReduction recon_reduction_from_string(std::string_view s);

struct TrainConfig {
  int epochs = 10;
  int batch_size = 32;
  double peak_lr = 1e-3;
  LossWeights weights;
  /// Fraction of total steps after which smoothing and cycle-consistency switch on.
  double warmup_fraction = 0.5;
  /// Generative models train on this most-desirable fraction of the data.
  double subset_fraction = 0.5;
  double grad_clip = 1.0;
  MMDKernelConfig mmd;
  CycleMode cycle_mode = CycleMode::soft;
  ReconReduction recon_reduction = ReconReduction::token_mean;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  void validate() const;
};

nlohmann::ordered_json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// (more desirable, less desirable) index pairs into one minibatch.
struct PairBatch {
  std::vector<std::pair<int, int>> pairs;
};

/// Pairs items of a shuffled batch two at a time; ties are dropped, so every
/// item appears in at most one pair and every pair is strictly ordered.
PairBatch sample_pairs(std::span<const LabeledSequence> batch, DesirabilityOrder order, std::uint64_t seed);

/// Learning rate at `step` of `total` steps: peak * (1 - step / total).
double linear_lr(double peak, std::size_t step, std::size_t total);

/// True once `step` reaches floor(warmup_fraction * total).
bool secondary_active(std::size_t step, std::size_t total, double warmup_fraction);

struct LossRecord {
  std::size_t step = 0;
  int epoch = 0;
  LossParts parts;
  double total = 0.0;
  bool secondary = false;
  double lr = 0.0;
  std::size_t pairs = 0;
};

nlohmann::ordered_json to_json(const LossRecord& r);
std::string serialize_loss_log(std::span<const LossRecord> log);

struct TrainHooks {
  std::function<void(int epoch, const Seq2SeqModel&, std::span<const LossRecord>)> on_epoch_end;
  std::function<void(const LossRecord&)> on_step;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
};

/// Joint training of encoder and decoder on reconstruction + contrastive
/// losses, adding MMD smoothing and cycle-consistency after the warmup
/// midpoint. The checkpoint carries latent statistics of the training subset.
TrainResult train_genhance(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model,
                           const TrainConfig& train, const TrainHooks& hooks = {});

/// Unconditional generator: the encoder sees an empty sequence.
TrainResult train_generator(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model,
                            const TrainConfig& train, const TrainHooks& hooks = {});

/// Contrastive ranker on z_par, trained on the full dataset.
TrainResult train_discriminator(const SequenceDataset& dataset, const Vocabulary& vocab,
                                const ModelConfig& model, const TrainConfig& train,
                                const TrainHooks& hooks = {});

struct GenDiscResult {
  TrainResult generator;
  TrainResult discriminator;
};

GenDiscResult train_gendisc(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model,
                            const TrainConfig& generator_train, const TrainConfig& discriminator_train);

struct AblationFlags {
  bool without_cycle_consistency = false;
  bool without_smoothing = false;
};

TrainConfig ablation_variants(const TrainConfig& base, AblationFlags flags);

}  // namespace genhance
