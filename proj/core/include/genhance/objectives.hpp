#pragma once

// Training objectives: pairwise contrastive ranking, reconstruction / LM
// negative log-likelihood, random-feature MMD smoothing, cycle-consistency,
// and their weighted total. Scalar versions serve evaluation and tests; the
// tape versions are what the trainer differentiates.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "genhance/autograd.hpp"
#include "genhance/model.hpp"
#include "genhance/seqcore.hpp"

namespace genhance {

struct LossWeights {
  double contrast = 1.0;
  double recon = 1.0;
  double smooth = 1.0;
  double cyccon = 1.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

nlohmann::ordered_json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

struct MMDKernelConfig {
  double sigma = 14.0;
  int feature_dim = 500;
  std::uint64_t seed = 7;

  void validate() const;
  nn::RandomFeatures draw(int latent_dim) const;
};

struct LossParts {
  double contrast = 0.0;
  double recon = 0.0;
  double smooth = 0.0;
  double cyccon = 0.0;
};

/// -log sigmoid(s_better - s_worse), computed as softplus(s_worse - s_better).
double contrastive_loss(double s_better, double s_worse);

/// -sum_i log probs(i, targets[i]). `probs` rows are distributions.
double reconstruction_loss(const nn::Matrix& probs, std::span<const int> targets);
/// Same definition; the generator's rows are conditioned on the empty input.
double lm_loss(const nn::Matrix& probs, std::span<const int> targets);

double exact_gaussian_kernel(const nn::RowVector& u, const nn::RowVector& v, double sigma);
double rf_gaussian_kernel(const nn::RowVector& u, const nn::RowVector& v, const nn::RandomFeatures& features);

/// Unbiased U-statistic MMD^2 between latent rows `z` and prior rows.
double mmd_loss(const nn::Matrix& z, const nn::Matrix& prior, const nn::RandomFeatures& features);

/// How generated sequences are fed back into the encoder for cycle-consistency.
enum class CycleMode {
  /// Decoder output distributions become mixtures of input embeddings.
  soft,
  /// Argmax tokens; gradient reaches the encoder only.
  hard,
};

std::string_view to_string(CycleMode m);
CycleMode cycle_mode_from_string(std::string_view s);

/// Re-encodes the teacher-forced reconstructions described by `probs`
/// (batch * (len + 1) rows from the decoder, the last row of each group
/// being the <eos> step) and applies the pairwise logistic loss to the
/// re-encoded z_par scores. `better_worse` indexes into the batch.
nn::Var cycle_consistency(nn::Tape& tape, const Seq2SeqModel& model, nn::Var probs, int batch, int len,
                          const std::vector<std::pair<int, int>>& better_worse, CycleMode mode);

/// Full cycle for one pair: ENC -> DEC (teacher forced) -> ENC -> contrastive.
/// Rejects pairs that are not strictly ordered.
double cycle_consistency_loss(const Seq2SeqModel& model, const LabeledSequence& a, const LabeledSequence& b,
                              DesirabilityOrder order, CycleMode mode = CycleMode::soft);

/// Secondary objectives (smoothing, cycle-consistency) contribute only once
/// `secondary_active` is set.
double total_loss(const LossParts& parts, const LossWeights& weights, bool secondary_active);

}  // namespace genhance
