#include "genhance/objectives.hpp"

#include <cmath>

#include "genhance/io.hpp"

namespace genhance {

using nn::Matrix;
using nn::Tape;
using nn::Var;

void LossWeights::validate() const {
  for (double w : {contrast, recon, smooth, cyccon})
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("loss weights must be finite and >= 0");
}

nlohmann::ordered_json to_json(const LossWeights& w) {
  nlohmann::ordered_json j;
  j["contrast"] = w.contrast;
  j["recon"] = w.recon;
  j["smooth"] = w.smooth;
  j["cyccon"] = w.cyccon;
  return j;
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.contrast = j.value("contrast", w.contrast);
  w.recon = j.value("recon", w.recon);
  w.smooth = j.value("smooth", w.smooth);
  w.cyccon = j.value("cyccon", w.cyccon);
  w.validate();
  return w;
}

void MMDKernelConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("mmd.sigma must be > 0");
  if (feature_dim < 1) throw ConfigError("mmd.feature_dim must be >= 1");
}

nn::RandomFeatures MMDKernelConfig::draw(int latent_dim) const {
  validate();
  return nn::RandomFeatures::draw(latent_dim, feature_dim, sigma, seed);
}

double contrastive_loss(double s_better, double s_worse) { return nn::softplus(s_worse - s_better); }

double reconstruction_loss(const Matrix& probs, std::span<const int> targets) {
  if (probs.rows() != static_cast<Eigen::Index>(targets.size()))
    throw DataError("reconstruction_loss: row count differs from target length");
  double total = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= probs.cols()) throw DataError("reconstruction_loss: target out of range");
    total -= std::log(probs(i, t));
  }
  return total;
}

double lm_loss(const Matrix& probs, std::span<const int> targets) { return reconstruction_loss(probs, targets); }

double exact_gaussian_kernel(const nn::RowVector& u, const nn::RowVector& v, double sigma) {
  if (u.size() != v.size()) throw DataError("kernel: dimension mismatch");
  return std::exp(-(u - v).squaredNorm() / (2.0 * sigma * sigma));
}

double rf_gaussian_kernel(const nn::RowVector& u, const nn::RowVector& v, const nn::RandomFeatures& features) {
  if (u.size() != v.size() || u.size() != features.input_dim()) throw DataError("kernel: dimension mismatch");
  const Matrix pu = features.map(u);
  const Matrix pv = features.map(v);
  return pu.row(0).dot(pv.row(0));
}

double mmd_loss(const Matrix& z, const Matrix& prior, const nn::RandomFeatures& features) {
  if (z.rows() < 2) throw DataError("mmd_loss: need at least two samples");
  if (prior.rows() != z.rows() || prior.cols() != z.cols()) throw DataError("mmd_loss: batch shape mismatch");
  Tape tape(false);
  return tape.scalar(tape.mmd(tape.constant(z), prior, features));
}

std::string_view to_string(CycleMode m) { return m == CycleMode::soft ? "soft" : "hard"; }

CycleMode cycle_mode_from_string(std::string_view s) {
  if (s == "soft") return CycleMode::soft;
  if (s == "hard") return CycleMode::hard;
  throw ConfigError("unknown cycle mode '" + std::string(s) + "'");
}

Var cycle_consistency(Tape& tape, const Seq2SeqModel& model, Var probs, int batch, int len,
                      const std::vector<std::pair<int, int>>& better_worse, CycleMode mode) {
  const int steps = len + 1;
  const Matrix& P = tape.value(probs);
  if (P.rows() != batch * steps) throw DataError("cycle_consistency: probability rows mismatch");
  Var z;
  if (mode == CycleMode::soft) {
    // Row layout per item: <cls> one-hot, then the distributions for x_1..x_len.
    Matrix cls = Matrix::Zero(1, P.cols());
    cls(0, Vocabulary::kCls) = 1.0;
    Var stacked = tape.concat_rows(probs, tape.constant(std::move(cls)));
    std::vector<int> rows;
    rows.reserve(static_cast<std::size_t>(batch * steps));
    for (int b = 0; b < batch; ++b) {
      rows.push_back(batch * steps);
      for (int t = 0; t < len; ++t) rows.push_back(b * steps + t);
    }
    z = model.encode_distributions(tape, tape.gather_rows(stacked, std::move(rows)), batch, len);
  } else {
    std::vector<TokenSequence> hard(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
      std::vector<int> toks;
      for (int t = 0; t < len; ++t) {
        // Argmax over content symbols only, so the result is always encodable.
        auto row = P.row(b * steps + t).tail(P.cols() - Vocabulary::kNumSpecial);
        Eigen::Index arg;
        row.maxCoeff(&arg);
        toks.push_back(static_cast<int>(arg));
      }
      hard[static_cast<std::size_t>(b)] = TokenSequence(std::move(toks));
    }
    z = model.encode(tape, hard);
  }
  return tape.pairwise_logistic(tape.column(z, 0), better_worse);
}

double cycle_consistency_loss(const Seq2SeqModel& model, const LabeledSequence& a, const LabeledSequence& b,
                              DesirabilityOrder order, CycleMode mode) {
  if (compare_labels(a.label, b.label, order) != Ordering::better)
    throw DataError("cycle_consistency_loss: first item must be strictly more desirable");
  if (a.sequence.length() != b.sequence.length())
    throw DataError("cycle_consistency_loss: pair sequences must share a length");
  Tape tape(false);
  const std::vector<TokenSequence> batch{a.sequence, b.sequence};
  Var z = model.encode(tape, batch);
  Var probs = tape.softmax_rows(model.decoder_logits(tape, z, batch));
  Var loss = cycle_consistency(tape, model, probs, 2, static_cast<int>(a.sequence.length()), {{0, 1}}, mode);
  return tape.scalar(loss);
}

double total_loss(const LossParts& parts, const LossWeights& weights, bool secondary_active) {
  double total = weights.contrast * parts.contrast + weights.recon * parts.recon;
  if (secondary_active) total += weights.smooth * parts.smooth + weights.cyccon * parts.cyccon;
  return total;
}

}  // namespace genhance
