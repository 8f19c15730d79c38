#include "genhance/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "genhance/io.hpp"

namespace genhance {

using nn::Matrix;
using nn::Tape;
using nn::Var;

std::string_view to_string(ReconReduction r) {
  return r == ReconReduction::token_mean ? "token-mean" : "sequence-sum";
}

ReconReduction recon_reduction_from_string(std::string_view s) {
  if (s == "token-mean") return ReconReduction::token_mean;
  if (s == "sequence-sum") return ReconReduction::sequence_sum;
  throw ConfigError("unknown recon_reduction '" + std::string(s) + "' (token-mean|sequence-sum)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(peak_lr > 0.0)) throw ConfigError("train.peak_lr must be > 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw ConfigError("train.warmup_fraction must be in [0, 1]");
  if (!(subset_fraction > 0.0 && subset_fraction <= 1.0)) throw ConfigError("train.subset_fraction must be in (0, 1]");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip must be > 0");
  weights.validate();
  mmd.validate();
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["peak_lr"] = c.peak_lr;
  j["weights"] = to_json(c.weights);
  j["warmup_fraction"] = c.warmup_fraction;
  j["subset_fraction"] = c.subset_fraction;
  j["grad_clip"] = c.grad_clip;
  j["mmd"] = {{"sigma", c.mmd.sigma}, {"feature_dim", c.mmd.feature_dim}, {"seed", c.mmd.seed}};
  j["cycle_mode"] = to_string(c.cycle_mode);
  j["recon_reduction"] = to_string(c.recon_reduction);
  j["adam"] = {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}};
  j["seed"] = c.seed;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.peak_lr = j.value("peak_lr", c.peak_lr);
  if (j.contains("weights")) c.weights = loss_weights_from_json(j.at("weights"));
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.subset_fraction = j.value("subset_fraction", c.subset_fraction);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  if (j.contains("mmd")) {
    const auto& m = j.at("mmd");
    c.mmd.sigma = m.value("sigma", c.mmd.sigma);
    c.mmd.feature_dim = m.value("feature_dim", c.mmd.feature_dim);
    c.mmd.seed = m.value("seed", c.mmd.seed);
  }
  if (j.contains("cycle_mode")) c.cycle_mode = cycle_mode_from_string(j.at("cycle_mode").get<std::string>());
  if (j.contains("recon_reduction"))
    c.recon_reduction = recon_reduction_from_string(j.at("recon_reduction").get<std::string>());
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam_beta1 = a.value("beta1", c.adam_beta1);
    c.adam_beta2 = a.value("beta2", c.adam_beta2);
    c.adam_eps = a.value("eps", c.adam_eps);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

PairBatch sample_pairs(std::span<const LabeledSequence> batch, DesirabilityOrder order, std::uint64_t seed) {
  std::vector<int> idx(batch.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  PairBatch out;
  for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
    const int a = idx[k], b = idx[k + 1];
    switch (compare_labels(batch[static_cast<std::size_t>(a)].label, batch[static_cast<std::size_t>(b)].label, order)) {
      case Ordering::better: out.pairs.emplace_back(a, b); break;
      case Ordering::worse: out.pairs.emplace_back(b, a); break;
      case Ordering::tie: break;
    }
  }
  return out;
}

double linear_lr(double peak, std::size_t step, std::size_t total) {
  if (total == 0) return peak;
  return peak * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

bool secondary_active(std::size_t step, std::size_t total, double warmup_fraction) {
  const auto midpoint = static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total)));
  return step >= midpoint;
}

nlohmann::ordered_json to_json(const LossRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["contrast"] = r.parts.contrast;
  j["recon"] = r.parts.recon;
  j["smooth"] = r.parts.smooth;
  j["cyccon"] = r.parts.cyccon;
  j["total"] = r.total;
  j["secondary"] = r.secondary;
  j["lr"] = r.lr;
  j["pairs"] = r.pairs;
  return j;
}

std::string serialize_loss_log(std::span<const LossRecord> log) {
  std::string out;
  for (const auto& r : log) {
    out += to_json(r).dump();
    out.push_back('\n');
  }
  return out;
}

namespace {

class Adam {
 public:
  Adam(std::deque<nn::Parameter>& params, const TrainConfig& c)
      : params_(params), b1_(c.adam_beta1), b2_(c.adam_beta2), eps_(c.adam_eps) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
      v_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * p.grad;
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * p.grad.cwiseAbs2();
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    }
  }

 private:
  std::deque<nn::Parameter>& params_;
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<Matrix> m_, v_;
};

void clip_gradients(std::deque<nn::Parameter>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0)
    for (auto& p : params) p.grad *= max_norm / norm;
}

/// Shuffled minibatches; each batch holds sequences of a single length.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<LabeledSequence>& items, int batch_size,
                                                    std::mt19937_64& rng) {
  std::vector<std::size_t> idx(items.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (auto i : idx) by_len[items[i].sequence.length()].push_back(i);
  std::vector<std::vector<std::size_t>> batches;
  for (auto& [len, members] : by_len)
    for (std::size_t s = 0; s < members.size(); s += static_cast<std::size_t>(batch_size))
      batches.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(s),
                           members.begin() + static_cast<std::ptrdiff_t>(std::min(members.size(), s + static_cast<std::size_t>(batch_size))));
  std::shuffle(batches.begin(), batches.end(), rng);
  return batches;
}

std::size_t batches_per_epoch(const std::vector<LabeledSequence>& items, int batch_size) {
  std::map<std::size_t, std::size_t> counts;
  for (const auto& it : items) ++counts[it.sequence.length()];
  std::size_t n = 0;
  for (auto [len, c] : counts) n += (c + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  return n;
}

struct StepContext {
  std::size_t step;
  std::size_t total_steps;
  bool secondary;
  std::mt19937_64& rng;
};

struct StepOutput {
  Var total;
  LossParts parts;
  std::size_t pairs = 0;
};

using StepFn = std::function<StepOutput(Tape&, const std::vector<LabeledSequence>&, StepContext&)>;

std::vector<LossRecord> run_loop(const std::vector<LabeledSequence>& items, Seq2SeqModel& model,
                                 const TrainConfig& cfg, const TrainHooks& hooks, const StepFn& fn) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x7261696e));
  const std::size_t total = batches_per_epoch(items, cfg.batch_size) * static_cast<std::size_t>(cfg.epochs);
  Adam opt(model.parameters(), cfg);
  std::vector<LossRecord> log;
  log.reserve(total);
  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (const auto& batch_idx : epoch_batches(items, cfg.batch_size, rng)) {
      std::vector<LabeledSequence> batch;
      batch.reserve(batch_idx.size());
      for (auto i : batch_idx) batch.push_back(items[i]);
      StepContext ctx{step, total, secondary_active(step, total, cfg.warmup_fraction), rng};
      Tape tape;
      model.zero_grad();
      StepOutput out = fn(tape, batch, ctx);
      const double total_value = tape.scalar(out.total);
      if (!std::isfinite(total_value))
        throw TrainingError("training diverged at step " + std::to_string(step) + " (non-finite loss)");
      tape.backward(out.total);
      clip_gradients(model.parameters(), cfg.grad_clip);
      const double lr = linear_lr(cfg.peak_lr, step, total);
      opt.step(lr);
      LossRecord rec{step, epoch, out.parts, total_value, ctx.secondary, lr, out.pairs};
      if (hooks.on_step) hooks.on_step(rec);
      log.push_back(rec);
      ++step;
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model, log);
  }
  return log;
}

std::vector<TokenSequence> sequences_of(const std::vector<LabeledSequence>& batch) {
  std::vector<TokenSequence> out;
  out.reserve(batch.size());
  for (const auto& it : batch) out.push_back(it.sequence);
  return out;
}

nlohmann::ordered_json run_metadata(const TrainConfig& cfg, const std::vector<LossRecord>& log,
                                    std::size_t train_items) {
  nlohmann::ordered_json meta;
  meta["seed"] = cfg.seed;
  meta["epochs"] = cfg.epochs;
  meta["steps"] = log.size();
  meta["train_items"] = train_items;
  meta["train_config"] = to_json(cfg);
  std::map<int, std::pair<double, std::size_t>> per_epoch;
  for (const auto& r : log) {
    per_epoch[r.epoch].first += r.total;
    per_epoch[r.epoch].second += 1;
  }
  auto curve = nlohmann::ordered_json::array();
  for (const auto& [e, acc] : per_epoch) curve.push_back(acc.first / static_cast<double>(acc.second));
  meta["loss_curve"] = std::move(curve);
  return meta;
}

/// Negative log-likelihood of `seqs` under `logits`, reduced per `r`.
Var recon_nll(Tape& tape, Var logits, std::span<const TokenSequence> seqs, ReconReduction r) {
  const auto targets = Seq2SeqModel::decoder_targets(seqs);
  const double denom = r == ReconReduction::token_mean ? static_cast<double>(targets.size())
                                                       : static_cast<double>(seqs.size());
  return tape.scale(tape.cross_entropy_sum(logits, targets), 1.0 / denom);
}

Var weighted(Tape& tape, Var acc, Var term, double w) {
  Var t = tape.scale(term, w);
  return acc.valid() ? tape.add(acc, t) : t;
}

}  // namespace

TrainResult train_genhance(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model_cfg,
                           const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto subset = dataset.most_desirable_fraction(cfg.subset_fraction);
  auto model = std::make_shared<Seq2SeqModel>(model_cfg, vocab);
  const auto features = cfg.mmd.draw(model_cfg.latent_dim);
  const auto order = dataset.order();
  const auto& w = cfg.weights;

  auto step_fn = [&](Tape& tape, const std::vector<LabeledSequence>& batch, StepContext& ctx) {
    const auto seqs = sequences_of(batch);
    const int B = static_cast<int>(seqs.size());
    const int len = static_cast<int>(seqs.front().length());
    StepOutput out;
    Var z = model->encode(tape, seqs);
    Var logits = model->decoder_logits(tape, z, seqs);
    Var recon = recon_nll(tape, logits, seqs, cfg.recon_reduction);
    const auto pairs = sample_pairs(batch, order, derive_seed(cfg.seed, ctx.step)).pairs;
    Var contrast = tape.pairwise_logistic(tape.column(z, 0), pairs);
    out.parts.recon = tape.scalar(recon);
    out.parts.contrast = tape.scalar(contrast);
    out.pairs = pairs.size();
    Var total = weighted(tape, Var{}, contrast, w.contrast);
    total = weighted(tape, total, recon, w.recon);
    if (ctx.secondary) {
      if (w.smooth > 0.0 && B >= 2) {
        std::normal_distribution<double> gauss(0.0, 1.0);
        Matrix prior(B, model_cfg.latent_dim);
        for (Eigen::Index i = 0; i < prior.size(); ++i) prior.data()[i] = gauss(ctx.rng);
        Var smooth = tape.mmd(z, std::move(prior), features);
        out.parts.smooth = tape.scalar(smooth);
        total = weighted(tape, total, smooth, w.smooth);
      }
      if (w.cyccon > 0.0 && !pairs.empty()) {
        Var probs = tape.softmax_rows(logits);
        Var cyc = cycle_consistency(tape, *model, probs, B, len, pairs, cfg.cycle_mode);
        out.parts.cyccon = tape.scalar(cyc);
        total = weighted(tape, total, cyc, w.cyccon);
      }
    }
    out.total = total;
    return out;
  };

  TrainResult result;
  result.log = run_loop(subset.items(), *model, cfg, hooks, step_fn);
  result.checkpoint.role = ModelRole::genhance;
  result.checkpoint.model = model;
  result.checkpoint.stats = latent_stats(*model, subset);
  result.checkpoint.metadata = run_metadata(cfg, result.log, subset.size());
  return result;
}

TrainResult train_generator(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model_cfg,
                            const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  const auto subset = dataset.most_desirable_fraction(cfg.subset_fraction);
  auto model = std::make_shared<Seq2SeqModel>(model_cfg, vocab);

  auto step_fn = [&](Tape& tape, const std::vector<LabeledSequence>& batch, StepContext&) {
    const auto seqs = sequences_of(batch);
    const std::vector<TokenSequence> empty(seqs.size());
    StepOutput out;
    Var z = model->encode(tape, empty);
    Var logits = model->decoder_logits(tape, z, seqs);
    Var lm = recon_nll(tape, logits, seqs, cfg.recon_reduction);
    out.parts.recon = tape.scalar(lm);
    out.total = tape.scale(lm, cfg.weights.recon);
    return out;
  };

  TrainResult result;
  result.log = run_loop(subset.items(), *model, cfg, hooks, step_fn);
  result.checkpoint.role = ModelRole::generator;
  result.checkpoint.model = model;
  result.checkpoint.metadata = run_metadata(cfg, result.log, subset.size());
  return result;
}

TrainResult train_discriminator(const SequenceDataset& dataset, const Vocabulary& vocab,
                                const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  auto model = std::make_shared<Seq2SeqModel>(model_cfg, vocab);
  const auto order = dataset.order();

  auto step_fn = [&](Tape& tape, const std::vector<LabeledSequence>& batch, StepContext& ctx) {
    const auto seqs = sequences_of(batch);
    StepOutput out;
    const auto pairs = sample_pairs(batch, order, derive_seed(cfg.seed, ctx.step)).pairs;
    Var z = model->encode(tape, seqs);
    Var contrast = tape.pairwise_logistic(tape.column(z, 0), pairs);
    out.parts.contrast = tape.scalar(contrast);
    out.pairs = pairs.size();
    out.total = tape.scale(contrast, cfg.weights.contrast);
    return out;
  };

  TrainResult result;
  result.log = run_loop(dataset.items(), *model, cfg, hooks, step_fn);
  result.checkpoint.role = ModelRole::discriminator;
  result.checkpoint.model = model;
  result.checkpoint.stats = latent_stats(*model, dataset);
  result.checkpoint.metadata = run_metadata(cfg, result.log, dataset.size());
  return result;
}

GenDiscResult train_gendisc(const SequenceDataset& dataset, const Vocabulary& vocab, const ModelConfig& model,
                            const TrainConfig& generator_train, const TrainConfig& discriminator_train) {
  GenDiscResult out;
  out.generator = train_generator(dataset, vocab, model, generator_train);
  ModelConfig disc_cfg = model;
  disc_cfg.seed = derive_seed(model.seed, 0x64697363);
  out.discriminator = train_discriminator(dataset, vocab, disc_cfg, discriminator_train);
  return out;
}

TrainConfig ablation_variants(const TrainConfig& base, AblationFlags flags) {
  TrainConfig out = base;
  if (flags.without_cycle_consistency) out.weights.cyccon = 0.0;
  if (flags.without_smoothing) out.weights.smooth = 0.0;
  return out;
}

}  // namespace genhance
