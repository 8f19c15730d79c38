#include "test_support.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "genhance/objectives.hpp"
#include "genhance/trainer.hpp"

namespace genhance::testing {

ModelConfig toy_model_config(int max_length, int layers) {
  ModelConfig c;
  c.max_length = max_length;
  c.encoder_layers = layers;
  c.decoder_layers = layers;
  c.width = 8;
  c.heads = 2;
  c.ffn_width = 16;
  c.latent_dim = 4;
  c.seed = 3;
  return c;
}

Vocabulary toy_vocabulary(int alphabet) {
  std::vector<std::string> s;
  for (int i = 0; i < alphabet; ++i) s.emplace_back(1, static_cast<char>('A' + i));
  return Vocabulary(std::move(s));
}

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t length, int alphabet) {
  std::uniform_int_distribution<int> pick(0, alphabet - 1);
  std::vector<int> t(length);
  for (auto& v : t) v = pick(rng);
  return TokenSequence(std::move(t));
}

std::vector<LabeledSequence> random_batch(std::mt19937_64& rng, std::size_t n, std::size_t length, int alphabet) {
  std::vector<LabeledSequence> out;
  std::normal_distribution<double> g(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({random_sequence(rng, length, alphabet), Label::continuous(g(rng) + static_cast<double>(i) * 1e-3)});
  return out;
}

GradCheck check_gradients(Seq2SeqModel& model, const std::function<nn::Var(nn::Tape&)>& loss, double h) {
  model.zero_grad();
  {
    nn::Tape tape;
    auto l = loss(tape);
    tape.backward(l);
  }
  GradCheck out;
  for (auto& p : model.parameters()) {
    const nn::Matrix analytic = p.grad;
    nn::Matrix numeric(p.value.rows(), p.value.cols());
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      const double keep = p.value.data()[i];
      p.value.data()[i] = keep + h;
      double up = 0.0, down = 0.0;
      {
        nn::Tape t(false);
        up = t.scalar(loss(t));
      }
      p.value.data()[i] = keep - h;
      {
        nn::Tape t(false);
        down = t.scalar(loss(t));
      }
      p.value.data()[i] = keep;
      numeric.data()[i] = (up - down) / (2.0 * h);
      ++out.checked_entries;
    }
    const double scale = std::max(analytic.norm(), numeric.norm());
    if (scale < 1e-9) {
      ++out.skipped;
      continue;
    }
    const double rel = (analytic - numeric).norm() / scale;
    if (rel > out.max_relative_error) {
      out.max_relative_error = rel;
      out.worst_parameter = p.name;
    }
  }
  model.zero_grad();
  return out;
}

const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::contrastive: return "contrastive";
    case LossKind::reconstruction: return "reconstruction";
    case LossKind::mmd: return "mmd";
    case LossKind::cycle_soft: return "cycle-consistency (soft)";
    case LossKind::cycle_hard: return "cycle-consistency (hard)";
  }
  return "?";
}

GradCheck check_loss_gradients(LossKind kind, std::uint64_t seed, double h) {
  const int len = 5, n = 4;
  Seq2SeqModel model(toy_model_config(len), toy_vocabulary());
  std::mt19937_64 rng(seed);
  const auto batch = random_batch(rng, n, len, 5);
  std::vector<TokenSequence> seqs;
  for (const auto& it : batch) seqs.push_back(it.sequence);
  const auto pairs = sample_pairs(batch, DesirabilityOrder(Direction::higher_better), seed).pairs;
  const auto features = nn::RandomFeatures::draw(model.config().latent_dim, 500, 14.0, seed);
  nn::Matrix prior(n, model.config().latent_dim);
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < prior.size(); ++i) prior.data()[i] = g(rng);
  const auto targets = Seq2SeqModel::decoder_targets(seqs);

  auto loss = [&](nn::Tape& tape) -> nn::Var {
    nn::Var z = model.encode(tape, seqs);
    switch (kind) {
      case LossKind::contrastive: return tape.pairwise_logistic(tape.column(z, 0), pairs);
      case LossKind::reconstruction:
        return tape.scale(tape.cross_entropy_sum(model.decoder_logits(tape, z, seqs), targets), 1.0 / n);
      case LossKind::mmd: return tape.mmd(z, prior, features);
      case LossKind::cycle_soft:
      case LossKind::cycle_hard: {
        nn::Var probs = tape.softmax_rows(model.decoder_logits(tape, z, seqs));
        return cycle_consistency(tape, model, probs, n, len, pairs,
                                 kind == LossKind::cycle_soft ? CycleMode::soft : CycleMode::hard);
      }
    }
    return {};
  };
  return check_gradients(model, loss, h);
}

double brute_mmd(const nn::Matrix& z, const nn::Matrix& prior, const nn::RandomFeatures& features) {
  const int D = features.feature_dim();
  auto phi = [&](const nn::Matrix& m, Eigen::Index r) {
    std::vector<double> f(static_cast<std::size_t>(D));
    for (int k = 0; k < D; ++k) {
      double s = features.bias(k);
      for (Eigen::Index c = 0; c < m.cols(); ++c) s += features.omega(k, c) * m(r, c);
      f[static_cast<std::size_t>(k)] = std::sqrt(2.0 / D) * std::cos(s);
    }
    return f;
  };
  auto kern = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
    return s;
  };
  const auto n = z.rows();
  const auto m = prior.rows();
  std::vector<std::vector<double>> fz, fp;
  for (Eigen::Index i = 0; i < n; ++i) fz.push_back(phi(z, i));
  for (Eigen::Index i = 0; i < m; ++i) fp.push_back(phi(prior, i));
  double zz = 0.0, pp = 0.0, zp = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) zz += kern(fz[static_cast<std::size_t>(i)], fz[static_cast<std::size_t>(j)]);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) pp += kern(fp[static_cast<std::size_t>(i)], fp[static_cast<std::size_t>(j)]);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) zp += kern(fz[static_cast<std::size_t>(i)], fp[static_cast<std::size_t>(j)]);
  const double dn = static_cast<double>(n), dm = static_cast<double>(m);
  return zz / (dn * (dn - 1)) + pp / (dm * (dm - 1)) - 2.0 * zp / (dn * dm);
}

double brute_potts(const PottsOracle& oracle, const TokenSequence& x) {
  double s = 0.0;
  for (int i = 0; i < oracle.length(); ++i) s += oracle.field(i, x[static_cast<std::size_t>(i)]);
  const int A = oracle.alphabet();
  for (const auto& b : oracle.couplings())
    for (int a = 0; a < A; ++a)
      for (int c = 0; c < A; ++c)
        if (x[static_cast<std::size_t>(b.i)] == a && x[static_cast<std::size_t>(b.j)] == c)
          s += b.table[static_cast<std::size_t>(a * A + c)];
  return s;
}

std::size_t brute_levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1] ? 1u : 0u)});
  return d[a.size()][b.size()];
}

}  // namespace genhance::testing
