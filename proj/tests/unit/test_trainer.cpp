#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "genhance/io.hpp"
#include "genhance/oracle.hpp"
#include "genhance/trainer.hpp"
#include "test_support.hpp"

using namespace genhance;
using namespace genhance::testing;

namespace {

const DesirabilityOrder kLower{Direction::lower_better};

double spearman(std::vector<double> a, std::vector<double> b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double d2 = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d2 += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

/// Short Potts landscape with curated data, small enough for unit tests.
struct ToyTask {
  PottsOracle oracle;
  CurationConfig curation;
  Vocabulary vocab = toy_vocabulary(6);

  explicit ToyTask(std::uint64_t seed = 1)
      : oracle(PottsOracle::random(PottsSpec{12, 6, 1.0, 16, 0.5, seed})) {
    curation.constant_region = TokenSequence({1, 2});
    curation.constant_offset = 5;
    curation.wild_type = make_wild_type(12, 6, curation.constant_region, 5, seed + 1);
  }

  SequenceDataset curate(std::size_t n, std::uint64_t seed) const {
    auto c = curation;
    c.sample_count = n;
    c.seed = seed;
    c.max_mutations = 10;
    c.substitution_prob = 0.4;
    return curate_dataset(c, oracle).dataset;
  }
};

ModelConfig small_config() {
  ModelConfig c;
  c.max_length = 12;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.width = 32;
  c.heads = 2;
  c.ffn_width = 64;
  c.latent_dim = 8;
  return c;
}

}  // namespace

TEST(SamplePairs, TwoDistinctLabels) {
  std::vector<LabeledSequence> b{{TokenSequence({0}), Label::continuous(1)}, {TokenSequence({1}), Label::continuous(-1)}};
  const auto p = sample_pairs(b, kLower, 3).pairs;
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0], std::make_pair(1, 0));
}

TEST(SamplePairs, AllTiesGiveNoPairs) {
  std::vector<LabeledSequence> b(6, {TokenSequence({0}), Label::continuous(2)});
  EXPECT_TRUE(sample_pairs(b, kLower, 1).pairs.empty());
}

TEST(SamplePairs, EveryPairCorrectlyOrdered) {
  std::mt19937_64 rng(3);
  std::vector<LabeledSequence> batch;
  std::uniform_int_distribution<int> lab(1, 5);
  for (int i = 0; i < 32; ++i) batch.push_back({TokenSequence({i % 4}), Label::ordinal(lab(rng))});
  const DesirabilityOrder higher(Direction::higher_better);
  std::size_t total = 0;
  for (std::uint64_t s = 0; total < 10000; ++s) {
    for (auto [a, b] : sample_pairs(batch, higher, s).pairs) {
      ASSERT_EQ(compare_labels(batch[static_cast<std::size_t>(a)].label, batch[static_cast<std::size_t>(b)].label, higher),
                Ordering::better);
      ++total;
    }
  }
}

TEST(Schedule, LinearLrAndMidpoint) {
  EXPECT_EQ(linear_lr(1e-3, 0, 100), 1e-3);
  EXPECT_NEAR(linear_lr(1e-3, 50, 100), 5e-4, 1e-18);
  EXPECT_FALSE(secondary_active(49, 100, 0.5));
  EXPECT_TRUE(secondary_active(50, 100, 0.5));
}

TEST(Ablation, Variants) {
  TrainConfig base;
  EXPECT_EQ(ablation_variants(base, {}).weights, base.weights);
  const auto no_cc = ablation_variants(base, {true, false});
  EXPECT_EQ(no_cc.weights.cyccon, 0.0);
  EXPECT_EQ(no_cc.weights.smooth, base.weights.smooth);
  EXPECT_EQ(no_cc.weights.contrast, base.weights.contrast);
  const auto none = ablation_variants(base, {true, true});
  EXPECT_EQ(none.weights.cyccon, 0.0);
  EXPECT_EQ(none.weights.smooth, 0.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.epochs = 3;
  c.cycle_mode = CycleMode::hard;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_ANY_THROW(train_config_from_json(nlohmann::json{{"epochs", 0}}));
  EXPECT_ANY_THROW(train_config_from_json(nlohmann::json{{"warmup_fraction", 1.5}}));
}

TEST(TrainGenhance, SecondaryLossesOffBeforeMidpoint) {
  ToyTask task;
  const auto data = task.curate(64, 2);
  TrainConfig tc;
  tc.epochs = 4;
  tc.batch_size = 16;
  tc.subset_fraction = 1.0;
  tc.mmd.feature_dim = 50;
  const auto res = train_genhance(data, task.vocab, toy_model_config(12, 1), tc);
  const std::size_t total = res.log.size();
  bool saw_smooth = false, saw_cyc = false;
  for (const auto& r : res.log) {
    if (r.step < total / 2) {
      ASSERT_EQ(r.parts.smooth, 0.0);
      ASSERT_EQ(r.parts.cyccon, 0.0);
      ASSERT_FALSE(r.secondary);
    } else {
      saw_smooth |= r.parts.smooth != 0.0;
      saw_cyc |= r.parts.cyccon != 0.0;
    }
  }
  EXPECT_TRUE(saw_smooth);
  EXPECT_TRUE(saw_cyc);
  ASSERT_TRUE(res.checkpoint.stats.has_value());
}

TEST(TrainGenhance, SameSeedSameCheckpoint) {
  ToyTask task;
  const auto data = task.curate(48, 3);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 16;
  tc.mmd.feature_dim = 50;
  const auto a = train_genhance(data, task.vocab, toy_model_config(12, 1), tc).checkpoint.serialize();
  const auto b = train_genhance(data, task.vocab, toy_model_config(12, 1), tc).checkpoint.serialize();
  EXPECT_EQ(sha256_hex(a), sha256_hex(b));
}

TEST(TrainGenhance, OverfitsFiftyItems) {
  ToyTask task;
  const auto data = task.curate(50, 4);
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 25;
  tc.peak_lr = 3e-3;
  tc.subset_fraction = 1.0;
  tc.weights = LossWeights{1.0, 1.0, 0.0, 0.0};
  const auto res = train_genhance(data, task.vocab, small_config(), tc);
  std::mt19937_64 rng(1);
  int exact = 0;
  for (const auto& it : data.items()) {
    const auto g = res.checkpoint.model->decode(res.checkpoint.model->encode(it.sequence), DecodingSpec::greedy(), rng);
    exact += g.sequence == it.sequence;
  }
  EXPECT_GE(exact, 48) << "exact reconstructions " << exact << "/50";
}

TEST(TrainGenhance, LatentRanksHeldOutByOracle) {
  ToyTask task;
  const auto data = task.curate(3000, 5);
  const auto held = task.curate(1000, 6);
  TrainConfig tc;
  tc.epochs = 6;
  tc.subset_fraction = 1.0;
  tc.mmd.feature_dim = 100;
  const auto res = train_genhance(data, task.vocab, small_config(), tc);
  std::vector<double> z, y;
  for (const auto& it : held.items()) {
    z.push_back(res.checkpoint.model->encode(it.sequence).parallel);
    y.push_back(-task.oracle.score(it.sequence));  // desirability
  }
  EXPECT_GE(spearman(z, y), 0.6);
}

TEST(TrainGendisc, GeneratorBeatsUniformAndDiscriminatorRanks) {
  ToyTask task;
  const auto data = task.curate(3000, 7);
  const auto held = task.curate(500, 8);
  TrainConfig gen, disc;
  gen.epochs = 4;
  gen.subset_fraction = 1.0;
  disc.epochs = 6;
  const auto res = train_gendisc(data, task.vocab, small_config(), gen, disc);

  const auto& last = res.generator.log.back();
  EXPECT_LT(last.parts.recon, std::log(6.0));  // token mean, end marker included

  const auto& m = *res.discriminator.checkpoint.model;
  std::size_t correct = 0, pairs = 0;
  const auto& items = held.items();
  for (std::size_t i = 0; i + 1 < items.size(); i += 2) {
    const double ya = task.oracle.score(items[i].sequence), yb = task.oracle.score(items[i + 1].sequence);
    if (ya == yb) continue;
    const double za = m.encode(items[i].sequence).parallel, zb = m.encode(items[i + 1].sequence).parallel;
    correct += (ya < yb) == (za > zb);
    ++pairs;
  }
  EXPECT_GE(static_cast<double>(correct) / static_cast<double>(pairs), 0.8);

  for (const auto* r : {&res.generator, &res.discriminator}) {
    const auto bytes = r->checkpoint.serialize();
    EXPECT_EQ(Checkpoint::parse(bytes).serialize(), bytes);
  }
  EXPECT_EQ(res.generator.checkpoint.role, ModelRole::generator);
  EXPECT_EQ(res.discriminator.checkpoint.role, ModelRole::discriminator);
}

TEST(TrainGenerator, LengthsMatchTraining) {
  ToyTask task;
  const auto data = task.curate(600, 9);
  TrainConfig gen;
  gen.epochs = 8;
  gen.subset_fraction = 1.0;
  const auto res = train_generator(data, task.vocab, small_config(), gen);
  std::mt19937_64 rng(3);
  const LatentVector empty = res.checkpoint.model->encode(TokenSequence());
  std::vector<LatentVector> zs(200, empty);
  double dev = 0.0;
  for (const auto& g : res.checkpoint.model->decode_batch(zs, DecodingSpec{}, rng))
    dev += std::abs(static_cast<double>(g.sequence.length()) - 12.0);
  EXPECT_LE(dev / 200.0, 2.0);
}
