#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "genhance/autograd.hpp"
#include "genhance/model.hpp"
#include "genhance/oracle.hpp"
#include "genhance/search.hpp"

using namespace genhance;

namespace {

std::vector<TokenSequence> random_batch(std::size_t n, int length, int alphabet, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  std::vector<TokenSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<int> t(static_cast<std::size_t>(length));
    for (auto& v : t) v = sym(rng);
    out.emplace_back(std::move(t));
  }
  return out;
}

nn::Matrix gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  nn::Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

const Seq2SeqModel& default_model() {
  static const Seq2SeqModel model(ModelConfig{}, Vocabulary::amino_acids());
  return model;
}

}  // namespace

// Forward + backward of one self-attention call; args: batch, length.
static void BM_Attention(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0)), len = static_cast<int>(state.range(1));
  const int width = 128, heads = 4;
  std::mt19937_64 rng(1);
  nn::Parameter q("q", gaussian(batch * len, width, rng)), k("k", gaussian(batch * len, width, rng)),
      v("v", gaussian(batch * len, width, rng));
  for (auto _ : state) {
    nn::Tape tape;
    auto Q = tape.parameter(q), K = tape.parameter(k), V = tape.parameter(v);
    auto out = tape.attention(Q, K, V, batch, len, len, heads, true);
    tape.backward(tape.sum(out));
    benchmark::DoNotOptimize(q.grad.data());
  }
}
BENCHMARK(BM_Attention)->Args({32, 49})->Args({8, 49})->Unit(benchmark::kMillisecond);

// Reconstruction forward + backward for a batch of 32 length-48 sequences.
static void BM_ReconstructionStep(benchmark::State& state) {
  Seq2SeqModel model(ModelConfig{}, Vocabulary::amino_acids());
  const auto batch = random_batch(32, 48, 20, 2);
  const auto targets = Seq2SeqModel::decoder_targets(batch);
  for (auto _ : state) {
    model.zero_grad();
    nn::Tape tape;
    auto z = model.encode(tape, batch);
    auto logits = model.decoder_logits(tape, z, batch);
    tape.backward(tape.cross_entropy_sum(logits, targets));
  }
}
BENCHMARK(BM_ReconstructionStep)->Unit(benchmark::kMillisecond);

static void BM_EncodeBatch(benchmark::State& state) {
  const auto batch = random_batch(static_cast<std::size_t>(state.range(0)), 48, 20, 3);
  for (auto _ : state) benchmark::DoNotOptimize(default_model().encode_batch(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncodeBatch)->Arg(1)->Arg(64)->Unit(benchmark::kMillisecond);

// Cached autoregressive decoding of 64 sequences up to length 48.
static void BM_DecodeBatch(benchmark::State& state) {
  const auto seeds = random_batch(64, 48, 20, 4);
  const auto zs = default_model().encode_batch(seeds);
  std::mt19937_64 rng(5);
  for (auto _ : state) benchmark::DoNotOptimize(default_model().decode_batch(zs, DecodingSpec{}, rng));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_DecodeBatch)->Unit(benchmark::kMillisecond);

static void BM_PottsScore(benchmark::State& state) {
  const auto oracle = PottsOracle::random(PottsSpec{});
  const auto xs = random_batch(1024, 48, 20, 6);
  for (auto _ : state)
    for (const auto& x : xs) benchmark::DoNotOptimize(oracle.score(x));
  state.SetItemsProcessed(state.iterations() * 1024);
}
BENCHMARK(BM_PottsScore);

static void BM_PottsSubstitutionDelta(benchmark::State& state) {
  const auto oracle = PottsOracle::random(PottsSpec{});
  const auto x = random_batch(1, 48, 20, 7).front();
  int pos = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(oracle.substitution_delta(x, pos, (x[static_cast<std::size_t>(pos)] + 1) % 20));
    pos = (pos + 1) % 48;
  }
}
BENCHMARK(BM_PottsSubstitutionDelta);

// Ten MCMC iterations over 32 chains with a model ranker as fitness.
static void BM_McmcIterations(benchmark::State& state) {
  auto model = std::make_shared<Seq2SeqModel>(ModelConfig{}, Vocabulary::amino_acids());
  ModelRanker ranker(model, "bench");
  CurationConfig space;
  space.wild_type = random_batch(1, 48, 20, 8).front();
  const auto op = ProposalOperator::uniform(space, 20);
  const std::vector<TokenSequence> init(32, space.wild_type);
  MCMCConfig cfg;
  cfg.iterations = 10;
  for (auto _ : state) benchmark::DoNotOptimize(mcmc_run(ranker, init, op, cfg));
  state.SetItemsProcessed(state.iterations() * 320);
}
BENCHMARK(BM_McmcIterations)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
