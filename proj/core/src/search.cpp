#include "genhance/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "genhance/io.hpp"

namespace genhance {

using nn::Matrix;

ModelRanker::ModelRanker(std::shared_ptr<const Seq2SeqModel> model, std::string name)
    : model_(std::move(model)), name_(std::move(name)) {
  if (!model_) throw ConfigError("ModelRanker needs a model");
}

std::vector<double> ModelRanker::score(std::span<const TokenSequence> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& z : model_->encode_batch(xs)) out.push_back(score_latent(z));
  return out;
}

OracleRanker::OracleRanker(PottsOracle oracle, DesirabilityOrder order)
    : oracle_(std::move(oracle)), order_(order) {}

std::vector<double> OracleRanker::score(std::span<const TokenSequence> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(order_.desirability(oracle_.score(x)));
  return out;
}

std::vector<double> ConstantRanker::score(std::span<const TokenSequence> xs) const {
  return std::vector<double>(xs.size(), value_);
}

std::vector<double> FunctionRanker::score(std::span<const TokenSequence> xs) const {
  std::vector<double> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(fn_(x));
  return out;
}

std::vector<double> RandomRanker::score(std::span<const TokenSequence> xs) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> out(xs.size());
  for (auto& v : out) v = unif(rng_);
  return out;
}

std::string_view to_string(CandidateSource s) {
  switch (s) {
    case CandidateSource::genhance: return "genhance";
    case CandidateSource::gendisc: return "gendisc";
    case CandidateSource::mcmc: return "mcmc";
  }
  return "genhance";
}

CandidateSource candidate_source_from_string(std::string_view s) {
  if (s == "genhance") return CandidateSource::genhance;
  if (s == "gendisc") return CandidateSource::gendisc;
  if (s == "mcmc") return CandidateSource::mcmc;
  throw DataError("unknown candidate source '" + std::string(s) + "'");
}

std::vector<TokenSequence> CandidatePool::sequences() const {
  std::vector<TokenSequence> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(c.sequence);
  return out;
}

// ---- pool files ---------------------------------------------------------------

std::string serialize_pool(const CandidatePool& pool, const Vocabulary& vocab) {
  std::ostringstream os;
  nlohmann::ordered_json head;
  head["record"] = "provenance";
  head["method"] = pool.provenance.method;
  head["checkpoint_hash"] = pool.provenance.checkpoint_hash;
  head["ranker_hash"] = pool.provenance.ranker_hash;
  head["config_hash"] = pool.provenance.config_hash;
  head["seed"] = pool.provenance.seed;
  head["size"] = pool.candidates.size();
  head["parameters"] = pool.provenance.parameters;
  os << head.dump() << '\n';
  for (const auto& c : pool.candidates) {
    nlohmann::ordered_json j;
    j["tokens"] = c.sequence.render(vocab);
    j["ranker_score"] = c.score;
    j["source"] = to_string(c.source);
    j["seed_ref"] = c.seed_ref;
    j["chain_id"] = c.chain_id;
    j["generation_seed"] = c.generation_seed;
    j["valid"] = c.valid;
    os << j.dump() << '\n';
  }
  return os.str();
}

CandidatePool parse_pool(std::string_view text, const Vocabulary& vocab) {
  CandidatePool pool;
  std::istringstream is{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::size_t declared = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("pool line " + std::to_string(lineno) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (j.value("record", "") != "provenance") throw DataError("pool file must start with a provenance record");
        pool.provenance.method = j.at("method").get<std::string>();
        pool.provenance.checkpoint_hash = j.at("checkpoint_hash").get<std::string>();
        pool.provenance.ranker_hash = j.at("ranker_hash").get<std::string>();
        pool.provenance.config_hash = j.at("config_hash").get<std::string>();
        pool.provenance.seed = j.at("seed").get<std::uint64_t>();
        declared = j.at("size").get<std::size_t>();
        pool.provenance.parameters = nlohmann::ordered_json::parse(j.at("parameters").dump());
        have_header = true;
        continue;
      }
      RankedCandidate c;
      c.sequence = TokenSequence::parse(j.at("tokens").get<std::string>(), vocab);
      c.score = j.at("ranker_score").get<double>();
      c.source = candidate_source_from_string(j.at("source").get<std::string>());
      c.seed_ref = j.at("seed_ref").get<int>();
      c.chain_id = j.at("chain_id").get<int>();
      c.generation_seed = j.at("generation_seed").get<std::uint64_t>();
      c.valid = j.at("valid").get<bool>();
      if (!std::isfinite(c.score)) throw DataError("non-finite ranker score");
      pool.candidates.push_back(std::move(c));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("pool line " + std::to_string(lineno) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("pool line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_header) throw DataError("pool file is empty");
  if (declared != pool.candidates.size())
    throw DataError("pool header declares " + std::to_string(declared) + " records, found " +
                    std::to_string(pool.candidates.size()));
  return pool;
}

void write_pool(const std::filesystem::path& path, const CandidatePool& pool, const Vocabulary& vocab) {
  write_file_atomic(path, serialize_pool(pool, vocab));
}

CandidatePool read_pool(const std::filesystem::path& path, const Vocabulary& vocab) {
  return parse_pool(read_file(path), vocab);
}

// ---- ranking ------------------------------------------------------------------

std::vector<RankedCandidate> rank(std::span<const RankedCandidate> pool, std::size_t k) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pool[a].score > pool[b].score; });
  idx.resize(std::min(k, idx.size()));
  std::vector<RankedCandidate> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(pool[i]);
  return out;
}

CandidatePool rescore(const CandidatePool& pool, const Ranker& ranker) {
  CandidatePool out = pool;
  const auto scores = ranker.score(pool.sequences());
  for (std::size_t i = 0; i < scores.size(); ++i) out.candidates[i].score = scores[i];
  out.provenance.parameters["rescored_by"] = ranker.name();
  return out;
}

// ---- generative sampling --------------------------------------------------------

namespace {

void check_yield(std::size_t attempts, std::size_t kept, const SamplingBudget& budget, std::string_view what) {
  if (attempts < budget.min_attempts) return;
  const double yield = static_cast<double>(kept) / static_cast<double>(attempts);
  if (yield < budget.min_yield) {
    std::ostringstream os;
    os << what << ": validity yield " << yield * 100.0 << "% after " << attempts
       << " draws is below the minimum of " << budget.min_yield * 100.0
       << "%; the model rarely produces the wild-type length with the constant region intact";
    throw DataError(os.str());
  }
}

std::string checkpoint_hash(const Checkpoint& c) { return sha256_hex(c.serialize()); }

}  // namespace

CandidatePool genhance_sample(const Checkpoint& checkpoint, std::span<const TokenSequence> seeds,
                              double delta_fraction, std::size_t n, const DecodingSpec& decoding,
                              const CurationConfig& validity, std::uint64_t seed, const SamplingBudget& budget) {
  if (!checkpoint.model) throw DataError("genhance_sample: checkpoint has no model");
  if (!checkpoint.stats) throw DataError("genhance_sample: checkpoint carries no latent statistics");
  if (seeds.empty()) throw DataError("genhance_sample: no seed sequences");
  if (!std::isfinite(delta_fraction)) throw ConfigError("delta_fraction must be finite");
  if (budget.batch == 0) throw ConfigError("sampling batch must be >= 1");
  const auto& model = *checkpoint.model;
  for (const auto& s : seeds) s.validate(model.vocabulary(), static_cast<std::size_t>(model.config().max_length));

  const double delta = delta_fraction * checkpoint.stats->stddev;
  const auto latents = model.encode_batch(seeds);
  std::mt19937_64 rng(derive_seed(seed, 0x67656e68));
  CandidatePool pool;
  std::size_t attempts = 0;
  while (pool.candidates.size() < n) {
    std::vector<LatentVector> zs;
    std::vector<int> refs;
    for (std::size_t b = 0; b < budget.batch; ++b) {
      const auto ref = (attempts + b) % seeds.size();
      refs.push_back(static_cast<int>(ref));
      zs.push_back(perturb(latents[ref], delta));
    }
    const auto generated = model.decode_batch(zs, decoding, rng);
    attempts += generated.size();
    for (std::size_t b = 0; b < generated.size() && pool.candidates.size() < n; ++b) {
      if (generated[b].truncated || !validity_filter(generated[b].sequence, validity)) continue;
      RankedCandidate c;
      c.sequence = generated[b].sequence;
      c.source = CandidateSource::genhance;
      c.seed_ref = refs[b];
      c.generation_seed = seed;
      pool.candidates.push_back(std::move(c));
    }
    if (pool.candidates.size() < n) check_yield(attempts, pool.candidates.size(), budget, "genhance_sample");
  }
  const auto scores = ModelRanker(checkpoint.model, "genhance-encoder").score(pool.sequences());
  for (std::size_t i = 0; i < scores.size(); ++i) pool.candidates[i].score = scores[i];

  pool.provenance.method = "genhance";
  pool.provenance.checkpoint_hash = checkpoint_hash(checkpoint);
  pool.provenance.ranker_hash = pool.provenance.checkpoint_hash;
  pool.provenance.seed = seed;
  auto& p = pool.provenance.parameters;
  p["delta_fraction"] = delta_fraction;
  p["delta"] = delta;
  p["zpar_stddev"] = checkpoint.stats->stddev;
  p["seed_count"] = seeds.size();
  p["decoding"] = to_json(decoding);
  p["attempts"] = attempts;
  return pool;
}

CandidatePool gendisc_sample(const Checkpoint& generator, const Checkpoint& discriminator, std::size_t n,
                             const DecodingSpec& decoding, const CurationConfig& validity, std::uint64_t seed,
                             const SamplingBudget& budget) {
  if (!generator.model || !discriminator.model) throw DataError("gendisc_sample: missing model");
  if (!(generator.model->vocabulary() == discriminator.model->vocabulary()))
    throw DataError("gendisc_sample: generator and discriminator vocabularies differ");
  if (budget.batch == 0) throw ConfigError("sampling batch must be >= 1");
  const auto& gen = *generator.model;
  const LatentVector empty = gen.encode(TokenSequence{});
  std::mt19937_64 rng(derive_seed(seed, 0x67646973));
  CandidatePool pool;
  std::size_t attempts = 0;
  const std::vector<LatentVector> zs(budget.batch, empty);
  while (pool.candidates.size() < n) {
    const auto generated = gen.decode_batch(zs, decoding, rng);
    attempts += generated.size();
    for (const auto& g : generated) {
      if (pool.candidates.size() >= n) break;
      if (g.truncated || !validity_filter(g.sequence, validity)) continue;
      RankedCandidate c;
      c.sequence = g.sequence;
      c.source = CandidateSource::gendisc;
      c.generation_seed = seed;
      pool.candidates.push_back(std::move(c));
    }
    if (pool.candidates.size() < n) check_yield(attempts, pool.candidates.size(), budget, "gendisc_sample");
  }
  const auto scores = ModelRanker(discriminator.model, "discriminator").score(pool.sequences());
  for (std::size_t i = 0; i < scores.size(); ++i) pool.candidates[i].score = scores[i];

  pool.provenance.method = "gendisc";
  pool.provenance.checkpoint_hash = checkpoint_hash(generator);
  pool.provenance.ranker_hash = checkpoint_hash(discriminator);
  pool.provenance.seed = seed;
  pool.provenance.parameters["decoding"] = to_json(decoding);
  pool.provenance.parameters["attempts"] = attempts;
  return pool;
}

// ---- MCMC ---------------------------------------------------------------------

double acceptance_prob(double new_fitness, double old_fitness, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("MCMC temperature must be > 0");
  const double delta = new_fitness - old_fitness;
  if (delta >= 0.0) return 1.0;
  return std::exp(delta / temperature);
}

int EditCap::limit(std::size_t reference_length) const {
  if (fraction) {
    if (!(*fraction >= 0.0)) throw ConfigError("edit cap fraction must be >= 0");
    return static_cast<int>(std::floor(*fraction * static_cast<double>(reference_length)));
  }
  if (count < 0) throw ConfigError("edit cap must be >= 0");
  return count;
}

int EditCap::distance(const TokenSequence& a, const TokenSequence& b) const {
  if (metric == EditMetric::hamming) return static_cast<int>(hamming(a, b));
  return static_cast<int>(levenshtein(a, b));
}

std::string_view to_string(ProposalKind k) {
  return k == ProposalKind::uniform_substitution ? "uniform-substitution" : "masked-infill";
}

ProposalKind proposal_kind_from_string(std::string_view s) {
  if (s == "uniform-substitution" || s == "random") return ProposalKind::uniform_substitution;
  if (s == "masked-infill" || s == "infill") return ProposalKind::masked_infill;
  throw ConfigError("unknown proposal kind '" + std::string(s) + "'");
}

ProposalOperator ProposalOperator::uniform(const CurationConfig& curation, int alphabet) {
  ProposalOperator op;
  op.kind = ProposalKind::uniform_substitution;
  op.mutable_positions = curation.mutable_positions();
  op.alphabet = alphabet;
  return op;
}

ProposalOperator ProposalOperator::infill(const CurationConfig& curation,
                                          std::shared_ptr<const Seq2SeqModel> generator,
                                          const DecodingSpec& decoding) {
  if (!generator) throw ConfigError("infill proposals need a generator checkpoint");
  ProposalOperator op;
  op.kind = ProposalKind::masked_infill;
  op.mutable_positions = curation.mutable_positions();
  op.alphabet = generator->vocabulary().size();
  op.generator_latent = generator->encode(TokenSequence{});
  op.generator = std::move(generator);
  op.decoding = decoding;
  return op;
}

namespace {

/// Start of a span of `len` positions that are all mutable, or -1.
int pick_span(const ProposalOperator& op, std::size_t seq_len, int len, std::mt19937_64& rng) {
  std::vector<int> starts;
  std::vector<bool> is_mut(seq_len, false);
  for (int p : op.mutable_positions)
    if (p >= 0 && static_cast<std::size_t>(p) < seq_len) is_mut[static_cast<std::size_t>(p)] = true;
  for (int s = 0; s + len <= static_cast<int>(seq_len); ++s) {
    bool ok = true;
    for (int t = s; t < s + len; ++t) ok = ok && is_mut[static_cast<std::size_t>(t)];
    if (ok) starts.push_back(s);
  }
  if (starts.empty()) return -1;
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  return starts[pick(rng)];
}

TokenSequence substitute(const ProposalOperator& op, const TokenSequence& s, std::mt19937_64& rng) {
  std::vector<int> usable;
  for (int p : op.mutable_positions)
    if (p >= 0 && static_cast<std::size_t>(p) < s.length()) usable.push_back(p);
  if (usable.empty()) throw DataError("propose: no mutable positions");
  if (op.alphabet < 2) throw DataError("propose: alphabet needs at least two symbols");
  std::uniform_int_distribution<std::size_t> pos(0, usable.size() - 1);
  std::uniform_int_distribution<int> sym(0, op.alphabet - 2);
  TokenSequence out = s;
  const auto p = static_cast<std::size_t>(usable[pos(rng)]);
  int v = sym(rng);
  // Skip the current symbol so the draw is uniform over the other A - 1.
  if (v >= out.mutable_tokens()[p]) ++v;
  out.mutable_tokens()[p] = v;
  return out;
}

}  // namespace

std::vector<TokenSequence> propose_batch(const ProposalOperator& op, std::span<const TokenSequence> states,
                                         std::mt19937_64& rng) {
  std::vector<TokenSequence> out;
  out.reserve(states.size());
  if (op.kind == ProposalKind::uniform_substitution) {
    for (const auto& s : states) out.push_back(substitute(op, s, rng));
    return out;
  }
  if (!op.generator) throw ConfigError("infill proposals need a generator checkpoint");
  if (states.empty()) return out;
  std::uniform_int_distribution<int> span_len(1, 2);
  std::vector<int> start(states.size()), len(states.size());
  int horizon = 0;
  for (std::size_t b = 0; b < states.size(); ++b) {
    len[b] = span_len(rng);
    start[b] = pick_span(op, states[b].length(), len[b], rng);
    if (start[b] < 0) {
      len[b] = 1;
      start[b] = pick_span(op, states[b].length(), 1, rng);
    }
    if (start[b] < 0) throw DataError("propose: no mutable positions");
    horizon = std::max(horizon, start[b] + len[b]);
    out.push_back(states[b]);
  }
  const std::vector<LatentVector> zs(states.size(), op.generator_latent);
  DecoderSession session(*op.generator, zs);
  std::vector<int> next(states.size(), Vocabulary::kBos);
  for (int t = 0; t < horizon; ++t) {
    const Matrix& logits = session.step(next);
    for (std::size_t b = 0; b < states.size(); ++b) {
      auto& toks = out[b].mutable_tokens();
      if (t >= start[b] && t < start[b] + len[b]) {
        const int id = choose_token(logits.row(static_cast<Eigen::Index>(b)), op.decoding, rng, false);
        toks[static_cast<std::size_t>(t)] = Vocabulary::content_index(id);
      }
      // Positions past the sequence end only occur for rows already done.
      next[b] = static_cast<std::size_t>(t) < toks.size() ? Vocabulary::model_id(toks[static_cast<std::size_t>(t)])
                                                           : Vocabulary::kEos;
    }
  }
  return out;
}

TokenSequence propose(const ProposalOperator& op, const TokenSequence& s, std::mt19937_64& rng) {
  return propose_batch(op, std::span<const TokenSequence>(&s, 1), rng).front();
}

MCMCResult mcmc_run(const Ranker& ranker, std::span<const TokenSequence> init, const ProposalOperator& proposal,
                    const MCMCConfig& config) {
  if (!(config.temperature > 0.0)) throw ConfigError("MCMC temperature must be > 0");
  if (config.iterations < 1) throw ConfigError("MCMC iterations must be >= 1");
  if (init.empty()) throw DataError("mcmc_run: no initial sequences");
  std::mt19937_64 rng(derive_seed(config.seed, 0x6d636d63));
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  MCMCResult result;
  const auto init_scores = ranker.score(init);
  std::vector<TokenSequence> refs;
  for (std::size_t c = 0; c < init.size(); ++c) {
    MCMCState st;
    st.current = init[c];
    st.fitness = init_scores[c];
    st.temperature = config.temperature;
    const TokenSequence& ref = config.cap.reference ? *config.cap.reference : init[c];
    st.edit_limit = config.cap.limit(ref.length());
    refs.push_back(ref);
    result.chains.push_back(std::move(st));
  }

  std::vector<RankedCandidate> accepted;
  std::vector<TokenSequence> current(init.begin(), init.end());
  for (std::size_t it = 0; it < config.iterations; ++it) {
    const auto proposals = propose_batch(proposal, current, rng);
    std::vector<std::size_t> live;
    std::vector<TokenSequence> to_score;
    for (std::size_t c = 0; c < proposals.size(); ++c) {
      if (config.cap.distance(proposals[c], refs[c]) > result.chains[c].edit_limit) {
        ++result.chains[c].capped;
        ++result.chains[c].rejected;
        continue;
      }
      live.push_back(c);
      to_score.push_back(proposals[c]);
    }
    const auto scores = ranker.score(to_score);
    for (std::size_t k = 0; k < live.size(); ++k) {
      const auto c = live[k];
      auto& st = result.chains[c];
      // One uniform per scored proposal keeps the stream independent of outcomes.
      const double u = unif(rng);
      if (u < acceptance_prob(scores[k], st.fitness, st.temperature)) {
        st.current = to_score[k];
        st.fitness = scores[k];
        ++st.accepted;
        current[c] = st.current;
        RankedCandidate rc;
        rc.sequence = st.current;
        rc.score = st.fitness;
        rc.source = CandidateSource::mcmc;
        rc.seed_ref = static_cast<int>(c);
        rc.chain_id = static_cast<int>(c);
        rc.generation_seed = config.seed;
        accepted.push_back(std::move(rc));
      } else {
        ++st.rejected;
      }
    }
    for (std::size_t c = 0; c < result.chains.size(); ++c) {
      result.chains[c].iteration = it + 1;
      if (config.observer) config.observer(c, result.chains[c]);
    }
  }

  result.pool.candidates = std::move(accepted);
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    RankedCandidate rc;
    rc.sequence = result.chains[c].current;
    rc.score = result.chains[c].fitness;
    rc.source = CandidateSource::mcmc;
    rc.seed_ref = static_cast<int>(c);
    rc.chain_id = static_cast<int>(c);
    rc.generation_seed = config.seed;
    result.pool.candidates.push_back(std::move(rc));
  }
  result.pool.provenance.method = std::string("mcmc-") + std::string(to_string(proposal.kind));
  result.pool.provenance.seed = config.seed;
  auto& p = result.pool.provenance.parameters;
  p["temperature"] = config.temperature;
  p["iterations"] = config.iterations;
  p["edit_metric"] = config.cap.metric == EditMetric::hamming ? "hamming" : "levenshtein";
  if (config.cap.fraction)
    p["edit_fraction"] = *config.cap.fraction;
  else
    p["edit_count"] = config.cap.count;
  p["edit_reference"] = config.cap.reference ? "fixed" : "chain-initial";
  p["chains"] = init.size();
  p["ranker"] = ranker.name();
  return result;
}

CandidatePool mcmc_sample(const Ranker& ranker, std::span<const TokenSequence> init,
                          const ProposalOperator& proposal, const MCMCConfig& config,
                          const CurationConfig& validity, std::size_t n, std::size_t max_rounds) {
  CandidatePool merged;
  std::size_t round = 0;
  std::size_t valid = 0;
  while (valid < n) {
    if (round >= max_rounds)
      throw DataError("mcmc_sample: only " + std::to_string(valid) + " valid states after " +
                      std::to_string(max_rounds) + " rounds; need " + std::to_string(n));
    MCMCConfig cfg = config;
    cfg.seed = round == 0 ? config.seed : derive_seed(config.seed, round);
    auto run = mcmc_run(ranker, init, proposal, cfg);
    if (round == 0) merged.provenance = run.pool.provenance;
    for (auto& c : run.pool.candidates) {
      c.valid = validity_filter(c.sequence, validity);
      if (!c.valid) continue;
      ++valid;
      merged.candidates.push_back(std::move(c));
    }
    ++round;
  }
  merged.candidates = rank(merged.candidates, n);
  merged.provenance.seed = config.seed;
  merged.provenance.parameters["rounds"] = round;
  merged.provenance.parameters["states_before_cut"] = valid;
  return merged;
}

}  // namespace genhance
