#pragma once

// Candidate generation and ranking: latent-perturbation sampling from a
// GENhance checkpoint, generator + discriminator rejection sampling, and
// Metropolis-Hastings chains with substitution or infill proposals.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "genhance/model.hpp"
#include "genhance/oracle.hpp"
#include "genhance/seqcore.hpp"

namespace genhance {

/// Scores sequences; higher is always more desirable.
class Ranker {
 public:
  virtual ~Ranker() = default;
  virtual std::string name() const = 0;
  virtual std::vector<double> score(std::span<const TokenSequence> xs) const = 0;
  /// Symbol set the ranker was built for, if it has one.
  virtual const Vocabulary* vocabulary() const { return nullptr; }
  /// True when repeated calls on the same input give different scores.
  virtual bool stochastic() const { return false; }
};

/// z_par of a trained encoder (GENhance encoder or a discriminator).
class ModelRanker : public Ranker {
 public:
  ModelRanker(std::shared_ptr<const Seq2SeqModel> model, std::string name);
  std::string name() const override { return name_; }
  std::vector<double> score(std::span<const TokenSequence> xs) const override;
  const Vocabulary* vocabulary() const override { return &model_->vocabulary(); }

 private:
  std::shared_ptr<const Seq2SeqModel> model_;
  std::string name_;
};

/// Ground-truth score oriented so that higher is better.
class OracleRanker : public Ranker {
 public:
  OracleRanker(PottsOracle oracle, DesirabilityOrder order);
  std::string name() const override { return "oracle"; }
  std::vector<double> score(std::span<const TokenSequence> xs) const override;

 private:
  PottsOracle oracle_;
  DesirabilityOrder order_;
};

class ConstantRanker : public Ranker {
 public:
  explicit ConstantRanker(double value = 0.0) : value_(value) {}
  std::string name() const override { return "constant"; }
  std::vector<double> score(std::span<const TokenSequence> xs) const override;

 private:
  double value_;
};

/// Wraps a per-sequence scoring function.
class FunctionRanker : public Ranker {
 public:
  FunctionRanker(std::string name, std::function<double(const TokenSequence&)> fn)
      : name_(std::move(name)), fn_(std::move(fn)) {}
  std::string name() const override { return name_; }
  std::vector<double> score(std::span<const TokenSequence> xs) const override;

 private:
  std::string name_;
  std::function<double(const TokenSequence&)> fn_;
};

/// Fresh U(0,1) scores on every call, drawn from a seeded stream.
class RandomRanker : public Ranker {
 public:
  explicit RandomRanker(std::uint64_t seed) : rng_(seed) {}
  std::string name() const override { return "random"; }
  bool stochastic() const override { return true; }
  std::vector<double> score(std::span<const TokenSequence> xs) const override;

 private:
  mutable std::mt19937_64 rng_;
};

enum class CandidateSource { genhance, gendisc, mcmc };
std::string_view to_string(CandidateSource s);
CandidateSource candidate_source_from_string(std::string_view s);

struct RankedCandidate {
  TokenSequence sequence;
  double score = 0.0;
  CandidateSource source = CandidateSource::genhance;
  /// Index of the seed / initial sequence, -1 when unconditioned.
  int seed_ref = -1;
  /// MCMC chain index, -1 otherwise.
  int chain_id = -1;
  std::uint64_t generation_seed = 0;
  bool valid = true;
};

struct PoolProvenance {
  std::string method;
  std::string checkpoint_hash;
  std::string ranker_hash;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
};

struct CandidatePool {
  std::vector<RankedCandidate> candidates;
  PoolProvenance provenance;

  std::size_t size() const noexcept { return candidates.size(); }
  std::vector<TokenSequence> sequences() const;
};

/// JSONL: a provenance header record, then one record per candidate.
std::string serialize_pool(const CandidatePool& pool, const Vocabulary& vocab);
CandidatePool parse_pool(std::string_view text, const Vocabulary& vocab);
void write_pool(const std::filesystem::path& path, const CandidatePool& pool, const Vocabulary& vocab);
CandidatePool read_pool(const std::filesystem::path& path, const Vocabulary& vocab);

/// Top min(k, size) candidates by descending score; ties keep pool order.
std::vector<RankedCandidate> rank(std::span<const RankedCandidate> pool, std::size_t k);

/// Replaces every score with `ranker`'s and updates the ranker provenance.
CandidatePool rescore(const CandidatePool& pool, const Ranker& ranker);

struct SamplingBudget {
  /// Draw attempts before the validity yield is checked.
  std::size_t min_attempts = 1000;
  double min_yield = 0.01;
  std::size_t batch = 64;
};

/// Seeds are used round-robin; each draw encodes its seed, shifts z_par by
/// `delta_fraction` times the recorded z_par standard deviation, decodes,
/// and keeps valid results until `n` candidates exist. Scores come from the
/// checkpoint's own encoder.
CandidatePool genhance_sample(const Checkpoint& checkpoint, std::span<const TokenSequence> seeds,
                              double delta_fraction, std::size_t n, const DecodingSpec& decoding,
                              const CurationConfig& validity, std::uint64_t seed,
                              const SamplingBudget& budget = {});

/// Unconditional draws from the generator (empty encoder input), scored by
/// the discriminator.
CandidatePool gendisc_sample(const Checkpoint& generator, const Checkpoint& discriminator, std::size_t n,
                             const DecodingSpec& decoding, const CurationConfig& validity, std::uint64_t seed,
                             const SamplingBudget& budget = {});

/// min(1, exp((new - old) / T)).
double acceptance_prob(double new_fitness, double old_fitness, double temperature);

enum class EditMetric { hamming, levenshtein };

/// Maximum edit distance from a chain's reference: `fraction` of the
/// reference length when set, otherwise `count`.
struct EditCap {
  EditMetric metric = EditMetric::hamming;
  int count = 18;
  std::optional<double> fraction;
  /// Distance is measured against this sequence instead of the chain's
  /// initial sequence when set.
  std::optional<TokenSequence> reference;

  int limit(std::size_t reference_length) const;
  int distance(const TokenSequence& a, const TokenSequence& b) const;
};

enum class ProposalKind { uniform_substitution, masked_infill };
std::string_view to_string(ProposalKind k);
ProposalKind proposal_kind_from_string(std::string_view s);

/// Mutable positions come from the curation config (constant region
/// excluded). Infill needs a generator checkpoint; the masked span of 1 or
/// 2 positions is refilled left to right from the generator conditioned on
/// the prefix.
struct ProposalOperator {
  ProposalKind kind = ProposalKind::uniform_substitution;
  std::vector<int> mutable_positions;
  int alphabet = 20;
  std::shared_ptr<const Seq2SeqModel> generator;
  LatentVector generator_latent;  // encoding of the empty sequence
  DecodingSpec decoding;

  static ProposalOperator uniform(const CurationConfig& curation, int alphabet);
  static ProposalOperator infill(const CurationConfig& curation, std::shared_ptr<const Seq2SeqModel> generator,
                                 const DecodingSpec& decoding);
};

/// One proposal for `s`.
TokenSequence propose(const ProposalOperator& op, const TokenSequence& s, std::mt19937_64& rng);

/// Proposals for several states at once; infill shares one decoder pass.
std::vector<TokenSequence> propose_batch(const ProposalOperator& op, std::span<const TokenSequence> states,
                                         std::mt19937_64& rng);

struct MCMCState {
  TokenSequence current;
  double fitness = 0.0;
  double temperature = 0.1;
  std::size_t iteration = 0;
  int edit_limit = 0;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t capped = 0;
};

struct MCMCConfig {
  double temperature = 0.1;
  std::size_t iterations = 1000;
  EditCap cap;
  std::uint64_t seed = 1;
  /// Called after every iteration for every chain.
  std::function<void(std::size_t chain, const MCMCState&)> observer;
};

struct MCMCResult {
  CandidatePool pool;
  std::vector<MCMCState> chains;
};

/// Independent chains advanced in lockstep. The pool holds every accepted
/// state followed by each chain's final state, scored by `ranker`.
MCMCResult mcmc_run(const Ranker& ranker, std::span<const TokenSequence> init, const ProposalOperator& proposal,
                    const MCMCConfig& config);

/// Runs chain rounds (round r seeded from derive_seed(seed, r)) until at
/// least `n` valid states exist, then keeps the `n` best by ranker score.
CandidatePool mcmc_sample(const Ranker& ranker, std::span<const TokenSequence> init,
                          const ProposalOperator& proposal, const MCMCConfig& config,
                          const CurationConfig& validity, std::size_t n, std::size_t max_rounds = 16);

}  // namespace genhance
