#pragma once

// Synthetic ground-truth oracle: a Potts landscape (per-site fields plus
// sparse pairwise couplings) and the mutational curation procedure that
// builds training sets around a wild-type sequence.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "genhance/seqcore.hpp"

namespace genhance {

struct PottsSpec {
  int length = 48;
  int alphabet = 20;
  double field_scale = 1.0;
  int coupling_pairs = 96;
  double coupling_scale = 0.5;
  std::uint64_t seed = 1;
};

/// Coupling table J[(i, j)][a][b] for one position pair, stored row-major
/// with `alphabet * alphabet` entries. Requires i < j.
struct CouplingBlock {
  int i = 0;
  int j = 0;
  std::vector<double> table;
};

class PottsOracle {
 public:
  PottsOracle(int length, int alphabet, std::vector<double> fields,
              std::vector<CouplingBlock> couplings, std::uint64_t seed = 0);

  static PottsOracle random(const PottsSpec& spec);

  int length() const noexcept { return length_; }
  int alphabet() const noexcept { return alphabet_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double field(int pos, int symbol) const { return fields_[static_cast<std::size_t>(pos * alphabet_ + symbol)]; }
  const std::vector<double>& fields() const noexcept { return fields_; }
  const std::vector<CouplingBlock>& couplings() const noexcept { return couplings_; }

  /// Energy-like score: sum of the selected field entries plus every
  /// coupling entry selected by the sequence. Deterministic.
  double score(const TokenSequence& x) const;

  /// Change in score when position `pos` of `x` is set to `symbol`.
  double substitution_delta(const TokenSequence& x, int pos, int symbol) const;

  /// Versioned text artifact with the seed and dimensions embedded.
  std::string serialize() const;
  static PottsOracle parse(std::string_view text);
  std::string hash() const;

  void save(const std::filesystem::path& path) const;
  static PottsOracle load(const std::filesystem::path& path);

 private:
  void check(const TokenSequence& x) const;

  int length_;
  int alphabet_;
  std::vector<double> fields_;
  std::vector<CouplingBlock> couplings_;
  std::vector<std::vector<std::size_t>> by_position_;  // coupling indices touching each site
  std::uint64_t seed_;
};

/// Ordinal view of a Potts score: classes 1..C over the signed axis
/// `sign * score`, where `sign` is +1 when higher scores are more
/// desirable and -1 otherwise. Class C is always the most desirable one.
class OrdinalOracle {
 public:
  OrdinalOracle(PottsOracle base, std::vector<double> edges, DesirabilityOrder score_order);

  /// Edges at the given cumulative fractions of `desirability`-oriented scores.
  static OrdinalOracle from_quantiles(PottsOracle base, std::span<const double> scores,
                                      std::span<const double> fractions,
                                      DesirabilityOrder score_order);

  const PottsOracle& base() const noexcept { return base_; }
  const std::vector<double>& edges() const noexcept { return edges_; }
  int class_count() const noexcept { return static_cast<int>(edges_.size()) + 1; }
  DesirabilityOrder score_order() const noexcept { return order_; }

  /// 1 + number of edges strictly below the oriented score; a score that
  /// lands exactly on an edge goes to the lower class.
  int classify_score(double raw_score) const;
  int classify(const TokenSequence& x) const { return classify_score(base_.score(x)); }

 private:
  PottsOracle base_;
  std::vector<double> edges_;
  DesirabilityOrder order_;
};

struct CurationConfig {
  TokenSequence wild_type;
  TokenSequence constant_region;
  int constant_offset = 0;
  /// Per-position flag; empty means "everything outside the constant region".
  std::vector<bool> mutable_mask;
  /// Per-mutable-position substitution probability; <= 0 selects 4 / L_mutable.
  double substitution_prob = 0.0;
  int max_mutations = 8;
  std::size_t sample_count = 1000;
  double label_noise_sigma = 0.0;
  std::uint64_t seed = 1;

  std::vector<bool> resolved_mask() const;
  std::vector<int> mutable_positions() const;
  double resolved_substitution_prob() const;
  void validate(int alphabet) const;
};

struct CurationResult {
  SequenceDataset dataset;
  /// Mean mutation count over every draw, before the max-mutation cap.
  double mean_precap_mutations = 0.0;
  std::size_t draws = 0;
  std::size_t discarded = 0;
};

/// Random wild-type of the oracle's length with `constant_region` at `offset`.
TokenSequence make_wild_type(int length, int alphabet, const TokenSequence& constant_region,
                             int offset, std::uint64_t seed);

/// Continuous, lower-is-better labels from `oracle`.
CurationResult curate_dataset(const CurationConfig& config, const PottsOracle& oracle);

/// Same items, labels replaced by ordinal classes from `oracle`.
SequenceDataset relabel_ordinal(const SequenceDataset& dataset, const OrdinalOracle& oracle);

/// Length equals wild-type length and the constant region is intact.
bool validity_filter(const TokenSequence& x, const CurationConfig& config);

}  // namespace genhance
