#pragma once

// Pool metrics: class percentages, resampled expectations over ranked
// subpools, percent chance of improvement, an n-gram quality proxy,
// cross-ranking reports and histogram data.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "genhance/oracle.hpp"
#include "genhance/search.hpp"
#include "genhance/seqcore.hpp"

namespace genhance {

/// Mean over resampling rounds with its standard error.
struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t rounds = 0;
};

struct ResampleSpec {
  std::size_t subsample = 1000;
  std::size_t top = 100;
  std::size_t rounds = 100;
  std::uint64_t seed = 1;
};

/// 100 * (number of `classes` in `targets`) / size.
double pct_in_class(std::span<const int> classes, std::span<const int> targets);
double pct_in_class(std::span<const TokenSequence> top_k, const OrdinalOracle& oracle, std::span<const int> targets);

/// Per round: draw `subsample` candidates without replacement, rank them
/// with `ranker` (stored pool scores when null), and take the target-class
/// percentage of the top `top`. Pool order does not matter: candidates are
/// put in a canonical order before drawing.
Estimate expected_top_class_pct(const CandidatePool& pool, const Ranker* ranker, const OrdinalOracle& oracle,
                                std::span<const int> targets, const ResampleSpec& spec);

/// 100 * fraction of oracle scores strictly more desirable than y_tau.
double pci(std::span<const double> oracle_scores, double y_tau, DesirabilityOrder order);
double pci(std::span<const TokenSequence> top_k, const PottsOracle& oracle, double y_tau, DesirabilityOrder order);

struct ExpectedMin {
  Estimate value;
  /// The subsample was larger than the pool and was clipped to it.
  bool clipped = false;
  std::size_t subsample_used = 0;
};

/// Per round: subsample, rank, take the top `top`, record the most
/// desirable oracle value among them; averaged over rounds, in oracle units.
ExpectedMin expected_min(const CandidatePool& pool, const Ranker* ranker, const PottsOracle& oracle,
                         const ResampleSpec& spec, DesirabilityOrder order);

/// Add-alpha smoothed order-n Markov model over content symbols. Contexts
/// shorter than n at the start of a sequence are padded with a start marker.
class MarkovModel {
 public:
  MarkovModel(int alphabet, int order = 3, double alpha = 1.0);

  static MarkovModel fit(std::span<const TokenSequence> corpus, int alphabet, int order = 3, double alpha = 1.0);
  void add(const TokenSequence& x);

  double probability(std::span<const int> context, int symbol) const;
  /// Mean negative log-likelihood per token (natural log).
  double nll(const TokenSequence& x) const;
  double perplexity(const TokenSequence& x) const;

  int order() const noexcept { return order_; }
  double alpha() const noexcept { return alpha_; }

 private:
  std::uint64_t context_key(std::span<const int> context) const;

  int alphabet_;
  int order_;
  double alpha_;
  std::map<std::uint64_t, std::vector<std::uint32_t>> counts_;
};

/// Mean per-sequence perplexity of `pool` under a model fit on `reference`.
double quality_proxy(std::span<const TokenSequence> pool, std::span<const TokenSequence> reference, int alphabet,
                     int order = 3, double alpha = 1.0);

struct Histogram {
  double bin_width = 1.0;
  /// Left edge of the first bin; bins are [lo + i*w, lo + (i+1)*w).
  double lo = 0.0;
  std::vector<std::size_t> counts;
};

/// Bins aligned to multiples of `bin_width`.
Histogram histogram(std::span<const double> values, double bin_width = 1.0);
nlohmann::ordered_json to_json(const Histogram& h);

/// Metrics requested for an evaluation.
struct MetricsSpec {
  std::vector<std::size_t> top_ks{100};
  /// Ordinal task: named sets of target classes.
  std::vector<std::pair<std::string, std::vector<int>>> target_sets;
  ResampleSpec top_class{1000, 100, 100, 1};
  ResampleSpec min{10000, 10, 100, 1};
  bool quality = true;
  int quality_order = 3;
  double quality_alpha = 1.0;
};

nlohmann::ordered_json to_json(const MetricsSpec& s);
MetricsSpec metrics_spec_from_json(const nlohmann::json& j);

/// Ground truth and reference data the metrics are computed against.
struct EvalContext {
  const PottsOracle* potts = nullptr;
  const OrdinalOracle* ordinal = nullptr;
  DesirabilityOrder order{Direction::lower_better};
  std::optional<double> y_tau;
  std::span<const TokenSequence> reference;
};

struct MetricValue {
  std::string name;
  double value = 0.0;
  std::optional<double> std_error;
  nlohmann::ordered_json parameters = nlohmann::ordered_json::object();
};

struct MetricReport {
  PoolProvenance pool;
  std::string ranker;
  std::size_t pool_size = 0;
  std::vector<MetricValue> metrics;

  const MetricValue* find(std::string_view name) const;
  double value(std::string_view name) const;
};

nlohmann::ordered_json to_json(const MetricReport& r);
MetricReport metric_report_from_json(const nlohmann::json& j);

/// Flat table: one row per (report, metric).
std::string metric_table(std::span<const MetricReport> reports);

/// Ranks `pool` with `ranker` (its stored scores when null) and computes
/// every metric in `spec` that the context supports.
MetricReport evaluate_pool(const CandidatePool& pool, const Ranker* ranker, const EvalContext& context,
                           const MetricsSpec& spec);

/// Pool from one system ranked by another system's ranker.
MetricReport cross_rank_eval(const CandidatePool& pool, const Ranker& ranker, const EvalContext& context,
                             const MetricsSpec& spec);

}  // namespace genhance
