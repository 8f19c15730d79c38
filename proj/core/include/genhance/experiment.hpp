#pragma once

// Experiment configuration and the pipeline stages behind the command-line
// verbs. Every stage reads its inputs from and writes its outputs to a run
// directory; artifacts are written atomically and never silently replaced.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "genhance/evalmetrics.hpp"
#include "genhance/model.hpp"
#include "genhance/oracle.hpp"
#include "genhance/search.hpp"
#include "genhance/seqcore.hpp"
#include "genhance/trainer.hpp"

namespace genhance {

struct TaskSpec {
  LabelKind kind = LabelKind::continuous;
  /// Ordinal task: cumulative fractions of the curated scores at which the
  /// class edges sit, least desirable first.
  std::vector<double> class_fractions{0.5, 0.8, 0.95, 0.99};
};

struct CurationSpec {
  std::string constant_region = "NTNITEEN";
  int constant_offset = 20;
  /// Compact wild-type string; generated from `wild_type_seed` when empty.
  std::string wild_type;
  std::uint64_t wild_type_seed = 0;
  double substitution_prob = 0.0;
  int max_mutations = 8;
  std::size_t sample_count = 20000;
  double label_noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct MCMCSpec {
  double temperature = 0.1;
  std::size_t iterations = 1000;
  EditMetric metric = EditMetric::hamming;
  int edit_count = 18;
  std::optional<double> edit_fraction;
  /// "initial" (each chain's start) or "wild-type".
  std::string edit_reference = "initial";
  /// Cap on the number of chains; 0 uses every seed sequence.
  std::size_t max_chains = 0;
  std::size_t max_rounds = 16;
  DecodingSpec infill_decoding;
  std::uint64_t seed = 0;
};

struct SamplingSpec {
  std::size_t n = 2000;
  double delta_fraction = 0.25;
  /// Seed sequences: the most desirable fraction of the training set, or
  /// every training item in `seed_classes` when that list is non-empty.
  double seed_fraction = 0.05;
  std::vector<int> seed_classes;
  DecodingSpec decoding;
  SamplingBudget budget;
  MCMCSpec mcmc;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string out;
  TaskSpec task;
  PottsSpec oracle;
  CurationSpec curation;
  SplitPolicy split;
  std::uint64_t split_seed = 0;
  ModelConfig model;
  TrainConfig genhance_train;
  TrainConfig generator_train;
  TrainConfig discriminator_train;
  SamplingSpec sampling;
  MetricsSpec evaluation;
  std::vector<std::string> rankers{"native"};

  /// Parses a config; component seeds that are not given explicitly are
  /// derived from the global seed (or `seed_override` when set). Unknown
  /// keys and out-of-range values are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override = {});
  static ExperimentConfig load(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = {});

  /// Fully resolved form, every seed explicit.
  nlohmann::ordered_json to_json() const;
  std::string hash() const;
  void validate() const;
};

/// Training methods accepted by `train`.
const std::vector<std::string>& train_methods();
/// Sampling methods accepted by `sample`.
const std::vector<std::string>& sample_methods();

/// The pipeline over one run directory.
class Experiment {
 public:
  Experiment(ExperimentConfig config, std::filesystem::path run_dir, bool force = false);

  const ExperimentConfig& config() const noexcept { return config_; }
  const std::filesystem::path& run_dir() const noexcept { return dir_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }

  std::filesystem::path oracle_path() const;
  std::filesystem::path train_data_path() const;
  std::filesystem::path excluded_data_path() const;
  std::filesystem::path data_metadata_path() const;
  std::filesystem::path checkpoint_path(const std::string& method, const std::string& role = "model") const;
  std::filesystem::path pool_path(const std::string& method) const;
  std::filesystem::path report_path(const std::string& pool, const std::string& ranker) const;

  void make_oracle();
  void curate();
  void train(const std::string& method);
  void sample(const std::string& method, std::optional<std::size_t> n = {});
  /// One report per (pool, ranker) pair. The comparison table and histogram
  /// data are indexes over everything evaluated so far in the run directory.
  /// Empty lists mean every pool present / the configured rankers.
  std::vector<MetricReport> evaluate(std::vector<std::string> pools = {}, std::vector<std::string> rankers = {});
  /// Collects every evaluation report into a summary table.
  std::string report();

  // Loaded artifacts.
  PottsOracle load_oracle() const;
  SequenceDataset load_train() const;
  CurationConfig curation_config() const;
  std::optional<OrdinalOracle> ordinal_oracle() const;
  DesirabilityOrder order() const;
  Checkpoint load_checkpoint(const std::string& method, const std::string& role = "model") const;
  CandidatePool load_pool(const std::string& method) const;
  std::vector<TokenSequence> seed_sequences() const;

 private:
  /// Writes `content` unless an identical file exists; a differing file is
  /// a conflict unless `force` is set. Index files (tables and summaries
  /// rebuilt from other artifacts) are refreshed instead.
  void emit(const std::filesystem::path& path, std::string_view content, bool index = false) const;
  /// Every per-pool report under eval/, ordered by file name.
  std::vector<MetricReport> collect_reports() const;
  void write_config_snapshot() const;
  std::unique_ptr<Ranker> make_ranker(const std::string& name, const std::string& pool_method) const;
  double y_tau() const;

  ExperimentConfig config_;
  std::filesystem::path dir_;
  bool force_;
  Vocabulary vocab_;
};

}  // namespace genhance
