#include "genhance/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "genhance/io.hpp"

namespace genhance {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Seed streams for components whose seed is not given explicitly.
enum SeedStream : std::uint64_t {
  kOracle = 1,
  kWildType = 2,
  kCuration = 3,
  kSplit = 4,
  kModel = 5,
  kGenhance = 6,
  kGenerator = 7,
  kDiscriminator = 8,
  kSampling = 9,
  kMCMC = 10,
  kEval = 11,
};

// Object-valued keys whose members are user-chosen names.
const std::set<std::string> kOpenObjects{"evaluation.target_sets", "split.retained"};

void check_keys(const nlohmann::json& given, const ojson& schema, const std::string& path) {
  if (!given.is_object()) return;
  if (!schema.is_object()) throw ConfigError("'" + path + "' must not be an object");
  if (kOpenObjects.count(path)) return;
  for (const auto& [k, v] : given.items()) {
    const std::string sub = path.empty() ? k : path + "." + k;
    if (!schema.contains(k)) throw ConfigError("unknown config key '" + sub + "'");
    if (schema.at(k).is_object()) {
      if (!v.is_object()) throw ConfigError("config key '" + sub + "' must be an object");
      check_keys(v, schema.at(k), sub);
    }
  }
}

const nlohmann::json& section(const nlohmann::json& j, const char* key) {
  static const nlohmann::json empty = nlohmann::json::object();
  return j.contains(key) ? j.at(key) : empty;
}

std::uint64_t seed_or(const nlohmann::json& j, std::uint64_t fallback) {
  return j.contains("seed") ? j.at("seed").get<std::uint64_t>() : fallback;
}

ojson potts_json(const PottsSpec& s) {
  ojson j;
  j["length"] = s.length;
  j["alphabet"] = s.alphabet;
  j["field_scale"] = s.field_scale;
  j["coupling_pairs"] = s.coupling_pairs;
  j["coupling_scale"] = s.coupling_scale;
  j["seed"] = s.seed;
  return j;
}

PottsSpec potts_spec_from_json(const nlohmann::json& j, std::uint64_t seed) {
  PottsSpec s;
  s.length = j.value("length", s.length);
  s.alphabet = j.value("alphabet", s.alphabet);
  s.field_scale = j.value("field_scale", s.field_scale);
  s.coupling_pairs = j.value("coupling_pairs", s.coupling_pairs);
  s.coupling_scale = j.value("coupling_scale", s.coupling_scale);
  s.seed = seed;
  return s;
}

ojson split_json(const SplitPolicy& p, std::uint64_t seed) {
  ojson j;
  j["excluded_classes"] = p.excluded_classes;
  auto retained = ojson::object();
  for (const auto& [c, n] : p.retained) retained[std::to_string(c)] = n;
  j["retained"] = retained;
  j["excluded_top_fraction"] = p.excluded_top_fraction;
  j["retained_top"] = p.retained_top;
  j["seed"] = seed;
  return j;
}

SplitPolicy split_from_json(const nlohmann::json& j) {
  SplitPolicy p;
  if (j.contains("excluded_classes")) p.excluded_classes = j.at("excluded_classes").get<std::vector<int>>();
  if (j.contains("retained"))
    for (const auto& [k, v] : j.at("retained").items()) {
      int c = 0;
      try {
        c = std::stoi(k);
      } catch (const std::exception&) {
        throw ConfigError("split.retained keys must be class indices, got '" + k + "'");
      }
      p.retained[c] = v.get<std::size_t>();
    }
  p.excluded_top_fraction = j.value("excluded_top_fraction", p.excluded_top_fraction);
  p.retained_top = j.value("retained_top", p.retained_top);
  return p;
}

std::string_view metric_name(EditMetric m) { return m == EditMetric::hamming ? "hamming" : "levenshtein"; }

EditMetric edit_metric_from_string(const std::string& s) {
  if (s == "hamming") return EditMetric::hamming;
  if (s == "levenshtein") return EditMetric::levenshtein;
  throw ConfigError("unknown edit metric '" + s + "' (hamming|levenshtein)");
}

/// Train config with its MMD feature seed tied to the training seed unless given.
TrainConfig train_from_json(const nlohmann::json& j, std::uint64_t seed) {
  auto c = train_config_from_json(j);
  c.seed = seed;
  if (!(j.contains("mmd") && j.at("mmd").contains("seed"))) c.mmd.seed = derive_seed(seed, 1);
  return c;
}

ResampleSpec with_seed(ResampleSpec r, const nlohmann::json& j, const char* key, std::uint64_t fallback) {
  const auto& s = section(j, key);
  r.seed = s.contains("seed") ? s.at("seed").get<std::uint64_t>() : fallback;
  return r;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::string method_dir(const std::string& method) { return method; }

const std::vector<std::string> kGenhanceMethods{"genhance", "genhance-noCC", "genhance-noSmoothCC"};

bool is_genhance_method(const std::string& m) {
  return std::find(kGenhanceMethods.begin(), kGenhanceMethods.end(), m) != kGenhanceMethods.end();
}

Vocabulary vocabulary_for(int alphabet) {
  const auto aa = Vocabulary::amino_acids();
  if (alphabet > aa.size()) throw ConfigError("oracle.alphabet must be <= " + std::to_string(aa.size()));
  return Vocabulary(std::vector<std::string>(aa.symbols().begin(), aa.symbols().begin() + alphabet));
}

ojson read_json(const fs::path& path) {
  try {
    return ojson::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

// FNV-1a, stable across platforms.
std::uint64_t name_stream(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
  return h;
}

}  // namespace

// ---- config -----------------------------------------------------------------

ojson ExperimentConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["out"] = out;
  j["task"] = {{"kind", genhance::to_string(task.kind)}, {"class_fractions", task.class_fractions}};
  j["oracle"] = potts_json(oracle);
  ojson c;
  c["constant_region"] = curation.constant_region;
  c["constant_offset"] = curation.constant_offset;
  c["wild_type"] = curation.wild_type;
  c["wild_type_seed"] = curation.wild_type_seed;
  c["substitution_prob"] = curation.substitution_prob;
  c["max_mutations"] = curation.max_mutations;
  c["sample_count"] = curation.sample_count;
  c["label_noise_sigma"] = curation.label_noise_sigma;
  c["seed"] = curation.seed;
  j["curation"] = c;
  j["split"] = split_json(split, split_seed);
  j["model"] = genhance::to_json(model);
  j["train"] = {{"genhance", genhance::to_json(genhance_train)},
                {"generator", genhance::to_json(generator_train)},
                {"discriminator", genhance::to_json(discriminator_train)}};
  ojson m;
  m["temperature"] = sampling.mcmc.temperature;
  m["iterations"] = sampling.mcmc.iterations;
  m["edit_metric"] = metric_name(sampling.mcmc.metric);
  m["edit_count"] = sampling.mcmc.edit_count;
  m["edit_fraction"] = sampling.mcmc.edit_fraction ? ojson(*sampling.mcmc.edit_fraction) : ojson(nullptr);
  m["edit_reference"] = sampling.mcmc.edit_reference;
  m["max_chains"] = sampling.mcmc.max_chains;
  m["max_rounds"] = sampling.mcmc.max_rounds;
  m["infill_decoding"] = genhance::to_json(sampling.mcmc.infill_decoding);
  m["seed"] = sampling.mcmc.seed;
  ojson s;
  s["n"] = sampling.n;
  s["delta_fraction"] = sampling.delta_fraction;
  s["seed_fraction"] = sampling.seed_fraction;
  s["seed_classes"] = sampling.seed_classes;
  s["decoding"] = genhance::to_json(sampling.decoding);
  s["budget"] = {{"min_attempts", sampling.budget.min_attempts},
                 {"min_yield", sampling.budget.min_yield},
                 {"batch", sampling.budget.batch}};
  s["mcmc"] = m;
  s["seed"] = sampling.seed;
  j["sampling"] = s;
  auto e = genhance::to_json(evaluation);
  e["rankers"] = rankers;
  j["evaluation"] = e;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j, std::optional<std::uint64_t> seed_override) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c;
  try {
    check_keys(j, ExperimentConfig{}.to_json(), "");

    c.seed = seed_override ? *seed_override : j.value("seed", c.seed);
    // An overridden global seed re-derives every component seed, so the
    // explicit per-component seeds of the file are ignored in that case.
    const bool explicit_ok = !seed_override;
    auto pick = [&](const nlohmann::json& sec, SeedStream stream) {
      const auto fallback = derive_seed(c.seed, stream);
      return explicit_ok ? seed_or(sec, fallback) : fallback;
    };
    c.out = j.value("out", c.out);

    const auto& task = section(j, "task");
    if (task.contains("kind")) c.task.kind = label_kind_from_string(task.at("kind").get<std::string>());
    if (task.contains("class_fractions"))
      c.task.class_fractions = task.at("class_fractions").get<std::vector<double>>();

    const auto& oracle = section(j, "oracle");
    c.oracle = potts_spec_from_json(oracle, pick(oracle, kOracle));

    const auto& cur = section(j, "curation");
    c.curation.constant_region = cur.value("constant_region", c.curation.constant_region);
    c.curation.constant_offset = cur.value("constant_offset", c.curation.constant_offset);
    c.curation.wild_type = cur.value("wild_type", c.curation.wild_type);
    c.curation.wild_type_seed =
        explicit_ok && cur.contains("wild_type_seed") ? cur.at("wild_type_seed").get<std::uint64_t>()
                                                      : derive_seed(c.seed, kWildType);
    c.curation.substitution_prob = cur.value("substitution_prob", c.curation.substitution_prob);
    c.curation.max_mutations = cur.value("max_mutations", c.curation.max_mutations);
    c.curation.sample_count = cur.value("sample_count", c.curation.sample_count);
    c.curation.label_noise_sigma = cur.value("label_noise_sigma", c.curation.label_noise_sigma);
    c.curation.seed = pick(cur, kCuration);

    const auto& split = section(j, "split");
    c.split = split_from_json(split);
    c.split_seed = pick(split, kSplit);

    const auto& model = section(j, "model");
    c.model = model_config_from_json(model);
    c.model.seed = pick(model, kModel);

    const auto& train = section(j, "train");
    c.genhance_train = train_from_json(section(train, "genhance"), pick(section(train, "genhance"), kGenhance));
    c.generator_train = train_from_json(section(train, "generator"), pick(section(train, "generator"), kGenerator));
    c.discriminator_train =
        train_from_json(section(train, "discriminator"), pick(section(train, "discriminator"), kDiscriminator));

    const auto& s = section(j, "sampling");
    c.sampling.n = s.value("n", c.sampling.n);
    c.sampling.delta_fraction = s.value("delta_fraction", c.sampling.delta_fraction);
    c.sampling.seed_fraction = s.value("seed_fraction", c.sampling.seed_fraction);
    if (s.contains("seed_classes")) c.sampling.seed_classes = s.at("seed_classes").get<std::vector<int>>();
    if (s.contains("decoding")) c.sampling.decoding = decoding_from_json(s.at("decoding"));
    const auto& b = section(s, "budget");
    c.sampling.budget.min_attempts = b.value("min_attempts", c.sampling.budget.min_attempts);
    c.sampling.budget.min_yield = b.value("min_yield", c.sampling.budget.min_yield);
    c.sampling.budget.batch = b.value("batch", c.sampling.budget.batch);
    c.sampling.seed = pick(s, kSampling);

    const auto& m = section(s, "mcmc");
    auto& mc = c.sampling.mcmc;
    mc.temperature = m.value("temperature", mc.temperature);
    mc.iterations = m.value("iterations", mc.iterations);
    if (m.contains("edit_metric")) mc.metric = edit_metric_from_string(m.at("edit_metric").get<std::string>());
    mc.edit_count = m.value("edit_count", mc.edit_count);
    if (m.contains("edit_fraction") && !m.at("edit_fraction").is_null())
      mc.edit_fraction = m.at("edit_fraction").get<double>();
    mc.edit_reference = m.value("edit_reference", mc.edit_reference);
    mc.max_chains = m.value("max_chains", mc.max_chains);
    mc.max_rounds = m.value("max_rounds", mc.max_rounds);
    if (m.contains("infill_decoding")) mc.infill_decoding = decoding_from_json(m.at("infill_decoding"));
    mc.seed = pick(m, kMCMC);

    auto e = section(j, "evaluation");
    nlohmann::json metrics = e;
    metrics.erase("rankers");
    c.evaluation = metrics_spec_from_json(metrics);
    const auto eval_seed = derive_seed(c.seed, kEval);
    c.evaluation.top_class = with_seed(c.evaluation.top_class, explicit_ok ? e : nlohmann::json::object(),
                                       "top_class", derive_seed(eval_seed, 1));
    c.evaluation.min =
        with_seed(c.evaluation.min, explicit_ok ? e : nlohmann::json::object(), "min", derive_seed(eval_seed, 2));
    if (e.contains("rankers")) c.rankers = e.at("rankers").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("config: ") + ex.what());
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path, std::optional<std::uint64_t> seed_override) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j, seed_override);
}

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

void ExperimentConfig::validate() const {
  require(oracle.length >= 2, "oracle.length must be >= 2");
  require(oracle.alphabet >= 2 && oracle.alphabet <= 20, "oracle.alphabet must be in [2, 20]");
  require(oracle.coupling_pairs >= 0, "oracle.coupling_pairs must be >= 0");
  require(model.max_length >= oracle.length, "model.max_length must be >= oracle.length");
  model.validate();
  genhance_train.validate();
  generator_train.validate();
  discriminator_train.validate();
  require(curation.constant_offset >= 0, "curation.constant_offset must be >= 0");
  require(curation.constant_offset + static_cast<int>(curation.constant_region.size()) <= oracle.length,
          "curation.constant_region does not fit inside the sequence at constant_offset");
  require(curation.wild_type.empty() || static_cast<int>(curation.wild_type.size()) == oracle.length,
          "curation.wild_type must have oracle.length symbols");
  require(curation.substitution_prob < 1.0, "curation.substitution_prob must be < 1 (<= 0 selects 4/L)");
  require(curation.max_mutations >= 0, "curation.max_mutations must be >= 0");
  require(curation.sample_count >= 2, "curation.sample_count must be >= 2");
  require(curation.label_noise_sigma >= 0.0, "curation.label_noise_sigma must be >= 0");
  double prev = 0.0;
  for (double f : task.class_fractions) {
    require(f > prev && f < 1.0, "task.class_fractions must be strictly increasing inside (0, 1)");
    prev = f;
  }
  if (task.kind == LabelKind::continuous) {
    require(split.excluded_classes.empty() && split.retained.empty(),
            "split.excluded_classes/retained apply to the ordinal task only");
    require(sampling.seed_classes.empty(), "sampling.seed_classes applies to the ordinal task only");
  } else {
    require(split.excluded_top_fraction == 0.0, "split.excluded_top_fraction applies to the continuous task only");
    const int classes = static_cast<int>(task.class_fractions.size()) + 1;
    for (int c : split.excluded_classes)
      require(c >= 1 && c <= classes, "split.excluded_classes entry out of range 1.." + std::to_string(classes));
    for (int c : sampling.seed_classes)
      require(c >= 1 && c <= classes, "sampling.seed_classes entry out of range 1.." + std::to_string(classes));
    for (const auto& [name, set] : evaluation.target_sets)
      for (int c : set)
        require(c >= 1 && c <= classes, "evaluation.target_sets." + name + " class out of range");
  }
  require(split.excluded_top_fraction >= 0.0 && split.excluded_top_fraction < 1.0,
          "split.excluded_top_fraction must be in [0, 1)");
  require(sampling.n >= 1, "sampling.n must be >= 1");
  require(sampling.delta_fraction >= 0.0, "sampling.delta_fraction must be >= 0");
  require(sampling.seed_fraction > 0.0 && sampling.seed_fraction <= 1.0, "sampling.seed_fraction must be in (0, 1]");
  require(sampling.budget.batch >= 1, "sampling.budget.batch must be >= 1");
  require(sampling.budget.min_yield >= 0.0 && sampling.budget.min_yield <= 1.0,
          "sampling.budget.min_yield must be in [0, 1]");
  const auto& mc = sampling.mcmc;
  require(mc.temperature > 0.0, "sampling.mcmc.temperature must be > 0");
  require(mc.iterations >= 1, "sampling.mcmc.iterations must be >= 1");
  require(mc.edit_count >= 0, "sampling.mcmc.edit_count must be >= 0");
  require(!mc.edit_fraction || (*mc.edit_fraction >= 0.0 && *mc.edit_fraction <= 1.0),
          "sampling.mcmc.edit_fraction must be in [0, 1]");
  require(mc.edit_reference == "initial" || mc.edit_reference == "wild-type",
          "sampling.mcmc.edit_reference must be 'initial' or 'wild-type'");
  require(mc.max_rounds >= 1, "sampling.mcmc.max_rounds must be >= 1");
  static const std::set<std::string> fixed{"native", "oracle", "random", "gendisc"};
  for (const auto& r : rankers)
    require(fixed.count(r) || is_genhance_method(r),
            "unknown ranker '" + r + "' (native, oracle, random, gendisc, genhance, genhance-noCC, genhance-noSmoothCC)");
}

const std::vector<std::string>& train_methods() {
  static const std::vector<std::string> m{"genhance", "genhance-noCC", "genhance-noSmoothCC", "gendisc"};
  return m;
}

const std::vector<std::string>& sample_methods() {
  static const std::vector<std::string> m{"genhance",   "genhance-noCC", "genhance-noSmoothCC",
                                          "gendisc",    "mcmc-random",   "mcmc-infill"};
  return m;
}

// ---- experiment -------------------------------------------------------------

Experiment::Experiment(ExperimentConfig config, fs::path run_dir, bool force)
    : config_(std::move(config)),
      dir_(std::move(run_dir)),
      force_(force),
      vocab_(vocabulary_for(config_.oracle.alphabet)) {
  if (dir_.empty()) throw ConfigError("no output directory: pass --out or set 'out' in the config");
  write_config_snapshot();
}

fs::path Experiment::oracle_path() const { return dir_ / "oracle" / "oracle.json"; }
fs::path Experiment::train_data_path() const { return dir_ / "data" / "train.jsonl"; }
fs::path Experiment::excluded_data_path() const { return dir_ / "data" / "excluded.jsonl"; }
fs::path Experiment::data_metadata_path() const { return dir_ / "data" / "metadata.json"; }
fs::path Experiment::checkpoint_path(const std::string& method, const std::string& role) const {
  return dir_ / "train" / method_dir(method) / (role + ".bin");
}
fs::path Experiment::pool_path(const std::string& method) const { return dir_ / "pools" / (method + ".jsonl"); }
fs::path Experiment::report_path(const std::string& pool, const std::string& ranker) const {
  return dir_ / "eval" / (pool + "__" + ranker + ".json");
}

void Experiment::emit(const fs::path& path, std::string_view content, bool index) const {
  std::error_code ec;
  if (fs::exists(path, ec)) {
    if (read_file(path) == content) return;
    if (!force_ && !index) throw ConflictError(path.string() + " exists with different content; rerun with --force to replace it");
  }
  fs::create_directories(path.parent_path(), ec);
  if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  write_file_atomic(path, content);
}

void Experiment::write_config_snapshot() const {
  emit(dir_ / "config.json", dump(config_.to_json()));
}

void Experiment::make_oracle() {
  const auto oracle = PottsOracle::random(config_.oracle);
  emit(oracle_path(), oracle.serialize());
  ojson meta;
  meta["hash"] = oracle.hash();
  meta["spec"] = potts_json(config_.oracle);
  meta["config_hash"] = config_.hash();
  emit(dir_ / "oracle" / "metadata.json", dump(meta));
}

PottsOracle Experiment::load_oracle() const {
  if (!fs::exists(oracle_path())) throw IoError(oracle_path().string() + " missing; run make-oracle first");
  return PottsOracle::load(oracle_path());
}

CurationConfig Experiment::curation_config() const {
  const auto& s = config_.curation;
  CurationConfig c;
  c.constant_region = TokenSequence::parse(s.constant_region, vocab_);
  c.constant_offset = s.constant_offset;
  c.wild_type = s.wild_type.empty()
                    ? make_wild_type(config_.oracle.length, config_.oracle.alphabet, c.constant_region,
                                     s.constant_offset, s.wild_type_seed)
                    : TokenSequence::parse(s.wild_type, vocab_);
  c.substitution_prob = s.substitution_prob;
  c.max_mutations = s.max_mutations;
  c.sample_count = s.sample_count;
  c.label_noise_sigma = s.label_noise_sigma;
  c.seed = s.seed;
  return c;
}

DesirabilityOrder Experiment::order() const {
  // Potts scores improve downward; ordinal classes improve upward.
  return DesirabilityOrder(config_.task.kind == LabelKind::continuous ? Direction::lower_better
                                                                      : Direction::higher_better);
}

void Experiment::curate() {
  const auto oracle = load_oracle();
  const auto cc = curation_config();
  auto result = curate_dataset(cc, oracle);
  SequenceDataset data = result.dataset;
  std::optional<OrdinalOracle> ordinal;
  if (config_.task.kind == LabelKind::ordinal) {
    std::vector<double> scores;
    scores.reserve(data.size());
    for (const auto& it : data.items()) scores.push_back(oracle.score(it.sequence));
    ordinal = OrdinalOracle::from_quantiles(oracle, scores, config_.task.class_fractions,
                                            DesirabilityOrder(Direction::lower_better));
    data = relabel_ordinal(data, *ordinal);
  }
  auto split = extrapolation_split(data, config_.split, config_.split_seed);

  emit(train_data_path(), serialize_dataset(split.train.items(), vocab_));
  if (split.excluded) emit(excluded_data_path(), serialize_dataset(split.excluded->items(), vocab_));

  double best_score = 0.0;
  bool first = true;
  for (const auto& it : split.train.items()) {
    const double s = oracle.score(it.sequence);
    if (first || s < best_score) best_score = s;
    first = false;
  }
  ojson meta;
  meta["task"] = to_string(config_.task.kind);
  meta["order"] = to_string(order().direction());
  meta["class_count"] = split.train.class_count();
  meta["train_size"] = split.train.size();
  meta["excluded_size"] = split.excluded ? split.excluded->size() : 0;
  meta["y_tau"] = split.train.y_tau().value;
  meta["y_tau_oracle"] = best_score;
  meta["label_mean"] = split.train.label_mean();
  meta["label_stddev"] = split.train.label_stddev();
  meta["mean_precap_mutations"] = result.mean_precap_mutations;
  meta["draws"] = result.draws;
  meta["discarded"] = result.discarded;
  meta["wild_type"] = cc.wild_type.compact(vocab_);
  meta["ordinal_edges"] = ordinal ? ojson(ordinal->edges()) : ojson(nullptr);
  meta["oracle_hash"] = oracle.hash();
  meta["config_hash"] = config_.hash();
  emit(data_metadata_path(), dump(meta));
}

SequenceDataset Experiment::load_train() const {
  if (!fs::exists(train_data_path())) throw IoError(train_data_path().string() + " missing; run curate first");
  const int classes = config_.task.kind == LabelKind::ordinal
                          ? static_cast<int>(config_.task.class_fractions.size()) + 1
                          : 0;
  return read_dataset(train_data_path(), vocab_, order(), classes);
}

std::optional<OrdinalOracle> Experiment::ordinal_oracle() const {
  if (config_.task.kind != LabelKind::ordinal) return std::nullopt;
  const auto meta = read_json(data_metadata_path());
  return OrdinalOracle(load_oracle(), meta.at("ordinal_edges").get<std::vector<double>>(),
                       DesirabilityOrder(Direction::lower_better));
}

double Experiment::y_tau() const { return read_json(data_metadata_path()).at("y_tau_oracle").get<double>(); }

void Experiment::train(const std::string& method) {
  if (std::find(train_methods().begin(), train_methods().end(), method) == train_methods().end())
    throw Error(ErrorCategory::usage, "unknown training method '" + method + "'");
  const auto data = load_train();
  const auto dir = dir_ / "train" / method_dir(method);
  auto stamp = [&](Checkpoint& ck, const std::string& role) {
    ck.metadata["method"] = method;
    ck.metadata["role"] = role;
    ck.metadata["config_hash"] = config_.hash();
    ck.metadata["train_data_hash"] = file_sha256(train_data_path());
  };
  ojson meta;
  meta["method"] = method;
  meta["config_hash"] = config_.hash();
  if (method == "gendisc") {
    auto res = train_gendisc(data, vocab_, config_.model, config_.generator_train, config_.discriminator_train);
    stamp(res.generator.checkpoint, "generator");
    stamp(res.discriminator.checkpoint, "discriminator");
    const auto gen = res.generator.checkpoint.serialize();
    const auto disc = res.discriminator.checkpoint.serialize();
    emit(checkpoint_path(method, "generator"), gen);
    emit(checkpoint_path(method, "discriminator"), disc);
    emit(dir / "generator_loss_log.jsonl", serialize_loss_log(res.generator.log));
    emit(dir / "discriminator_loss_log.jsonl", serialize_loss_log(res.discriminator.log));
    meta["checkpoints"] = {{"generator", sha256_hex(gen)}, {"discriminator", sha256_hex(disc)}};
  } else {
    AblationFlags flags;
    flags.without_cycle_consistency = method != "genhance";
    flags.without_smoothing = method == "genhance-noSmoothCC";
    const auto tc = ablation_variants(config_.genhance_train, flags);
    auto res = train_genhance(data, vocab_, config_.model, tc);
    stamp(res.checkpoint, "model");
    const auto bytes = res.checkpoint.serialize();
    emit(checkpoint_path(method), bytes);
    emit(dir / "loss_log.jsonl", serialize_loss_log(res.log));
    meta["checkpoints"] = {{"model", sha256_hex(bytes)}};
    meta["train_config"] = to_json(tc);
  }
  emit(dir / "metadata.json", dump(meta));
}

Checkpoint Experiment::load_checkpoint(const std::string& method, const std::string& role) const {
  const auto path = checkpoint_path(method, role);
  if (!fs::exists(path)) throw IoError(path.string() + " missing; run train " + method + " first");
  return Checkpoint::load(path);
}

std::vector<TokenSequence> Experiment::seed_sequences() const {
  const auto data = load_train();
  std::vector<TokenSequence> seeds;
  const auto& classes = config_.sampling.seed_classes;
  if (!classes.empty()) {
    for (const auto& it : data.items())
      if (std::find(classes.begin(), classes.end(), it.label.class_index()) != classes.end())
        seeds.push_back(it.sequence);
    if (seeds.empty()) throw DataError("no training items in sampling.seed_classes");
  } else {
    const auto top = data.most_desirable_fraction(config_.sampling.seed_fraction);
    for (const auto& it : top.items()) seeds.push_back(it.sequence);
  }
  return seeds;
}

void Experiment::sample(const std::string& method, std::optional<std::size_t> n_opt) {
  if (std::find(sample_methods().begin(), sample_methods().end(), method) == sample_methods().end())
    throw Error(ErrorCategory::usage, "unknown sampling method '" + method + "'");
  const std::size_t n = n_opt.value_or(config_.sampling.n);
  const auto& s = config_.sampling;
  const auto cc = curation_config();
  CandidatePool pool;
  if (is_genhance_method(method)) {
    const auto ck = load_checkpoint(method);
    const auto seeds = seed_sequences();
    pool = genhance_sample(ck, seeds, s.delta_fraction, n, s.decoding, cc, s.seed, s.budget);
    pool.provenance.parameters["seed_count"] = seeds.size();
  } else if (method == "gendisc") {
    pool = gendisc_sample(load_checkpoint("gendisc", "generator"), load_checkpoint("gendisc", "discriminator"), n,
                          s.decoding, cc, s.seed, s.budget);
  } else {
    const auto disc = load_checkpoint("gendisc", "discriminator");
    ModelRanker ranker(disc.model, "gendisc");
    ProposalOperator op;
    if (method == "mcmc-random") {
      op = ProposalOperator::uniform(cc, vocab_.size());
    } else {
      op = ProposalOperator::infill(cc, load_checkpoint("gendisc", "generator").model, s.mcmc.infill_decoding);
    }
    auto init = seed_sequences();
    if (s.mcmc.max_chains > 0 && init.size() > s.mcmc.max_chains) init.resize(s.mcmc.max_chains);
    MCMCConfig mc;
    mc.temperature = s.mcmc.temperature;
    mc.iterations = s.mcmc.iterations;
    mc.cap.metric = s.mcmc.metric;
    mc.cap.count = s.mcmc.edit_count;
    mc.cap.fraction = s.mcmc.edit_fraction;
    if (s.mcmc.edit_reference == "wild-type") mc.cap.reference = cc.wild_type;
    mc.seed = s.mcmc.seed;
    pool = mcmc_sample(ranker, init, op, mc, cc, n, s.mcmc.max_rounds);
    pool.provenance.checkpoint_hash = file_sha256(checkpoint_path("gendisc", "discriminator"));
    pool.provenance.parameters["chains"] = init.size();
  }
  pool.provenance.method = method;
  pool.provenance.config_hash = config_.hash();
  emit(pool_path(method), serialize_pool(pool, vocab_));
}

CandidatePool Experiment::load_pool(const std::string& method) const {
  const auto path = pool_path(method);
  if (!fs::exists(path)) throw IoError(path.string() + " missing; run sample " + method + " first");
  return read_pool(path, vocab_);
}

std::unique_ptr<Ranker> Experiment::make_ranker(const std::string& name, const std::string& pool_method) const {
  if (name == "native") return nullptr;
  if (name == "oracle") return std::make_unique<OracleRanker>(load_oracle(), DesirabilityOrder(Direction::lower_better));
  if (name == "random")
    return std::make_unique<RandomRanker>(derive_seed(config_.evaluation.top_class.seed, name_stream(pool_method)));
  if (name == "gendisc") return std::make_unique<ModelRanker>(load_checkpoint("gendisc", "discriminator").model, name);
  if (is_genhance_method(name)) return std::make_unique<ModelRanker>(load_checkpoint(name).model, name);
  throw ConfigError("unknown ranker '" + name + "'");
}

std::vector<MetricReport> Experiment::evaluate(std::vector<std::string> pools, std::vector<std::string> rankers) {
  if (pools.empty()) {
    for (const auto& m : sample_methods())
      if (fs::exists(pool_path(m))) pools.push_back(m);
    if (pools.empty()) throw IoError("no pools under " + (dir_ / "pools").string() + "; run sample first");
  }
  if (rankers.empty()) rankers = config_.rankers;

  const auto oracle = load_oracle();
  const auto ordinal = ordinal_oracle();
  const auto train = load_train();
  std::vector<TokenSequence> reference;
  reference.reserve(train.size());
  for (const auto& it : train.items()) reference.push_back(it.sequence);

  EvalContext ctx;
  ctx.potts = &oracle;
  ctx.ordinal = ordinal ? &*ordinal : nullptr;
  ctx.order = DesirabilityOrder(Direction::lower_better);
  ctx.y_tau = y_tau();
  ctx.reference = reference;

  auto train_scores = std::vector<double>();
  for (const auto& x : reference) train_scores.push_back(oracle.score(x));
  const auto hist_path = dir_ / "eval" / "histograms.json";
  ojson hist = fs::exists(hist_path) ? ojson::parse(read_file(hist_path)) : ojson::object();
  hist["bin_width"] = 1.0;
  hist["units"] = "oracle score";
  hist["train"] = to_json(histogram(train_scores, 1.0));
  if (!hist.contains("pools")) hist["pools"] = ojson::object();

  std::vector<MetricReport> reports;
  for (const auto& p : pools) {
    const auto pool = load_pool(p);
    std::vector<double> all;
    for (const auto& c : pool.candidates) all.push_back(oracle.score(c.sequence));
    ojson& ph = hist["pools"][p];
    ph["all"] = to_json(histogram(all, 1.0));
    if (!ph.contains("top")) ph["top"] = ojson::object();
    for (const auto& r : rankers) {
      const auto ranker = make_ranker(r, p);
      auto report = ranker ? cross_rank_eval(pool, *ranker, ctx, config_.evaluation)
                           : evaluate_pool(pool, nullptr, ctx, config_.evaluation);
      report.pool.method = p;
      emit(report_path(p, r), dump(to_json(report)));

      const auto scored = ranker ? rescore(pool, *ranker) : pool;
      const std::size_t k = config_.evaluation.top_ks.empty() ? 100 : config_.evaluation.top_ks.front();
      std::vector<double> top;
      for (const auto& c : rank(scored.candidates, k)) top.push_back(oracle.score(c.sequence));
      ph["top"][r] = to_json(histogram(top, 1.0));
      ph["top"][r]["k"] = k;
      reports.push_back(std::move(report));
    }
  }
  // Key order must not depend on the order of evaluate calls.
  const auto sorted = [](const ojson& o) {
    std::map<std::string, ojson> m;
    for (const auto& [k, v] : o.items()) m.emplace(k, v);
    ojson out = ojson::object();
    for (auto& [k, v] : m) out[k] = std::move(v);
    return out;
  };
  ojson by_pool = sorted(hist["pools"]);
  for (auto& [name, ph] : by_pool.items()) ph["top"] = sorted(ph["top"]);
  hist["pools"] = std::move(by_pool);
  emit(dir_ / "eval" / "table.tsv", metric_table(collect_reports()), true);
  emit(hist_path, dump(hist), true);
  return reports;
}

std::vector<MetricReport> Experiment::collect_reports() const {
  const auto eval_dir = dir_ / "eval";
  if (!fs::exists(eval_dir)) throw IoError(eval_dir.string() + " missing; run evaluate first");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(eval_dir))
    if (e.path().extension() == ".json" && e.path().filename().string().find("__") != std::string::npos)
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<MetricReport> reports;
  for (const auto& f : files) reports.push_back(metric_report_from_json(read_json(f)));
  if (reports.empty()) throw IoError("no evaluation reports under " + eval_dir.string());
  return reports;
}

std::string Experiment::report() {
  const auto reports = collect_reports();

  // Wide table: one row per (pool, ranker), one column per metric name.
  std::vector<std::string> columns;
  for (const auto& r : reports)
    for (const auto& m : r.metrics)
      if (std::find(columns.begin(), columns.end(), m.name) == columns.end()) columns.push_back(m.name);
  std::ostringstream out;
  out << "pool\tranker\tpool_size";
  for (const auto& c : columns) out << '\t' << c;
  out << '\n';
  out.precision(10);
  for (const auto& r : reports) {
    out << r.pool.method << '\t' << r.ranker << '\t' << r.pool_size;
    for (const auto& c : columns) {
      out << '\t';
      if (const auto* m = r.find(c)) out << m->value;
    }
    out << '\n';
  }
  const auto text = out.str();
  emit(dir_ / "report" / "summary.tsv", text, true);
  ojson j = ojson::array();
  for (const auto& r : reports) j.push_back(to_json(r));
  emit(dir_ / "report" / "summary.json", dump(j), true);
  return text;
}

}  // namespace genhance
