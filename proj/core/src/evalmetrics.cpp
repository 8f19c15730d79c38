#include "genhance/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "genhance/io.hpp"

namespace genhance {

double pct_in_class(std::span<const int> classes, std::span<const int> targets) {
  if (classes.empty()) throw DataError("pct_in_class: empty list");
  std::size_t hits = 0;
  for (int c : classes)
    if (std::find(targets.begin(), targets.end(), c) != targets.end()) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(classes.size());
}

double pct_in_class(std::span<const TokenSequence> top_k, const OrdinalOracle& oracle, std::span<const int> targets) {
  std::vector<int> classes;
  classes.reserve(top_k.size());
  for (const auto& x : top_k) classes.push_back(oracle.classify(x));
  return pct_in_class(classes, targets);
}

double pci(std::span<const double> oracle_scores, double y_tau, DesirabilityOrder order) {
  if (oracle_scores.empty()) throw DataError("pci: empty list");
  std::size_t better = 0;
  for (double s : oracle_scores)
    if (order.more_desirable(s, y_tau)) ++better;
  return 100.0 * static_cast<double>(better) / static_cast<double>(oracle_scores.size());
}

double pci(std::span<const TokenSequence> top_k, const PottsOracle& oracle, double y_tau, DesirabilityOrder order) {
  std::vector<double> s;
  s.reserve(top_k.size());
  for (const auto& x : top_k) s.push_back(oracle.score(x));
  return pci(s, y_tau, order);
}

namespace {

Estimate summarize(const std::vector<double>& values) {
  Estimate e;
  e.rounds = values.size();
  if (values.empty()) return e;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / static_cast<double>(values.size() - 1)) / std::sqrt(static_cast<double>(values.size()));
  }
  return e;
}

/// Pool indices in a record-order-independent order.
std::vector<std::size_t> canonical_order(const CandidatePool& pool) {
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), 0);
  const auto& c = pool.candidates;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (c[a].sequence != c[b].sequence) return c[a].sequence < c[b].sequence;
    return c[a].score < c[b].score;
  });
  return idx;
}

/// Scores for the canonical pool, or empty when the ranker is stochastic
/// and must be called per round.
std::vector<double> fixed_scores(const CandidatePool& pool, const std::vector<std::size_t>& order,
                                 const Ranker* ranker) {
  std::vector<double> out;
  if (ranker && ranker->stochastic()) return out;
  if (!ranker) {
    for (auto i : order) out.push_back(pool.candidates[i].score);
    return out;
  }
  std::vector<TokenSequence> seqs;
  seqs.reserve(order.size());
  for (auto i : order) seqs.push_back(pool.candidates[i].sequence);
  return ranker->score(seqs);
}

/// For each round: positions (into the canonical order) of the top `top`
/// of a without-replacement subsample, ranked by score.
template <typename Fn>
void resample(const CandidatePool& pool, const Ranker* ranker, std::size_t subsample, std::size_t top,
              std::size_t rounds, std::uint64_t seed, Fn&& on_round) {
  const auto order = canonical_order(pool);
  const auto scores = fixed_scores(pool, order, ranker);
  const std::size_t n = order.size();
  std::vector<std::size_t> perm(n);
  for (std::size_t r = 0; r < rounds; ++r) {
    std::mt19937_64 rng(derive_seed(seed, r));
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = 0; i < subsample; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<std::size_t> drawn(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(subsample));
    std::vector<double> s(subsample);
    if (scores.empty()) {
      std::vector<TokenSequence> seqs;
      for (auto d : drawn) seqs.push_back(pool.candidates[order[d]].sequence);
      s = ranker->score(seqs);
    } else {
      for (std::size_t i = 0; i < subsample; ++i) s[i] = scores[drawn[i]];
    }
    std::vector<std::size_t> pos(subsample);
    std::iota(pos.begin(), pos.end(), 0);
    std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    std::vector<std::size_t> chosen;
    for (std::size_t i = 0; i < std::min(top, subsample); ++i) chosen.push_back(order[drawn[pos[i]]]);
    on_round(chosen);
  }
}

void check_resample(const ResampleSpec& spec) {
  if (spec.top == 0) throw ConfigError("resampling top must be >= 1");
  if (spec.rounds == 0) throw ConfigError("resampling rounds must be >= 1");
  if (spec.subsample == 0) throw ConfigError("resampling subsample must be >= 1");
}

}  // namespace

Estimate expected_top_class_pct(const CandidatePool& pool, const Ranker* ranker, const OrdinalOracle& oracle,
                                std::span<const int> targets, const ResampleSpec& spec) {
  check_resample(spec);
  if (pool.size() < spec.subsample)
    throw DataError("expected_top_class_pct: pool of " + std::to_string(pool.size()) +
                    " is smaller than the subsample of " + std::to_string(spec.subsample));
  std::vector<int> classes(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) classes[i] = oracle.classify(pool.candidates[i].sequence);
  std::vector<double> values;
  resample(pool, ranker, spec.subsample, spec.top, spec.rounds, spec.seed, [&](const std::vector<std::size_t>& top) {
    std::vector<int> c;
    for (auto i : top) c.push_back(classes[i]);
    values.push_back(pct_in_class(c, targets));
  });
  return summarize(values);
}

ExpectedMin expected_min(const CandidatePool& pool, const Ranker* ranker, const PottsOracle& oracle,
                         const ResampleSpec& spec, DesirabilityOrder order) {
  check_resample(spec);
  if (pool.size() == 0) throw DataError("expected_min: empty pool");
  ExpectedMin out;
  out.clipped = spec.subsample > pool.size();
  out.subsample_used = std::min(spec.subsample, pool.size());
  std::vector<double> truth(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) truth[i] = oracle.score(pool.candidates[i].sequence);
  std::vector<double> values;
  resample(pool, ranker, out.subsample_used, spec.top, spec.rounds, spec.seed,
           [&](const std::vector<std::size_t>& top) {
             double best = truth[top.front()];
             for (auto i : top)
               if (order.more_desirable(truth[i], best)) best = truth[i];
             values.push_back(best);
           });
  out.value = summarize(values);
  return out;
}

// ---- quality proxy --------------------------------------------------------------

MarkovModel::MarkovModel(int alphabet, int order, double alpha) : alphabet_(alphabet), order_(order), alpha_(alpha) {
  if (alphabet < 1) throw ConfigError("Markov model alphabet must be >= 1");
  if (order < 0 || order > 12) throw ConfigError("Markov model order must be in [0, 12]");
  if (!(alpha > 0.0)) throw ConfigError("Markov smoothing constant must be > 0");
}

MarkovModel MarkovModel::fit(std::span<const TokenSequence> corpus, int alphabet, int order, double alpha) {
  if (corpus.empty()) throw DataError("quality proxy: empty reference corpus");
  MarkovModel m(alphabet, order, alpha);
  for (const auto& x : corpus) m.add(x);
  return m;
}

std::uint64_t MarkovModel::context_key(std::span<const int> context) const {
  // Base alphabet + 1; digit `alphabet_` is the start marker.
  std::uint64_t key = 0;
  const auto base = static_cast<std::uint64_t>(alphabet_ + 1);
  for (int c : context) key = key * base + static_cast<std::uint64_t>(c);
  return key;
}

namespace {

std::vector<int> padded(const TokenSequence& x, int order, int start_marker) {
  std::vector<int> out(static_cast<std::size_t>(order), start_marker);
  out.insert(out.end(), x.tokens().begin(), x.tokens().end());
  return out;
}

}  // namespace

void MarkovModel::add(const TokenSequence& x) {
  const auto p = padded(x, order_, alphabet_);
  for (std::size_t t = static_cast<std::size_t>(order_); t < p.size(); ++t) {
    const int sym = p[t];
    if (sym < 0 || sym >= alphabet_) throw DataError("quality proxy: symbol out of range");
    auto& row = counts_[context_key(std::span<const int>(p).subspan(t - static_cast<std::size_t>(order_),
                                                                  static_cast<std::size_t>(order_)))];
    if (row.empty()) row.assign(static_cast<std::size_t>(alphabet_) + 1, 0);
    ++row[static_cast<std::size_t>(sym)];
    ++row.back();
  }
}

double MarkovModel::probability(std::span<const int> context, int symbol) const {
  if (static_cast<int>(context.size()) != order_) throw DataError("Markov context has the wrong length");
  if (symbol < 0 || symbol >= alphabet_) throw DataError("quality proxy: symbol out of range");
  const auto it = counts_.find(context_key(context));
  const double a = alpha_;
  const double denom_extra = a * static_cast<double>(alphabet_);
  if (it == counts_.end()) return a / denom_extra;
  const auto& row = it->second;
  return (static_cast<double>(row[static_cast<std::size_t>(symbol)]) + a) /
         (static_cast<double>(row.back()) + denom_extra);
}

double MarkovModel::nll(const TokenSequence& x) const {
  if (x.length() == 0) throw DataError("quality proxy: empty sequence");
  const auto p = padded(x, order_, alphabet_);
  double total = 0.0;
  for (std::size_t t = static_cast<std::size_t>(order_); t < p.size(); ++t)
    total -= std::log(probability(
        std::span<const int>(p).subspan(t - static_cast<std::size_t>(order_), static_cast<std::size_t>(order_)), p[t]));
  return total / static_cast<double>(x.length());
}

double MarkovModel::perplexity(const TokenSequence& x) const { return std::exp(nll(x)); }

double quality_proxy(std::span<const TokenSequence> pool, std::span<const TokenSequence> reference, int alphabet,
                     int order, double alpha) {
  if (pool.empty()) throw DataError("quality proxy: empty pool");
  const auto m = MarkovModel::fit(reference, alphabet, order, alpha);
  double sum = 0.0;
  for (const auto& x : pool) sum += m.perplexity(x);
  return sum / static_cast<double>(pool.size());
}

// ---- histograms -----------------------------------------------------------------

Histogram histogram(std::span<const double> values, double bin_width) {
  if (!(bin_width > 0.0)) throw ConfigError("histogram bin width must be > 0");
  Histogram h;
  h.bin_width = bin_width;
  if (values.empty()) return h;
  double lo = values.front(), hi = values.front();
  for (double v : values) {
    if (!std::isfinite(v)) throw DataError("histogram: non-finite value");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double first = std::floor(lo / bin_width);
  const auto bins = static_cast<std::size_t>(std::floor(hi / bin_width) - first) + 1;
  h.lo = first * bin_width;
  h.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>(std::floor(v / bin_width) - first);
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

nlohmann::ordered_json to_json(const Histogram& h) {
  nlohmann::ordered_json j;
  j["bin_width"] = h.bin_width;
  j["lo"] = h.lo;
  auto edges = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i <= h.counts.size(); ++i) edges.push_back(h.lo + static_cast<double>(i) * h.bin_width);
  j["edges"] = std::move(edges);
  j["counts"] = h.counts;
  return j;
}

// ---- reports --------------------------------------------------------------------

namespace {

nlohmann::ordered_json to_json(const ResampleSpec& r) {
  nlohmann::ordered_json j;
  j["subsample"] = r.subsample;
  j["top"] = r.top;
  j["rounds"] = r.rounds;
  j["seed"] = r.seed;
  return j;
}

ResampleSpec resample_from_json(const nlohmann::json& j, ResampleSpec d) {
  for (const auto& [k, v] : j.items())
    if (k != "subsample" && k != "top" && k != "rounds" && k != "seed")
      throw ConfigError("unknown resampling key '" + k + "'");
  d.subsample = j.value("subsample", d.subsample);
  d.top = j.value("top", d.top);
  d.rounds = j.value("rounds", d.rounds);
  d.seed = j.value("seed", d.seed);
  check_resample(d);
  return d;
}

nlohmann::ordered_json provenance_json(const PoolProvenance& p) {
  nlohmann::ordered_json j;
  j["method"] = p.method;
  j["checkpoint_hash"] = p.checkpoint_hash;
  j["ranker_hash"] = p.ranker_hash;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  j["parameters"] = p.parameters;
  return j;
}

}  // namespace

nlohmann::ordered_json to_json(const MetricsSpec& s) {
  nlohmann::ordered_json j;
  j["top_ks"] = s.top_ks;
  auto sets = nlohmann::ordered_json::object();
  for (const auto& [name, classes] : s.target_sets) sets[name] = classes;
  j["target_sets"] = std::move(sets);
  j["top_class"] = to_json(s.top_class);
  j["min"] = to_json(s.min);
  j["quality"] = s.quality;
  j["quality_order"] = s.quality_order;
  j["quality_alpha"] = s.quality_alpha;
  return j;
}

MetricsSpec metrics_spec_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known{"top_ks", "target_sets", "top_class", "min",
                                              "quality", "quality_order", "quality_alpha"};
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError("unknown evaluation key '" + k + "'");
  MetricsSpec s;
  if (j.contains("top_ks")) s.top_ks = j.at("top_ks").get<std::vector<std::size_t>>();
  for (auto k : s.top_ks)
    if (k == 0) throw ConfigError("evaluation.top_ks entries must be >= 1");
  if (j.contains("target_sets")) {
    s.target_sets.clear();
    for (const auto& [name, classes] : j.at("target_sets").items())
      s.target_sets.emplace_back(name, classes.get<std::vector<int>>());
  }
  if (j.contains("top_class")) s.top_class = resample_from_json(j.at("top_class"), s.top_class);
  if (j.contains("min")) s.min = resample_from_json(j.at("min"), s.min);
  s.quality = j.value("quality", s.quality);
  s.quality_order = j.value("quality_order", s.quality_order);
  s.quality_alpha = j.value("quality_alpha", s.quality_alpha);
  if (s.quality_order < 0) throw ConfigError("evaluation.quality_order must be >= 0");
  if (!(s.quality_alpha > 0.0)) throw ConfigError("evaluation.quality_alpha must be > 0");
  return s;
}

const MetricValue* MetricReport::find(std::string_view name) const {
  for (const auto& m : metrics)
    if (m.name == name) return &m;
  return nullptr;
}

double MetricReport::value(std::string_view name) const {
  const auto* m = find(name);
  if (!m) throw DataError("report has no metric '" + std::string(name) + "'");
  return m->value;
}

nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["pool"] = provenance_json(r.pool);
  j["ranker"] = r.ranker;
  j["pool_size"] = r.pool_size;
  auto ms = nlohmann::ordered_json::array();
  for (const auto& m : r.metrics) {
    nlohmann::ordered_json e;
    e["name"] = m.name;
    e["value"] = m.value;
    if (m.std_error) e["std_error"] = *m.std_error;
    e["parameters"] = m.parameters;
    ms.push_back(std::move(e));
  }
  j["metrics"] = std::move(ms);
  return j;
}

MetricReport metric_report_from_json(const nlohmann::json& j) {
  MetricReport r;
  const auto& p = j.at("pool");
  r.pool.method = p.at("method").get<std::string>();
  r.pool.checkpoint_hash = p.at("checkpoint_hash").get<std::string>();
  r.pool.ranker_hash = p.at("ranker_hash").get<std::string>();
  r.pool.config_hash = p.at("config_hash").get<std::string>();
  r.pool.seed = p.at("seed").get<std::uint64_t>();
  r.pool.parameters = nlohmann::ordered_json::parse(p.at("parameters").dump());
  r.ranker = j.at("ranker").get<std::string>();
  r.pool_size = j.at("pool_size").get<std::size_t>();
  for (const auto& e : j.at("metrics")) {
    MetricValue m;
    m.name = e.at("name").get<std::string>();
    m.value = e.at("value").get<double>();
    if (e.contains("std_error")) m.std_error = e.at("std_error").get<double>();
    m.parameters = nlohmann::ordered_json::parse(e.at("parameters").dump());
    r.metrics.push_back(std::move(m));
  }
  return r;
}

std::string metric_table(std::span<const MetricReport> reports) {
  std::ostringstream os;
  os.precision(17);
  os << "method\tranker\tpool_size\tmetric\tvalue\tstd_error\n";
  for (const auto& r : reports)
    for (const auto& m : r.metrics) {
      os << r.pool.method << '\t' << r.ranker << '\t' << r.pool_size << '\t' << m.name << '\t' << m.value << '\t';
      if (m.std_error) os << *m.std_error;
      os << '\n';
    }
  return os.str();
}

MetricReport evaluate_pool(const CandidatePool& pool, const Ranker* ranker, const EvalContext& ctx,
                           const MetricsSpec& spec) {
  if (pool.size() == 0) throw DataError("evaluate: empty pool");
  MetricReport report;
  report.pool = pool.provenance;
  report.ranker = ranker ? ranker->name() : "native";
  report.pool_size = pool.size();

  // The pool as ranked by the requested ranker.
  CandidatePool ranked_pool = pool;
  if (ranker) {
    const auto scores = ranker->score(pool.sequences());
    for (std::size_t i = 0; i < scores.size(); ++i) ranked_pool.candidates[i].score = scores[i];
  }
  const auto ranked = rank(ranked_pool.candidates, pool.size());

  std::vector<double> truth;
  if (ctx.potts) {
    truth.reserve(ranked.size());
    for (const auto& c : ranked) truth.push_back(ctx.potts->score(c.sequence));
  }

  for (auto k : spec.top_ks) {
    const auto kk = std::min(k, ranked.size());
    const std::string prefix = "top" + std::to_string(k) + ".";
    std::vector<TokenSequence> top;
    for (std::size_t i = 0; i < kk; ++i) top.push_back(ranked[i].sequence);
    nlohmann::ordered_json params;
    params["k"] = k;
    params["k_used"] = kk;
    if (ctx.potts) {
      const std::span<const double> t(truth.data(), kk);
      double sum = 0.0;
      double best = t.front();
      for (double v : t) {
        sum += v;
        if (ctx.order.more_desirable(v, best)) best = v;
      }
      report.metrics.push_back({prefix + "oracle_mean", sum / static_cast<double>(kk), std::nullopt, params});
      report.metrics.push_back({prefix + "oracle_best", best, std::nullopt, params});
      if (ctx.y_tau) {
        auto p = params;
        p["y_tau"] = *ctx.y_tau;
        report.metrics.push_back({prefix + "pci", pci(t, *ctx.y_tau, ctx.order), std::nullopt, p});
      }
    }
    if (ctx.ordinal)
      for (const auto& [name, classes] : spec.target_sets) {
        auto p = params;
        p["classes"] = classes;
        report.metrics.push_back({prefix + "pct_" + name, pct_in_class(top, *ctx.ordinal, classes), std::nullopt, p});
      }
    if (spec.quality && !ctx.reference.empty()) {
      auto p = params;
      p["order"] = spec.quality_order;
      p["alpha"] = spec.quality_alpha;
      const int alphabet = ctx.potts ? ctx.potts->alphabet() : (ctx.ordinal ? ctx.ordinal->base().alphabet() : 0);
      report.metrics.push_back({prefix + "quality_proxy",
                                quality_proxy(top, ctx.reference, alphabet, spec.quality_order, spec.quality_alpha),
                                std::nullopt, p});
    }
  }

  if (ctx.ordinal)
    for (const auto& [name, classes] : spec.target_sets) {
      if (pool.size() < spec.top_class.subsample) continue;
      auto p = to_json(spec.top_class);
      p["classes"] = classes;
      const auto e = expected_top_class_pct(pool, ranker, *ctx.ordinal, classes, spec.top_class);
      report.metrics.push_back({"expected_pct_" + name, e.mean, e.std_error, p});
    }
  if (ctx.potts) {
    const auto e = expected_min(pool, ranker, *ctx.potts, spec.min, ctx.order);
    auto p = to_json(spec.min);
    p["subsample_used"] = e.subsample_used;
    p["clipped"] = e.clipped;
    p["direction"] = to_string(ctx.order.direction());
    report.metrics.push_back({"expected_best", e.value.mean, e.value.std_error, p});
  }
  return report;
}

MetricReport cross_rank_eval(const CandidatePool& pool, const Ranker& ranker, const EvalContext& ctx,
                             const MetricsSpec& spec) {
  if (const auto* v = ranker.vocabulary())
    for (const auto& c : pool.candidates) c.sequence.validate(*v, c.sequence.length());
  return evaluate_pool(pool, &ranker, ctx, spec);
}

}  // namespace genhance
