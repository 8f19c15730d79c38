#include "genhance/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <json.hpp>

#include "genhance/io.hpp"

namespace genhance {

namespace {
constexpr int kOracleFormatVersion = 1;
}

PottsOracle::PottsOracle(int length, int alphabet, std::vector<double> fields,
                         std::vector<CouplingBlock> couplings, std::uint64_t seed)
    : length_(length),
      alphabet_(alphabet),
      fields_(std::move(fields)),
      couplings_(std::move(couplings)),
      by_position_(static_cast<std::size_t>(std::max(length, 0))),
      seed_(seed) {
  if (length_ < 1 || alphabet_ < 2) throw DataError("oracle needs length >= 1 and alphabet >= 2");
  if (fields_.size() != static_cast<std::size_t>(length_ * alphabet_))
    throw DataError("field table has wrong size");
  const auto block = static_cast<std::size_t>(alphabet_ * alphabet_);
  for (std::size_t k = 0; k < couplings_.size(); ++k) {
    const auto& c = couplings_[k];
    if (c.i < 0 || c.j >= length_ || c.i >= c.j) throw DataError("coupling needs 0 <= i < j < length");
    if (c.table.size() != block) throw DataError("coupling table has wrong size");
    by_position_[static_cast<std::size_t>(c.i)].push_back(k);
    by_position_[static_cast<std::size_t>(c.j)].push_back(k);
  }
}

PottsOracle PottsOracle::random(const PottsSpec& spec) {
  if (spec.coupling_pairs < 0) throw ConfigError("coupling_pairs must be >= 0");
  const long max_pairs = static_cast<long>(spec.length) * (spec.length - 1) / 2;
  if (spec.coupling_pairs > max_pairs) throw ConfigError("more coupling pairs than position pairs");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> fields(static_cast<std::size_t>(spec.length * spec.alphabet));
  for (auto& f : fields) f = spec.field_scale * gauss(rng);

  std::set<std::pair<int, int>> chosen;
  std::uniform_int_distribution<int> pos(0, spec.length - 1);
  while (static_cast<int>(chosen.size()) < spec.coupling_pairs) {
    int a = pos(rng), b = pos(rng);
    if (a == b) continue;
    chosen.emplace(std::min(a, b), std::max(a, b));
  }
  std::vector<CouplingBlock> couplings;
  for (auto [i, j] : chosen) {
    CouplingBlock c{i, j, std::vector<double>(static_cast<std::size_t>(spec.alphabet * spec.alphabet))};
    for (auto& v : c.table) v = spec.coupling_scale * gauss(rng);
    couplings.push_back(std::move(c));
  }
  return PottsOracle(spec.length, spec.alphabet, std::move(fields), std::move(couplings), spec.seed);
}

void PottsOracle::check(const TokenSequence& x) const {
  if (static_cast<int>(x.length()) != length_)
    throw DataError("oracle expects length " + std::to_string(length_) + ", got " +
                    std::to_string(x.length()));
  for (int t : x.tokens())
    if (t < 0 || t >= alphabet_) throw DataError("symbol outside oracle alphabet");
}

double PottsOracle::score(const TokenSequence& x) const {
  check(x);
  double s = 0.0;
  for (int p = 0; p < length_; ++p) s += field(p, x[static_cast<std::size_t>(p)]);
  for (const auto& c : couplings_)
    s += c.table[static_cast<std::size_t>(x[static_cast<std::size_t>(c.i)] * alphabet_ +
                                          x[static_cast<std::size_t>(c.j)])];
  return s;
}

double PottsOracle::substitution_delta(const TokenSequence& x, int pos, int symbol) const {
  check(x);
  if (pos < 0 || pos >= length_ || symbol < 0 || symbol >= alphabet_)
    throw DataError("substitution outside oracle range");
  const auto p = static_cast<std::size_t>(pos);
  const int old = x[p];
  double d = field(pos, symbol) - field(pos, old);
  for (auto k : by_position_[p]) {
    const auto& c = couplings_[k];
    if (c.i == pos) {
      const int other = x[static_cast<std::size_t>(c.j)];
      d += c.table[static_cast<std::size_t>(symbol * alphabet_ + other)] -
           c.table[static_cast<std::size_t>(old * alphabet_ + other)];
    } else {
      const int other = x[static_cast<std::size_t>(c.i)];
      d += c.table[static_cast<std::size_t>(other * alphabet_ + symbol)] -
           c.table[static_cast<std::size_t>(other * alphabet_ + old)];
    }
  }
  return d;
}

std::string PottsOracle::serialize() const {
  nlohmann::ordered_json j;
  j["format"] = "genhance-potts-oracle";
  j["version"] = kOracleFormatVersion;
  j["seed"] = seed_;
  j["length"] = length_;
  j["alphabet"] = alphabet_;
  j["fields"] = fields_;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& c : couplings_) {
    nlohmann::ordered_json cj;
    cj["i"] = c.i;
    cj["j"] = c.j;
    cj["table"] = c.table;
    arr.push_back(std::move(cj));
  }
  j["couplings"] = std::move(arr);
  return j.dump() + "\n";
}

PottsOracle PottsOracle::parse(std::string_view text) {
  try {
    auto j = nlohmann::json::parse(text);
    if (j.at("format").get<std::string>() != "genhance-potts-oracle")
      throw DataError("not an oracle artifact");
    if (j.at("version").get<int>() != kOracleFormatVersion)
      throw DataError("unsupported oracle artifact version");
    std::vector<CouplingBlock> couplings;
    for (const auto& cj : j.at("couplings"))
      couplings.push_back({cj.at("i").get<int>(), cj.at("j").get<int>(),
                           cj.at("table").get<std::vector<double>>()});
    return PottsOracle(j.at("length").get<int>(), j.at("alphabet").get<int>(),
                       j.at("fields").get<std::vector<double>>(), std::move(couplings),
                       j.at("seed").get<std::uint64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed oracle artifact: ") + e.what());
  }
}

std::string PottsOracle::hash() const { return sha256_hex(serialize()); }

void PottsOracle::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

PottsOracle PottsOracle::load(const std::filesystem::path& path) { return parse(read_file(path)); }

OrdinalOracle::OrdinalOracle(PottsOracle base, std::vector<double> edges, DesirabilityOrder score_order)
    : base_(std::move(base)), edges_(std::move(edges)), order_(score_order) {
  if (edges_.empty()) throw DataError("ordinal oracle needs at least one class edge");
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    if (!std::isfinite(edges_[i])) throw DataError("class edges must be finite");
    if (i > 0 && !(edges_[i] > edges_[i - 1])) throw DataError("class edges must be strictly increasing");
  }
}

OrdinalOracle OrdinalOracle::from_quantiles(PottsOracle base, std::span<const double> scores,
                                            std::span<const double> fractions,
                                            DesirabilityOrder score_order) {
  if (scores.empty()) throw DataError("quantile edges need scores");
  std::vector<double> oriented(scores.size());
  std::transform(scores.begin(), scores.end(), oriented.begin(),
                 [&](double s) { return score_order.desirability(s); });
  std::sort(oriented.begin(), oriented.end());
  std::vector<double> edges;
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ConfigError("quantile fractions must be in (0, 1)");
    // Lower empirical quantile: the value below which a fraction f of scores falls.
    auto k = static_cast<std::size_t>(std::ceil(f * static_cast<double>(oriented.size())));
    k = std::clamp<std::size_t>(k, 1, oriented.size());
    edges.push_back(oriented[k - 1]);
  }
  return OrdinalOracle(std::move(base), std::move(edges), score_order);
}

int OrdinalOracle::classify_score(double raw_score) const {
  const double s = order_.desirability(raw_score);
  int below = 0;
  for (double e : edges_) below += (e < s);
  return 1 + below;
}

std::vector<bool> CurationConfig::resolved_mask() const {
  if (!mutable_mask.empty()) return mutable_mask;
  std::vector<bool> mask(wild_type.length(), true);
  for (std::size_t k = 0; k < constant_region.length(); ++k)
    mask[static_cast<std::size_t>(constant_offset) + k] = false;
  return mask;
}

std::vector<int> CurationConfig::mutable_positions() const {
  auto mask = resolved_mask();
  std::vector<int> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(static_cast<int>(i));
  return out;
}

double CurationConfig::resolved_substitution_prob() const {
  if (substitution_prob > 0.0) return substitution_prob;
  const auto n = mutable_positions().size();
  return n == 0 ? 0.0 : std::min(1.0, 4.0 / static_cast<double>(n));
}

void CurationConfig::validate(int alphabet) const {
  if (wild_type.empty()) throw ConfigError("curation needs a wild-type sequence");
  for (int t : wild_type.tokens())
    if (t < 0 || t >= alphabet) throw ConfigError("wild-type symbol outside alphabet");
  if (constant_offset < 0 ||
      static_cast<std::size_t>(constant_offset) + constant_region.length() > wild_type.length())
    throw ConfigError("constant region does not fit inside the wild-type");
  for (std::size_t k = 0; k < constant_region.length(); ++k)
    if (wild_type[static_cast<std::size_t>(constant_offset) + k] != constant_region[k])
      throw ConfigError("constant region does not match the wild-type at its offset");
  if (!mutable_mask.empty()) {
    if (mutable_mask.size() != wild_type.length()) throw ConfigError("mutable mask length mismatch");
    for (std::size_t k = 0; k < constant_region.length(); ++k)
      if (mutable_mask[static_cast<std::size_t>(constant_offset) + k])
        throw ConfigError("mutable mask overlaps the constant region");
  }
  const double p = resolved_substitution_prob();
  if (substitution_prob > 1.0 || (!mutable_positions().empty() && !(p > 0.0 && p <= 1.0)))
    throw ConfigError("substitution probability must be in (0, 1]");
  if (max_mutations < 0) throw ConfigError("max_mutations must be >= 0");
  if (sample_count == 0) throw ConfigError("sample_count must be >= 1");
  if (label_noise_sigma < 0.0) throw ConfigError("label_noise_sigma must be >= 0");
}

TokenSequence make_wild_type(int length, int alphabet, const TokenSequence& constant_region,
                             int offset, std::uint64_t seed) {
  if (offset < 0 || offset + static_cast<int>(constant_region.length()) > length)
    throw ConfigError("constant region does not fit inside the wild-type");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> sym(0, alphabet - 1);
  std::vector<int> tokens(static_cast<std::size_t>(length));
  for (auto& t : tokens) t = sym(rng);
  for (std::size_t k = 0; k < constant_region.length(); ++k)
    tokens[static_cast<std::size_t>(offset) + k] = constant_region[k];
  return TokenSequence(std::move(tokens));
}

CurationResult curate_dataset(const CurationConfig& config, const PottsOracle& oracle) {
  config.validate(oracle.alphabet());
  if (static_cast<int>(config.wild_type.length()) != oracle.length())
    throw ConfigError("wild-type length differs from oracle length");
  const auto positions = config.mutable_positions();
  const double p = config.resolved_substitution_prob();
  const int alphabet = oracle.alphabet();

  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution flip(p);
  std::uniform_int_distribution<int> other(0, alphabet - 2);
  std::normal_distribution<double> noise(0.0, config.label_noise_sigma);

  std::vector<LabeledSequence> items;
  items.reserve(config.sample_count);
  std::size_t draws = 0, discarded = 0, total_mutations = 0;
  while (items.size() < config.sample_count) {
    auto tokens = std::vector<int>(config.wild_type.tokens().begin(), config.wild_type.tokens().end());
    int mutations = 0;
    for (int pos : positions) {
      if (!flip(rng)) continue;
      auto& t = tokens[static_cast<std::size_t>(pos)];
      const int r = other(rng);
      t = r >= t ? r + 1 : r;  // uniform over the other alphabet - 1 symbols
      ++mutations;
    }
    ++draws;
    total_mutations += static_cast<std::size_t>(mutations);
    if (mutations > config.max_mutations) {
      ++discarded;
      continue;
    }
    TokenSequence seq(std::move(tokens));
    double y = oracle.score(seq);
    if (config.label_noise_sigma > 0.0) y += noise(rng);
    items.push_back({std::move(seq), Label::continuous(y)});
  }
  return CurationResult{SequenceDataset(std::move(items), DesirabilityOrder(Direction::lower_better)),
                        static_cast<double>(total_mutations) / static_cast<double>(draws), draws,
                        discarded};
}

SequenceDataset relabel_ordinal(const SequenceDataset& dataset, const OrdinalOracle& oracle) {
  std::vector<LabeledSequence> items;
  items.reserve(dataset.size());
  for (const auto& it : dataset.items())
    items.push_back({it.sequence, Label::ordinal(oracle.classify(it.sequence))});
  return SequenceDataset(std::move(items), DesirabilityOrder(Direction::higher_better),
                         oracle.class_count());
}

bool validity_filter(const TokenSequence& x, const CurationConfig& config) {
  if (x.length() != config.wild_type.length()) return false;
  for (std::size_t k = 0; k < config.constant_region.length(); ++k)
    if (x[static_cast<std::size_t>(config.constant_offset) + k] != config.constant_region[k]) return false;
  return true;
}

}  // namespace genhance
