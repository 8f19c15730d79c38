#include "genhance/seqcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

#include "genhance/io.hpp"

namespace genhance {

namespace {

constexpr std::string_view kSpecialNames[Vocabulary::kNumSpecial] = {"<pad>", "<bos>", "<eos>",
                                                                      "<cls>", "<mask>"};

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 2) throw DataError("vocabulary needs at least two content symbols");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty() || s.find(' ') != std::string::npos)
      throw DataError("vocabulary symbols must be non-empty and contain no spaces");
    for (auto special : kSpecialNames)
      if (s == special) throw DataError("content symbol collides with special token " + s);
    if (!lookup_.emplace(s, static_cast<int>(i)).second)
      throw DataError("duplicate vocabulary symbol " + s);
  }
}

Vocabulary Vocabulary::amino_acids() {
  std::vector<std::string> aa;
  for (char c : std::string_view("ACDEFGHIKLMNPQRSTVWY")) aa.emplace_back(1, c);
  return Vocabulary(std::move(aa));
}

int Vocabulary::index_of(std::string_view symbol) const {
  auto it = lookup_.find(symbol);
  if (it == lookup_.end()) throw DataError("unknown symbol '" + std::string(symbol) + "'");
  return it->second;
}

std::string_view Vocabulary::special_name(int id) {
  if (id < 0 || id >= kNumSpecial) throw DataError("not a special token id");
  return kSpecialNames[id];
}

TokenSequence TokenSequence::parse(std::string_view text, const Vocabulary& vocab) {
  std::vector<int> out;
  if (text.find(' ') != std::string_view::npos) {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto next = text.find(' ', pos);
      if (next == std::string_view::npos) next = text.size();
      if (next > pos) out.push_back(vocab.index_of(text.substr(pos, next - pos)));
      pos = next + 1;
    }
  } else {
    for (std::size_t i = 0; i < text.size(); ++i) out.push_back(vocab.index_of(text.substr(i, 1)));
  }
  return TokenSequence(std::move(out));
}

std::string TokenSequence::render(const Vocabulary& vocab) const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.symbol(tokens_[i]);
  }
  return out;
}

std::string TokenSequence::compact(const Vocabulary& vocab) const {
  std::string out;
  for (int t : tokens_) out += vocab.symbol(t);
  return out;
}

void TokenSequence::validate(const Vocabulary& vocab, std::size_t max_length) const {
  if (tokens_.size() > max_length)
    throw DataError("sequence length " + std::to_string(tokens_.size()) + " exceeds maximum " +
                    std::to_string(max_length));
  for (int t : tokens_)
    if (t < 0 || t >= vocab.size()) throw DataError("token index out of vocabulary range");
}

std::string_view to_string(Direction d) {
  return d == Direction::higher_better ? "higher-better" : "lower-better";
}

Direction direction_from_string(std::string_view s) {
  if (s == "higher-better") return Direction::higher_better;
  if (s == "lower-better") return Direction::lower_better;
  throw ConfigError("unknown desirability direction '" + std::string(s) + "'");
}

std::string_view to_string(LabelKind k) { return k == LabelKind::continuous ? "continuous" : "ordinal"; }

LabelKind label_kind_from_string(std::string_view s) {
  if (s == "continuous") return LabelKind::continuous;
  if (s == "ordinal") return LabelKind::ordinal;
  throw DataError("unknown label kind '" + std::string(s) + "'");
}

Label Label::continuous(double y) {
  if (!std::isfinite(y)) throw DataError("continuous label must be finite");
  return Label{LabelKind::continuous, y};
}

Label Label::ordinal(int class_index) {
  if (class_index < 1) throw DataError("ordinal class index must be >= 1");
  return Label{LabelKind::ordinal, static_cast<double>(class_index)};
}

int Label::class_index() const {
  if (kind != LabelKind::ordinal) throw DataError("label is not ordinal");
  return static_cast<int>(value);
}

Ordering DesirabilityOrder::compare(const Label& a, const Label& b) const {
  if (a.kind != b.kind) throw DataError("cannot compare labels of different kinds");
  const double da = desirability(a.value);
  const double db = desirability(b.value);
  if (da > db) return Ordering::better;
  if (da < db) return Ordering::worse;
  return Ordering::tie;
}

Ordering compare_labels(const Label& a, const Label& b, DesirabilityOrder order) {
  return order.compare(a, b);
}

SequenceDataset::SequenceDataset(std::vector<LabeledSequence> items, DesirabilityOrder order,
                                 int class_count)
    : items_(std::move(items)), order_(order), class_count_(class_count) {
  if (items_.empty()) throw DataError("dataset must be non-empty");
  const LabelKind kind = items_.front().label.kind;
  if (kind == LabelKind::ordinal && class_count_ < 2)
    throw DataError("ordinal dataset needs a class count >= 2");
  y_tau_ = items_.front().label;
  for (const auto& item : items_) {
    if (item.label.kind != kind) throw DataError("dataset mixes label kinds");
    if (kind == LabelKind::ordinal) {
      const int c = item.label.class_index();
      if (c > class_count_) throw DataError("ordinal label exceeds class count");
    } else if (!std::isfinite(item.label.value)) {
      throw DataError("continuous label must be finite");
    }
    if (order_.compare(item.label, y_tau_) == Ordering::better) y_tau_ = item.label;
  }
}

std::vector<LabeledSequence> SequenceDataset::sorted_by_desirability() const {
  auto sorted = items_;
  std::stable_sort(sorted.begin(), sorted.end(), [&](const auto& a, const auto& b) {
    return order_.compare(a.label, b.label) == Ordering::better;
  });
  return sorted;
}

SequenceDataset SequenceDataset::most_desirable_fraction(double fraction) const {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("subset fraction must be in (0, 1]");
  auto sorted = sorted_by_desirability();
  auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(sorted.size())));
  keep = std::clamp<std::size_t>(keep, 1, sorted.size());
  sorted.resize(keep);
  return SequenceDataset(std::move(sorted), order_, class_count_);
}

double SequenceDataset::label_mean() const {
  double s = 0.0;
  for (const auto& it : items_) s += it.label.value;
  return s / static_cast<double>(items_.size());
}

double SequenceDataset::label_stddev() const {
  const double m = label_mean();
  double s = 0.0;
  for (const auto& it : items_) s += (it.label.value - m) * (it.label.value - m);
  return std::sqrt(s / static_cast<double>(items_.size()));
}

DatasetSplit extrapolation_split(const SequenceDataset& dataset, const SplitPolicy& policy,
                                 std::uint64_t seed) {
  const auto& items = dataset.items();
  const std::size_t n = items.size();
  // Group index lists of held-out items by the retention bucket they draw from.
  std::map<int, std::vector<std::size_t>> buckets;
  std::map<int, std::size_t> quota;
  std::vector<bool> held_out(n, false);

  if (dataset.label_kind() == LabelKind::ordinal) {
    if (policy.excluded_top_fraction != 0.0)
      throw ConfigError("quantile exclusion applies to continuous labels only");
    for (std::size_t i = 0; i < n; ++i) {
      const int c = items[i].label.class_index();
      if (std::find(policy.excluded_classes.begin(), policy.excluded_classes.end(), c) !=
          policy.excluded_classes.end()) {
        held_out[i] = true;
        buckets[c].push_back(i);
      }
    }
    for (const auto& [c, k] : policy.retained) quota[c] = k;
  } else {
    if (!policy.excluded_classes.empty())
      throw ConfigError("class exclusion applies to ordinal labels only");
    if (!(policy.excluded_top_fraction >= 0.0 && policy.excluded_top_fraction < 1.0))
      throw ConfigError("excluded_top_fraction must be in [0, 1)");
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    const auto order = dataset.order();
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return order.compare(items[a].label, items[b].label) == Ordering::better;
    });
    const auto cut = static_cast<std::size_t>(std::floor(policy.excluded_top_fraction * static_cast<double>(n)));
    for (std::size_t r = 0; r < cut; ++r) {
      held_out[idx[r]] = true;
      buckets[0].push_back(idx[r]);
    }
    quota[0] = policy.retained_top;
  }

  std::mt19937_64 rng(seed);
  for (auto& [key, members] : buckets) {
    const std::size_t k = std::min(quota.count(key) ? quota[key] : std::size_t{0}, members.size());
    std::shuffle(members.begin(), members.end(), rng);
    for (std::size_t r = 0; r < k; ++r) held_out[members[r]] = false;
  }

  std::vector<LabeledSequence> train, excluded;
  for (std::size_t i = 0; i < n; ++i) (held_out[i] ? excluded : train).push_back(items[i]);
  if (train.empty()) throw ConfigError("split policy excludes every item");

  DatasetSplit out{SequenceDataset(std::move(train), dataset.order(), dataset.class_count()), std::nullopt};
  if (!excluded.empty())
    out.excluded = SequenceDataset(std::move(excluded), dataset.order(), dataset.class_count());
  return out;
}

std::size_t levenshtein(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::size_t levenshtein(const TokenSequence& a, const TokenSequence& b) {
  return levenshtein(a.tokens(), b.tokens());
}

std::size_t hamming(const TokenSequence& a, const TokenSequence& b) {
  if (a.length() != b.length()) throw DataError("hamming distance needs equal lengths");
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.length(); ++i) d += (a[i] != b[i]);
  return d;
}

std::string serialize_dataset(std::span<const LabeledSequence> items, const Vocabulary& vocab) {
  std::string out;
  for (const auto& item : items) {
    nlohmann::ordered_json rec;
    rec["tokens"] = item.sequence.render(vocab);
    if (item.label.kind == LabelKind::ordinal)
      rec["label"] = item.label.class_index();
    else
      rec["label"] = item.label.value;
    rec["label_kind"] = to_string(item.label.kind);
    out += rec.dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<LabeledSequence> parse_dataset(std::string_view text, const Vocabulary& vocab) {
  std::vector<LabeledSequence> items;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      const auto kind = label_kind_from_string(rec.at("label_kind").get<std::string>());
      Label label = kind == LabelKind::ordinal ? Label::ordinal(rec.at("label").get<int>())
                                               : Label::continuous(rec.at("label").get<double>());
      items.push_back({TokenSequence::parse(rec.at("tokens").get<std::string>(), vocab), label});
    } catch (const nlohmann::json::exception& e) {
      throw DataError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return items;
}

void write_dataset(const std::filesystem::path& path, const SequenceDataset& dataset,
                   const Vocabulary& vocab) {
  write_file_atomic(path, serialize_dataset(dataset.items(), vocab));
}

SequenceDataset read_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                             DesirabilityOrder order, int class_count) {
  return SequenceDataset(parse_dataset(read_file(path), vocab), order, class_count);
}

}  // namespace genhance
