#pragma once

// Sequences, labels, datasets and the desirability ordering that every
// comparison in the system routes through.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace genhance {

/// Content alphabet plus the fixed special tokens used by the models.
///
/// Model-side token ids place the specials first (`pad`, `bos`, `eos`,
/// `cls`, `mask`) followed by the content symbols in declaration order.
/// TokenSequence stores *content* indices only; `model_id` converts.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kCls = 3;
  static constexpr int kMask = 4;
  static constexpr int kNumSpecial = 5;

  explicit Vocabulary(std::vector<std::string> symbols);

  /// The twenty standard amino acids, one letter each.
  static Vocabulary amino_acids();

  int size() const noexcept { return static_cast<int>(symbols_.size()); }
  int model_size() const noexcept { return size() + kNumSpecial; }
  const std::vector<std::string>& symbols() const noexcept { return symbols_; }
  const std::string& symbol(int index) const { return symbols_.at(static_cast<std::size_t>(index)); }
  int index_of(std::string_view symbol) const;

  static int model_id(int content_index) noexcept { return content_index + kNumSpecial; }
  static bool is_content_id(int model_id) noexcept { return model_id >= kNumSpecial; }
  static int content_index(int model_id) noexcept { return model_id - kNumSpecial; }

  static std::string_view special_name(int id);

  bool operator==(const Vocabulary&) const = default;

 private:
  std::vector<std::string> symbols_;
  std::map<std::string, int, std::less<>> lookup_;
};

/// A discrete sequence of content-symbol indices.
class TokenSequence {
 public:
  TokenSequence() = default;
  explicit TokenSequence(std::vector<int> tokens) : tokens_(std::move(tokens)) {}

  /// Parses single-character symbols ("ACDE") or space-separated symbols.
  static TokenSequence parse(std::string_view text, const Vocabulary& vocab);

  std::size_t length() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  int operator[](std::size_t i) const { return tokens_[i]; }
  std::span<const int> tokens() const noexcept { return tokens_; }
  std::vector<int>& mutable_tokens() noexcept { return tokens_; }

  /// Space-separated symbols; the persisted form.
  std::string render(const Vocabulary& vocab) const;
  /// Symbols concatenated without separators.
  std::string compact(const Vocabulary& vocab) const;

  /// Throws DataError on an out-of-range index or overlong sequence.
  void validate(const Vocabulary& vocab, std::size_t max_length) const;

  auto operator<=>(const TokenSequence&) const = default;

 private:
  std::vector<int> tokens_;
};

enum class Ordering { better, worse, tie };

enum class Direction { higher_better, lower_better };

std::string_view to_string(Direction d);
Direction direction_from_string(std::string_view s);

enum class LabelKind { continuous, ordinal };

std::string_view to_string(LabelKind k);
LabelKind label_kind_from_string(std::string_view s);

/// Continuous scalar or ordinal class index (1..C, stored exactly as a double).
struct Label {
  LabelKind kind = LabelKind::continuous;
  double value = 0.0;

  static Label continuous(double y);
  static Label ordinal(int class_index);
  int class_index() const;

  bool operator==(const Label&) const = default;
};

class DesirabilityOrder {
 public:
  constexpr explicit DesirabilityOrder(Direction d = Direction::higher_better) : direction_(d) {}

  Direction direction() const noexcept { return direction_; }
  /// +1 for higher-better, -1 for lower-better.
  double sign() const noexcept { return direction_ == Direction::higher_better ? 1.0 : -1.0; }
  /// Maps a raw value onto the system axis where larger is always better.
  double desirability(double y) const noexcept { return sign() * y; }
  bool more_desirable(double a, double b) const noexcept { return desirability(a) > desirability(b); }

  Ordering compare(const Label& a, const Label& b) const;

  bool operator==(const DesirabilityOrder&) const = default;

 private:
  Direction direction_;
};

Ordering compare_labels(const Label& a, const Label& b, DesirabilityOrder order);

struct LabeledSequence {
  TokenSequence sequence;
  Label label;

  bool operator==(const LabeledSequence&) const = default;
};

/// Non-empty, immutable collection of labeled sequences.
class SequenceDataset {
 public:
  SequenceDataset(std::vector<LabeledSequence> items, DesirabilityOrder order, int class_count = 0);

  const std::vector<LabeledSequence>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  DesirabilityOrder order() const noexcept { return order_; }
  LabelKind label_kind() const noexcept { return items_.front().label.kind; }
  int class_count() const noexcept { return class_count_; }

  /// The most desirable label present.
  const Label& y_tau() const noexcept { return y_tau_; }

  /// Items sorted from most to least desirable (stable).
  std::vector<LabeledSequence> sorted_by_desirability() const;
  /// Keeps the most desirable `fraction` (at least one item).
  SequenceDataset most_desirable_fraction(double fraction) const;

  double label_mean() const;
  double label_stddev() const;

 private:
  std::vector<LabeledSequence> items_;
  DesirabilityOrder order_;
  int class_count_;
  Label y_tau_;
};

/// Which part of the label range is held out of training.
///
/// Ordinal: every class in `excluded_classes` is removed except for
/// `retained[c]` randomly chosen items of class c. Continuous: the most
/// desirable `excluded_top_fraction` of items is removed except for
/// `retained_top` randomly chosen ones.
struct SplitPolicy {
  std::vector<int> excluded_classes;
  std::map<int, std::size_t> retained;
  double excluded_top_fraction = 0.0;
  std::size_t retained_top = 0;
};

struct DatasetSplit {
  SequenceDataset train;
  std::optional<SequenceDataset> excluded;  // empty when nothing was held out
};

DatasetSplit extrapolation_split(const SequenceDataset& dataset, const SplitPolicy& policy,
                                 std::uint64_t seed);

std::size_t levenshtein(std::span<const int> a, std::span<const int> b);
std::size_t levenshtein(const TokenSequence& a, const TokenSequence& b);
std::size_t hamming(const TokenSequence& a, const TokenSequence& b);

/// One JSON record per line: {"tokens": "...", "label": y, "label_kind": "..."}.
std::string serialize_dataset(std::span<const LabeledSequence> items, const Vocabulary& vocab);
std::vector<LabeledSequence> parse_dataset(std::string_view text, const Vocabulary& vocab);

void write_dataset(const std::filesystem::path& path, const SequenceDataset& dataset,
                   const Vocabulary& vocab);
SequenceDataset read_dataset(const std::filesystem::path& path, const Vocabulary& vocab,
                             DesirabilityOrder order, int class_count = 0);

}  // namespace genhance
