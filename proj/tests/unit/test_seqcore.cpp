#include <gtest/gtest.h>

#include <random>

#include "genhance/io.hpp"
#include "genhance/seqcore.hpp"
#include "test_support.hpp"

using namespace genhance;
using genhance::testing::brute_levenshtein;
using genhance::testing::random_sequence;

namespace {

const DesirabilityOrder kHigher{Direction::higher_better};
const DesirabilityOrder kLower{Direction::lower_better};

SequenceDataset ordinal_set(std::size_t per_class, int classes = 5) {
  std::vector<LabeledSequence> items;
  std::mt19937_64 rng(4);
  for (int c = 1; c <= classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) items.push_back({random_sequence(rng, 6, 4), Label::ordinal(c)});
  return SequenceDataset(std::move(items), kHigher, classes);
}

}  // namespace

TEST(CompareLabels, HigherBetter) {
  EXPECT_EQ(compare_labels(Label::continuous(3), Label::continuous(1), kHigher), Ordering::better);
  EXPECT_EQ(compare_labels(Label::continuous(1), Label::continuous(3), kHigher), Ordering::worse);
}

TEST(CompareLabels, LowerBetterDdgDirection) {
  EXPECT_EQ(compare_labels(Label::continuous(-7.0), Label::continuous(-4.0), kLower), Ordering::better);
}

TEST(CompareLabels, EqualIsTie) {
  EXPECT_EQ(compare_labels(Label::continuous(2), Label::continuous(2), kHigher), Ordering::tie);
  EXPECT_EQ(compare_labels(Label::continuous(2), Label::continuous(2), kLower), Ordering::tie);
}

TEST(CompareLabels, MixedKindsRejected) {
  EXPECT_THROW(compare_labels(Label::continuous(2), Label::ordinal(2), kHigher), Error);
}

TEST(Vocabulary, SpecialsPrecedeContent) {
  const auto v = Vocabulary::amino_acids();
  EXPECT_EQ(v.size(), 20);
  EXPECT_EQ(v.model_size(), 25);
  EXPECT_EQ(Vocabulary::model_id(0), Vocabulary::kNumSpecial);
  EXPECT_EQ(v.index_of("N"), 11);
  EXPECT_THROW(Vocabulary({"A", "A"}), DataError);
  EXPECT_THROW(Vocabulary({"A"}), DataError);
}

TEST(TokenSequence, ParseRenderRoundTrip) {
  const auto v = Vocabulary::amino_acids();
  const auto x = TokenSequence::parse("NTNITEEN", v);
  EXPECT_EQ(x.length(), 8u);
  EXPECT_EQ(x.compact(v), "NTNITEEN");
  EXPECT_EQ(TokenSequence::parse(x.render(v), v), x);
  EXPECT_THROW(TokenSequence::parse("NTX1", v), DataError);
}

TEST(TokenSequence, ValidateLength) {
  const auto v = Vocabulary::amino_acids();
  EXPECT_THROW(TokenSequence::parse("ACDE", v).validate(v, 3), DataError);
  EXPECT_NO_THROW(TokenSequence::parse("ACDE", v).validate(v, 4));
}

TEST(Levenshtein, Examples) {
  const auto v = Vocabulary(std::vector<std::string>{"a", "b", "c", "e", "g", "i", "k", "n", "s", "t"});
  auto p = [&](const char* s) { return TokenSequence::parse(s, v); };
  EXPECT_EQ(levenshtein(p("abc"), p("abc")), 0u);
  EXPECT_EQ(levenshtein(TokenSequence(), p("abc")), 3u);
  EXPECT_EQ(levenshtein(p("kitten"), p("sitting")), 3u);
}

TEST(Levenshtein, MatchesFullTableOracle) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<std::size_t> len(0, 12);
  for (int t = 0; t < 300; ++t) {
    const auto a = random_sequence(rng, len(rng), 3);
    const auto b = random_sequence(rng, len(rng), 3);
    ASSERT_EQ(levenshtein(a, b), brute_levenshtein(a.tokens(), b.tokens()));
  }
}

TEST(Hamming, Examples) {
  const auto v = Vocabulary::amino_acids();
  EXPECT_EQ(hamming(TokenSequence::parse("AAAA", v), TokenSequence::parse("AAAA", v)), 0u);
  EXPECT_EQ(hamming(TokenSequence::parse("AAAA", v), TokenSequence::parse("AACA", v)), 1u);
  EXPECT_THROW(hamming(TokenSequence::parse("AAA", v), TokenSequence::parse("AAAA", v)), DataError);
}

TEST(Hamming, MatchesLoopOracleLength48) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto a = random_sequence(rng, 48, 20);
    const auto b = random_sequence(rng, 48, 20);
    std::size_t d = 0;
    for (std::size_t i = 0; i < 48; ++i) d += a[i] != b[i];
    ASSERT_EQ(hamming(a, b), d);
  }
}

TEST(Dataset, YTauIsMostDesirable) {
  std::vector<LabeledSequence> items{{TokenSequence({0}), Label::continuous(-3)},
                                     {TokenSequence({1}), Label::continuous(-7)},
                                     {TokenSequence({2}), Label::continuous(1)}};
  SequenceDataset lower(items, kLower);
  SequenceDataset higher(items, kHigher);
  EXPECT_EQ(lower.y_tau().value, -7);
  EXPECT_EQ(higher.y_tau().value, 1);
  EXPECT_EQ(lower.most_desirable_fraction(0.3).size(), 1u);
  EXPECT_EQ(lower.most_desirable_fraction(0.3).items().front().label.value, -7);
  EXPECT_THROW(SequenceDataset({}, kLower), DataError);
}

TEST(Split, NoPosExcludesEveryTargetClass) {
  const auto data = ordinal_set(50);
  SplitPolicy p;
  p.excluded_classes = {4, 5};
  const auto s = extrapolation_split(data, p, 1);
  for (const auto& it : s.train.items()) EXPECT_LT(it.label.class_index(), 4);
  ASSERT_TRUE(s.excluded.has_value());
  EXPECT_EQ(s.excluded->size(), 100u);
}

TEST(Split, KeepsExactlyRequestedCount) {
  const auto data = ordinal_set(400);
  SplitPolicy p;
  p.excluded_classes = {4, 5};
  p.retained[4] = 200;
  const auto s = extrapolation_split(data, p, 7);
  std::size_t c4 = 0, c5 = 0;
  for (const auto& it : s.train.items()) {
    c4 += it.label.class_index() == 4;
    c5 += it.label.class_index() == 5;
  }
  EXPECT_EQ(c4, 200u);
  EXPECT_EQ(c5, 0u);
}

TEST(Split, ZeroQuantileIsNoOp) {
  std::mt19937_64 rng(1);
  const auto items = genhance::testing::random_batch(rng, 30, 5, 4);
  SequenceDataset data(items, kLower);
  const auto s = extrapolation_split(data, SplitPolicy{}, 3);
  EXPECT_EQ(s.train.items(), data.items());
  EXPECT_FALSE(s.excluded.has_value());
}

TEST(Split, ContinuousTopFractionHeldOut) {
  std::vector<LabeledSequence> items;
  for (int i = 0; i < 100; ++i) items.push_back({TokenSequence({i % 3}), Label::continuous(i)});
  SequenceDataset data(items, kLower);
  SplitPolicy p;
  p.excluded_top_fraction = 0.1;
  const auto s = extrapolation_split(data, p, 3);
  EXPECT_EQ(s.train.size(), 90u);
  EXPECT_EQ(s.train.y_tau().value, 10);
}

TEST(DatasetFile, RoundTripIsExact) {
  std::mt19937_64 rng(5);
  const auto v = Vocabulary::amino_acids();
  const auto items = genhance::testing::random_batch(rng, 40, 12, 20);
  const auto text = serialize_dataset(items, v);
  const auto parsed = parse_dataset(text, v);
  EXPECT_EQ(parsed, items);
  EXPECT_EQ(serialize_dataset(parsed, v), text);
}

TEST(DatasetFile, MalformedRecordRejected) {
  const auto v = Vocabulary::amino_acids();
  EXPECT_THROW(parse_dataset("{\"tokens\": \"A C\"}\n", v), DataError);
  EXPECT_THROW(parse_dataset("not json\n", v), DataError);
}

TEST(Io, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 1), derive_seed(2, 1));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
