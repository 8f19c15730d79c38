#pragma once

// Shared fixtures and independent reference implementations for the unit
// and acceptance suites. Nothing here calls into the code under test for
// the quantity being checked.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "genhance/autograd.hpp"
#include "genhance/model.hpp"
#include "genhance/oracle.hpp"
#include "genhance/seqcore.hpp"

namespace genhance::testing {

/// 2 + 2 layer model of width 8 over a small alphabet.
ModelConfig toy_model_config(int max_length = 6, int layers = 2);

Vocabulary toy_vocabulary(int alphabet = 5);

TokenSequence random_sequence(std::mt19937_64& rng, std::size_t length, int alphabet);

/// Labeled batch of equal-length sequences with distinct continuous labels.
std::vector<LabeledSequence> random_batch(std::mt19937_64& rng, std::size_t n, std::size_t length, int alphabet);

struct GradCheck {
  /// Largest per-parameter-tensor relative error ||analytic - numeric|| / max(||analytic||, ||numeric||).
  double max_relative_error = 0.0;
  std::string worst_parameter;
  /// Tensors whose gradients were both (numerically) zero and skipped.
  std::size_t skipped = 0;
  std::size_t checked_entries = 0;
};

/// Compares tape gradients of `loss` against central differences of step
/// `h` for every parameter entry of `model`. `loss` builds a fresh scalar on
/// the given tape from the model's current parameters.
GradCheck check_gradients(Seq2SeqModel& model, const std::function<nn::Var(nn::Tape&)>& loss, double h = 1e-5);

enum class LossKind { contrastive, reconstruction, mmd, cycle_soft, cycle_hard };
const char* loss_name(LossKind k);

/// Gradient check of one training objective on a freshly initialised toy
/// model (width 8, 2 + 2 layers) and a random batch of 4 sequences.
GradCheck check_loss_gradients(LossKind kind, std::uint64_t seed = 1, double h = 1e-5);

/// Unbiased MMD^2 by explicit double loops over pairs, with k(u, v) the
/// inner product of the explicit random-feature maps.
double brute_mmd(const nn::Matrix& z, const nn::Matrix& prior, const nn::RandomFeatures& features);

/// Potts score by looping over every position and every coupling block.
double brute_potts(const PottsOracle& oracle, const TokenSequence& x);

/// Levenshtein by the textbook full-table recursion.
std::size_t brute_levenshtein(std::span<const int> a, std::span<const int> b);

}  // namespace genhance::testing
