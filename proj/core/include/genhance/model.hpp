#pragma once

// Transformer encoder-decoder with a latent bottleneck. The encoder reads
// "<cls> x" and projects the <cls> state to z = [z_par ; z_perp]; z_par is
// the ranking score. The decoder generates autoregressively while
// cross-attending to a single conditioning state projected from z.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "genhance/autograd.hpp"
#include "genhance/seqcore.hpp"

namespace genhance {

enum class DecodingStrategy { greedy, sample };

struct DecodingSpec {
  DecodingStrategy strategy = DecodingStrategy::sample;
  double temperature = 1.0;
  int top_k = 10;  // <= 0 disables the top-k cut

  /// Temperature 0 is treated as greedy decoding.
  bool is_greedy() const noexcept { return strategy == DecodingStrategy::greedy || temperature <= 0.0; }
  static DecodingSpec greedy() { return {DecodingStrategy::greedy, 0.0, 0}; }
};

struct ModelConfig {
  int max_length = 48;
  int encoder_layers = 2;
  int decoder_layers = 2;
  int width = 128;
  int heads = 4;
  int ffn_width = 256;
  int latent_dim = 64;
  /// Only "latent-only" is supported: the decoder never sees encoder states.
  std::string decoder_memory = "latent-only";
  DecodingSpec decoding;
  std::uint64_t seed = 1;

  static constexpr int kParallelDim = 1;
  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const DecodingSpec& d);
DecodingSpec decoding_from_json(const nlohmann::json& j);

struct LatentVector {
  double parallel = 0.0;
  std::vector<double> perp;

  std::size_t size() const noexcept { return 1 + perp.size(); }
  nn::RowVector as_row() const;
  static LatentVector from_row(const nn::Matrix& m, Eigen::Index row);

  bool operator==(const LatentVector&) const = default;
};

/// f_par is the identity: the ranking score is z_par itself.
inline double score_latent(const LatentVector& z) noexcept { return z.parallel; }

/// z_par shifted by `delta`; z_perp untouched.
LatentVector perturb(const LatentVector& z, double delta);

struct LatentStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

nlohmann::ordered_json to_json(const LatentStats& s);
LatentStats latent_stats_from_json(const nlohmann::json& j);

struct GeneratedSequence {
  TokenSequence sequence;
  bool truncated = false;  // hit max_length without emitting <eos>
};

class DecoderSession;

/// Picks a model id from one row of logits under `spec`. Specials other than
/// <eos> are never chosen, and <eos> only when `allow_eos` is set.
int choose_token(nn::RowVector logits, const DecodingSpec& spec, std::mt19937_64& rng, bool allow_eos);

class Seq2SeqModel {
 public:
  Seq2SeqModel(ModelConfig config, Vocabulary vocab);

  const ModelConfig& config() const noexcept { return config_; }
  const Vocabulary& vocabulary() const noexcept { return vocab_; }
  int model_vocab() const noexcept { return vocab_.model_size(); }

  std::deque<nn::Parameter>& parameters() noexcept { return params_; }
  const std::deque<nn::Parameter>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;
  void zero_grad();

  // ---- differentiable paths -------------------------------------------------

  /// Latents (B x d_z) for a batch of equal-length sequences.
  nn::Var encode(nn::Tape& tape, std::span<const TokenSequence> batch) const;

  /// Latents from per-position token distributions: `probs` has
  /// batch * (len + 1) rows over the model vocabulary, the first row of
  /// each group being the <cls> position.
  nn::Var encode_distributions(nn::Tape& tape, nn::Var probs, int batch, int len) const;

  /// Teacher-forced decoder logits, batch * (len + 1) rows: rows predict
  /// x_1..x_len and then <eos>, each conditioned on z and the prefix.
  nn::Var decoder_logits(nn::Tape& tape, nn::Var z, std::span<const TokenSequence> targets) const;

  /// Decoder targets matching `decoder_logits` rows (content ids then <eos>).
  static std::vector<int> decoder_targets(std::span<const TokenSequence> targets);

  // ---- evaluation-mode helpers ----------------------------------------------

  LatentVector encode(const TokenSequence& x) const;
  std::vector<LatentVector> encode_batch(std::span<const TokenSequence> xs) const;

  /// (len + 1) x V rows of next-token probabilities under teacher forcing.
  nn::Matrix teacher_forced_probs(const LatentVector& z, const TokenSequence& x) const;

  /// Autoregressive generation from each latent. Sampling draws from `rng`.
  std::vector<GeneratedSequence> decode_batch(std::span<const LatentVector> zs, const DecodingSpec& spec,
                                              std::mt19937_64& rng) const;
  GeneratedSequence decode(const LatentVector& z, const DecodingSpec& spec, std::mt19937_64& rng) const;

  // ---- persistence ------------------------------------------------------------

  /// Bit-exact copy of every parameter value.
  void copy_parameters_from(const Seq2SeqModel& other);

 private:
  friend class DecoderSession;

  struct Linear {
    std::size_t weight, bias;
  };
  struct Norm {
    std::size_t gamma, beta;
  };
  struct EncoderLayer {
    Norm ln1, ln2;
    Linear q, k, v, o, ff1, ff2;
  };
  struct DecoderLayer {
    Norm ln1, ln3;
    Linear q, k, v, o;
    Linear cv, co;
    Linear ff1, ff2;
  };

  std::size_t add_param(const std::string& name, int rows, int cols, double stddev, std::mt19937_64& rng);
  std::size_t add_const(const std::string& name, int rows, int cols, double value);
  Linear make_linear(const std::string& name, int in, int out, double stddev, std::mt19937_64& rng);
  Norm make_norm(const std::string& name, int dim);

  nn::Var p(nn::Tape& tape, std::size_t idx) const;
  nn::Var apply(nn::Tape& tape, const Linear& l, nn::Var x) const;
  nn::Var norm(nn::Tape& tape, const Norm& n, nn::Var x) const;
  nn::Var encoder_stack(nn::Tape& tape, nn::Var embedded, int batch, int len) const;
  /// Logits for every position of `input_ids` (batch * steps rows).
  nn::Var decoder_stack(nn::Tape& tape, nn::Var z, const std::vector<int>& input_ids, int batch,
                        int steps) const;

  ModelConfig config_;
  Vocabulary vocab_;
  mutable std::deque<nn::Parameter> params_;

  std::size_t enc_tok_, enc_pos_, dec_tok_, dec_pos_;
  std::vector<EncoderLayer> enc_layers_;
  std::vector<DecoderLayer> dec_layers_;
  Norm enc_final_, dec_final_;
  Linear to_latent_, from_latent_, to_vocab_;
};

/// Incremental decoding with cached self-attention keys and values. Each
/// `step` feeds one input id per row (starting with <bos>) and returns the
/// next-token logits, batch x V. Matches the teacher-forced decoder rows.
class DecoderSession {
 public:
  DecoderSession(const Seq2SeqModel& model, std::span<const LatentVector> zs);

  const nn::Matrix& step(std::span<const int> ids);
  int position() const noexcept { return pos_; }
  int batch() const noexcept { return batch_; }

 private:
  const Seq2SeqModel& model_;
  int batch_;
  int capacity_;
  int pos_ = 0;
  nn::Matrix cond_;
  std::vector<nn::Matrix> cross_;  // per layer, batch x d
  std::vector<nn::Matrix> keys_, values_;  // per layer, batch * capacity x d
  nn::Matrix logits_;
};

/// Which training route produced a checkpoint.
enum class ModelRole { genhance, generator, discriminator };
std::string_view to_string(ModelRole r);
ModelRole model_role_from_string(std::string_view s);

/// Versioned binary container: magic, version, JSON header (config,
/// vocabulary, role, latent stats, run metadata, tensor directory),
/// then raw little-endian doubles in directory order.
struct Checkpoint {
  ModelRole role = ModelRole::genhance;
  std::shared_ptr<Seq2SeqModel> model;
  std::optional<LatentStats> stats;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();

  std::string serialize() const;
  static Checkpoint parse(std::string_view bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// Mean and population standard deviation of z_par over the dataset.
LatentStats latent_stats(const Seq2SeqModel& model, const SequenceDataset& dataset);
LatentStats latent_stats(const Seq2SeqModel& model, std::span<const TokenSequence> sequences);

}  // namespace genhance
