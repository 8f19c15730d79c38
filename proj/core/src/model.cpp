#include "genhance/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>

#include "genhance/io.hpp"

namespace genhance {

using nn::Matrix;
using nn::Tape;
using nn::Var;

namespace {

constexpr char kMagic[8] = {'G', 'E', 'N', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kEncodeChunk = 64;

std::string_view strategy_name(DecodingStrategy s) { return s == DecodingStrategy::greedy ? "greedy" : "sample"; }

}  // namespace

void ModelConfig::validate() const {
  if (max_length < 1) throw ConfigError("model.max_length must be >= 1");
  if (encoder_layers < 1 || decoder_layers < 1) throw ConfigError("model needs >= 1 encoder and decoder layer");
  if (width < 1 || heads < 1 || width % heads != 0) throw ConfigError("model.width must be a positive multiple of model.heads");
  if (ffn_width < 1) throw ConfigError("model.ffn_width must be >= 1");
  if (latent_dim < 2) throw ConfigError("model.latent_dim must be >= 2 so z_perp is non-empty");
  if (decoder_memory != "latent-only")
    throw ConfigError("model.decoder_memory: only \"latent-only\" is implemented");
  if (decoding.temperature < 0) throw ConfigError("decoding temperature must be >= 0");
}

nlohmann::ordered_json to_json(const DecodingSpec& d) {
  nlohmann::ordered_json j;
  j["strategy"] = strategy_name(d.strategy);
  j["temperature"] = d.temperature;
  j["top_k"] = d.top_k;
  return j;
}

DecodingSpec decoding_from_json(const nlohmann::json& j) {
  DecodingSpec d;
  const auto s = j.value("strategy", std::string("sample"));
  if (s == "greedy")
    d.strategy = DecodingStrategy::greedy;
  else if (s == "sample")
    d.strategy = DecodingStrategy::sample;
  else
    throw ConfigError("unknown decoding strategy '" + s + "'");
  d.temperature = j.value("temperature", d.temperature);
  d.top_k = j.value("top_k", d.top_k);
  return d;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["max_length"] = c.max_length;
  j["encoder_layers"] = c.encoder_layers;
  j["decoder_layers"] = c.decoder_layers;
  j["width"] = c.width;
  j["heads"] = c.heads;
  j["ffn_width"] = c.ffn_width;
  j["latent_dim"] = c.latent_dim;
  j["decoder_memory"] = c.decoder_memory;
  j["decoding"] = to_json(c.decoding);
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.max_length = j.value("max_length", c.max_length);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.width = j.value("width", c.width);
  c.heads = j.value("heads", c.heads);
  c.ffn_width = j.value("ffn_width", c.ffn_width);
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.decoder_memory = j.value("decoder_memory", c.decoder_memory);
  if (j.contains("decoding")) c.decoding = decoding_from_json(j.at("decoding"));
  c.seed = j.value("seed", c.seed);
  return c;
}

nn::RowVector LatentVector::as_row() const {
  nn::RowVector r(static_cast<Eigen::Index>(size()));
  r(0) = parallel;
  for (std::size_t i = 0; i < perp.size(); ++i) r(static_cast<Eigen::Index>(i + 1)) = perp[i];
  return r;
}

LatentVector LatentVector::from_row(const Matrix& m, Eigen::Index row) {
  LatentVector z;
  z.parallel = m(row, 0);
  z.perp.resize(static_cast<std::size_t>(m.cols() - 1));
  for (Eigen::Index c = 1; c < m.cols(); ++c) z.perp[static_cast<std::size_t>(c - 1)] = m(row, c);
  return z;
}

LatentVector perturb(const LatentVector& z, double delta) {
  LatentVector out = z;
  out.parallel += delta;
  return out;
}

nlohmann::ordered_json to_json(const LatentStats& s) {
  nlohmann::ordered_json j;
  j["mean"] = s.mean;
  j["stddev"] = s.stddev;
  j["count"] = s.count;
  return j;
}

LatentStats latent_stats_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("stddev").get<double>(), j.at("count").get<std::size_t>()};
}

// ---------------------------------------------------------------------------

Seq2SeqModel::Seq2SeqModel(ModelConfig config, Vocabulary vocab)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  const int d = config_.width;
  const int V = vocab_.model_size();
  const int positions = config_.max_length + 1;
  const double w_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double w_ff = 1.0 / std::sqrt(static_cast<double>(config_.ffn_width));
  const double resid = 1.0 / std::sqrt(2.0 * (config_.encoder_layers + config_.decoder_layers));
  constexpr double kEmbed = 0.3;

  enc_tok_ = add_param("enc.tok", V, d, kEmbed, rng);
  enc_pos_ = add_param("enc.pos", positions, d, kEmbed, rng);
  for (int l = 0; l < config_.encoder_layers; ++l) {
    const std::string n = "enc." + std::to_string(l) + ".";
    EncoderLayer L;
    L.ln1 = make_norm(n + "ln1", d);
    L.q = make_linear(n + "q", d, d, w_in, rng);
    L.k = make_linear(n + "k", d, d, w_in, rng);
    L.v = make_linear(n + "v", d, d, w_in, rng);
    L.o = make_linear(n + "o", d, d, w_in * resid, rng);
    L.ln2 = make_norm(n + "ln2", d);
    L.ff1 = make_linear(n + "ff1", d, config_.ffn_width, w_in, rng);
    L.ff2 = make_linear(n + "ff2", config_.ffn_width, d, w_ff * resid, rng);
    enc_layers_.push_back(L);
  }
  enc_final_ = make_norm("enc.ln_f", d);
  to_latent_ = make_linear("latent.in", d, config_.latent_dim, w_in, rng);
  from_latent_ = make_linear("latent.out", config_.latent_dim, d,
                             1.0 / std::sqrt(static_cast<double>(config_.latent_dim)), rng);

  dec_tok_ = add_param("dec.tok", V, d, kEmbed, rng);
  dec_pos_ = add_param("dec.pos", positions, d, kEmbed, rng);
  for (int l = 0; l < config_.decoder_layers; ++l) {
    const std::string n = "dec." + std::to_string(l) + ".";
    DecoderLayer L;
    L.ln1 = make_norm(n + "ln1", d);
    L.q = make_linear(n + "q", d, d, w_in, rng);
    L.k = make_linear(n + "k", d, d, w_in, rng);
    L.v = make_linear(n + "v", d, d, w_in, rng);
    L.o = make_linear(n + "o", d, d, w_in * resid, rng);
    L.cv = make_linear(n + "cv", d, d, w_in, rng);
    L.co = make_linear(n + "co", d, d, w_in * resid, rng);
    L.ln3 = make_norm(n + "ln3", d);
    L.ff1 = make_linear(n + "ff1", d, config_.ffn_width, w_in, rng);
    L.ff2 = make_linear(n + "ff2", config_.ffn_width, d, w_ff * resid, rng);
    dec_layers_.push_back(L);
  }
  dec_final_ = make_norm("dec.ln_f", d);
  to_vocab_ = make_linear("dec.out", d, V, w_in, rng);
}

std::size_t Seq2SeqModel::add_param(const std::string& name, int rows, int cols, double stddev,
                                    std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  params_.emplace_back(name, std::move(m));
  return params_.size() - 1;
}

std::size_t Seq2SeqModel::add_const(const std::string& name, int rows, int cols, double value) {
  params_.emplace_back(name, Matrix::Constant(rows, cols, value));
  return params_.size() - 1;
}

Seq2SeqModel::Linear Seq2SeqModel::make_linear(const std::string& name, int in, int out, double stddev,
                                               std::mt19937_64& rng) {
  return {add_param(name + ".w", in, out, stddev, rng), add_const(name + ".b", 1, out, 0.0)};
}

Seq2SeqModel::Norm Seq2SeqModel::make_norm(const std::string& name, int dim) {
  return {add_const(name + ".g", 1, dim, 1.0), add_const(name + ".b", 1, dim, 0.0)};
}

std::size_t Seq2SeqModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& prm : params_) n += static_cast<std::size_t>(prm.value.size());
  return n;
}

void Seq2SeqModel::zero_grad() {
  for (auto& prm : params_) prm.zero_grad();
}

Var Seq2SeqModel::p(Tape& tape, std::size_t idx) const { return tape.parameter(params_[idx]); }

Var Seq2SeqModel::apply(Tape& tape, const Linear& l, Var x) const {
  return tape.linear(x, p(tape, l.weight), p(tape, l.bias));
}

Var Seq2SeqModel::norm(Tape& tape, const Norm& n, Var x) const {
  return tape.layer_norm(x, p(tape, n.gamma), p(tape, n.beta));
}

Var Seq2SeqModel::encoder_stack(Tape& tape, Var x, int batch, int len) const {
  const int steps = len + 1;
  std::vector<int> pos(static_cast<std::size_t>(batch * steps));
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < steps; ++t) pos[static_cast<std::size_t>(b * steps + t)] = t;
  x = tape.add(x, tape.gather_rows(p(tape, enc_pos_), std::move(pos)));
  for (const auto& L : enc_layers_) {
    Var h = norm(tape, L.ln1, x);
    Var a = tape.attention(apply(tape, L.q, h), apply(tape, L.k, h), apply(tape, L.v, h), batch, steps, steps,
                           config_.heads, false);
    x = tape.add(x, apply(tape, L.o, a));
    h = norm(tape, L.ln2, x);
    x = tape.add(x, apply(tape, L.ff2, tape.gelu(apply(tape, L.ff1, h))));
  }
  Var hidden = norm(tape, enc_final_, x);
  std::vector<int> cls_rows(static_cast<std::size_t>(batch));
  for (int b = 0; b < batch; ++b) cls_rows[static_cast<std::size_t>(b)] = b * steps;
  return apply(tape, to_latent_, tape.gather_rows(hidden, std::move(cls_rows)));
}

Var Seq2SeqModel::encode(Tape& tape, std::span<const TokenSequence> batch) const {
  if (batch.empty()) throw DataError("encode: empty batch");
  const auto len = batch.front().length();
  std::vector<int> ids;
  ids.reserve(batch.size() * (len + 1));
  for (const auto& x : batch) {
    if (x.length() != len) throw DataError("encode: batch sequences must share a length");
    x.validate(vocab_, static_cast<std::size_t>(config_.max_length));
    ids.push_back(Vocabulary::kCls);
    for (int t : x.tokens()) ids.push_back(Vocabulary::model_id(t));
  }
  Var emb = tape.gather_rows(p(tape, enc_tok_), std::move(ids));
  return encoder_stack(tape, emb, static_cast<int>(batch.size()), static_cast<int>(len));
}

Var Seq2SeqModel::encode_distributions(Tape& tape, Var probs, int batch, int len) const {
  if (len > config_.max_length) throw DataError("encode: sequence longer than max_length");
  if (tape.value(probs).rows() != batch * (len + 1) || tape.value(probs).cols() != model_vocab())
    throw DataError("encode_distributions: shape mismatch");
  Var emb = tape.matmul(probs, p(tape, enc_tok_));
  return encoder_stack(tape, emb, batch, len);
}

Var Seq2SeqModel::decoder_stack(Tape& tape, Var z, const std::vector<int>& input_ids, int batch,
                                int steps) const {
  Var cond = apply(tape, from_latent_, z);  // B x d
  std::vector<int> pos(static_cast<std::size_t>(batch * steps));
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < steps; ++t) pos[static_cast<std::size_t>(b * steps + t)] = t;
  Var x = tape.gather_rows(p(tape, dec_tok_), input_ids);
  x = tape.add(x, tape.gather_rows(p(tape, dec_pos_), std::move(pos)));
  x = tape.add(x, tape.repeat_rows(cond, steps));
  for (const auto& L : dec_layers_) {
    Var h = norm(tape, L.ln1, x);
    Var a = tape.attention(apply(tape, L.q, h), apply(tape, L.k, h), apply(tape, L.v, h), batch, steps, steps,
                           config_.heads, true);
    x = tape.add(x, apply(tape, L.o, a));
    // Cross-attention over a single memory slot: every query puts weight 1
    // on that slot, so the block reduces to out(value(cond)) per item.
    x = tape.add(x, tape.repeat_rows(apply(tape, L.co, apply(tape, L.cv, cond)), steps));
    h = norm(tape, L.ln3, x);
    x = tape.add(x, apply(tape, L.ff2, tape.gelu(apply(tape, L.ff1, h))));
  }
  return apply(tape, to_vocab_, norm(tape, dec_final_, x));
}

Var Seq2SeqModel::decoder_logits(Tape& tape, Var z, std::span<const TokenSequence> targets) const {
  if (targets.empty()) throw DataError("decoder_logits: empty batch");
  const auto len = targets.front().length();
  if (tape.value(z).rows() != static_cast<Eigen::Index>(targets.size()))
    throw DataError("decoder_logits: latent count differs from batch size");
  std::vector<int> ids;
  ids.reserve(targets.size() * (len + 1));
  for (const auto& x : targets) {
    if (x.length() != len) throw DataError("decoder_logits: batch sequences must share a length");
    x.validate(vocab_, static_cast<std::size_t>(config_.max_length));
    ids.push_back(Vocabulary::kBos);
    for (int t : x.tokens()) ids.push_back(Vocabulary::model_id(t));
  }
  return decoder_stack(tape, z, ids, static_cast<int>(targets.size()), static_cast<int>(len + 1));
}

std::vector<int> Seq2SeqModel::decoder_targets(std::span<const TokenSequence> targets) {
  std::vector<int> out;
  for (const auto& x : targets) {
    for (int t : x.tokens()) out.push_back(Vocabulary::model_id(t));
    out.push_back(Vocabulary::kEos);
  }
  return out;
}

LatentVector Seq2SeqModel::encode(const TokenSequence& x) const {
  Tape tape(false);
  Var z = encode(tape, std::span<const TokenSequence>(&x, 1));
  return LatentVector::from_row(tape.value(z), 0);
}

std::vector<LatentVector> Seq2SeqModel::encode_batch(std::span<const TokenSequence> xs) const {
  std::vector<LatentVector> out(xs.size());
  // Group by length so every forward pass sees a rectangular batch.
  std::map<std::size_t, std::vector<std::size_t>> by_len;
  for (std::size_t i = 0; i < xs.size(); ++i) by_len[xs[i].length()].push_back(i);
  for (const auto& [len, idx] : by_len) {
    for (std::size_t start = 0; start < idx.size(); start += kEncodeChunk) {
      const auto stop = std::min(idx.size(), start + kEncodeChunk);
      std::vector<TokenSequence> chunk;
      for (auto k = start; k < stop; ++k) chunk.push_back(xs[idx[k]]);
      Tape tape(false);
      Var z = encode(tape, chunk);
      for (auto k = start; k < stop; ++k)
        out[idx[k]] = LatentVector::from_row(tape.value(z), static_cast<Eigen::Index>(k - start));
    }
  }
  return out;
}

Matrix Seq2SeqModel::teacher_forced_probs(const LatentVector& z, const TokenSequence& x) const {
  Tape tape(false);
  Var zv = tape.constant(z.as_row());
  Var logits = decoder_logits(tape, zv, std::span<const TokenSequence>(&x, 1));
  return tape.value(tape.softmax_rows(logits));
}

namespace {

Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
  Matrix out = x * w;
  out.rowwise() += b.row(0);
  return out;
}

// Same arithmetic as the tape's layer_norm and gelu.
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  constexpr double eps = 1e-5;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double rstd = 1.0 / std::sqrt(var + eps);
    out.row(i) = (x.row(i).array() - mu) * rstd;
  }
  out.array().rowwise() *= gamma.row(0).array();
  out.rowwise() += beta.row(0);
  return out;
}

Matrix gelu_rows(const Matrix& x) {
  constexpr double c = 0.7978845608028654;
  constexpr double a = 0.044715;
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(c * (v + a * v * v * v)));
  }
  return out;
}

}  // namespace

int choose_token(nn::RowVector row, const DecodingSpec& spec, std::mt19937_64& rng, bool allow_eos) {
  for (int s = 0; s < Vocabulary::kNumSpecial; ++s)
    if (s != Vocabulary::kEos || !allow_eos) row(s) = -std::numeric_limits<double>::infinity();
  const int V = static_cast<int>(row.size());
  if (spec.is_greedy()) {
    Eigen::Index arg;
    row.maxCoeff(&arg);
    return static_cast<int>(arg);
  }
  std::vector<int> order(static_cast<std::size_t>(V));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int c) { return row(a) > row(c); });
  const int allowed = V - Vocabulary::kNumSpecial + (allow_eos ? 1 : 0);
  int keep = spec.top_k > 0 ? std::min(spec.top_k, V) : V;
  keep = std::min(keep, allowed);
  const double m = row(order[0]);
  std::vector<double> w(static_cast<std::size_t>(keep));
  double total = 0.0;
  for (int k = 0; k < keep; ++k) {
    w[static_cast<std::size_t>(k)] = std::exp((row(order[static_cast<std::size_t>(k)]) - m) / spec.temperature);
    total += w[static_cast<std::size_t>(k)];
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = unif(rng) * total;
  for (int k = 0; k < keep; ++k) {
    u -= w[static_cast<std::size_t>(k)];
    if (u <= 0.0) return order[static_cast<std::size_t>(k)];
  }
  return order[static_cast<std::size_t>(keep - 1)];
}

DecoderSession::DecoderSession(const Seq2SeqModel& model, std::span<const LatentVector> zs)
    : model_(model), batch_(static_cast<int>(zs.size())), capacity_(model.config_.max_length + 1) {
  if (zs.empty()) throw DataError("DecoderSession: empty batch");
  const auto& P = model_.params_;
  Matrix zmat(batch_, static_cast<Eigen::Index>(zs.front().size()));
  for (int b = 0; b < batch_; ++b) {
    if (zs[static_cast<std::size_t>(b)].size() != static_cast<std::size_t>(model.config_.latent_dim))
      throw DataError("DecoderSession: latent dimension mismatch");
    zmat.row(b) = zs[static_cast<std::size_t>(b)].as_row();
  }
  const auto& fl = model_.from_latent_;
  cond_ = affine(zmat, P[fl.weight].value, P[fl.bias].value);
  const int d = model.config_.width;
  for (const auto& L : model_.dec_layers_) {
    Matrix v = affine(cond_, P[L.cv.weight].value, P[L.cv.bias].value);
    cross_.push_back(affine(v, P[L.co.weight].value, P[L.co.bias].value));
    keys_.emplace_back(batch_ * capacity_, d);
    values_.emplace_back(batch_ * capacity_, d);
  }
}

const Matrix& DecoderSession::step(std::span<const int> ids) {
  if (static_cast<int>(ids.size()) != batch_) throw DataError("DecoderSession: one id per row required");
  if (pos_ >= capacity_) throw DataError("DecoderSession: maximum length exceeded");
  const auto& P = model_.params_;
  const auto& cfg = model_.config_;
  const int d = cfg.width;
  const int heads = cfg.heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& tok = P[model_.dec_tok_].value;
  const Matrix& posm = P[model_.dec_pos_].value;

  Matrix x(batch_, d);
  for (int b = 0; b < batch_; ++b) {
    const int id = ids[static_cast<std::size_t>(b)];
    if (id < 0 || id >= tok.rows()) throw DataError("DecoderSession: id out of range");
    x.row(b) = tok.row(id);
  }
  x.rowwise() += posm.row(pos_);
  x += cond_;
  const int t = pos_;
  for (std::size_t l = 0; l < model_.dec_layers_.size(); ++l) {
    const auto& L = model_.dec_layers_[l];
    Matrix h = layer_norm_rows(x, P[L.ln1.gamma].value, P[L.ln1.beta].value);
    Matrix q = affine(h, P[L.q.weight].value, P[L.q.bias].value);
    Matrix& K = keys_[l];
    Matrix& V = values_[l];
    Matrix k = affine(h, P[L.k.weight].value, P[L.k.bias].value);
    Matrix v = affine(h, P[L.v.weight].value, P[L.v.bias].value);
    for (int b = 0; b < batch_; ++b) {
      K.row(b * capacity_ + t) = k.row(b);
      V.row(b * capacity_ + t) = v.row(b);
    }
    Matrix a(batch_, d);
    for (int b = 0; b < batch_; ++b) {
      for (int hd = 0; hd < heads; ++hd) {
        auto kb = K.block(b * capacity_, hd * dh, t + 1, dh);
        auto vb = V.block(b * capacity_, hd * dh, t + 1, dh);
        nn::RowVector s = scale * (q.block(b, hd * dh, 1, dh) * kb.transpose());
        const double m = s.maxCoeff();
        s = (s.array() - m).exp();
        s /= s.sum();
        a.block(b, hd * dh, 1, dh).noalias() = s * vb;
      }
    }
    x += affine(a, P[L.o.weight].value, P[L.o.bias].value);
    x += cross_[l];
    h = layer_norm_rows(x, P[L.ln3.gamma].value, P[L.ln3.beta].value);
    Matrix f = gelu_rows(affine(h, P[L.ff1.weight].value, P[L.ff1.bias].value));
    x += affine(f, P[L.ff2.weight].value, P[L.ff2.bias].value);
  }
  const auto& fin = model_.dec_final_;
  const auto& out = model_.to_vocab_;
  logits_ = affine(layer_norm_rows(x, P[fin.gamma].value, P[fin.beta].value), P[out.weight].value,
                   P[out.bias].value);
  ++pos_;
  return logits_;
}

std::vector<GeneratedSequence> Seq2SeqModel::decode_batch(std::span<const LatentVector> zs,
                                                          const DecodingSpec& spec,
                                                          std::mt19937_64& rng) const {
  std::vector<GeneratedSequence> out(zs.size());
  if (zs.empty()) return out;
  DecoderSession session(*this, zs);
  std::vector<int> next(zs.size(), Vocabulary::kBos);
  std::vector<bool> done(zs.size(), false);
  for (int step = 0; step <= config_.max_length; ++step) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    const Matrix& L = session.step(next);
    for (std::size_t b = 0; b < zs.size(); ++b) {
      if (done[b]) continue;
      auto& seq = out[b];
      const bool at_limit = step == config_.max_length;
      const int choice = choose_token(L.row(static_cast<Eigen::Index>(b)), spec, rng, true);
      if (choice == Vocabulary::kEos || at_limit) {
        // At the length limit the model still gets its <eos> step; any other
        // choice there marks the output as truncated.
        done[b] = true;
        seq.truncated = choice != Vocabulary::kEos;
      } else {
        seq.sequence.mutable_tokens().push_back(Vocabulary::content_index(choice));
      }
      next[b] = choice;
    }
  }
  return out;
}

GeneratedSequence Seq2SeqModel::decode(const LatentVector& z, const DecodingSpec& spec,
                                       std::mt19937_64& rng) const {
  return decode_batch(std::span<const LatentVector>(&z, 1), spec, rng).front();
}

void Seq2SeqModel::copy_parameters_from(const Seq2SeqModel& other) {
  if (other.params_.size() != params_.size()) throw DataError("parameter layout mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params_[i].value;
}

// ---------------------------------------------------------------------------

std::string_view to_string(ModelRole r) {
  switch (r) {
    case ModelRole::genhance: return "genhance";
    case ModelRole::generator: return "generator";
    case ModelRole::discriminator: return "discriminator";
  }
  return "genhance";
}

ModelRole model_role_from_string(std::string_view s) {
  if (s == "genhance") return ModelRole::genhance;
  if (s == "generator") return ModelRole::generator;
  if (s == "discriminator") return ModelRole::discriminator;
  throw DataError("unknown model role '" + std::string(s) + "'");
}

std::string Checkpoint::serialize() const {
  if (!model) throw DataError("checkpoint has no model");
  nlohmann::ordered_json header;
  header["format"] = "genhance-checkpoint";
  header["role"] = to_string(role);
  header["model_config"] = to_json(model->config());
  header["vocabulary"] = model->vocabulary().symbols();
  header["latent_stats"] = stats ? to_json(*stats) : nlohmann::ordered_json(nullptr);
  header["metadata"] = metadata;
  auto tensors = nlohmann::ordered_json::array();
  for (const auto& prm : model->parameters())
    tensors.push_back({{"name", prm.name}, {"rows", prm.value.rows()}, {"cols", prm.value.cols()}});
  header["tensors"] = std::move(tensors);
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  auto put = [&out](const void* data, std::size_t n) { out.append(static_cast<const char*>(data), n); };
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t hlen = h.size();
  put(&version, sizeof version);
  put(&hlen, sizeof hlen);
  out += h;
  for (const auto& prm : model->parameters())
    put(prm.value.data(), static_cast<std::size_t>(prm.value.size()) * sizeof(nn::Real));
  return out;
}

Checkpoint Checkpoint::parse(std::string_view bytes) {
  std::size_t off = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (off + n > bytes.size()) throw DataError("truncated checkpoint");
    std::memcpy(dst, bytes.data() + off, n);
    off += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw DataError("not a checkpoint file");
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version");
  std::uint64_t hlen = 0;
  take(&hlen, sizeof hlen);
  if (off + hlen > bytes.size()) throw DataError("truncated checkpoint header");
  nlohmann::json header;
  nlohmann::ordered_json metadata;  // keeps key order so re-serialisation is byte-exact
  try {
    header = nlohmann::json::parse(bytes.substr(off, hlen));
    metadata = nlohmann::ordered_json::parse(bytes.substr(off, hlen)).at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint header: ") + e.what());
  }
  off += hlen;

  Checkpoint ck;
  ck.role = model_role_from_string(header.at("role").get<std::string>());
  auto config = model_config_from_json(header.at("model_config"));
  Vocabulary vocab(header.at("vocabulary").get<std::vector<std::string>>());
  ck.model = std::make_shared<Seq2SeqModel>(config, vocab);
  if (!header.at("latent_stats").is_null()) ck.stats = latent_stats_from_json(header.at("latent_stats"));
  ck.metadata = std::move(metadata);
  const auto& dir = header.at("tensors");
  auto& params = ck.model->parameters();
  if (dir.size() != params.size()) throw DataError("checkpoint tensor count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& prm = params[i];
    if (dir[i].at("name").get<std::string>() != prm.name ||
        dir[i].at("rows").get<Eigen::Index>() != prm.value.rows() ||
        dir[i].at("cols").get<Eigen::Index>() != prm.value.cols())
      throw DataError("checkpoint tensor layout mismatch at " + prm.name);
    take(prm.value.data(), static_cast<std::size_t>(prm.value.size()) * sizeof(nn::Real));
  }
  if (off != bytes.size()) throw DataError("trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const { write_file_atomic(path, serialize()); }

Checkpoint Checkpoint::load(const std::filesystem::path& path) { return parse(read_file(path)); }

LatentStats latent_stats(const Seq2SeqModel& model, std::span<const TokenSequence> sequences) {
  if (sequences.empty()) throw DataError("latent_stats: empty dataset");
  const auto zs = model.encode_batch(sequences);
  double mean = 0.0;
  for (const auto& z : zs) mean += score_latent(z);
  mean /= static_cast<double>(zs.size());
  double var = 0.0;
  for (const auto& z : zs) var += (score_latent(z) - mean) * (score_latent(z) - mean);
  var /= static_cast<double>(zs.size());
  return {mean, std::sqrt(var), zs.size()};
}

LatentStats latent_stats(const Seq2SeqModel& model, const SequenceDataset& dataset) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(dataset.size());
  for (const auto& it : dataset.items()) seqs.push_back(it.sequence);
  return latent_stats(model, seqs);
}

}  // namespace genhance
