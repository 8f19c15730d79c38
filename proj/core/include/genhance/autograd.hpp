#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Values are computed eagerly; each op records a closure that
// propagates gradients to its inputs when `backward` runs.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace genhance::nn {

using Real = double;
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<Real, 1, Eigen::Dynamic>;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}
  void zero_grad() { grad.setZero(); }
};

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Random Fourier features for a Gaussian kernel of bandwidth sigma:
/// phi(u) = sqrt(2/D) cos(omega u + bias), omega ~ N(0, I / sigma^2),
/// bias ~ U[0, 2 pi).
struct RandomFeatures {
  Matrix omega;  // D x d
  RowVector bias;  // 1 x D

  static RandomFeatures draw(int input_dim, int feature_dim, double sigma, std::uint64_t seed);
  int feature_dim() const noexcept { return static_cast<int>(omega.rows()); }
  int input_dim() const noexcept { return static_cast<int>(omega.cols()); }
  /// Rows of `x` mapped to feature space (n x D).
  Matrix map(const Matrix& x) const;
};

class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }

  Var parameter(Parameter& p);
  Var constant(Matrix value);

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]->value; }
  /// Gradient of the last `backward` target w.r.t. `v` (zero-sized if unreached).
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]->grad; }
  Real scalar(Var v) const { return value(v)(0, 0); }

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, Real s);
  /// Adds a 1 x n row to every row of a.
  Var add_row(Var a, Var row);
  Var linear(Var x, Var weight, Var bias) { return add_row(matmul(x, weight), bias); }
  Var gelu(Var a);
  Var layer_norm(Var x, Var gamma, Var beta, Real eps = 1e-5);
  Var softmax_rows(Var a);
  /// Rows of `table` at the given indices.
  Var gather_rows(Var table, std::vector<int> rows);
  Var concat_rows(Var a, Var b);
  /// Each row of `a` repeated `times` times consecutively.
  Var repeat_rows(Var a, int times);
  Var column(Var a, int col);
  Var sum(Var a);

  /// Multi-head scaled dot-product attention over `batch` independent
  /// groups: q has batch * lq rows, k and v have batch * lk rows.
  Var attention(Var q, Var k, Var v, int batch, int lq, int lk, int heads, bool causal);

  /// Sum over rows of -log softmax(logits)[target]; rows with target < 0 are skipped.
  Var cross_entropy_sum(Var logits, std::vector<int> targets);

  /// Mean over pairs of log(1 + exp(s[worse] - s[better])); `scores` is n x 1.
  Var pairwise_logistic(Var scores, std::vector<std::pair<int, int>> better_worse);

  /// Unbiased MMD U-statistic between the rows of `z` and the constant
  /// `prior` rows under the random-feature kernel.
  Var mmd(Var z, Matrix prior, const RandomFeatures& features);

  /// Runs reverse accumulation from a 1 x 1 node; parameter gradients accumulate.
  void backward(Var loss);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void()> back;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Var push(Matrix value, bool needs_grad);
  Node& node(Var v) { return *nodes_[static_cast<std::size_t>(v.id)]; }
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]->needs_grad; }
  Matrix& grad_ref(Var v);

  bool record_;
  std::vector<std::unique_ptr<Node>> nodes_;
};

/// Numerically stable log(1 + exp(x)).
Real softplus(Real x);
Real sigmoid(Real x);

}  // namespace genhance::nn
