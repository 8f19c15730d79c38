#include "genhance/autograd.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "genhance/io.hpp"

namespace genhance::nn {

Real softplus(Real x) { return std::max(x, Real{0}) + std::log1p(std::exp(-std::abs(x))); }

Real sigmoid(Real x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const Real e = std::exp(x);
  return e / (1.0 + e);
}

RandomFeatures RandomFeatures::draw(int input_dim, int feature_dim, double sigma, std::uint64_t seed) {
  if (!(sigma > 0)) throw ConfigError("kernel bandwidth must be > 0");
  if (feature_dim < 1 || input_dim < 1) throw ConfigError("random-feature dimensions must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<Real> gauss(0.0, 1.0 / sigma);
  std::uniform_real_distribution<Real> phase(0.0, 2.0 * std::numbers::pi);
  RandomFeatures f;
  f.omega.resize(feature_dim, input_dim);
  for (Eigen::Index i = 0; i < f.omega.size(); ++i) f.omega.data()[i] = gauss(rng);
  f.bias.resize(feature_dim);
  for (Eigen::Index i = 0; i < f.bias.size(); ++i) f.bias(i) = phase(rng);
  return f;
}

Matrix RandomFeatures::map(const Matrix& x) const {
  if (x.cols() != omega.cols()) throw DataError("random-feature input dimension mismatch");
  Matrix proj = x * omega.transpose();
  proj.rowwise() += bias;
  return std::sqrt(2.0 / static_cast<Real>(feature_dim())) * proj.array().cos().matrix();
}

Var Tape::push(Matrix value, bool needs_grad) {
  auto n = std::make_unique<Node>();
  n->value = std::move(value);
  n->needs_grad = record_ && needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_ref(Var v) {
  auto& n = node(v);
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::parameter(Parameter& p) {
  Var v = push(p.value, true);
  if (record_) {
    node(v).param = &p;
    node(v).back = [this, v] { node(v).param->grad += node(v).grad; };
  }
  return v;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false); }

Var Tape::matmul(Var a, Var b) {
  Matrix out = value(a) * value(b);
  Var r = push(std::move(out), needs(a) || needs(b));
  if (needs(r))
    node(r).back = [this, a, b, r] {
      const Matrix& g = node(r).grad;
      if (needs(a)) grad_ref(a).noalias() += g * value(b).transpose();
      if (needs(b)) grad_ref(b).noalias() += value(a).transpose() * g;
    };
  return r;
}

Var Tape::matmul_nt(Var a, Var b) {
  Matrix out = value(a) * value(b).transpose();
  Var r = push(std::move(out), needs(a) || needs(b));
  if (needs(r))
    node(r).back = [this, a, b, r] {
      const Matrix& g = node(r).grad;
      if (needs(a)) grad_ref(a).noalias() += g * value(b);
      if (needs(b)) grad_ref(b).noalias() += g.transpose() * value(a);
    };
  return r;
}

Var Tape::add(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DataError("add: shape mismatch");
  Var r = push(value(a) + value(b), needs(a) || needs(b));
  if (needs(r))
    node(r).back = [this, a, b, r] {
      if (needs(a)) grad_ref(a) += node(r).grad;
      if (needs(b)) grad_ref(b) += node(r).grad;
    };
  return r;
}

Var Tape::sub(Var a, Var b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw DataError("sub: shape mismatch");
  Var r = push(value(a) - value(b), needs(a) || needs(b));
  if (needs(r))
    node(r).back = [this, a, b, r] {
      if (needs(a)) grad_ref(a) += node(r).grad;
      if (needs(b)) grad_ref(b) -= node(r).grad;
    };
  return r;
}

Var Tape::scale(Var a, Real s) {
  Var r = push(value(a) * s, needs(a));
  if (needs(r)) node(r).back = [this, a, r, s] { grad_ref(a) += s * node(r).grad; };
  return r;
}

Var Tape::add_row(Var a, Var row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw DataError("add_row: shape mismatch");
  Matrix out = value(a);
  out.rowwise() += value(row).row(0);
  Var r = push(std::move(out), needs(a) || needs(row));
  if (needs(r))
    node(r).back = [this, a, row, r] {
      if (needs(a)) grad_ref(a) += node(r).grad;
      if (needs(row)) grad_ref(row) += node(r).grad.colwise().sum();
    };
  return r;
}

namespace {
constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr Real kGeluA = 0.044715;
}  // namespace

Var Tape::gelu(Var a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const Real v = x.data()[i];
    out.data()[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  Var r = push(std::move(out), needs(a));
  if (needs(r))
    node(r).back = [this, a, r] {
      const Matrix& x = value(a);
      const Matrix& g = node(r).grad;
      Matrix& ga = grad_ref(a);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        const Real v = x.data()[i];
        const Real t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const Real d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        ga.data()[i] += g.data()[i] * d;
      }
    };
  return r;
}

Var Tape::layer_norm(Var x, Var gamma, Var beta, Real eps) {
  const Matrix& in = value(x);
  const auto n = in.rows();
  const auto d = in.cols();
  Matrix xhat(n, d);
  Eigen::VectorXd rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Real mu = in.row(i).mean();
    const Real var = (in.row(i).array() - mu).square().mean();
    rstd(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (in.row(i).array() - mu) * rstd(i);
  }
  Matrix out = xhat;
  out.array().rowwise() *= value(gamma).row(0).array();
  out.rowwise() += value(beta).row(0);
  Var r = push(std::move(out), needs(x) || needs(gamma) || needs(beta));
  if (needs(r))
    node(r).back = [this, x, gamma, beta, r, xhat = std::move(xhat), rstd = std::move(rstd)] {
      const Matrix& g = node(r).grad;
      if (needs(gamma)) grad_ref(gamma) += (g.array() * xhat.array()).colwise().sum().matrix();
      if (needs(beta)) grad_ref(beta) += g.colwise().sum();
      if (needs(x)) {
        Matrix dxhat = g;
        dxhat.array().rowwise() *= value(gamma).row(0).array();
        Matrix& gx = grad_ref(x);
        const Real inv_d = 1.0 / static_cast<Real>(xhat.cols());
        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
          const Real m1 = dxhat.row(i).sum() * inv_d;
          const Real m2 = dxhat.row(i).dot(xhat.row(i)) * inv_d;
          gx.row(i).array() += rstd(i) * (dxhat.row(i).array() - m1 - xhat.row(i).array() * m2);
        }
      }
    };
  return r;
}

Var Tape::softmax_rows(Var a) {
  const Matrix& x = value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Real m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  Var r = push(std::move(out), needs(a));
  if (needs(r))
    node(r).back = [this, a, r] {
      const Matrix& y = value(r);
      const Matrix& g = node(r).grad;
      Matrix& ga = grad_ref(a);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const Real dot = g.row(i).dot(y.row(i));
        ga.row(i).array() += y.row(i).array() * (g.row(i).array() - dot);
      }
    };
  return r;
}

Var Tape::gather_rows(Var table, std::vector<int> rows) {
  const Matrix& t = value(table);
  Matrix out(static_cast<Eigen::Index>(rows.size()), t.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= t.rows()) throw DataError("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = t.row(rows[i]);
  }
  Var r = push(std::move(out), needs(table));
  if (needs(r))
    node(r).back = [this, table, r, rows = std::move(rows)] {
      Matrix& gt = grad_ref(table);
      const Matrix& g = node(r).grad;
      for (std::size_t i = 0; i < rows.size(); ++i) gt.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
    };
  return r;
}

Var Tape::concat_rows(Var a, Var b) {
  const Matrix& x = value(a);
  const Matrix& y = value(b);
  if (x.cols() != y.cols()) throw DataError("concat_rows: column mismatch");
  Matrix out(x.rows() + y.rows(), x.cols());
  out.topRows(x.rows()) = x;
  out.bottomRows(y.rows()) = y;
  Var r = push(std::move(out), needs(a) || needs(b));
  if (needs(r))
    node(r).back = [this, a, b, r] {
      const Matrix& g = node(r).grad;
      const auto na = value(a).rows();
      if (needs(a)) grad_ref(a) += g.topRows(na);
      if (needs(b)) grad_ref(b) += g.bottomRows(g.rows() - na);
    };
  return r;
}

Var Tape::repeat_rows(Var a, int times) {
  const Matrix& x = value(a);
  Matrix out(x.rows() * times, x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int t = 0; t < times; ++t) out.row(i * times + t) = x.row(i);
  Var r = push(std::move(out), needs(a));
  if (needs(r))
    node(r).back = [this, a, r, times] {
      const Matrix& g = node(r).grad;
      Matrix& ga = grad_ref(a);
      for (Eigen::Index i = 0; i < ga.rows(); ++i)
        for (int t = 0; t < times; ++t) ga.row(i) += g.row(i * times + t);
    };
  return r;
}

Var Tape::column(Var a, int col) {
  Matrix out = value(a).col(col);
  Var r = push(std::move(out), needs(a));
  if (needs(r)) node(r).back = [this, a, r, col] { grad_ref(a).col(col) += node(r).grad.col(0); };
  return r;
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  Var r = push(std::move(out), needs(a));
  if (needs(r)) node(r).back = [this, a, r] { grad_ref(a).array() += node(r).grad(0, 0); };
  return r;
}

Var Tape::attention(Var q, Var k, Var v, int batch, int lq, int lk, int heads, bool causal) {
  const Matrix& Q = value(q);
  const Matrix& K = value(k);
  const Matrix& V = value(v);
  const auto d = Q.cols();
  if (Q.rows() != batch * lq || K.rows() != batch * lk || V.rows() != batch * lk || K.cols() != d ||
      V.cols() != d || d % heads != 0)
    throw DataError("attention: shape mismatch");
  if (causal && lq != lk) throw DataError("attention: causal masking needs lq == lk");
  const auto dh = d / heads;
  const Real s = 1.0 / std::sqrt(static_cast<Real>(dh));
  std::vector<Matrix> probs(static_cast<std::size_t>(batch * heads));
  Matrix out(Q.rows(), d);
  for (int b = 0; b < batch; ++b) {
    for (int h = 0; h < heads; ++h) {
      Matrix S = s * (Q.block(b * lq, h * dh, lq, dh) * K.block(b * lk, h * dh, lk, dh).transpose());
      for (int i = 0; i < lq; ++i) {
        // Masked entries are written as exact zeros; the vectorised exp of
        // -inf yields subnormals, which are very slow in the backward pass.
        const int open = causal ? i + 1 : lk;
        auto row = S.row(i).head(open);
        const Real m = row.maxCoeff();
        row = (row.array() - m).exp();
        row /= row.sum();
        S.row(i).tail(lk - open).setZero();
      }
      out.block(b * lq, h * dh, lq, dh).noalias() = S * V.block(b * lk, h * dh, lk, dh);
      probs[static_cast<std::size_t>(b * heads + h)] = std::move(S);
    }
  }
  Var r = push(std::move(out), needs(q) || needs(k) || needs(v));
  if (needs(r))
    node(r).back = [this, q, k, v, r, batch, lq, lk, heads, dh, s, probs = std::move(probs)] {
      const Matrix& Q = value(q);
      const Matrix& K = value(k);
      const Matrix& V = value(v);
      const Matrix& G = node(r).grad;
      Matrix* gq = needs(q) ? &grad_ref(q) : nullptr;
      Matrix* gk = needs(k) ? &grad_ref(k) : nullptr;
      Matrix* gv = needs(v) ? &grad_ref(v) : nullptr;
      for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
          const Matrix& P = probs[static_cast<std::size_t>(b * heads + h)];
          Matrix dO = G.block(b * lq, h * dh, lq, dh);
          if (gv) gv->block(b * lk, h * dh, lk, dh).noalias() += P.transpose() * dO;
          Matrix dP = dO * V.block(b * lk, h * dh, lk, dh).transpose();
          Eigen::VectorXd rows = (dP.array() * P.array()).rowwise().sum();
          Matrix dS = P.array() * (dP.array().colwise() - rows.array());
          dS *= s;
          if (gq) gq->block(b * lq, h * dh, lq, dh).noalias() += dS * K.block(b * lk, h * dh, lk, dh);
          if (gk) gk->block(b * lk, h * dh, lk, dh).noalias() += dS.transpose() * Q.block(b * lq, h * dh, lq, dh);
        }
      }
    };
  return r;
}

Var Tape::cross_entropy_sum(Var logits, std::vector<int> targets) {
  const Matrix& x = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != x.rows())
    throw DataError("cross_entropy: target count differs from row count");
  Matrix probs(x.rows(), x.cols());
  Real total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Real m = x.row(i).maxCoeff();
    probs.row(i) = (x.row(i).array() - m).exp();
    const Real z = probs.row(i).sum();
    probs.row(i) /= z;
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0) continue;
    if (t >= x.cols()) throw DataError("cross_entropy: target out of range");
    total += (m + std::log(z)) - x(i, t);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  Var r = push(std::move(out), needs(logits));
  if (needs(r))
    node(r).back = [this, logits, r, probs = std::move(probs), targets = std::move(targets)] {
      const Real g = node(r).grad(0, 0);
      Matrix& gl = grad_ref(logits);
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        gl.row(i) += g * probs.row(i);
        gl(i, t) -= g;
      }
    };
  return r;
}

Var Tape::pairwise_logistic(Var scores, std::vector<std::pair<int, int>> better_worse) {
  const Matrix& s = value(scores);
  Matrix out(1, 1);
  out(0, 0) = 0.0;
  if (!better_worse.empty()) {
    for (auto [b, w] : better_worse) out(0, 0) += softplus(s(w, 0) - s(b, 0));
    out(0, 0) /= static_cast<Real>(better_worse.size());
  }
  Var r = push(std::move(out), needs(scores));
  if (needs(r))
    node(r).back = [this, scores, r, pairs = std::move(better_worse)] {
      if (pairs.empty()) return;
      const Matrix& s = value(scores);
      const Real g = node(r).grad(0, 0) / static_cast<Real>(pairs.size());
      Matrix& gs = grad_ref(scores);
      for (auto [b, w] : pairs) {
        const Real sg = sigmoid(s(w, 0) - s(b, 0));
        gs(w, 0) += g * sg;
        gs(b, 0) -= g * sg;
      }
    };
  return r;
}

Var Tape::mmd(Var z, Matrix prior, const RandomFeatures& features) {
  const Matrix& Z = value(z);
  const auto n = Z.rows();
  if (n < 2 || prior.rows() != n) throw DataError("mmd: need n >= 2 and equal batch sizes");
  const Matrix phi_z = features.map(Z);
  const Matrix phi_p = features.map(prior);
  const RowVector S = phi_z.colwise().sum();
  const RowVector T = phi_p.colwise().sum();
  const Real nn1 = static_cast<Real>(n) * static_cast<Real>(n - 1);
  const Real n2 = static_cast<Real>(n) * static_cast<Real>(n);
  // Explicit pair sums rather than |S|^2 - sum |phi_i|^2: identical inputs then
  // give bit-identical terms and an exact zero.
  auto off_diagonal = [](const Matrix& a) {
    Real sum = 0.0;
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      for (Eigen::Index j = i + 1; j < a.rows(); ++j) sum += a.row(i).dot(a.row(j));
    return 2.0 * sum;
  };
  Real cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) cross += phi_z.row(i).dot(phi_p.row(j));
  const Real zz = off_diagonal(phi_z) / nn1;
  const Real pp = off_diagonal(phi_p) / nn1;
  const Real zp = cross / n2;
  Matrix out(1, 1);
  out(0, 0) = zz + pp - 2.0 * zp;
  Var r = push(std::move(out), needs(z));
  if (needs(r))
    node(r).back = [this, z, r, nn1, n2, S, T, phi_z, &features] {
      const Real g = node(r).grad(0, 0);
      Matrix dphi = (-2.0 / nn1) * phi_z;
      dphi.rowwise() += (2.0 / nn1) * S - (2.0 / n2) * T;
      Matrix proj = value(z) * features.omega.transpose();
      proj.rowwise() += features.bias;
      const Real c = std::sqrt(2.0 / static_cast<Real>(features.feature_dim()));
      Matrix dproj = -c * (dphi.array() * proj.array().sin()).matrix();
      grad_ref(z).noalias() += g * (dproj * features.omega);
    };
  return r;
}

void Tape::backward(Var loss) {
  auto& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) throw DataError("backward needs a scalar");
  if (!root.needs_grad) return;
  grad_ref(loss)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = *nodes_[static_cast<std::size_t>(i)];
    if (n.back && n.grad.size() != 0) n.back();
  }
}

}  // namespace genhance::nn
