#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rcd/neuro.hpp"
#include "support.hpp"

namespace rcd::oracle {

using neuro::Matrix;
using neuro::RowVector;

/// Max relative error of `analytic` against central differences of `loss`
/// with respect to every entry of `x`.
inline double fd_against(Matrix& x, const Matrix& analytic, const std::function<double()>& loss,
                         double h = 1e-4, double floor = 1e-7) {
  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = loss();
    x.data()[i] = saved - h;
    const double down = loss();
    x.data()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double g = analytic.data()[i];
    worst = std::max(worst, std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor}));
  }
  return worst;
}

inline double weighted_sum(const Matrix& y, const Matrix& r) { return (y.array() * r.array()).sum(); }

/// Dense layer: loss = <y, R>, checked for W, b and x.
inline double dense_gradient_error(neuro::Rng& rng) {
  const int in = 1 + static_cast<int>(rng.below(8)), out = 1 + static_cast<int>(rng.below(8));
  const int batch = 1 + static_cast<int>(rng.below(4));
  neuro::Dense d("d", in, out);
  d.init(rng);
  d.bias.value = test::random_matrix(1, out, rng);
  Matrix x = test::random_matrix(batch, in, rng);
  const Matrix r = test::random_matrix(batch, out, rng);
  auto loss = [&] { return weighted_sum(d.forward(x), r); };
  d.weight.zero_grad();
  d.bias.zero_grad();
  const Matrix dx = d.backward(x, r);
  double worst = neuro::gradient_check(d.weight, loss);
  worst = std::max(worst, neuro::gradient_check(d.bias, loss));
  return std::max(worst, fd_against(x, dx, loss));
}

/// Chebyshev convolution on a random connected graph.
inline double cheb_gradient_error(neuro::Rng& rng) {
  const int n = 2 + static_cast<int>(rng.below(7));
  const int in = 1 + static_cast<int>(rng.below(8)), out = 1 + static_cast<int>(rng.below(8));
  const neuro::GraphOperator op(n, test::random_graph(n, n, rng));
  neuro::ChebConv c("c", in, out);
  c.init(rng);
  c.bias.value = test::random_matrix(1, out, rng);
  Matrix x = test::random_matrix(n, in, rng);
  const Matrix r = test::random_matrix(n, out, rng);
  auto loss = [&] { return weighted_sum(c.forward(op, x), r); };
  Matrix basis;
  c.forward(op, x, &basis);
  c.w0.zero_grad();
  c.w1.zero_grad();
  c.bias.zero_grad();
  const Matrix dx = c.backward(op, basis, r);
  double worst = neuro::gradient_check(c.w0, loss);
  worst = std::max(worst, neuro::gradient_check(c.w1, loss));
  worst = std::max(worst, neuro::gradient_check(c.bias, loss));
  return std::max(worst, fd_against(x, dx, loss));
}

/// Cross-entropy with respect to the logits.
inline double xent_gradient_error(neuro::Rng& rng) {
  const int classes = 2 + static_cast<int>(rng.below(7));
  const int label = static_cast<int>(rng.below(classes));
  Matrix logits = test::random_matrix(1, classes, rng, 3.0);
  const RowVector g = neuro::softmax_xent(logits, label).grad;
  auto loss = [&] { return neuro::softmax_xent(logits, label).loss; };
  return fd_against(logits, g, loss);
}

/// Latent fusion: xent(classifier(P_a a + P_b b)) for the two projections
/// and the shared classifier, plus both inputs.
inline double projection_gradient_error(neuro::Rng& rng) {
  const int da = 1 + static_cast<int>(rng.below(8)), db = 1 + static_cast<int>(rng.below(8));
  const int latent = 1 + static_cast<int>(rng.below(8));
  neuro::Dense pa("pa", da, latent), pb("pb", db, latent), cls("cls", latent, 2);
  pa.init(rng);
  pb.init(rng);
  cls.init(rng);
  Matrix a = test::random_matrix(1, da, rng), b = test::random_matrix(1, db, rng);
  const int label = static_cast<int>(rng.below(2));
  auto loss = [&] {
    const Matrix z = pa.forward(a) + pb.forward(b);
    return neuro::softmax_xent(cls.forward(z), label).loss;
  };
  for (auto* t : {&pa.weight, &pa.bias, &pb.weight, &pb.bias, &cls.weight, &cls.bias}) t->zero_grad();
  const Matrix z = pa.forward(a) + pb.forward(b);
  const auto lg = neuro::softmax_xent(cls.forward(z), label);
  const Matrix dz = cls.backward(z, lg.grad);
  const Matrix da_ = pa.backward(a, dz);
  const Matrix db_ = pb.backward(b, dz);
  double worst = 0;
  for (auto* t : {&pa.weight, &pa.bias, &pb.weight, &pb.bias, &cls.weight, &cls.bias})
    worst = std::max(worst, neuro::gradient_check(*t, loss));
  worst = std::max(worst, fd_against(a, da_, loss));
  return std::max(worst, fd_against(b, db_, loss));
}

/// Mann-Whitney AUC by comparing every positive with every negative.
inline double pairwise_auc(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0;
  long pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i]) ++pos;
    else ++neg;
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Sort descending and add the first `k` (all of them when fewer).
inline double top_k_sum(std::vector<double> p, int k) {
  std::sort(p.begin(), p.end(), std::greater<>());
  if (static_cast<int>(p.size()) > k) p.resize(k);
  // ascending order, matching how the production sum accumulates
  std::sort(p.begin(), p.end());
  double s = 0;
  for (double v : p) s += v;
  return s;
}

}  // namespace rcd::oracle
