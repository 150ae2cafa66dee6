#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "rcd/kernels.hpp"
#include "rcd/mesher.hpp"

namespace rcd::neuro {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

/// Trainable parameter: value plus an accumulated gradient of equal shape.
struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;

  Tensor() = default;
  Tensor(std::string n, int rows, int cols)
      : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(); }
  Eigen::Index size() const { return value.size(); }
};

/// Seeded generator with a fully specified output sequence (mt19937_64 plus
/// explicit conversions), so runs reproduce bit-for-bit across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();                       // [0, 1)
  double uniform(double lo, double hi);
  double normal();                        // Box-Muller
  std::uint64_t below(std::uint64_t n);   // [0, n)
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

/// y = x W^T + b over a batch of rows. W is (out x in), b is (1 x out).
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, int in, int out);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }

  void init(Rng& rng);  // Kaiming-uniform weights, zero bias
  Matrix forward(const Matrix& x) const;
  /// Accumulates dW, db and returns dL/dx.
  Matrix backward(const Matrix& x, const Matrix& dy);

  Tensor weight;
  Tensor bias;
};

/// Symmetric-normalised adjacency D^-1/2 A D^-1/2 of an undirected graph.
/// The scaled Laplacian with lambda_max = 2 is L~ = L_sym - I = -this.
/// Rows of degree-0 nodes are zero.
class GraphOperator {
 public:
  GraphOperator() = default;
  GraphOperator(int nodes, const std::vector<Edge>& edges);
  explicit GraphOperator(const KidneyGraph& g) : GraphOperator(g.node_count(), g.edges) {}

  int nodes() const { return adj_.rows; }
  /// L~ x
  Matrix scaled_laplacian(const Matrix& x) const;
  const kernels::CsrMatrix& normalized_adjacency() const { return adj_; }

 private:
  kernels::CsrMatrix adj_;
};

/// Chebyshev graph convolution of order K = 2:
/// Y = X W0 + (L~ X) W1 + b.
class ChebConv {
 public:
  ChebConv() = default;
  ChebConv(std::string name, int in, int out);

  int in_features() const { return static_cast<int>(w0.value.rows()); }
  int out_features() const { return static_cast<int>(w0.value.cols()); }

  void init(Rng& rng);
  /// `basis` receives the stacked [X | L~ X] needed by backward().
  Matrix forward(const GraphOperator& op, const Matrix& x, Matrix* basis = nullptr) const;
  /// Accumulates dW0, dW1, db and returns dL/dX.
  Matrix backward(const GraphOperator& op, const Matrix& basis, const Matrix& dy);
  /// [W0; W1], shape (2 in) x out.
  Matrix stacked_weights() const;

  Tensor w0;
  Tensor w1;
  Tensor bias;
};

Matrix relu(const Matrix& x);
/// dL/dx given the pre-activation x.
Matrix relu_backward(const Matrix& x, const Matrix& dy);

RowVector mean_pool(const Matrix& x);
Matrix mean_pool_backward(int rows, const RowVector& dy);

RowVector softmax(const RowVector& logits);

struct LossGrad {
  double loss = 0.0;
  RowVector grad;  // dL/dlogits
};
/// -log softmax(logits)[label]; gradient softmax - onehot.
LossGrad softmax_xent(const RowVector& logits, int label);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<Tensor*> params, AdamConfig cfg = {});

  /// One bias-corrected update from the accumulated grads. Throws a numeric
  /// error on a non-finite gradient.
  void step(double lr);
  long steps() const { return step_; }
  void zero_grad();

 private:
  std::vector<Tensor*> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig cfg_;
  long step_ = 0;
};

/// Linear ascent over the first 15 epochs, exponential decay afterwards.
/// Epochs are 1-based; the final epoch returns 0.
struct Schedule {
  double lr_min = 1e-4;
  double lr_max = 4e-3;
  double a = 4.0;
  int k_max = 500;

  void validate() const;
  double lr_at(int k) const;
};

/// Central-difference check of the analytic gradient already stored in
/// `param.grad` against `loss()`. Returns the max relative error
/// |g - fd| / max(|g|, |fd|, floor).
double gradient_check(Tensor& param, const std::function<double()>& loss, double h = 1e-4,
                      double floor = 1e-7);

/// JSON manifest (names, shapes, offsets) + little-endian f64 payload at
/// `<stem>.json` / `<stem>.bin`.
void save_weights(const std::filesystem::path& stem, const std::vector<const Tensor*>& tensors,
                  const std::string& meta_json = "{}");
void load_weights(const std::filesystem::path& stem, const std::vector<Tensor*>& tensors);

}  // namespace rcd::neuro
