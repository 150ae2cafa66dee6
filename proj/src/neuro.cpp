#include "rcd/neuro.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"

namespace rcd::neuro {

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  // rejection keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do x = engine_();
  while (x >= limit);
  return x % n;
}

namespace {
void fill_uniform(Matrix& m, Rng& rng, double bound) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
}
}  // namespace

Dense::Dense(std::string name, int in, int out)
    : weight(name + ".weight", out, in), bias(name + ".bias", 1, out) {}

void Dense::init(Rng& rng) {
  fill_uniform(weight.value, rng, std::sqrt(6.0 / in_features()));
  bias.value.setZero();
}

Matrix Dense::forward(const Matrix& x) const {
  if (x.cols() != in_features()) throw data_error("dense: input width does not match weights");
  Matrix y = x * weight.value.transpose();
  y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Dense::backward(const Matrix& x, const Matrix& dy) {
  if (dy.cols() != out_features() || dy.rows() != x.rows())
    throw data_error("dense: gradient shape mismatch");
  weight.grad.noalias() += dy.transpose() * x;
  bias.grad.row(0) += dy.colwise().sum();
  return dy * weight.value;
}

GraphOperator::GraphOperator(int nodes, const std::vector<Edge>& edges) {
  std::vector<int> degree(nodes, 0);
  for (const auto& [a, b] : edges) {
    if (a == b) throw data_error("graph operator: self-loop");
    if (a < 0 || b < 0 || a >= nodes || b >= nodes) throw data_error("graph operator: edge out of range");
    ++degree[a];
    ++degree[b];
  }
  adj_.rows = nodes;
  adj_.row_ptr.assign(nodes + 1, 0);
  for (int i = 0; i < nodes; ++i) adj_.row_ptr[i + 1] = adj_.row_ptr[i] + degree[i];
  adj_.col.resize(adj_.row_ptr[nodes]);
  adj_.val.resize(adj_.row_ptr[nodes]);
  std::vector<int> fill(adj_.row_ptr.begin(), adj_.row_ptr.end() - 1);
  for (const auto& [a, b] : edges) {
    const double w = 1.0 / std::sqrt(static_cast<double>(degree[a]) * degree[b]);
    adj_.col[fill[a]] = b;
    adj_.val[fill[a]++] = w;
    adj_.col[fill[b]] = a;
    adj_.val[fill[b]++] = w;
  }
}

Matrix GraphOperator::scaled_laplacian(const Matrix& x) const {
  if (x.rows() != adj_.rows) throw data_error("graph operator: row count does not match nodes");
  Matrix out(x.rows(), x.cols());
  kernels::spmm(adj_, {x.data(), static_cast<std::size_t>(x.size())}, static_cast<int>(x.cols()),
                {out.data(), static_cast<std::size_t>(out.size())});
  return -out;
}

ChebConv::ChebConv(std::string name, int in, int out)
    : w0(name + ".w0", in, out), w1(name + ".w1", in, out), bias(name + ".bias", 1, out) {}

void ChebConv::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / (2.0 * in_features()));
  fill_uniform(w0.value, rng, bound);
  fill_uniform(w1.value, rng, bound);
  bias.value.setZero();
}

Matrix ChebConv::forward(const GraphOperator& op, const Matrix& x, Matrix* basis_out) const {
  if (x.cols() != in_features()) throw data_error("cheb_conv: feature width does not match weights");
  const Eigen::Index in = x.cols();
  // one GEMM over the stacked basis [T0 x | T1 x] and weights [W0; W1]
  Matrix basis(x.rows(), 2 * in);
  basis.leftCols(in) = x;
  basis.rightCols(in) = op.scaled_laplacian(x);
  Matrix y = basis * stacked_weights();
  y.rowwise() += bias.value.row(0);
  if (basis_out) *basis_out = std::move(basis);
  return y;
}

Matrix ChebConv::backward(const GraphOperator& op, const Matrix& basis, const Matrix& dy) {
  const Eigen::Index in = in_features();
  if (basis.cols() != 2 * in || dy.rows() != basis.rows() || dy.cols() != out_features())
    throw data_error("cheb_conv: gradient shape mismatch");
  const Matrix dw = basis.transpose() * dy;
  w0.grad += dw.topRows(in);
  w1.grad += dw.bottomRows(in);
  bias.grad.row(0) += dy.colwise().sum();
  const Matrix dbasis = dy * stacked_weights().transpose();
  // L~ is symmetric, so the adjoint of x -> L~ x is itself
  Matrix dx = dbasis.leftCols(in);
  dx += op.scaled_laplacian(dbasis.rightCols(in));
  return dx;
}

Matrix ChebConv::stacked_weights() const {
  const Eigen::Index in = in_features();
  Matrix w(2 * in, out_features());
  w.topRows(in) = w0.value;
  w.bottomRows(in) = w1.value;
  return w;
}

Matrix relu(const Matrix& x) { return x.cwiseMax(0.0); }

Matrix relu_backward(const Matrix& x, const Matrix& dy) {
  return (x.array() > 0.0).select(dy, Matrix::Zero(dy.rows(), dy.cols()));
}

RowVector mean_pool(const Matrix& x) { return x.colwise().mean(); }

Matrix mean_pool_backward(int rows, const RowVector& dy) {
  return (dy / static_cast<double>(rows)).replicate(rows, 1);
}

RowVector softmax(const RowVector& logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp();
  return e / e.sum();
}

LossGrad softmax_xent(const RowVector& logits, int label) {
  const auto classes = logits.size();
  if (classes < 2) throw data_error("softmax_xent needs at least two classes");
  if (label < 0 || label >= classes) throw data_error("softmax_xent: label out of range");
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  LossGrad out;
  out.loss = lse - logits[label];
  out.grad = (logits.array() - lse).exp();
  out.grad[label] -= 1.0;
  return out;
}

Adam::Adam(std::vector<Tensor*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const Tensor* p : params_) {
    m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::zero_grad() {
  for (Tensor* p : params_) p->zero_grad();
}

void Adam::step(double lr) {
  for (const Tensor* p : params_)
    if (!p->grad.allFinite()) throw numeric_error("non-finite gradient in " + p->name);
  ++step_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = *params_[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

void Schedule::validate() const {
  if (!(lr_min > 0.0) || !(lr_max >= lr_min)) throw config_error("schedule needs lr_max >= lr_min > 0");
  if (!(a > 0.0)) throw config_error("schedule decay constant must be positive");
  if (k_max <= 16) throw config_error("schedule needs more than 16 epochs");
}

double Schedule::lr_at(int k) const {
  if (k < 1 || k > k_max) throw config_error("epoch " + std::to_string(k) + " outside schedule");
  if (k <= 15) return lr_max * (static_cast<double>(k - 1) / 15.0) + lr_min;
  if (k == k_max) return 0.0;  // limit of the decay as the denominator vanishes
  return lr_max * std::exp(-a * static_cast<double>(k - 16) / static_cast<double>(k_max - k));
}

double gradient_check(Tensor& param, const std::function<double()>& loss, double h, double floor) {
  const Matrix analytic = param.grad;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < param.value.size(); ++i) {
    double& x = param.value.data()[i];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    const double fd = (up - down) / (2.0 * h);
    const double g = analytic.data()[i];
    const double rel = std::abs(g - fd) / std::max({std::abs(g), std::abs(fd), floor});
    worst = std::max(worst, rel);
  }
  return worst;
}

void save_weights(const std::filesystem::path& stem, const std::vector<const Tensor*>& tensors,
                  const std::string& meta_json) {
  nlohmann::json manifest;
  manifest["format"] = "rcd-weights";
  manifest["version"] = 1;
  manifest["dtype"] = "f64";
  manifest["byte_order"] = "little";
  manifest["meta"] = nlohmann::json::parse(meta_json);
  auto& list = manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  std::size_t offset = 0;
  for (const Tensor* t : tensors) {
    list.push_back({{"name", t->name},
                    {"shape", {t->value.rows(), t->value.cols()}},
                    {"offset", offset}});
    payload.append(reinterpret_cast<const char*>(t->value.data()),
                   static_cast<std::size_t>(t->value.size()) * sizeof(double));
    offset += static_cast<std::size_t>(t->value.size());
  }
  std::filesystem::path bin = stem, json = stem;
  bin += ".bin";
  json += ".json";
  io::write_atomic(bin, payload);
  io::write_atomic(json, manifest.dump(2) + "\n");
}

void load_weights(const std::filesystem::path& stem, const std::vector<Tensor*>& tensors) {
  std::filesystem::path bin = stem, json = stem;
  bin += ".bin";
  json += ".json";
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(json));
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed weight manifest " + json.string() + ": " + e.what());
  }
  const std::string payload = io::read_file(bin);
  const auto& list = manifest.at("tensors");
  if (list.size() != tensors.size()) throw data_error("weight manifest tensor count mismatch");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    Tensor& t = *tensors[i];
    const auto& e = list[i];
    if (e.at("name").get<std::string>() != t.name) throw data_error("weight name mismatch: " + t.name);
    const auto shape = e.at("shape").get<std::array<Eigen::Index, 2>>();
    if (shape[0] != t.value.rows() || shape[1] != t.value.cols())
      throw data_error("weight shape mismatch: " + t.name);
    const auto offset = e.at("offset").get<std::size_t>();
    const std::size_t bytes = static_cast<std::size_t>(t.value.size()) * sizeof(double);
    if ((offset * sizeof(double)) + bytes > payload.size()) throw data_error("weight payload truncated");
    std::memcpy(t.value.data(), payload.data() + offset * sizeof(double), bytes);
  }
}

}  // namespace rcd::neuro
