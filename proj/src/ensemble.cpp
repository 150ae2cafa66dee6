#include "rcd/ensemble.hpp"

#include <cmath>
#include <exception>

#include <json.hpp>

#include "rcd/error.hpp"

namespace rcd::ensemble {

using neuro::Dense;
using neuro::Rng;
using neuro::Tensor;

const char* to_string(LabelMode mode) {
  switch (mode) {
    case LabelMode::gnn: return "gnn";
    case LabelMode::mlp: return "mlp";
    case LabelMode::ensemble: return "ensemble";
  }
  return "?";
}

int assign_labels(double lesion_volume, LabelMode mode, const LabelThresholds& t) {
  const double threshold = mode == LabelMode::mlp ? t.mlp : mode == LabelMode::gnn ? t.gnn : t.ensemble;
  return lesion_volume > threshold ? 1 : 0;
}

ShapeDataset::ShapeDataset(std::vector<ShapeRecord> recs) : records(std::move(recs)) {
  operators.reserve(records.size());
  for (const auto& r : records) operators.emplace_back(r.graph);
}

namespace {

void append(std::vector<Tensor*>& out, Dense& d) {
  out.push_back(&d.weight);
  out.push_back(&d.bias);
}

void scale_grads(const std::vector<Tensor*>& params, double s) {
  for (Tensor* p : params) p->grad *= s;
}

RowVector row_of(const Matrix& m) { return m.row(0); }

std::vector<int> labels_for(const ShapeDataset& ds, LabelMode mode, const LabelThresholds& t) {
  std::vector<int> y(ds.records.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = assign_labels(ds.records[i].lesion_volume, mode, t);
  return y;
}

void require_both_classes(const std::vector<int>& y, const std::vector<int>& train, const char* what) {
  int pos = 0;
  for (int i : train) pos += y[i];
  if (pos == 0 || pos == static_cast<int>(train.size()))
    throw data_error(std::string(what) + ": training fold contains a single class (" +
                     std::to_string(pos) + " positive of " + std::to_string(train.size()) + ")");
}

// Shuffled mini-batch loop shared by every training stage. `sample_loss`
// runs forward + backward for one record, accumulating grads, and returns
// its loss.
template <class SampleLoss>
void run_epochs(const std::vector<int>& train, int epochs, double base_lr,
                const std::optional<neuro::Schedule>& schedule, int batch_size, std::uint64_t seed,
                const std::vector<Tensor*>& params, SampleLoss&& sample_loss, TrainHistory* hist) {
  if (batch_size < 1) throw config_error("batch size must be >= 1");
  if (epochs < 0) throw config_error("epoch count must be non-negative");
  if (schedule) schedule->validate();
  neuro::Adam adam(params);
  Rng rng(seed);
  std::vector<int> order = train;
  for (int e = 0; e < epochs; ++e) {
    const double lr = schedule ? schedule->lr_at(e + 1) : base_lr;
    rng.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t stop = std::min(order.size(), start + batch_size);
      adam.zero_grad();
      for (std::size_t k = start; k < stop; ++k) total += sample_loss(order[k]);
      scale_grads(params, 1.0 / static_cast<double>(stop - start));
      adam.step(lr);
    }
    if (hist) hist->epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
}

}  // namespace

// ---------------------------------------------------------------- MLP

MlpModel::MlpModel()
    : l1("mlp.l1", kFeatureCount, kHidden1),
      l2("mlp.l2", kHidden1, kHidden2),
      head("mlp.head", kHidden2, 2),
      input_shift("mlp.input_shift", 1, kFeatureCount),
      input_scale("mlp.input_scale", 1, kFeatureCount) {
  input_scale.value.setOnes();
}

void MlpModel::init(Rng& rng) {
  l1.init(rng);
  l2.init(rng);
  head.init(rng);
}

void MlpModel::fit_standardizer(const std::vector<const FeatureVector28*>& rows) {
  input_shift.value.setZero();
  input_scale.value.setOnes();
  if (rows.empty()) return;
  const double n = static_cast<double>(rows.size());
  for (int c = 0; c < kShapeScalarCount; ++c) {
    double mean = 0.0;
    for (const auto* r : rows) mean += (*r)[c];
    mean /= n;
    double var = 0.0;
    for (const auto* r : rows) var += ((*r)[c] - mean) * ((*r)[c] - mean);
    const double sd = std::sqrt(var / n);
    input_shift.value(0, c) = mean;
    input_scale.value(0, c) = sd > 1e-12 ? sd : 1.0;
  }
}

RowVector MlpModel::standardize(const FeatureVector28& f) const {
  RowVector x(kFeatureCount);
  for (int c = 0; c < kFeatureCount; ++c) x[c] = (f[c] - input_shift.value(0, c)) / input_scale.value(0, c);
  return x;
}

Matrix MlpModel::body(const Matrix& x, Cache* cache) const {
  Matrix z1 = l1.forward(x);
  Matrix h1 = neuro::relu(z1);
  Matrix z2 = l2.forward(h1);
  Matrix h2 = neuro::relu(z2);
  if (cache) *cache = {x, std::move(z1), std::move(h1), std::move(z2), h2};
  return h2;
}

void MlpModel::body_backward(const Cache& c, const Matrix& dh2) {
  const Matrix dh1 = l2.backward(c.h1, neuro::relu_backward(c.z2, dh2));
  l1.backward(c.x, neuro::relu_backward(c.z1, dh1));
}

std::vector<Tensor*> MlpModel::body_params() {
  std::vector<Tensor*> p;
  append(p, l1);
  append(p, l2);
  return p;
}

std::vector<Tensor*> MlpModel::head_params() {
  std::vector<Tensor*> p;
  append(p, head);
  return p;
}

std::vector<Tensor*> MlpModel::all_tensors() {
  auto p = body_params();
  append(p, head);
  p.push_back(&input_shift);
  p.push_back(&input_scale);
  return p;
}

// ---------------------------------------------------------------- GNN

GnnModel::GnnModel()
    : head("gnn.head", kLatent, 2),
      input_shift("gnn.input_shift", 1, kNodeFeatures),
      input_scale("gnn.input_scale", 1, kNodeFeatures) {
  for (int l = 0; l < kLayers; ++l)
    convs.emplace_back("gnn.conv" + std::to_string(l), l == 0 ? kNodeFeatures : kLatent, kLatent);
  input_scale.value.setOnes();
}

void GnnModel::init(Rng& rng) {
  for (auto& c : convs) c.init(rng);
  head.init(rng);
}

void GnnModel::fit_standardizer(const std::vector<const KidneyGraph*>& graphs) {
  input_shift.value.setZero();
  input_scale.value.setOnes();
  double n = 0.0;
  std::array<double, kNodeFeatures> sum{}, sq{};
  for (const auto* g : graphs)
    for (const auto& node : g->nodes) {
      n += 1.0;
      for (int c = 0; c < kNodeFeatures; ++c) sum[c] += node[c];
    }
  if (n == 0.0) return;
  for (int c = 0; c < kNodeFeatures; ++c) sum[c] /= n;
  for (const auto* g : graphs)
    for (const auto& node : g->nodes)
      for (int c = 0; c < kNodeFeatures; ++c) sq[c] += (node[c] - sum[c]) * (node[c] - sum[c]);
  for (int c = 0; c < kNodeFeatures; ++c) {
    const double sd = std::sqrt(sq[c] / n);
    input_shift.value(0, c) = sum[c];
    input_scale.value(0, c) = sd > 1e-12 ? sd : 1.0;
  }
}

Matrix GnnModel::standardize(const KidneyGraph& g) const {
  Matrix x(g.node_count(), kNodeFeatures);
  for (int i = 0; i < g.node_count(); ++i)
    for (int c = 0; c < kNodeFeatures; ++c)
      x(i, c) = (g.nodes[i][c] - input_shift.value(0, c)) / input_scale.value(0, c);
  return x;
}

RowVector GnnModel::body(const neuro::GraphOperator& op, const Matrix& x, Cache* cache) const {
  if (op.nodes() == 0) throw data_error("graph has no nodes");
  if (cache) {
    cache->basis.resize(kLayers);
    cache->z.resize(kLayers);
  }
  Matrix h = x;
  for (int l = 0; l < kLayers; ++l) {
    Matrix z = convs[l].forward(op, h, cache ? &cache->basis[l] : nullptr);
    h = l + 1 < kLayers ? neuro::relu(z) : z;
    if (cache) cache->z[l] = std::move(z);
  }
  return neuro::mean_pool(h);
}

void GnnModel::body_backward(const neuro::GraphOperator& op, const Cache& c, const RowVector& dpooled) {
  Matrix dz = neuro::mean_pool_backward(op.nodes(), dpooled);
  for (int l = kLayers - 1; l >= 0; --l) {
    Matrix dh = convs[l].backward(op, c.basis[l], dz);
    if (l > 0) dz = neuro::relu_backward(c.z[l - 1], dh);
  }
}

std::vector<Tensor*> GnnModel::body_params() {
  std::vector<Tensor*> p;
  for (auto& c : convs) {
    p.push_back(&c.w0);
    p.push_back(&c.w1);
    p.push_back(&c.bias);
  }
  return p;
}

std::vector<Tensor*> GnnModel::head_params() {
  std::vector<Tensor*> p;
  append(p, head);
  return p;
}

std::vector<Tensor*> GnnModel::all_tensors() {
  auto p = body_params();
  append(p, head);
  p.push_back(&input_shift);
  p.push_back(&input_scale);
  return p;
}

// ---------------------------------------------------------------- ensemble

EnsembleModel::EnsembleModel()
    : proj_mlp("ens.proj_mlp", MlpModel::kHidden2, kSharedLatent),
      proj_gnn("ens.proj_gnn", GnnModel::kLatent, kSharedLatent),
      classifier("ens.classifier", kSharedLatent, 2) {}

EnsembleModel::EnsembleModel(const MlpModel& m, const GnnModel& g) : EnsembleModel() {
  mlp = m;
  gnn = g;
}

void EnsembleModel::init_shared(Rng& rng) {
  proj_mlp.init(rng);
  proj_gnn.init(rng);
  classifier.init(rng);
}

std::vector<Tensor*> EnsembleModel::body_params() {
  auto p = mlp.body_params();
  for (Tensor* t : gnn.body_params()) p.push_back(t);
  return p;
}

std::vector<Tensor*> EnsembleModel::shared_params() {
  std::vector<Tensor*> p;
  append(p, proj_mlp);
  append(p, proj_gnn);
  append(p, classifier);
  return p;
}

std::vector<Tensor*> EnsembleModel::all_params() {
  auto p = body_params();
  for (Tensor* t : shared_params()) p.push_back(t);
  return p;
}

std::vector<Tensor*> EnsembleModel::all_tensors() {
  auto p = all_params();
  p.push_back(&mlp.input_shift);
  p.push_back(&mlp.input_scale);
  p.push_back(&gnn.input_shift);
  p.push_back(&gnn.input_scale);
  return p;
}

std::size_t EnsembleModel::parameter_count() {
  std::size_t n = 0;
  for (Tensor* t : all_params()) n += static_cast<std::size_t>(t->size());
  return n;
}

namespace {

RowVector fuse(const EnsembleModel& m, const Matrix& h_mlp, const RowVector& pooled) {
  RowVector z = row_of(m.proj_mlp.forward(h_mlp));
  z += row_of(m.proj_gnn.forward(pooled));
  return row_of(m.classifier.forward(z));
}

double positive_probability(const RowVector& logits) { return neuro::softmax(logits)[1]; }

}  // namespace

double predict(const MlpModel& m, const ShapeDataset& ds, int idx) {
  const Matrix x = m.standardize(ds.records[idx].features);
  return positive_probability(row_of(m.head.forward(m.body(x))));
}

double predict(const GnnModel& m, const ShapeDataset& ds, int idx) {
  const RowVector pooled = m.body(ds.operators[idx], m.standardize(ds.records[idx].graph));
  return positive_probability(row_of(m.head.forward(pooled)));
}

double predict(const EnsembleModel& m, const ShapeDataset& ds, int idx) {
  const Matrix h = m.mlp.body(m.mlp.standardize(ds.records[idx].features));
  const RowVector pooled = m.gnn.body(ds.operators[idx], m.gnn.standardize(ds.records[idx].graph));
  return positive_probability(fuse(m, h, pooled));
}

// ---------------------------------------------------------------- training

MlpModel train_mlp(const ShapeDataset& ds, const std::vector<int>& train, LabelMode mode,
                   const TrainOptions& opts, const LabelThresholds& t, TrainHistory* hist) {
  const auto y = labels_for(ds, mode, t);
  require_both_classes(y, train, "mlp");
  MlpModel m;
  Rng rng(opts.seed);
  m.init(rng);
  std::vector<const FeatureVector28*> rows;
  for (int i : train) rows.push_back(&ds.records[i].features);
  m.fit_standardizer(rows);

  std::vector<Matrix> inputs(ds.records.size());
  for (int i : train) inputs[i] = m.standardize(ds.records[i].features);

  auto params = m.body_params();
  for (Tensor* p : m.head_params()) params.push_back(p);
  MlpModel::Cache cache;
  run_epochs(train, opts.epochs, opts.lr, opts.schedule, opts.batch_size, opts.seed ^ 0x5bd1e995u, params,
             [&](int i) {
               const Matrix h = m.body(inputs[i], &cache);
               const auto lg = neuro::softmax_xent(row_of(m.head.forward(h)), y[i]);
               m.body_backward(cache, m.head.backward(h, lg.grad));
               return lg.loss;
             },
             hist);
  return m;
}

GnnModel train_gnn(const ShapeDataset& ds, const std::vector<int>& train, LabelMode mode,
                   const TrainOptions& opts, const LabelThresholds& t, TrainHistory* hist) {
  const auto y = labels_for(ds, mode, t);
  require_both_classes(y, train, "gnn");
  GnnModel m;
  Rng rng(opts.seed);
  m.init(rng);
  std::vector<const KidneyGraph*> graphs;
  for (int i : train) graphs.push_back(&ds.records[i].graph);
  m.fit_standardizer(graphs);

  std::vector<Matrix> inputs(ds.records.size());
  for (int i : train) inputs[i] = m.standardize(ds.records[i].graph);

  auto params = m.body_params();
  for (Tensor* p : m.head_params()) params.push_back(p);
  GnnModel::Cache cache;
  run_epochs(train, opts.epochs, opts.lr, opts.schedule, opts.batch_size, opts.seed ^ 0x5bd1e995u, params,
             [&](int i) {
               const RowVector pooled = m.body(ds.operators[i], inputs[i], &cache);
               const auto lg = neuro::softmax_xent(row_of(m.head.forward(pooled)), y[i]);
               m.body_backward(ds.operators[i], cache, row_of(m.head.backward(pooled, lg.grad)));
               return lg.loss;
             },
             hist);
  return m;
}

EnsembleModel train_ensemble(const MlpModel& mlp, const GnnModel& gnn, const ShapeDataset& ds,
                             const std::vector<int>& train, const StagedOptions& opts,
                             const LabelThresholds& t, TrainHistory* stage_a, TrainHistory* stage_b,
                             std::vector<Matrix>* body_after_stage_a) {
  const auto y = labels_for(ds, LabelMode::ensemble, t);
  require_both_classes(y, train, "ensemble");
  EnsembleModel m(mlp, gnn);
  Rng rng(opts.seed);
  m.init_shared(rng);

  std::vector<Matrix> x_mlp(ds.records.size()), x_gnn(ds.records.size());
  for (int i : train) {
    x_mlp[i] = m.mlp.standardize(ds.records[i].features);
    x_gnn[i] = m.gnn.standardize(ds.records[i].graph);
  }

  // Stage A: the bodies are frozen, so their outputs are computed once.
  std::vector<Matrix> h_mlp(ds.records.size());
  std::vector<RowVector> pooled(ds.records.size());
  for (int i : train) {
    h_mlp[i] = m.mlp.body(x_mlp[i]);
    pooled[i] = m.gnn.body(ds.operators[i], x_gnn[i]);
  }
  auto shared = m.shared_params();
  run_epochs(train, opts.frozen_epochs, opts.lr, std::nullopt, opts.batch_size, opts.seed ^ 0xa5a5a5a5u, shared,
             [&](int i) {
               const Matrix pm = m.proj_mlp.forward(h_mlp[i]);
               const Matrix pg = m.proj_gnn.forward(pooled[i]);
               const Matrix z = pm + pg;
               const auto lg = neuro::softmax_xent(row_of(m.classifier.forward(z)), y[i]);
               const Matrix dz = m.classifier.backward(z, lg.grad);
               m.proj_mlp.backward(h_mlp[i], dz);
               m.proj_gnn.backward(pooled[i], dz);
               return lg.loss;
             },
             stage_a);
  if (body_after_stage_a) {
    body_after_stage_a->clear();
    for (Tensor* p : m.body_params()) body_after_stage_a->push_back(p->value);
  }

  // Stage B: everything trainable.
  auto all = m.all_params();
  MlpModel::Cache mc;
  GnnModel::Cache gc;
  run_epochs(train, opts.joint_epochs, opts.lr, std::nullopt, opts.batch_size, opts.seed ^ 0x3c3c3c3cu, all,
             [&](int i) {
               const Matrix h = m.mlp.body(x_mlp[i], &mc);
               const RowVector p = m.gnn.body(ds.operators[i], x_gnn[i], &gc);
               const Matrix z = m.proj_mlp.forward(h) + m.proj_gnn.forward(p);
               const auto lg = neuro::softmax_xent(row_of(m.classifier.forward(z)), y[i]);
               const Matrix dz = m.classifier.backward(z, lg.grad);
               m.mlp.body_backward(mc, m.proj_mlp.backward(h, dz));
               m.gnn.body_backward(ds.operators[i], gc, row_of(m.proj_gnn.backward(p, dz)));
               return lg.loss;
             },
             stage_b);
  return m;
}

std::vector<FoldSplit> splits_from(const std::vector<int>& fold_of, int k) {
  std::vector<FoldSplit> s(static_cast<std::size_t>(k));
  for (int i = 0; i < static_cast<int>(fold_of.size()); ++i) {
    if (fold_of[i] < 0 || fold_of[i] >= k) throw data_error("fold index out of range");
    for (int f = 0; f < k; ++f) (f == fold_of[i] ? s[f].held_out : s[f].train).push_back(i);
  }
  return s;
}

CrossValidation cross_validate(const ShapeDataset& ds, const std::vector<int>& fold_of,
                               const ShapeTrainingPlan& plan) {
  if (static_cast<int>(fold_of.size()) != ds.size()) throw data_error("fold assignment size mismatch");
  const auto splits = splits_from(fold_of, plan.folds);
  CrossValidation cv;
  cv.mlp.resize(plan.folds);
  cv.gnn.resize(plan.folds);
  cv.ensemble.resize(plan.folds);
  cv.oof_mlp.assign(ds.size(), 0.0);
  cv.oof_gnn.assign(ds.size(), 0.0);
  cv.oof_ensemble.assign(ds.size(), 0.0);

  std::vector<std::exception_ptr> errors(plan.folds);
#pragma omp parallel for schedule(dynamic, 1)
  for (int f = 0; f < plan.folds; ++f) {
    try {
      const auto& sp = splits[f];
      TrainOptions mo = plan.mlp, go = plan.gnn;
      StagedOptions eo = plan.ensemble;
      // per-fold seeds, so folds are independent of scheduling order
      mo.seed += 1000u * f;
      go.seed += 1000u * f;
      eo.seed += 1000u * f;
      cv.mlp[f] = train_mlp(ds, sp.train, LabelMode::mlp, mo, plan.thresholds);
      cv.gnn[f] = train_gnn(ds, sp.train, LabelMode::gnn, go, plan.thresholds);
      cv.ensemble[f] = train_ensemble(cv.mlp[f], cv.gnn[f], ds, sp.train, eo, plan.thresholds);
      for (int i : sp.held_out) {
        cv.oof_mlp[i] = predict(cv.mlp[f], ds, i);
        cv.oof_gnn[i] = predict(cv.gnn[f], ds, i);
        cv.oof_ensemble[i] = predict(cv.ensemble[f], ds, i);
      }
    } catch (...) {
      errors[f] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return cv;
}

double infer(std::vector<EnsembleModel>& folds, const ShapeDataset& ds, int idx, int expected_folds) {
  if (static_cast<int>(folds.size()) != expected_folds)
    throw data_error("inference needs " + std::to_string(expected_folds) + " fold models, got " +
                     std::to_string(folds.size()));
  double sum = 0.0;
  for (const auto& m : folds) sum += predict(m, ds, idx);
  return sum;
}

void save_model(const std::filesystem::path& stem, EnsembleModel& m, const std::string& meta) {
  std::vector<const Tensor*> ts;
  for (Tensor* t : m.all_tensors()) ts.push_back(t);
  neuro::save_weights(stem, ts, meta);
}

void load_model(const std::filesystem::path& stem, EnsembleModel& m) { neuro::load_weights(stem, m.all_tensors()); }

}  // namespace rcd::ensemble
