#include <doctest.h>

#include <cmath>
#include <cstring>

#include "rcd/ensemble.hpp"
#include "rcd/error.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace rcd;
using ensemble::LabelMode;
using neuro::Matrix;

namespace {

// Positives carry a larger volume feature and higher node curvature.
ensemble::ShapeDataset toy_dataset(int n, std::uint64_t seed) {
  neuro::Rng rng(seed);
  std::vector<ensemble::ShapeRecord> recs;
  for (int i = 0; i < n; ++i) {
    const bool pos = i % 2 == 1;
    ensemble::ShapeRecord r;
    r.kidney_id = "k" + std::to_string(i);
    r.patient_id = "p" + std::to_string(i / 2);
    for (int f = 0; f < 8; ++f) r.features[f] = rng.normal() + (pos && f == 0 ? 3.0 : 0.0);
    r.features[8 + (pos ? 7 : 4)] = 1.0;
    r.features[18 + 5] = 1.0;
    const int nodes = 12 + static_cast<int>(rng.below(10));
    r.graph.edges = test::random_graph(nodes, nodes, rng);
    for (int v = 0; v < nodes; ++v)
      r.graph.nodes.push_back({rng.normal(), rng.normal(), rng.normal(), rng.normal() * 0.05 + (pos ? 0.2 : 0.0)});
    r.lesion_volume = pos ? 30000.0 : 0.0;
    recs.push_back(std::move(r));
  }
  return ensemble::ShapeDataset(std::move(recs));
}

std::vector<int> all_of(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_SUITE("ensemble") {

TEST_CASE("label thresholds") {
  const double volumes[] = {0, 400, 600, 20000, 25000};
  const int gnn[] = {0, 0, 1, 1, 1};
  const int mlp[] = {0, 0, 0, 0, 1};
  for (int i = 0; i < 5; ++i) {
    CHECK(ensemble::assign_labels(volumes[i], LabelMode::gnn) == gnn[i]);
    CHECK(ensemble::assign_labels(volumes[i], LabelMode::mlp) == mlp[i]);
    CHECK(ensemble::assign_labels(volumes[i], LabelMode::ensemble) == gnn[i]);
  }
  CHECK(ensemble::assign_labels(500.0, LabelMode::gnn) == 0);
}

TEST_CASE("labels are monotone and gnn positives contain mlp positives") {
  neuro::Rng rng(1);
  for (int t = 0; t < 500; ++t) {
    const double a = rng.uniform(0, 40000), b = a + rng.uniform(0, 5000);
    for (auto m : {LabelMode::gnn, LabelMode::mlp, LabelMode::ensemble})
      CHECK(ensemble::assign_labels(a, m) <= ensemble::assign_labels(b, m));
    CHECK(ensemble::assign_labels(a, LabelMode::mlp) <= ensemble::assign_labels(a, LabelMode::gnn));
  }
}

TEST_CASE("body gradients match finite differences") {
  neuro::Rng rng(4);
  const auto ds = toy_dataset(4, 9);

  ensemble::GnnModel g;
  g.init(rng);
  const auto& op = ds.operators[0];
  const Matrix x = g.standardize(ds.records[0].graph);
  const neuro::RowVector r = test::random_matrix(1, ensemble::GnnModel::kLatent, rng);
  auto gloss = [&] { return g.body(op, x).dot(r); };
  for (auto* t : g.body_params()) t->zero_grad();
  ensemble::GnnModel::Cache gc;
  g.body(op, x, &gc);
  g.body_backward(op, gc, r);
  for (auto* t : g.body_params()) CHECK(neuro::gradient_check(*t, gloss) <= 1e-4);

  ensemble::MlpModel m;
  m.init(rng);
  const Matrix fx = test::random_matrix(3, kFeatureCount, rng);
  const Matrix fr = test::random_matrix(3, ensemble::MlpModel::kHidden2, rng);
  auto mloss = [&] { return oracle::weighted_sum(m.body(fx), fr); };
  for (auto* t : m.body_params()) t->zero_grad();
  ensemble::MlpModel::Cache mc;
  m.body(fx, &mc);
  m.body_backward(mc, fr);
  for (auto* t : m.body_params()) CHECK(neuro::gradient_check(*t, mloss) <= 1e-4);
}

TEST_CASE("pooled GNN output is invariant under node relabelling") {
  neuro::Rng rng(5);
  ensemble::GnnModel g;
  g.init(rng);
  for (int t = 0; t < 10; ++t) {
    const int n = 8 + static_cast<int>(rng.below(30));
    const auto edges = test::random_graph(n, n, rng);
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<Edge> pe;
    for (auto [a, b] : edges) pe.push_back({std::min(perm[a], perm[b]), std::max(perm[a], perm[b])});
    const Matrix x = test::random_matrix(n, 4, rng);
    Matrix px(n, 4);
    for (int i = 0; i < n; ++i) px.row(perm[i]) = x.row(i);
    const auto a = g.body(neuro::GraphOperator(n, edges), x);
    const auto b = g.body(neuro::GraphOperator(n, pe), px);
    CHECK((a - b).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("training loss falls on separable data and reproduces bitwise") {
  const auto ds = toy_dataset(32, 3);
  const ensemble::TrainOptions opts{10, 1e-2, 8, 1, {}};
  ensemble::TrainHistory h1, h2;
  ensemble::train_mlp(ds, all_of(32), LabelMode::gnn, opts, {}, &h1);
  ensemble::train_mlp(ds, all_of(32), LabelMode::gnn, opts, {}, &h2);
  REQUIRE(h1.epoch_loss.size() == 10);
  CHECK(h1.epoch_loss.back() < h1.epoch_loss.front());
  CHECK(std::memcmp(h1.epoch_loss.data(), h2.epoch_loss.data(), 10 * sizeof(double)) == 0);

  ensemble::TrainHistory g1;
  ensemble::train_gnn(ds, all_of(32), LabelMode::gnn, {10, 1e-2, 8, 2, {}}, {}, &g1);
  CHECK(g1.epoch_loss.back() < g1.epoch_loss.front());
}

TEST_CASE("a scheduled run follows the schedule, not the constant rate") {
  const auto ds = toy_dataset(16, 3);
  ensemble::TrainHistory a, b;
  ensemble::train_mlp(ds, all_of(16), LabelMode::gnn, {20, 1e-2, 8, 1, {}}, {}, &a);
  ensemble::train_mlp(ds, all_of(16), LabelMode::gnn, {20, 1e-2, 8, 1, neuro::Schedule{1e-4, 4e-3, 4.0, 20}}, {},
                      &b);
  CHECK(a.epoch_loss[5] != b.epoch_loss[5]);
}

TEST_CASE("single-class training fold is refused") {
  const auto ds = toy_dataset(10, 3);
  const std::vector<int> negatives{0, 2, 4, 6, 8};
  CHECK_THROWS_AS(ensemble::train_mlp(ds, negatives, LabelMode::gnn, {1, 1e-2, 8, 1, {}}), Error);
  CHECK_THROWS_AS(ensemble::train_gnn(ds, negatives, LabelMode::gnn, {1, 1e-3, 8, 2, {}}), Error);
}

TEST_CASE("stage A leaves both bodies bitwise unchanged") {
  const auto ds = toy_dataset(24, 5);
  const auto tr = all_of(24);
  const auto mlp = ensemble::train_mlp(ds, tr, LabelMode::mlp, {3, 1e-2, 8, 1, {}});
  const auto gnn = ensemble::train_gnn(ds, tr, LabelMode::gnn, {3, 1e-3, 8, 2, {}});
  std::vector<Matrix> before;
  {
    ensemble::EnsembleModel e(mlp, gnn);
    for (auto* t : e.body_params()) before.push_back(t->value);
  }
  std::vector<Matrix> after_a;
  ensemble::TrainHistory ha, hb;
  auto e = ensemble::train_ensemble(mlp, gnn, ds, tr, {4, 2, 1e-3, 8, 3}, {}, &ha, &hb, &after_a);
  REQUIRE(after_a.size() == before.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bitwise_equal(before[i], after_a[i]));
  CHECK(ha.epoch_loss.size() == 4);
  CHECK(hb.epoch_loss.size() == 2);
  // stage B trains everything
  bool moved = false;
  auto body = e.body_params();
  for (std::size_t i = 0; i < before.size(); ++i) moved = moved || !bitwise_equal(before[i], body[i]->value);
  CHECK(moved);
}

TEST_CASE("parameter count is bodies plus projections plus shared head") {
  ensemble::EnsembleModel e;
  const std::size_t mlp_body = (28 * 64 + 64) + (64 * 32 + 32);
  const std::size_t gnn_body = (2 * 4 * 25 + 25) + 4 * (2 * 25 * 25 + 25);
  const std::size_t proj = (32 * 25 + 25) + (25 * 25 + 25);
  const std::size_t head = 25 * 2 + 2;
  CHECK(e.parameter_count() == mlp_body + gnn_body + proj + head);
}

TEST_CASE("inference sums the fold probabilities") {
  const auto ds = toy_dataset(20, 6);
  std::vector<int> fold_of(20);
  for (int i = 0; i < 20; ++i) fold_of[i] = (i / 2) % 5;
  ensemble::ShapeTrainingPlan plan;
  plan.mlp.epochs = 2;
  plan.gnn.epochs = 2;
  plan.ensemble.frozen_epochs = 2;
  plan.ensemble.joint_epochs = 1;
  plan.thresholds.mlp = 2000;
  auto cv = ensemble::cross_validate(ds, fold_of, plan);
  REQUIRE(cv.ensemble.size() == 5);
  CHECK(cv.oof_ensemble.size() == 20);
  double manual = 0;
  for (auto& m : cv.ensemble) manual += ensemble::predict(m, ds, 3);
  CHECK(ensemble::infer(cv.ensemble, ds, 3) == doctest::Approx(manual).epsilon(1e-15));
  const double s = ensemble::infer(cv.ensemble, ds, 3);
  CHECK(s >= 0.0);
  CHECK(s <= 5.0);
  // out-of-fold score comes from the model that did not see the record
  CHECK(cv.oof_ensemble[3] == ensemble::predict(cv.ensemble[fold_of[3]], ds, 3));

  auto four = cv.ensemble;
  four.pop_back();
  CHECK_THROWS_AS(ensemble::infer(four, ds, 3), Error);

  // cross-validation is reproducible
  auto again = ensemble::cross_validate(ds, fold_of, plan);
  CHECK(again.oof_ensemble == cv.oof_ensemble);
  CHECK(again.oof_gnn == cv.oof_gnn);
}

TEST_CASE("model files round-trip") {
  test::TempDir dir("ens");
  const auto ds = toy_dataset(12, 8);
  const auto tr = all_of(12);
  const auto mlp = ensemble::train_mlp(ds, tr, LabelMode::gnn, {1, 1e-2, 8, 1, {}});
  const auto gnn = ensemble::train_gnn(ds, tr, LabelMode::gnn, {1, 1e-3, 8, 2, {}});
  auto e = ensemble::train_ensemble(mlp, gnn, ds, tr, {1, 1, 1e-3, 8, 3});
  ensemble::save_model(dir.path() / "m", e);
  ensemble::EnsembleModel back;
  ensemble::load_model(dir.path() / "m", back);
  for (int i = 0; i < ds.size(); ++i) CHECK(ensemble::predict(back, ds, i) == ensemble::predict(e, ds, i));
}

}
