#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rcd/features.hpp"
#include "rcd/mesher.hpp"
#include "rcd/neuro.hpp"

namespace rcd::ensemble {

using neuro::Matrix;
using neuro::RowVector;

enum class LabelMode { gnn, mlp, ensemble };
const char* to_string(LabelMode mode);

/// Lesion-volume thresholds (mm^3): a kidney is positive when its largest
/// tumour-or-cyst exceeds the threshold for the model being trained.
struct LabelThresholds {
  double gnn = 500.0;
  double mlp = 20000.0;
  double ensemble = 500.0;
};

int assign_labels(double lesion_volume_mm3, LabelMode mode, const LabelThresholds& t = {});

struct ShapeRecord {
  std::string kidney_id;
  std::string patient_id;
  FeatureVector28 features{};
  KidneyGraph graph;
  double lesion_volume = 0.0;  // mm^3, largest tumour or cyst inside the contour
};

/// Records plus their (fold-independent) graph operators.
struct ShapeDataset {
  std::vector<ShapeRecord> records;
  std::vector<neuro::GraphOperator> operators;

  explicit ShapeDataset(std::vector<ShapeRecord> recs);
  int size() const { return static_cast<int>(records.size()); }
};

/// 28 -> 64 -> 32 -> head. The head is the 2-class output when trained
/// alone; the ensemble replaces it with its own projection.
class MlpModel {
 public:
  static constexpr int kHidden1 = 64;
  static constexpr int kHidden2 = 32;

  MlpModel();
  void init(neuro::Rng& rng);
  /// z-score the 8 shape scalars with statistics from `rows`.
  void fit_standardizer(const std::vector<const FeatureVector28*>& rows);
  RowVector standardize(const FeatureVector28& f) const;

  struct Cache {
    Matrix x, z1, h1, z2, h2;
  };
  Matrix body(const Matrix& x, Cache* cache = nullptr) const;
  void body_backward(const Cache& cache, const Matrix& dh2);

  std::vector<neuro::Tensor*> body_params();
  std::vector<neuro::Tensor*> head_params();
  std::vector<neuro::Tensor*> all_tensors();  // params plus standardizer

  neuro::Dense l1, l2, head;
  neuro::Tensor input_shift, input_scale;  // not trained
};

/// Five order-2 Chebyshev layers 4 -> 25 x5 with rectifiers between them,
/// mean pooling over nodes, then a linear head.
class GnnModel {
 public:
  static constexpr int kLayers = 5;
  static constexpr int kLatent = 25;
  static constexpr int kNodeFeatures = 4;

  GnnModel();
  void init(neuro::Rng& rng);
  void fit_standardizer(const std::vector<const KidneyGraph*>& graphs);
  Matrix standardize(const KidneyGraph& g) const;

  struct Cache {
    std::vector<Matrix> basis;  // [h | L~ h] per layer
    std::vector<Matrix> z;      // pre-activations
  };
  RowVector body(const neuro::GraphOperator& op, const Matrix& x, Cache* cache = nullptr) const;
  void body_backward(const neuro::GraphOperator& op, const Cache& cache, const RowVector& dpooled);

  std::vector<neuro::Tensor*> body_params();
  std::vector<neuro::Tensor*> head_params();
  std::vector<neuro::Tensor*> all_tensors();

  std::vector<neuro::ChebConv> convs;
  neuro::Dense head;
  neuro::Tensor input_shift, input_scale;
};

/// Both bodies projected into a shared 25-wide latent space, summed, and
/// classified by one shared linear layer.
class EnsembleModel {
 public:
  static constexpr int kSharedLatent = 25;

  EnsembleModel();
  EnsembleModel(const MlpModel& mlp, const GnnModel& gnn);
  void init_shared(neuro::Rng& rng);

  std::vector<neuro::Tensor*> body_params();
  std::vector<neuro::Tensor*> shared_params();
  std::vector<neuro::Tensor*> all_params();
  std::vector<neuro::Tensor*> all_tensors();
  std::size_t parameter_count();

  MlpModel mlp;
  GnnModel gnn;
  neuro::Dense proj_mlp, proj_gnn, classifier;
};

/// Positive-class probability of one record.
double predict(const MlpModel& m, const ShapeDataset& ds, int idx);
double predict(const GnnModel& m, const ShapeDataset& ds, int idx);
double predict(const EnsembleModel& m, const ShapeDataset& ds, int idx);

struct TrainOptions {
  int epochs = 100;
  double lr = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
  /// When set, epoch k (1-based) uses schedule->lr_at(k) instead of `lr`.
  std::optional<neuro::Schedule> schedule;
};

struct StagedOptions {
  int frozen_epochs = 30;
  int joint_epochs = 2;
  double lr = 1e-3;
  int batch_size = 8;
  std::uint64_t seed = 0;
};

struct TrainHistory {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

MlpModel train_mlp(const ShapeDataset& ds, const std::vector<int>& train, LabelMode mode,
                   const TrainOptions& opts, const LabelThresholds& t = {}, TrainHistory* hist = nullptr);
GnnModel train_gnn(const ShapeDataset& ds, const std::vector<int>& train, LabelMode mode,
                   const TrainOptions& opts, const LabelThresholds& t = {}, TrainHistory* hist = nullptr);

/// Stage A trains only the projections and shared classifier with both
/// bodies frozen; stage B trains everything. Ensemble-mode labels.
EnsembleModel train_ensemble(const MlpModel& mlp, const GnnModel& gnn, const ShapeDataset& ds,
                             const std::vector<int>& train, const StagedOptions& opts,
                             const LabelThresholds& t = {}, TrainHistory* stage_a = nullptr,
                             TrainHistory* stage_b = nullptr,
                             std::vector<neuro::Matrix>* body_after_stage_a = nullptr);

struct FoldSplit {
  std::vector<int> train;
  std::vector<int> held_out;
};
/// fold_of[i] in [0, k) -> one split per fold.
std::vector<FoldSplit> splits_from(const std::vector<int>& fold_of, int k);

struct CrossValidation {
  std::vector<MlpModel> mlp;
  std::vector<GnnModel> gnn;
  std::vector<EnsembleModel> ensemble;
  // out-of-fold positive probabilities, one per record
  std::vector<double> oof_mlp, oof_gnn, oof_ensemble;
};

struct ShapeTrainingPlan {
  TrainOptions mlp{100, 1e-2, 8, 1, {}};
  TrainOptions gnn{100, 1e-3, 8, 2, {}};
  StagedOptions ensemble{30, 2, 1e-3, 8, 3};
  LabelThresholds thresholds;
  int folds = 5;
};

/// Individual models per fold, then the staged ensemble per fold. Folds run
/// independently; each is deterministic given the plan's seeds.
CrossValidation cross_validate(const ShapeDataset& ds, const std::vector<int>& fold_of,
                               const ShapeTrainingPlan& plan);

/// Sum over folds of the positive-class probability; range [0, folds].
double infer(std::vector<EnsembleModel>& folds, const ShapeDataset& ds, int idx,
             int expected_folds = 5);

void save_model(const std::filesystem::path& stem, EnsembleModel& m, const std::string& meta = "{}");
void load_model(const std::filesystem::path& stem, EnsembleModel& m);

}  // namespace rcd::ensemble
