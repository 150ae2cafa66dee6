#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rcd/grid.hpp"
#include "rcd/sampler.hpp"

namespace rcd::eval {

inline constexpr int kTopTiles = 10;
inline constexpr int kTopBlocks = 1;
inline constexpr int kFolds = 5;
inline constexpr double kSmallCutoffMm = 40.0;

struct KidneyRecord {
  std::string kidney_id;
  std::string patient_id;
  bool cancerous = false;
  double tumour_max_diameter = 0.0;  // mm, 0 when healthy
  double score = 0.0;
};

/// Sum of the 10 most probable tile scores (all of them when fewer), or
/// the single most probable block score.
double kidney_score(std::span<const double> cancer_probabilities, sampler::SampleKind kind,
                    int top_tiles = kTopTiles, int top_blocks = kTopBlocks);

double fold_sum(std::span<const double> per_fold, int expected_folds = kFolds);

struct RocPoint {
  double threshold = 0.0;  // positive iff score >= threshold
  double sensitivity = 0.0;
  double specificity = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // threshold descending, starting at +inf
  double auc = 0.0;
  long positives = 0;
  long negatives = 0;
};

/// Sweep over the unique scores. The area is the trapezoid sum, formed from
/// integer counts so it equals the Mann-Whitney statistic bit for bit.
RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels);
RocCurve roc_auc(std::span<const KidneyRecord> records);

/// Maximum of sensitivity + specificity - 1; ties keep the higher threshold.
RocPoint youden_point(const RocCurve& curve);

struct Strata {
  std::vector<KidneyRecord> small;
  std::vector<KidneyRecord> large;
};
/// Cancerous kidneys split at `cutoff_mm` (inclusive into small); healthy
/// kidneys go to both.
Strata stratify(std::span<const KidneyRecord> records, double cutoff_mm = kSmallCutoffMm);

/// 2|A n B| / (|A| + |B|); two empty masks score 1.
double dice(const MaskGrid& a, const MaskGrid& b);

/// Patient-wise folds: one entry per item, equal patients share a fold.
std::vector<int> make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed);

std::string roc_csv(const RocCurve& curve);
std::string summary_json(const RocCurve& curve, const std::string& model, const std::string& stratum);

}  // namespace rcd::eval
