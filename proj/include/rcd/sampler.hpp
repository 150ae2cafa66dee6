#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "rcd/grid.hpp"
#include "rcd/neuro.hpp"

namespace rcd::sampler {

enum class SampleKind { tile2d, block3d };
enum class Scheme { centralised, sliding };
/// Order matches the probability triple.
enum class SampleLabel { cancerous = 0, normal_kidney = 1, none = 2 };

const char* to_string(SampleKind k);
const char* to_string(Scheme s);
const char* to_string(SampleLabel l);
SampleKind kind_from_string(const std::string& s);
Scheme scheme_from_string(const std::string& s);
SampleLabel label_from_string(const std::string& s);

inline constexpr int kInPlaneVoxels = 224;
inline constexpr int kBlockDepth = 20;
inline constexpr double kTileStepMm = 1.0;
inline constexpr double kBlockStepMm = 5.0;
inline constexpr double kSlidingGridMm = 40.0;
inline constexpr int kSlidingCap = 50;
inline constexpr double kCancerRadiusMm = 10.0;
inline constexpr double kKidneyRadiusMm = 20.0;
inline constexpr double kIsotropicMm = 1.0;
inline constexpr double kMaskDilationMm = 40.0;

/// Labelling and stepping rules; defaults are the published values.
struct SamplingRules {
  double tile_step_mm = kTileStepMm;
  double block_step_mm = kBlockStepMm;
  double sliding_grid_mm = kSlidingGridMm;
  int sliding_cap = kSlidingCap;
  double cancer_radius_mm = kCancerRadiusMm;
  double kidney_radius_mm = kKidneyRadiusMm;
  void validate() const;
};

struct SampleSpec {
  std::string scan_id;
  std::string kidney_id;
  SampleKind kind = SampleKind::tile2d;
  Scheme scheme = Scheme::centralised;
  Vec3 center{};  // mm
  SampleLabel label = SampleLabel::none;
};

/// Voxel box [lo, lo + size) of a sample on `geom`; may reach past the scan.
struct Footprint {
  Index3 lo{};
  Index3 size{};
};
Footprint footprint(const GridGeometry& geom, const SampleSpec& s);
int depth_of(SampleKind k);

struct PreprocessedScan {
  VolumeGrid volume;  // 1 mm, clipped, /100, zero outside `region`
  LabelGrid labels;   // 1 mm nearest
  MaskGrid region;    // kidney mask dilated by 40 mm
};

struct PreprocessOptions {
  double spacing_mm = kIsotropicMm;
  double dilation_mm = kMaskDilationMm;
  float clip_low = -200.0f;
  float clip_high = 200.0f;
  float divisor = 100.0f;
};

/// Resample to isotropic 1 mm, clip and normalise, then zero every voxel
/// farther than 40 mm from the kidney segmentation.
PreprocessedScan preprocess(const VolumeGrid& volume, const LabelGrid& labels,
                            const PreprocessOptions& opts = {});

/// Axial positions through the kidney's z-extent centred on its (x, y)
/// centroid. `kidney` must be split from `geom`'s lattice.
std::vector<SampleSpec> centralised_samples(const GridGeometry& geom, const KidneyComponent& kidney,
                                            SampleKind kind, const std::string& scan_id,
                                            const std::string& kidney_id,
                                            const SamplingRules& rules = {});

/// Inference-time filter: keep samples whose footprint holds any kidney
/// segmentation voxel.
std::vector<SampleSpec> filter_containing_kidney(const LabelGrid& labels,
                                                 std::vector<SampleSpec> samples);

/// Largest inscribed in-plane disc radius (mm) of `tissue` inside the
/// footprint, maximised over slices. Voxels outside the footprint count as
/// background.
double inscribed_radius(const SampleSpec& s, const LabelGrid& labels, Tissue tissue);
SampleLabel label_sample(const SampleSpec& s, const LabelGrid& labels,
                         const SamplingRules& rules = {});

/// At most `cap` samples per (kidney, label); over-cap classes keep a
/// seeded uniform subset. Output is sorted.
std::vector<SampleSpec> cap_per_class(std::vector<SampleSpec> samples, int cap, std::uint64_t seed);

/// 40 mm in-plane grid; z steps as centralised over each kidney's extent.
/// Grid columns on a kidney's side of the midline belong to that kidney.
/// Labelled, capped and sorted.
std::vector<SampleSpec> sliding_samples(const LabelGrid& labels,
                                        const std::vector<KidneyComponent>& kidneys,
                                        const std::vector<std::string>& kidney_ids, SampleKind kind,
                                        const std::string& scan_id, std::uint64_t seed,
                                        const SamplingRules& rules = {});

/// Deterministic order: scan, kidney, kind, scheme, then centre z, y, x.
void sort_samples(std::vector<SampleSpec>& samples);

std::string manifest_csv(const std::vector<SampleSpec>& samples);
std::vector<SampleSpec> manifest_from_csv(const std::string& text);

// ---- scoring ---------------------------------------------------------------

using Probabilities = std::array<double, 3>;

struct SampleScore {
  std::size_t sample = 0;  // index into the manifest
  Probabilities p{};
};

/// mean, std and the 10..90 % deciles of normalised intensity over
/// footprint voxels inside the dilated-mask region.
inline constexpr int kSummaryWidth = 11;
std::vector<double> summary_features(const PreprocessedScan& scan, const SampleSpec& s);

class SampleScorer {
 public:
  virtual ~SampleScorer() = default;
  virtual int input_width() const = 0;
  virtual Probabilities score(const std::vector<double>& features) const = 0;
};

struct ScorerTraining {
  int pretrain_epochs = 5;
  double pretrain_lr = 1e-3;
  int finetune_epochs = 5;
  double finetune_lr = 5e-4;
  int batch_size = 16;
  std::uint64_t seed = 7;
};

/// Summary statistics -> 16 hidden -> 3 classes.
class ReferenceScorer : public SampleScorer {
 public:
  static constexpr int kHidden = 16;

  ReferenceScorer();
  int input_width() const override { return kSummaryWidth; }
  Probabilities score(const std::vector<double>& features) const override;

  /// Pretrain on `pre`, then fine-tune on `fine` (either may be empty).
  void train(const std::vector<std::vector<double>>& pre_x, const std::vector<SampleLabel>& pre_y,
             const std::vector<std::vector<double>>& fine_x, const std::vector<SampleLabel>& fine_y,
             const ScorerTraining& opts);

  std::vector<neuro::Tensor*> tensors();

  neuro::Dense hidden, out;
  neuro::Tensor shift, scale;
};

std::vector<SampleScore> score_samples(const SampleScorer& scorer, const PreprocessedScan& scan,
                                       const std::vector<SampleSpec>& samples);

std::string scores_csv(const std::vector<SampleSpec>& samples, const std::vector<SampleScore>& scores);

}  // namespace rcd::sampler
