#include "rcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/io_util.hpp"
#include "rcd/neuro.hpp"

namespace rcd::eval {

double kidney_score(std::span<const double> p, sampler::SampleKind kind, int top_tiles,
                    int top_blocks) {
  if (p.empty()) throw data_error("kidney_score: no samples for kidney");
  if (top_tiles <= 0 || top_blocks <= 0) throw config_error("kidney_score: top-k must be positive");
  for (double v : p)
    if (!std::isfinite(v)) throw data_error("kidney_score: non-finite probability");
  const std::size_t k = std::min<std::size_t>(p.size(), kind == sampler::SampleKind::tile2d ? top_tiles : top_blocks);
  std::vector<double> v(p.begin(), p.end());
  std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(), std::greater<>());
  // ascending summation of the kept scores
  double s = 0.0;
  for (std::size_t i = k; i-- > 0;) s += v[i];
  return s;
}

double fold_sum(std::span<const double> per_fold, int expected_folds) {
  if (static_cast<int>(per_fold.size()) != expected_folds)
    throw data_error("fold_sum: expected " + std::to_string(expected_folds) + " folds, got " +
                     std::to_string(per_fold.size()));
  double s = 0.0;
  for (double v : per_fold) s += v;
  return s;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw data_error("roc: one label per score");
  RocCurve c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw data_error("roc: non-finite score");
    if (labels[i] != 0 && labels[i] != 1) throw data_error("roc: labels must be 0 or 1");
    (labels[i] ? c.positives : c.negatives) += 1;
  }
  if (c.positives == 0 || c.negatives == 0) throw data_error("roc: both classes are required");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  const double P = static_cast<double>(c.positives), N = static_cast<double>(c.negatives);
  c.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  long tp = 0, fp = 0;
  long twice_area = 0;  // sum of dFP * (TP_prev + TP_new)
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    const long tp0 = tp, fp0 = fp;
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] ? tp : fp) += 1;
    twice_area += (fp - fp0) * (tp0 + tp);
    c.points.push_back({t, tp / P, (N - fp) / N});
  }
  c.auc = static_cast<double>(twice_area) / (2.0 * P * N);
  return c;
}

RocCurve roc_auc(std::span<const KidneyRecord> records) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& r : records) {
    s.push_back(r.score);
    y.push_back(r.cancerous ? 1 : 0);
  }
  return roc_auc(s, y);
}

RocPoint youden_point(const RocCurve& curve) {
  if (curve.points.empty()) throw data_error("youden: empty curve");
  RocPoint best = curve.points.front();
  for (const auto& p : curve.points)
    if (p.sensitivity + p.specificity > best.sensitivity + best.specificity) best = p;
  return best;
}

Strata stratify(std::span<const KidneyRecord> records, double cutoff_mm) {
  Strata s;
  for (const auto& r : records) {
    if (!(r.tumour_max_diameter >= 0.0)) throw data_error("stratify: negative tumour diameter");
    if (!r.cancerous) {
      s.small.push_back(r);
      s.large.push_back(r);
    } else if (r.tumour_max_diameter <= cutoff_mm) {
      s.small.push_back(r);
    } else {
      s.large.push_back(r);
    }
  }
  return s;
}

double dice(const MaskGrid& a, const MaskGrid& b) {
  if (!(a.geom == b.geom) || a.bits.size() != b.bits.size()) throw data_error("dice: geometry mismatch");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i) {
    const bool x = a.bits[i] != 0, y = b.bits[i] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<int> make_folds(const std::vector<std::string>& patient_ids, int k, std::uint64_t seed) {
  if (k <= 0) throw config_error("fold count must be positive");
  std::vector<std::string> unique(patient_ids);
  std::sort(unique.begin(), unique.end());
  unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
  if (static_cast<int>(unique.size()) < k)
    throw data_error("make_folds: " + std::to_string(unique.size()) + " patients for " +
                     std::to_string(k) + " folds");
  neuro::Rng rng(seed);
  rng.shuffle(unique);
  std::vector<std::pair<std::string, int>> fold_of;
  fold_of.reserve(unique.size());
  for (std::size_t i = 0; i < unique.size(); ++i) fold_of.emplace_back(unique[i], static_cast<int>(i % k));
  std::sort(fold_of.begin(), fold_of.end());
  std::vector<int> out;
  out.reserve(patient_ids.size());
  for (const auto& p : patient_ids) {
    const auto it = std::lower_bound(fold_of.begin(), fold_of.end(), p,
                                     [](const auto& e, const std::string& key) { return e.first < key; });
    out.push_back(it->second);
  }
  return out;
}

std::string roc_csv(const RocCurve& curve) {
  std::string out = "threshold,sensitivity,specificity\n";
  for (const auto& p : curve.points)
    out += io::fmt_double(p.threshold) + "," + io::fmt_double(p.sensitivity) + "," +
           io::fmt_double(p.specificity) + "\n";
  return out;
}

std::string summary_json(const RocCurve& curve, const std::string& model, const std::string& stratum) {
  const RocPoint op = youden_point(curve);
  nlohmann::ordered_json j;
  j["model"] = model;
  j["stratum"] = stratum;
  j["auc"] = curve.auc;
  j["positives"] = curve.positives;
  j["negatives"] = curve.negatives;
  j["operating_point"] = {{"rule", "youden"},
                          {"threshold", op.threshold},
                          {"sensitivity", op.sensitivity},
                          {"specificity", op.specificity}};
  return j.dump(2) + "\n";
}

}  // namespace rcd::eval
