#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include <json.hpp>

#include "rcd/error.hpp"
#include "rcd/eval.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace rcd;
using sampler::SampleKind;

namespace {

eval::KidneyRecord record(bool cancerous, double diameter, double score = 0) {
  eval::KidneyRecord r;
  r.kidney_id = "k";
  r.cancerous = cancerous;
  r.tumour_max_diameter = diameter;
  r.score = score;
  return r;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("kidney score: top ten tiles, single best block") {
  std::vector<double> twelve{0.9, 0.1, 0.8, 0.05, 0.7, 0.3, 0.6, 0.2, 0.5, 0.0, 0.4, 0.15};
  // 0.9 + 0.8 + ... + 0.15: everything but 0.05 and 0.0
  CHECK(eval::kidney_score(twelve, SampleKind::tile2d) == doctest::Approx(4.65).epsilon(1e-14));
  const std::vector<double> few{0.2, 0.5};
  CHECK(eval::kidney_score(few, SampleKind::tile2d) == doctest::Approx(0.7).epsilon(1e-15));
  std::vector<double> ones(25, 0.5);
  CHECK(eval::kidney_score(ones, SampleKind::tile2d) == 5.0);
  CHECK(eval::kidney_score(twelve, SampleKind::block3d) == 0.9);
  CHECK_THROWS_AS(eval::kidney_score(std::vector<double>{}, SampleKind::tile2d), Error);
}

TEST_CASE("kidney score matches a sort-and-sum oracle and is monotone") {
  neuro::Rng rng(31);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> p(1 + rng.below(40));
    for (auto& v : p) v = rng.uniform();
    CHECK(eval::kidney_score(p, SampleKind::tile2d) == oracle::top_k_sum(p, 10));
    CHECK(eval::kidney_score(p, SampleKind::block3d) == *std::max_element(p.begin(), p.end()));
    const double before = eval::kidney_score(p, SampleKind::tile2d);
    p[rng.below(p.size())] += 0.25;
    CHECK(eval::kidney_score(p, SampleKind::tile2d) >= before);
  }
}

TEST_CASE("fold sum") {
  const std::vector<double> f{0.2, 0.2, 0.2, 0.2, 0.2};
  CHECK(eval::fold_sum(f) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> a{0.1, 0.9, 0.3, 0.0, 0.5}, b{0.5, 0.0, 0.3, 0.9, 0.1};
  CHECK(eval::fold_sum(a) == doctest::Approx(eval::fold_sum(b)).epsilon(1e-15));
  CHECK_THROWS_AS(eval::fold_sum(std::vector<double>{0.1, 0.2, 0.3, 0.4}), Error);
}

TEST_CASE("AUC equals the pairwise statistic exactly") {
  neuro::Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.below(999));
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
      // a coarse grid so that ties are common
      s[i] = std::floor(rng.uniform() * 20) / 20;
      y[i] = rng.uniform() < 0.4;
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(eval::roc_auc(s, y).auc == oracle::pairwise_auc(s, y));
  }
}

TEST_CASE("AUC edge cases") {
  const std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  const std::vector<int> y{0, 0, 1, 1};
  const auto c = eval::roc_auc(s, y);
  CHECK(c.auc == 1.0);
  CHECK(c.positives == 2);
  CHECK(c.negatives == 2);
  CHECK(std::isinf(c.points.front().threshold));
  CHECK(c.points.back().sensitivity == 1.0);
  CHECK(c.points.back().specificity == 0.0);

  const std::vector<double> ties(6, 0.3);
  const std::vector<int> mixed{0, 1, 0, 1, 1, 0};
  CHECK(eval::roc_auc(ties, mixed).auc == 0.5);
  const std::vector<int> flipped{1, 1, 0, 0};
  CHECK(eval::roc_auc(s, flipped).auc == 0.0);

  CHECK_THROWS_AS(eval::roc_auc(s, std::vector<int>{1, 1, 1, 1}), Error);
  CHECK_THROWS_AS(eval::roc_auc(s, std::vector<int>{0, 1}), Error);
  CHECK_THROWS_AS(eval::roc_auc(s, std::vector<int>{0, 1, 2, 1}), Error);
}

TEST_CASE("youden operating point") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const auto p = eval::youden_point(eval::roc_auc(s, y));
  // thresholds 0.8 (1/2, 1), 0.4 (1/2, 1/2), 0.35 (1, 1/2): 0.8 ties 0.35, higher kept
  CHECK(p.threshold == 0.8);
  CHECK(p.sensitivity == 0.5);
  CHECK(p.specificity == 1.0);
}

TEST_CASE("stratify at 40 mm, healthy kidneys in both strata") {
  const std::vector<eval::KidneyRecord> r{record(true, 39.9), record(true, 40.0), record(true, 40.1),
                                          record(false, 0.0), record(false, 0.0)};
  const auto s = eval::stratify(r);
  CHECK(s.small.size() == 4);
  CHECK(s.large.size() == 3);
  CHECK(std::count_if(s.small.begin(), s.small.end(), [](auto& k) { return k.cancerous; }) == 2);
  CHECK(std::count_if(s.large.begin(), s.large.end(), [](auto& k) { return !k.cancerous; }) == 2);
  CHECK_THROWS_AS(eval::stratify(std::vector<eval::KidneyRecord>{record(true, -1)}), Error);
}

TEST_CASE("dice") {
  auto a = test::ball(4.0);
  auto b = a;
  CHECK(eval::dice(a, b) == 1.0);
  std::fill(b.bits.begin(), b.bits.end(), 0);
  CHECK(eval::dice(a, b) == 0.0);
  auto empty = b;
  CHECK(eval::dice(empty, b) == 1.0);

  // b holds half of a's voxels: 2 (n/2) / (n + n/2) = 2/3
  std::size_t seen = 0;
  for (std::size_t i = 0; i < a.bits.size(); ++i)
    if (a.bits[i] && seen++ % 2 == 0) b.bits[i] = 1;
  const auto na = std::count(a.bits.begin(), a.bits.end(), 1);
  const auto nb = std::count(b.bits.begin(), b.bits.end(), 1);
  CHECK(eval::dice(a, b) == doctest::Approx(2.0 * nb / double(na + nb)).epsilon(1e-15));
  if (na % 2 == 0) CHECK(eval::dice(a, b) == doctest::Approx(2.0 / 3.0));

  auto other = test::ball(5.0);
  CHECK_THROWS_AS(eval::dice(a, other), Error);
}

TEST_CASE("patient-wise folds") {
  std::vector<std::string> ids;
  for (int p = 0; p < 10; ++p) {
    ids.push_back("p" + std::to_string(p));
    ids.push_back("p" + std::to_string(p));
  }
  const auto f = eval::make_folds(ids, 5, 3);
  REQUIRE(f.size() == 20);
  std::map<int, std::set<std::string>> members;
  std::map<std::string, std::set<int>> folds_of;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(f[i] >= 0);
    CHECK(f[i] < 5);
    members[f[i]].insert(ids[i]);
    folds_of[ids[i]].insert(f[i]);
  }
  for (auto& [fold, pats] : members) CHECK(pats.size() == 2);
  for (auto& [pat, fs] : folds_of) CHECK(fs.size() == 1);
  CHECK(eval::make_folds(ids, 5, 3) == f);
  // input order does not change the assignment
  std::vector<std::string> rev(ids.rbegin(), ids.rend());
  auto g = eval::make_folds(rev, 5, 3);
  std::reverse(g.begin(), g.end());
  CHECK(g == f);
  CHECK_THROWS_AS(eval::make_folds({"a", "b", "c"}, 5, 1), Error);
  CHECK_THROWS_AS(eval::make_folds(ids, 0, 1), Error);
}

TEST_CASE("ROC export and summary") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  const auto c = eval::roc_auc(s, y);
  const auto csv = eval::roc_csv(c);
  CHECK(csv.rfind("threshold,sensitivity,specificity\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(c.points.size()) + 1);
  const auto j = nlohmann::json::parse(eval::summary_json(c, "ensemble", "all"));
  CHECK(j["model"] == "ensemble");
  CHECK(j["stratum"] == "all");
  CHECK(j["auc"].get<double>() == c.auc);
  CHECK(j["operating_point"]["rule"] == "youden");
  CHECK(j["operating_point"]["threshold"].get<double>() == 0.8);
}

}
