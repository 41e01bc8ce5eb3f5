#include <algorithm>
#include <cmath>
#include <functional>

#include "doctest.h"
#include "json.hpp"
#include "vts/error.hpp"
#include "vts/metrics/metrics.hpp"
#include "vts/numerics/rng.hpp"

using namespace vts;

namespace {

using Times = std::vector<double>;

// n clips of `len` seconds each.
TopicSegmentation uniform(std::size_t n, std::vector<std::size_t> boundaries, double len = 1.0) {
  TopicSegmentation s;
  s.n = n;
  s.boundaries = std::move(boundaries);
  for (std::size_t i = 0; i < n; ++i) s.clip_end_times.push_back(len * static_cast<double>(i + 1));
  s.validate();
  return s;
}

// Largest one-to-one matching within k by trying every assignment.
std::size_t exhaustive_max(const std::vector<double>& pred, const std::vector<double>& gt, double k) {
  std::vector<bool> used(gt.size());
  std::function<std::size_t(std::size_t)> go = [&](std::size_t i) -> std::size_t {
    if (i == pred.size()) return 0;
    std::size_t best = go(i + 1);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j] || std::abs(pred[i] - gt[j]) > k) continue;
      used[j] = true;
      best = std::max(best, 1 + go(i + 1));
      used[j] = false;
    }
    return best;
  };
  return go(0);
}

}  // namespace

TEST_CASE("exact_f1") {
  const auto gt = uniform(10, {3, 7});
  CHECK(exact_f1(gt, gt) == 1.0);
  CHECK(exact_f1(uniform(10, {3, 8}), gt) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(exact_f1(uniform(10, {}), gt) == 0.0);
  CHECK(exact_f1(uniform(10, {}), uniform(10, {})) == 1.0);
  CHECK(exact_f1(uniform(10, {1}), uniform(10, {})) == 0.0);
  CHECK_THROWS_AS(exact_f1(uniform(9, {3}), gt), DataError);
}

TEST_CASE("segmentation validation") {
  TopicSegmentation s = uniform(5, {});
  s.boundaries = {4};
  CHECK_THROWS_AS(s.validate(), DataError);
  s.boundaries = {2, 1};
  CHECK_THROWS_AS(s.validate(), DataError);
  s.boundaries = {1};
  s.clip_end_times = {1, 2, 1.5, 4, 5};
  CHECK_THROWS_AS(s.validate(), DataError);
}

TEST_CASE("match_within_k") {
  const std::vector<double> g{5, 40, 90};
  auto same = match_within_k(g, g, 30);
  CHECK(same == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}, {2, 2}});

  auto one = match_within_k({35}, {10, 100}, 30);
  CHECK(one == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});

  auto tie = match_within_k({9, 11}, {10}, 30);
  CHECK(tie == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}});

  // Greedy by distance alone would take 9↔10 and strand 11.
  auto opt = match_within_k({9, 11}, {0, 10}, 10);
  CHECK(opt.size() == 2);
  CHECK(opt == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});

  CHECK(match_within_k({}, {1, 2}, 5).empty());
}

TEST_CASE("matching is maximum on random instances") {
  Rng rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    auto draw = [&] {
      std::vector<double> t(rng.uniform_int(std::uint64_t{9}));
      for (auto& x : t) x = static_cast<double>(rng.uniform_int(std::uint64_t{80}));
      std::sort(t.begin(), t.end());
      return t;
    };
    const auto pred = draw(), gt = draw();
    const double k = static_cast<double>(rng.uniform_int(std::uint64_t{20}));
    const auto m = match_within_k(pred, gt, k);
    const std::size_t want = exhaustive_max(pred, gt, k);
    CHECK(m.size() == want);
    CHECK(max_matching_size(pred, gt, k) == want);
    std::vector<bool> pu(pred.size()), gu(gt.size());
    for (auto [i, j] : m) {
      CHECK(std::abs(pred[i] - gt[j]) <= k);
      CHECK(!pu[i]);
      CHECK(!gu[j]);
      pu[i] = gu[j] = true;
    }
  }
}

TEST_CASE("bs_at_k") {
  const std::vector<double> g{10, 100};
  CHECK(bs_at_k(g, g, 30) == 1.0);
  CHECK(bs_at_k(Times{35}, g, 30) == 0.5);
  CHECK(bs_at_k(Times{}, Times{}, 30) == 1.0);
  CHECK(bs_at_k(Times{3}, Times{}, 30) == 0.0);

  // gt shifted by k−1 seconds: every boundary found, none exact
  const auto gt = uniform(20, {4, 9, 14}, 10.0);
  TopicSegmentation shifted = gt;
  for (auto& t : shifted.clip_end_times) t += 29.0;
  const auto pt = shifted.boundary_times(), gtt = gt.boundary_times();
  CHECK(bs_at_k(pt, gtt, 30) == 1.0);
  const auto off = uniform(20, {5, 10, 15}, 10.0);
  CHECK(exact_f1(off, gt) == 0.0);
  CHECK(bs_at_k(off, gt, 30) == 1.0);

  // loose reading lets one prediction cover two boundaries
  CHECK(bs_at_k(Times{50}, Times{40, 60}, 30, false) == 0.5);
  CHECK(bs_at_k(Times{50}, Times{40, 60}, 30, true) == 1.0);
}

TEST_CASE("f1_at_k") {
  CHECK(f1_at_k(Times{10}, Times{35}, 30) == 1.0);
  CHECK(f1_at_k(Times{10, 200}, Times{35}, 30) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(f1_at_k(Times{}, Times{}, 30) == 1.0);
  CHECK(f1_at_k(Times{}, Times{4}, 30) == 0.0);
}

TEST_CASE("exact_f1 never exceeds f1_at_k") {
  Rng rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 5 + rng.uniform_int(std::uint64_t{20});
    auto draw = [&] {
      std::vector<std::size_t> b;
      for (std::size_t i = 0; i + 1 < n; ++i)
        if (rng.bernoulli(0.25)) b.push_back(i);
      return b;
    };
    TopicSegmentation p = uniform(n, draw()), g = uniform(n, draw());
    for (std::size_t i = 0; i < n; ++i) {
      const double len = 1.0 + static_cast<double>(i % 3);
      p.clip_end_times[i] = g.clip_end_times[i] = (i ? g.clip_end_times[i - 1] : 0.0) + len;
    }
    const double e = exact_f1(p, g);
    CHECK(e <= f1_at_k(p, g, 0.0) + 1e-15);
    CHECK(e == doctest::Approx(f1_at_k(p, g, 0.0)).epsilon(1e-15));
    for (double k : {1.0, 5.0, 30.0}) CHECK(e <= f1_at_k(p, g, k) + 1e-15);
    for (double v : {e, bs_at_k(p, g, 7.0), f1_at_k(p, g, 7.0), miou(p, g)}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("boundaries_to_segments") {
  auto whole = boundaries_to_segments(uniform(6, {}, 2.0));
  REQUIRE(whole.size() == 1);
  CHECK(whole[0].start == 0.0);
  CHECK(whole[0].end == 12.0);

  auto two = boundaries_to_segments(uniform(6, {2}, 2.0));
  REQUIRE(two.size() == 2);
  CHECK(two[0].end == 6.0);
  CHECK(two[1].start == 6.0);
  CHECK(two[1].end == 12.0);

  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(std::uint64_t{30});
    std::vector<std::size_t> b;
    for (std::size_t i = 0; i + 1 < n; ++i)
      if (rng.bernoulli(0.3)) b.push_back(i);
    TopicSegmentation s = uniform(n, b);
    double t = 0.0;
    for (auto& e : s.clip_end_times) e = t += rng.uniform(0.5, 20.0);
    const auto segs = boundaries_to_segments(s);
    CHECK(segs.size() == b.size() + 1);
    CHECK(segs.front().start == 0.0);
    CHECK(segs.back().end == s.end_time());
    for (std::size_t i = 0; i < segs.size(); ++i) {
      CHECK(segs[i].end > segs[i].start);
      if (i) CHECK(segs[i].start == segs[i - 1].end);
    }
  }
}

TEST_CASE("miou") {
  const auto gt = uniform(10, {3});
  const auto none = uniform(10, {});
  CHECK(miou(gt, gt) == 1.0);
  CHECK(miou(none, gt) == doctest::Approx(0.55).epsilon(1e-15));
  CHECK(miou(none, gt, true) == doctest::Approx(0.5).epsilon(1e-15));

  // rescaling time leaves it unchanged
  const auto p = uniform(12, {2, 6, 9}, 1.0), g = uniform(12, {3, 7}, 1.0);
  const auto ps = uniform(12, {2, 6, 9}, 37.5), gs = uniform(12, {3, 7}, 37.5);
  CHECK(miou(p, g) == doctest::Approx(miou(ps, gs)).epsilon(1e-14));
}

TEST_CASE("consistency_score") {
  const auto a = uniform(20, {3, 10}, 3.0);
  CHECK(consistency_score({a, a}) == 1.0);
  const auto b = uniform(20, {4, 11}, 3.0);  // every boundary 3 s later
  CHECK(consistency_score({a, b}) == doctest::Approx(0.6).epsilon(1e-15));
  const auto c = uniform(20, {3}, 3.0);
  const double fab = 0.6;
  double fac = 0.0, fbc = 0.0;
  for (double k : {0.0, 2.0, 4.0, 6.0, 8.0}) {
    fac += f1_at_k(a, c, k) / 5;
    fbc += f1_at_k(b, c, k) / 5;
  }
  CHECK(consistency_score({a, b, c}) == doctest::Approx((fab + fac + fbc) / 3).epsilon(1e-14));
  CHECK_THROWS_AS(consistency_score({a}), DataError);
}

TEST_CASE("avg_score") {
  CHECK(avg_score(1, 1, 1, 1) == 1.0);
  CHECK(avg_score(0, 0, 0, 0) == 0.0);
  const double v = avg_score(0.5291, 0.6925, 0.6038, 0.6754);
  CHECK(std::round(v * 10000.0) / 100.0 == 62.52);
}

TEST_CASE("report aggregation and schema") {
  MetricOptions opt;
  std::vector<VideoMetrics> vids;
  vids.push_back(evaluate_video("a", uniform(10, {3, 8}), uniform(10, {3, 7}), opt));
  vids.push_back(evaluate_video("b", uniform(10, {}), uniform(10, {3}), opt));
  const MetricsReport rep = aggregate(vids, opt);
  CHECK(rep.corpus.f1 == doctest::Approx((vids[0].f1 + vids[1].f1) / 2).epsilon(1e-15));
  CHECK(rep.corpus.miou == doctest::Approx((vids[0].miou + vids[1].miou) / 2).epsilon(1e-15));
  CHECK(rep.corpus.avg == doctest::Approx(avg_score(rep.corpus.f1, rep.corpus.bs_at_k, rep.corpus.f1_at_k,
                                                    rep.corpus.miou)).epsilon(1e-14));

  const auto j = nlohmann::json::parse(report_to_json(rep));
  CHECK(j["columns"] == nlohmann::json::array({"F1", "BS@30", "F1@30", "mIoU", "Avg"}));
  CHECK(j["videos_evaluated"] == 2);
  for (const char* col : {"F1", "BS@30", "F1@30", "mIoU", "Avg"}) {
    REQUIRE(j["corpus"].contains(col));
    const double x = j["corpus"][col].get<double>();
    CHECK(x == std::round(x * 100.0) / 100.0);
  }
  CHECK(j["corpus"]["F1"].get<double>() == doctest::Approx(std::round(rep.corpus.f1 * 10000.0) / 100.0));
  CHECK(j["videos"].size() == 2);
  CHECK(j["videos"][0]["video_id"] == "a");
}
