#include "vts/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "json.hpp"

#include "vts/error.hpp"

namespace vts {

void TopicSegmentation::validate() const {
  if (clip_end_times.size() != n) {
    throw DataError("segmentation has " + std::to_string(clip_end_times.size()) + " clip times for " +
                    std::to_string(n) + " clips");
  }
  for (std::size_t i = 1; i < clip_end_times.size(); ++i) {
    if (clip_end_times[i] < clip_end_times[i - 1]) throw DataError("clip end times are not monotone");
  }
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] + 1 >= n) throw DataError("boundary index " + std::to_string(boundaries[i]) + " out of range");
    if (i > 0 && boundaries[i] <= boundaries[i - 1]) throw DataError("boundary indices are not strictly increasing");
  }
}

std::vector<double> TopicSegmentation::boundary_times() const {
  std::vector<double> t;
  t.reserve(boundaries.size());
  for (auto b : boundaries) t.push_back(clip_end_times.at(b));
  return t;
}

namespace {

double f1_from_counts(std::size_t tp, std::size_t n_pred, std::size_t n_gt) {
  if (n_pred == 0 && n_gt == 0) return 1.0;
  if (n_pred == 0 || n_gt == 0 || tp == 0) return 0.0;
  const double p = static_cast<double>(tp) / static_cast<double>(n_pred);
  const double r = static_cast<double>(tp) / static_cast<double>(n_gt);
  return 2.0 * p * r / (p + r);
}

void require_same_video(const TopicSegmentation& pred, const TopicSegmentation& gt) {
  if (pred.n != gt.n) {
    throw DataError("prediction covers " + std::to_string(pred.n) + " clips, ground truth " + std::to_string(gt.n));
  }
}

std::size_t max_matching_free(const std::vector<double>& p, const std::vector<bool>& p_used,
                              const std::vector<double>& g, const std::vector<bool>& g_used, double k) {
  std::size_t i = 0, j = 0, count = 0;
  while (true) {
    while (i < p.size() && p_used[i]) ++i;
    while (j < g.size() && g_used[j]) ++j;
    if (i >= p.size() || j >= g.size()) break;
    if (std::abs(p[i] - g[j]) <= k) {
      ++count;
      ++i;
      ++j;
    } else if (p[i] < g[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  return count;
}

}  // namespace

double exact_f1(const TopicSegmentation& pred, const TopicSegmentation& gt) {
  require_same_video(pred, gt);
  std::size_t tp = 0;
  for (auto b : pred.boundaries) {
    if (std::binary_search(gt.boundaries.begin(), gt.boundaries.end(), b)) ++tp;
  }
  return f1_from_counts(tp, pred.boundaries.size(), gt.boundaries.size());
}

std::size_t max_matching_size(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k) {
  return max_matching_free(pred_times, std::vector<bool>(pred_times.size()), gt_times,
                           std::vector<bool>(gt_times.size()), k);
}

std::vector<std::pair<std::size_t, std::size_t>> match_within_k(const std::vector<double>& pred_times,
                                                                 const std::vector<double>& gt_times, double k) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;  // (Δ, gt, pred)
  for (std::size_t i = 0; i < pred_times.size(); ++i) {
    for (std::size_t j = 0; j < gt_times.size(); ++j) {
      const double d = std::abs(pred_times[i] - gt_times[j]);
      if (d <= k) cand.emplace_back(d, j, i);
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<bool> p_used(pred_times.size()), g_used(gt_times.size());
  std::size_t reachable = max_matching_free(pred_times, p_used, gt_times, g_used, k);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& [d, j, i] : cand) {
    if (reachable == 0) break;
    if (p_used[i] || g_used[j]) continue;
    p_used[i] = g_used[j] = true;
    const std::size_t rest = max_matching_free(pred_times, p_used, gt_times, g_used, k);
    if (rest + 1 == reachable) {
      out.emplace_back(i, j);
      reachable = rest;
    } else {
      p_used[i] = g_used[j] = false;
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

double bs_at_k(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k, bool loose) {
  if (gt_times.empty()) return pred_times.empty() ? 1.0 : 0.0;
  std::size_t hits = 0;
  if (loose) {
    for (double g : gt_times) {
      if (std::any_of(pred_times.begin(), pred_times.end(), [&](double p) { return std::abs(p - g) <= k; })) ++hits;
    }
  } else {
    hits = match_within_k(pred_times, gt_times, k).size();
  }
  return static_cast<double>(hits) / static_cast<double>(gt_times.size());
}

double f1_at_k(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k) {
  const std::size_t tp = match_within_k(pred_times, gt_times, k).size();
  return f1_from_counts(tp, pred_times.size(), gt_times.size());
}

double bs_at_k(const TopicSegmentation& pred, const TopicSegmentation& gt, double k, bool loose) {
  require_same_video(pred, gt);
  return bs_at_k(pred.boundary_times(), gt.boundary_times(), k, loose);
}

double f1_at_k(const TopicSegmentation& pred, const TopicSegmentation& gt, double k) {
  require_same_video(pred, gt);
  return f1_at_k(pred.boundary_times(), gt.boundary_times(), k);
}

std::vector<Interval> boundaries_to_segments(const TopicSegmentation& seg) {
  std::vector<Interval> out;
  double start = 0.0;
  for (double t : seg.boundary_times()) {
    out.push_back({start, t});
    start = t;
  }
  out.push_back({start, seg.end_time()});
  return out;
}

namespace {

double iou(const Interval& a, const Interval& b) {
  const double inter = std::max(0.0, std::min(a.end, b.end) - std::max(a.start, b.start));
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  return uni > 0.0 ? inter / uni : 0.0;
}

double directed_miou(const std::vector<Interval>& from, const std::vector<Interval>& to) {
  double total = 0.0;
  for (const auto& a : from) {
    double best = 0.0;
    for (const auto& b : to) best = std::max(best, iou(a, b));
    total += best;
  }
  return total / static_cast<double>(from.size());
}

}  // namespace

double miou(const TopicSegmentation& pred, const TopicSegmentation& gt, bool gt_only) {
  require_same_video(pred, gt);
  if (gt.end_time() <= 0.0) return 1.0;
  const auto ps = boundaries_to_segments(pred), gs = boundaries_to_segments(gt);
  const double g = directed_miou(gs, ps);
  return gt_only ? g : 0.5 * (g + directed_miou(ps, gs));
}

double consistency_score(const std::vector<TopicSegmentation>& annotations) {
  if (annotations.size() < 2) throw DataError("consistency score needs at least two annotations");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < annotations.size(); ++a) {
    for (std::size_t b = a + 1; b < annotations.size(); ++b) {
      for (double k : {0.0, 2.0, 4.0, 6.0, 8.0}) {
        total += f1_at_k(annotations[a], annotations[b], k);
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

double avg_score(double f1, double bs, double f1k, double miou_value) { return (f1 + bs + f1k + miou_value) / 4.0; }

VideoMetrics evaluate_video(const std::string& video_id, const TopicSegmentation& pred, const TopicSegmentation& gt,
                            const MetricOptions& opt) {
  VideoMetrics m;
  m.video_id = video_id;
  m.f1 = exact_f1(pred, gt);
  m.bs_at_k = bs_at_k(pred, gt, opt.k, opt.loose_bs);
  m.f1_at_k = f1_at_k(pred, gt, opt.k);
  m.miou = miou(pred, gt, opt.miou_gt_only);
  m.avg = avg_score(m.f1, m.bs_at_k, m.f1_at_k, m.miou);
  return m;
}

MetricsReport aggregate(std::vector<VideoMetrics> videos, const MetricOptions& opt) {
  MetricsReport r;
  r.options = opt;
  r.videos = std::move(videos);
  if (r.videos.empty()) return r;
  for (const auto& v : r.videos) {
    r.corpus.f1 += v.f1;
    r.corpus.bs_at_k += v.bs_at_k;
    r.corpus.f1_at_k += v.f1_at_k;
    r.corpus.miou += v.miou;
  }
  const double n = static_cast<double>(r.videos.size());
  r.corpus.f1 /= n;
  r.corpus.bs_at_k /= n;
  r.corpus.f1_at_k /= n;
  r.corpus.miou /= n;
  r.corpus.avg = avg_score(r.corpus.f1, r.corpus.bs_at_k, r.corpus.f1_at_k, r.corpus.miou);
  return r;
}

namespace {

double pct(double v) { return std::round(v * 10000.0) / 100.0; }

std::string k_label(double k) {
  if (k == std::floor(k)) return std::to_string(static_cast<long long>(k));
  nlohmann::json j = k;
  return j.dump();
}

nlohmann::ordered_json row(const VideoMetrics& m, const std::string& kl) {
  nlohmann::ordered_json j;
  if (!m.video_id.empty()) j["video_id"] = m.video_id;
  j["F1"] = pct(m.f1);
  j["BS@" + kl] = pct(m.bs_at_k);
  j["F1@" + kl] = pct(m.f1_at_k);
  j["mIoU"] = pct(m.miou);
  j["Avg"] = pct(m.avg);
  return j;
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  const std::string kl = k_label(report.options.k);
  nlohmann::ordered_json j;
  j["k"] = report.options.k;
  j["matching"] = report.options.loose_bs ? "loose" : "one_to_one";
  j["miou"] = report.options.miou_gt_only ? "gt_only" : "symmetric";
  j["columns"] = {"F1", "BS@" + kl, "F1@" + kl, "mIoU", "Avg"};
  j["videos_evaluated"] = report.videos.size();
  j["corpus"] = row(report.corpus, kl);
  auto& arr = j["videos"] = nlohmann::ordered_json::array();
  for (const auto& v : report.videos) arr.push_back(row(v, kl));
  return j.dump(2) + "\n";
}

}  // namespace vts
