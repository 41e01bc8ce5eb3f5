#pragma once

#include <string>
#include <utility>
#include <vector>

namespace vts {

/// Boundary clip indices of one video. Index i means clip i ends a topic;
/// n−1 never appears. `clip_end_times` gives each clip's end in seconds.
struct TopicSegmentation {
  std::size_t n = 0;
  std::vector<std::size_t> boundaries;
  std::vector<double> clip_end_times;

  /// Throws DataError unless boundaries are strictly increasing in [0, n−1)
  /// and end times are non-decreasing with one per clip.
  void validate() const;
  std::vector<double> boundary_times() const;
  double end_time() const { return clip_end_times.empty() ? 0.0 : clip_end_times.back(); }
};

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

/// F₁ of the boundary class over clip indices [0, n−1).
double exact_f1(const TopicSegmentation& pred, const TopicSegmentation& gt);

/// One-to-one matching of sorted boundary times within k seconds, as
/// (pred index, gt index) pairs. Candidate pairs are visited in ascending
/// |Δt| (ties: earlier gt, then earlier pred); a pair is taken when both ends
/// are free and taking it still leaves a maximum-cardinality matching
/// reachable, so the result always has maximum size.
std::vector<std::pair<std::size_t, std::size_t>> match_within_k(const std::vector<double>& pred_times,
                                                                 const std::vector<double>& gt_times, double k);

/// Size of a maximum matching within k on sorted inputs (two pointers).
std::size_t max_matching_size(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k);

/// Recall of gt boundaries within k seconds. `loose` counts a gt boundary
/// as hit whenever any prediction lies within k, without one-to-one matching.
double bs_at_k(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k,
               bool loose = false);
double f1_at_k(const std::vector<double>& pred_times, const std::vector<double>& gt_times, double k);

double bs_at_k(const TopicSegmentation& pred, const TopicSegmentation& gt, double k, bool loose = false);
double f1_at_k(const TopicSegmentation& pred, const TopicSegmentation& gt, double k);

/// Segments [start, end) split at boundary end-times, covering [0, video end).
std::vector<Interval> boundaries_to_segments(const TopicSegmentation& seg);

/// Mean best IoU. Symmetrized by default (gt→pred and pred→gt averaged).
double miou(const TopicSegmentation& pred, const TopicSegmentation& gt, bool gt_only = false);

/// Mean F₁@k over annotator pairs and k ∈ {0, 2, 4, 6, 8} seconds.
double consistency_score(const std::vector<TopicSegmentation>& annotations);

double avg_score(double f1, double bs, double f1k, double miou_value);

struct MetricOptions {
  double k = 30.0;
  bool loose_bs = false;
  bool miou_gt_only = false;
};

struct VideoMetrics {
  std::string video_id;
  double f1 = 0.0;
  double bs_at_k = 0.0;
  double f1_at_k = 0.0;
  double miou = 0.0;
  double avg = 0.0;
};

struct MetricsReport {
  MetricOptions options;
  VideoMetrics corpus;  // unweighted means over videos; video_id empty
  std::vector<VideoMetrics> videos;
};

VideoMetrics evaluate_video(const std::string& video_id, const TopicSegmentation& pred, const TopicSegmentation& gt,
                            const MetricOptions& opt);
/// Corpus means over already evaluated videos.
MetricsReport aggregate(std::vector<VideoMetrics> videos, const MetricOptions& opt);

/// JSON document with values ×100 rounded to 2 decimals.
std::string report_to_json(const MetricsReport& report);

}  // namespace vts
