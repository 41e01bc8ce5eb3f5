#pragma once

#include <string>
#include <vector>

#include "vts/data/dataset.hpp"
#include "vts/numerics/rng.hpp"

namespace vts {

/// Gaussian KDE over topic durations in seconds.
struct KdeModel {
  std::vector<double> samples;
  double bandwidth = 1.0;

  double density(double x) const;
};

/// Silverman bandwidth 1.06·σ̂·m^(−1/5); 1.0 s when all samples are equal.
KdeModel fit_kde(const std::vector<double>& durations);

/// A stored sample plus N(0, bandwidth²) noise, redrawn until ≥ min_duration.
/// After 10000 rejections min_duration itself is returned.
double sample_duration(const KdeModel& kde, Rng& rng, double min_duration = 0.0);

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Walks the timeline, cutting at the first clip whose end reaches the running
/// target. Draws are at least the video's shortest clip duration.
std::vector<Segment> segment_by_kde(const std::vector<ClipTime>& clip_times, const KdeModel& kde, Rng& rng);

enum class SegmentOp { retain, insert, replace };
std::string_view to_string(SegmentOp op);

struct ProvenanceRecord {
  std::string video_id;
  std::string kind;  // retained, inserted, replaced, or warning
  std::string source_video;
  std::size_t source_begin = 0, source_end = 0;  // clip range in the source video
  std::size_t out_begin = 0, out_end = 0;        // clip range in the pseudo sequence
  std::string note;
};

struct PseudoLabeledSequence {
  ClipFeatureSequence clips;  // labels are the pseudo boundaries
  std::vector<ProvenanceRecord> provenance;
  std::vector<SegmentOp> ops;  // one per original segment
};

/// Applies insert / replace / retain (probability 1/3 each) to every
/// segment. Foreign segments are KDE-length runs cut from a random clip of
/// a random pool video; inserted ones go right after the current segment.
/// Clips are re-timed back to back and the result is truncated to
/// max_seq_len. An empty pool retains everything and records a warning.
PseudoLabeledSequence corrupt_segments(const UnlabeledVideo& video, const std::vector<Segment>& segments,
                                       const std::vector<const UnlabeledVideo*>& pool, const KdeModel& kde, Rng& rng,
                                       std::size_t max_seq_len);

/// Topic durations (seconds) of every labelled video.
std::vector<double> topic_durations(const std::vector<ClipFeatureSequence>& videos);

/// Pseudo-labelled corpus from unlabeled videos: per video, segment_by_kde
/// then corrupt_segments with every other video as the pool. Each video uses
/// its own child stream of `seed`.
std::vector<PseudoLabeledSequence> make_pretrain_corpus(const std::vector<UnlabeledVideo>& videos, const KdeModel& kde,
                                                        std::uint64_t seed, std::size_t max_seq_len);

/// Tab-separated provenance lines with a '#' header.
std::string format_provenance(const std::vector<ProvenanceRecord>& records);

struct SynthConfig {
  std::size_t train_videos = 200;
  std::size_t valid_videos = 50;
  std::size_t test_videos = 50;
  std::size_t unlabeled_videos = 200;
  std::size_t clips_min = 64;
  std::size_t clips_max = 64;
  std::size_t topics_min = 4;
  std::size_t topics_max = 8;
  std::size_t min_topic_clips = 3;
  std::size_t latent_dim = 8;
  std::size_t visual_dim = 24;
  std::size_t text_dim = 24;
  double noise = 0.3;
  double boundary_strength = 3.0;
  double clip_seconds_min = 8.0;
  double clip_seconds_max = 16.0;
  std::uint64_t mixing_seed = 0;  // 0: derived from the corpus seed

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

struct SynthCorpus {
  std::vector<ClipFeatureSequence> train, valid, test;
  std::vector<UnlabeledVideo> unlabeled;
  /// Mean per-video exact F₁ on `test` of a boundary/non-boundary
  /// nearest-centroid classifier fit on raw train features.
  double oracle_f1 = 0.0;
};

/// Per topic a latent z ~ N(0, I); per clip
///   visual = A_v·[z ; s·b] + noise·η_v,  text = A_t·[z ; s·b] + noise·η_t
/// with b = 1 on a topic's last clip and s the boundary strength.
SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed);

double nearest_centroid_oracle(const std::vector<ClipFeatureSequence>& train,
                               const std::vector<ClipFeatureSequence>& test);

}  // namespace vts
