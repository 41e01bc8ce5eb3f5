#include "vts/synth/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vts/error.hpp"

namespace vts {

double KdeModel::density(double x) const {
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * bandwidth * static_cast<double>(samples.size()));
  double s = 0.0;
  for (double m : samples) {
    const double u = (x - m) / bandwidth;
    s += std::exp(-0.5 * u * u);
  }
  return s * norm;
}

KdeModel fit_kde(const std::vector<double>& durations) {
  if (durations.size() < 2) throw DataError("fit_kde needs at least 2 durations, got " + std::to_string(durations.size()));
  for (double d : durations) {
    if (!(d > 0.0) || !std::isfinite(d)) throw DataError("fit_kde: durations must be positive and finite");
  }
  const double m = static_cast<double>(durations.size());
  double mean = 0.0;
  for (double d : durations) mean += d;
  mean /= m;
  double var = 0.0;
  for (double d : durations) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / (m - 1.0));
  KdeModel k;
  k.samples = durations;
  k.bandwidth = sd > 0.0 ? 1.06 * sd * std::pow(m, -0.2) : 1.0;
  return k;
}

double sample_duration(const KdeModel& kde, Rng& rng, double min_duration) {
  if (kde.samples.empty()) throw DataError("sample_duration: empty KDE");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const double base = kde.samples[rng.uniform_int(kde.samples.size())];
    const double d = base + kde.bandwidth * rng.normal();
    if (d >= min_duration) return d;
  }
  return min_duration;
}

namespace {

double shortest_clip(const std::vector<ClipTime>& t) {
  double m = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double d = t[i].end - t[i].start;
    if (i == 0 || d < m) m = d;
  }
  return m;
}

}  // namespace

std::vector<Segment> segment_by_kde(const std::vector<ClipTime>& clip_times, const KdeModel& kde, Rng& rng) {
  std::vector<Segment> out;
  const std::size_t n = clip_times.size();
  if (n == 0) return out;
  const double min_d = shortest_clip(clip_times);
  double target = clip_times[0].start + sample_duration(kde, rng, min_d);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 == n) {
      out.push_back({begin, n});
    } else if (clip_times[i].end >= target) {
      out.push_back({begin, i + 1});
      begin = i + 1;
      target = clip_times[i].end + sample_duration(kde, rng, min_d);
    }
  }
  return out;
}

std::string_view to_string(SegmentOp op) {
  switch (op) {
    case SegmentOp::retain: return "retained";
    case SegmentOp::insert: return "inserted";
    case SegmentOp::replace: return "replaced";
  }
  return "?";
}

PseudoLabeledSequence corrupt_segments(const UnlabeledVideo& video, const std::vector<Segment>& segments,
                                       const std::vector<const UnlabeledVideo*>& pool, const KdeModel& kde, Rng& rng,
                                       std::size_t max_seq_len) {
  struct Piece {
    const UnlabeledVideo* src;
    std::size_t begin, end;
    std::string kind;
  };
  std::vector<const UnlabeledVideo*> donors;
  for (const auto* p : pool) {
    if (p && p->n() > 0) donors.push_back(p);
  }
  PseudoLabeledSequence out;
  auto foreign = [&]() {
    const UnlabeledVideo* src = donors[rng.uniform_int(donors.size())];
    const double dur = sample_duration(kde, rng, shortest_clip(src->clip_times));
    const std::size_t begin = rng.uniform_int(src->n());
    std::size_t end = begin;
    double acc = 0.0;
    while (end < src->n() && (end == begin || acc < dur)) {
      acc += src->clip_times[end].end - src->clip_times[end].start;
      ++end;
    }
    return std::pair{src, Segment{begin, end}};
  };

  std::vector<Piece> pieces;
  if (donors.empty()) {
    out.provenance.push_back({video.video_id, "warning", "", 0, 0, 0, 0, "empty pool: all segments retained"});
  }
  for (const auto& seg : segments) {
    SegmentOp op = SegmentOp::retain;
    if (!donors.empty()) op = static_cast<SegmentOp>(rng.uniform_int(3));
    out.ops.push_back(op);
    if (op == SegmentOp::replace) {
      auto [src, s] = foreign();
      pieces.push_back({src, s.begin, s.end, "replaced"});
      continue;
    }
    pieces.push_back({&video, seg.begin, seg.end, "retained"});
    if (op == SegmentOp::insert) {
      auto [src, s] = foreign();
      pieces.push_back({src, s.begin, s.end, "inserted"});
    }
  }

  std::size_t total = 0;
  for (const auto& p : pieces) total += p.end - p.begin;
  total = std::min(total, max_seq_len);
  ClipFeatureSequence& seq = out.clips;
  seq.video_id = video.video_id;
  seq.visual = Array({total, video.visual.cols()});
  seq.text = Array({total, video.text.cols()});
  std::vector<std::uint8_t> labels(total, 0);
  double cursor = video.n() > 0 ? video.clip_times[0].start : 0.0;
  std::size_t row = 0;
  for (const auto& p : pieces) {
    if (row >= total) break;
    if (p.src->visual.cols() != seq.visual.cols() || p.src->text.cols() != seq.text.cols()) {
      throw DataError("video " + p.src->video_id + " has feature widths different from " + video.video_id);
    }
    const std::size_t out_begin = row;
    for (std::size_t i = p.begin; i < p.end && row < total; ++i, ++row) {
      const double d = p.src->clip_times[i].end - p.src->clip_times[i].start;
      seq.clip_times.push_back({cursor, cursor + d});
      cursor += d;
      std::copy_n(p.src->visual.row_span(i).begin(), seq.visual.cols(), seq.visual.row_span(row).begin());
      std::copy_n(p.src->text.row_span(i).begin(), seq.text.cols(), seq.text.row_span(row).begin());
    }
    labels[row - 1] = 1;
    out.provenance.push_back({video.video_id, p.kind, p.src->video_id, p.begin, p.begin + (row - out_begin), out_begin,
                              row, ""});
  }
  seq.labels = std::move(labels);
  return out;
}

std::vector<double> topic_durations(const std::vector<ClipFeatureSequence>& videos) {
  std::vector<double> out;
  for (const auto& v : videos) {
    if (!v.labels || v.n() == 0) continue;
    double start = v.clip_times[0].start;
    for (std::size_t i = 0; i < v.n(); ++i) {
      if ((*v.labels)[i] || i + 1 == v.n()) {
        out.push_back(v.clip_times[i].end - start);
        if (i + 1 < v.n()) start = v.clip_times[i + 1].start;
      }
    }
  }
  return out;
}

std::vector<PseudoLabeledSequence> make_pretrain_corpus(const std::vector<UnlabeledVideo>& videos, const KdeModel& kde,
                                                        std::uint64_t seed, std::size_t max_seq_len) {
  std::vector<PseudoLabeledSequence> out;
  out.reserve(videos.size());
  const Rng base(seed);
  for (std::size_t i = 0; i < videos.size(); ++i) {
    Rng rng = base.fork(i);
    std::vector<const UnlabeledVideo*> pool;
    for (std::size_t j = 0; j < videos.size(); ++j) {
      if (j != i) pool.push_back(&videos[j]);
    }
    const auto segs = segment_by_kde(videos[i].clip_times, kde, rng);
    out.push_back(corrupt_segments(videos[i], segs, pool, kde, rng, max_seq_len));
  }
  return out;
}

std::string format_provenance(const std::vector<ProvenanceRecord>& records) {
  std::string s = "# video_id\tkind\tsource_video\tsource_begin\tsource_end\tout_begin\tout_end\tnote\n";
  for (const auto& r : records) {
    s += r.video_id + '\t' + r.kind + '\t' + r.source_video + '\t' + std::to_string(r.source_begin) + '\t' +
         std::to_string(r.source_end) + '\t' + std::to_string(r.out_begin) + '\t' + std::to_string(r.out_end) + '\t' +
         r.note + '\n';
  }
  return s;
}

void SynthConfig::validate() const {
  if (clips_min < 2 || clips_max < clips_min) throw ConfigError("synth: need 2 <= clips_min <= clips_max");
  if (topics_min == 0 || topics_max < topics_min) throw ConfigError("synth: need 1 <= topics_min <= topics_max");
  if (min_topic_clips == 0 || topics_min * min_topic_clips > clips_min) {
    throw ConfigError("synth: topics_min * min_topic_clips exceeds clips_min");
  }
  if (latent_dim == 0 || visual_dim == 0 || text_dim == 0) throw ConfigError("synth: dimensions must be positive");
  if (noise < 0.0 || boundary_strength < 0.0) throw ConfigError("synth: noise and boundary_strength must be >= 0");
  if (!(clip_seconds_min > 0.0) || clip_seconds_max < clip_seconds_min) {
    throw ConfigError("synth: need 0 < clip_seconds_min <= clip_seconds_max");
  }
}

namespace {

Array mixing_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Array a({rows, cols});
  const double s = 1.0 / std::sqrt(static_cast<double>(cols));
  for (auto& x : a.vec()) x = rng.normal() * s;
  return a;
}

ClipFeatureSequence synth_video(const SynthConfig& cfg, const Array& av, const Array& at, Rng& rng, std::string id) {
  const auto n = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.clips_min), static_cast<std::int64_t>(cfg.clips_max)));
  const std::size_t max_topics = std::min(cfg.topics_max, n / cfg.min_topic_clips);
  const auto topics = static_cast<std::size_t>(
      rng.uniform_int(static_cast<std::int64_t>(cfg.topics_min), static_cast<std::int64_t>(max_topics)));
  std::vector<std::size_t> lengths(topics, cfg.min_topic_clips);
  for (std::size_t extra = n - topics * cfg.min_topic_clips; extra > 0; --extra) ++lengths[rng.uniform_int(topics)];

  const std::size_t ld = cfg.latent_dim;
  ClipFeatureSequence seq;
  seq.video_id = std::move(id);
  seq.visual = Array({n, cfg.visual_dim});
  seq.text = Array({n, cfg.text_dim});
  std::vector<std::uint8_t> labels(n, 0);
  std::vector<double> h(ld + 1);
  double t = 0.0;
  std::size_t row = 0;
  for (std::size_t k = 0; k < topics; ++k) {
    for (std::size_t j = 0; j < ld; ++j) h[j] = rng.normal();
    for (std::size_t c = 0; c < lengths[k]; ++c, ++row) {
      const bool last = c + 1 == lengths[k];
      h[ld] = last ? cfg.boundary_strength : 0.0;
      if (last) labels[row] = 1;
      const double d = rng.uniform(cfg.clip_seconds_min, cfg.clip_seconds_max);
      seq.clip_times.push_back({t, t + d});
      t += d;
      auto mix = [&](const Array& a, std::span<double> out) {
        for (std::size_t r = 0; r < out.size(); ++r) {
          double s = 0.0;
          for (std::size_t j = 0; j <= ld; ++j) s += a.at(r, j) * h[j];
          out[r] = s + cfg.noise * rng.normal();
        }
      };
      mix(av, seq.visual.row_span(row));
      mix(at, seq.text.row_span(row));
    }
  }
  seq.labels = std::move(labels);
  return seq;
}

std::vector<double> joint_row(const ClipFeatureSequence& s, std::size_t i) {
  std::vector<double> x(s.visual.row_span(i).begin(), s.visual.row_span(i).end());
  x.insert(x.end(), s.text.row_span(i).begin(), s.text.row_span(i).end());
  return x;
}

}  // namespace

SynthCorpus generate_synthetic_corpus(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng mix_rng(cfg.mixing_seed ? cfg.mixing_seed : Rng(seed).fork(0x6d6978).next_u64());
  const Array av = mixing_matrix(cfg.visual_dim, cfg.latent_dim + 1, mix_rng);
  const Array at = mixing_matrix(cfg.text_dim, cfg.latent_dim + 1, mix_rng);

  SynthCorpus out;
  const Rng base(seed);
  auto make = [&](std::size_t count, std::uint64_t salt, const char* prefix) {
    std::vector<ClipFeatureSequence> vids;
    vids.reserve(count);
    for (std::size_t v = 0; v < count; ++v) {
      Rng rng = base.fork((salt << 32) | v);
      char id[32];
      std::snprintf(id, sizeof id, "%s_%04zu", prefix, v);
      vids.push_back(synth_video(cfg, av, at, rng, id));
    }
    return vids;
  };
  out.train = make(cfg.train_videos, 1, "train");
  out.valid = make(cfg.valid_videos, 2, "valid");
  out.test = make(cfg.test_videos, 3, "test");
  for (auto& v : make(cfg.unlabeled_videos, 4, "unlabeled")) out.unlabeled.push_back(v.without_labels());
  if (!out.train.empty() && !out.test.empty()) out.oracle_f1 = nearest_centroid_oracle(out.train, out.test);
  return out;
}

double nearest_centroid_oracle(const std::vector<ClipFeatureSequence>& train,
                               const std::vector<ClipFeatureSequence>& test) {
  if (train.empty() || test.empty()) throw DataError("nearest_centroid_oracle: empty corpus");
  const std::size_t dim = train[0].visual.cols() + train[0].text.cols();
  std::vector<double> c[2] = {std::vector<double>(dim), std::vector<double>(dim)};
  double count[2] = {0.0, 0.0};
  for (const auto& s : train) {
    for (std::size_t i = 0; i + 1 < s.n(); ++i) {
      const int cls = (*s.labels)[i] ? 1 : 0;
      const auto x = joint_row(s, i);
      for (std::size_t j = 0; j < dim; ++j) c[cls][j] += x[j];
      count[cls] += 1.0;
    }
  }
  for (int k = 0; k < 2; ++k) {
    if (count[k] == 0.0) throw DataError("nearest_centroid_oracle: a class has no training clips");
    for (auto& v : c[k]) v /= count[k];
  }
  double total = 0.0;
  for (const auto& s : test) {
    TopicSegmentation pred;
    pred.n = s.n();
    pred.clip_end_times = clip_end_times(s.clip_times);
    for (std::size_t i = 0; i + 1 < s.n(); ++i) {
      const auto x = joint_row(s, i);
      double d0 = 0.0, d1 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        d0 += (x[j] - c[0][j]) * (x[j] - c[0][j]);
        d1 += (x[j] - c[1][j]) * (x[j] - c[1][j]);
      }
      if (d1 < d0) pred.boundaries.push_back(i);
    }
    total += exact_f1(pred, s.segmentation());
  }
  return total / static_cast<double>(test.size());
}

}  // namespace vts
