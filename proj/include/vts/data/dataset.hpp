#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vts/metrics/metrics.hpp"
#include "vts/numerics/array.hpp"

namespace vts {

struct ClipTime {
  double start = 0.0;
  double end = 0.0;
  friend bool operator==(const ClipTime&, const ClipTime&) = default;
};

/// A video with features but no labels. Pseudo-labelling works on this type
/// so it cannot see ground truth.
struct UnlabeledVideo {
  std::string video_id;
  std::vector<ClipTime> clip_times;
  Array visual;  // [n×Dv]
  Array text;    // [n×Dt]

  std::size_t n() const { return clip_times.size(); }
};

/// One video: per-clip times, features and optional boundary labels
/// (labels[i] = 1 when clip i ends a topic).
struct ClipFeatureSequence {
  std::string video_id;
  std::vector<ClipTime> clip_times;
  Array visual;
  Array text;
  std::optional<std::vector<std::uint8_t>> labels;

  std::size_t n() const { return clip_times.size(); }
  /// Throws DataError on inconsistent sizes, non-monotone or overlapping
  /// times, non-binary labels or non-finite features.
  void validate() const;

  UnlabeledVideo without_labels() const;
  static ClipFeatureSequence from(const UnlabeledVideo& v, std::optional<std::vector<std::uint8_t>> labels = {});
  /// Clips [begin, end) as a new sequence with the same id.
  ClipFeatureSequence slice(std::size_t begin, std::size_t end) const;
  /// Labelled boundaries as a segmentation (last clip excluded).
  TopicSegmentation segmentation() const;
};

std::vector<double> clip_end_times(const std::vector<ClipTime>& times);

// --- VTSF feature blobs -------------------------------------------------
// "VTSF", u32 version (1), u32 rows, u32 cols, rows×cols f32, all little-endian.
inline constexpr std::uint32_t kVtsfVersion = 1;

std::string encode_vtsf(const Array& a);
Array decode_vtsf(std::string_view bytes, const std::string& what);
void write_vtsf(const std::string& path, const Array& a);
Array read_vtsf(const std::string& path);

// --- per-video directories ----------------------------------------------
// <corpus>/<video_id>/manifest.json, visual.vtsf, text.vtsf

void write_features(const std::string& video_dir, const ClipFeatureSequence& seq);
ClipFeatureSequence read_features(const std::string& video_dir);

void write_corpus(const std::string& corpus_dir, const std::vector<ClipFeatureSequence>& videos);
/// All videos under a corpus directory, ordered by directory name.
std::vector<ClipFeatureSequence> read_corpus(const std::string& corpus_dir);

// --- windows --------------------------------------------------------------

struct Window {
  std::string video_id;
  std::size_t begin = 0;
  std::size_t end = 0;
  bool first_is_overlap = false;  // clip `begin` is also the previous window's last clip

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Window&, const Window&) = default;
};

/// Windows of at most max_seq_len clips; each later window starts at the
/// previous window's last clip.
std::vector<Window> make_windows(std::size_t n, std::size_t max_seq_len, const std::string& video_id = "");

/// Per-clip probabilities over the full video. A junction clip takes the
/// value from the later window.
std::vector<double> merge_window_predictions(const std::vector<Window>& windows,
                                             const std::vector<std::vector<double>>& window_probs, std::size_t n);

// --- batching -------------------------------------------------------------

struct PaddedSequence {
  std::size_t source = 0;  // index into the input list
  std::size_t n_valid = 0;
  Array visual;                      // [L×Dv], zero rows past n_valid
  Array text;                        // [L×Dt]
  std::vector<std::uint8_t> labels;  // length L, 0 past n_valid
  std::vector<std::uint8_t> mask;    // length L, 1 for valid clips
};

struct Batch {
  std::size_t length = 0;
  std::vector<PaddedSequence> items;
};

/// Consecutive groups of `batch_size` sequences, each padded at the tail to
/// the group's longest length.
std::vector<Batch> batch_and_mask(const std::vector<const ClipFeatureSequence*>& seqs, std::size_t batch_size);

// --- predictions ----------------------------------------------------------

struct PredictionRecord {
  std::string video_id;
  std::size_t clip_index = 0;
  double probability = 0.0;
  bool boundary = false;
  friend bool operator==(const PredictionRecord&, const PredictionRecord&) = default;
};

/// Tab-separated, one record per line after a '#' header:
/// video_id, clip_index, probability (shortest round-trip form), boundary (0/1).
std::string format_predictions(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> parse_predictions(std::string_view text, const std::string& what);
void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> read_predictions(const std::string& path);

/// C-locale shortest round-trip text for a double.
std::string format_double(double v);

}  // namespace vts
