#pragma once

#include <cmath>
#include <iosfwd>
#include <limits>
#include <vector>

#include "vts/data/dataset.hpp"
#include "vts/fusion/model.hpp"
#include "vts/losses/losses.hpp"
#include "vts/metrics/metrics.hpp"
#include "vts/train/optimizer.hpp"

namespace vts {

struct TrainOptions {
  Stage stage = Stage::finetune;
  std::size_t epochs = 1;
  AdamWConfig optim;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  /// JSON lines, one per optimizer step and one per epoch (may be null).
  std::ostream* log = nullptr;
  /// Fine-tuning keeps the epoch with the best validation Avg when given.
  const std::vector<ClipFeatureSequence>* valid = nullptr;
  MetricOptions metric;
};

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  LossBreakdown mean;  // per-sequence mean over the epoch
  double valid_avg = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochSummary> epochs;
  std::vector<double> step_totals;  // batch objective per step (sum over sequences)
  std::size_t best_epoch = 0;       // 1-based; 0 when no validation ran
  double best_valid_avg = std::numeric_limits<double>::quiet_NaN();
};

/// Copies `cfg` with visual_dim/text_dim taken from the data; a configured
/// non-zero width that disagrees is a DimensionError.
ModelConfig config_for_data(ModelConfig cfg, const std::vector<ClipFeatureSequence>& data);

/// Long sequences split into max_seq_len windows (with the one-clip overlap).
std::vector<ClipFeatureSequence> training_windows(const std::vector<ClipFeatureSequence>& data,
                                                  std::size_t max_seq_len);

/// Batch objective: the sum of per-sequence objectives of one padded batch,
/// all sharing one set of parameter leaves. `expert_counts`, when given,
/// receives per-expert routing counts over valid rows of every MoE layer.
SequenceLoss batch_loss(ParamBinder& bind, const Batch& batch, Stage stage, Rng& rng, bool training,
                        std::vector<std::size_t>* expert_counts = nullptr);

TrainResult train_model(ModelParams params, const std::vector<ClipFeatureSequence>& data, const TrainOptions& opt);

/// Evaluation-mode probabilities for every clip, windowed and merged.
std::vector<double> predict_probabilities(ModelParams& params, const ClipFeatureSequence& seq);

/// One record per clip; the final clip is never a boundary.
std::vector<PredictionRecord> segment_corpus(ModelParams& params, const std::vector<ClipFeatureSequence>& data);

/// Records grouped by video and checked against the ground truth: every
/// ground-truth video needs exactly one record per clip.
MetricsReport evaluate_predictions(const std::vector<PredictionRecord>& records,
                                   const std::vector<ClipFeatureSequence>& ground_truth, const MetricOptions& opt);

MetricsReport evaluate_model(ModelParams& params, const std::vector<ClipFeatureSequence>& data,
                             const MetricOptions& opt);

}  // namespace vts
