#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "vts/fusion/config.hpp"
#include "vts/synth/synth.hpp"
#include "vts/train/optimizer.hpp"

namespace vts {

/// Everything a CLI run needs. Keys in config files and `--set` overrides
/// are the field names below (model fields unprefixed, synthetic-corpus
/// fields prefixed `synth_`).
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  AdamWConfig optim;
  std::size_t pretrain_epochs = 1;
  std::size_t finetune_epochs = 5;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // ablation runs; empty means {seed}
  bool deterministic = false;
  double metric_k = 30.0;
  bool loose_bs = false;
  bool miou_gt_only = false;
  std::size_t gradcheck_instances = 20;
  std::size_t gradcheck_clips = 6;

  std::string train, valid, test, unlabeled, pretrain_data, corpus, ground_truth, predictions;
  std::string checkpoint_in, checkpoint_out, report, log, out_dir, annotations;

  SynthConfig synth;

  /// Sets one key from its text value. Unknown keys and bad values are
  /// UsageErrors.
  void set(std::string_view key, std::string_view value);
  /// "key=value".
  void apply_override(std::string_view assignment);
  /// Flat `key = value` lines; '#' starts a comment.
  void apply_text(std::string_view text, const std::string& what);
  void apply_file(const std::string& path);

  /// Every key with its current value, one `key = value` per line.
  std::string dump() const;
  static std::vector<std::string> keys();
};

}  // namespace vts
