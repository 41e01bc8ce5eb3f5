#include "vts/train/trainer.hpp"

#include <chrono>
#include <map>
#include <ostream>

#include "json.hpp"
#include "vts/error.hpp"

namespace vts {

ModelConfig config_for_data(ModelConfig cfg, const std::vector<ClipFeatureSequence>& data) {
  if (data.empty()) throw DataError("empty corpus");
  const std::size_t dv = data[0].visual.cols(), dt = data[0].text.cols();
  for (const auto& s : data) {
    if (s.visual.cols() != dv || s.text.cols() != dt) {
      throw DimensionError("video " + s.video_id + " has feature widths " + std::to_string(s.visual.cols()) + "/" +
                           std::to_string(s.text.cols()) + ", expected " + std::to_string(dv) + "/" +
                           std::to_string(dt));
    }
  }
  if ((cfg.visual_dim != 0 && cfg.visual_dim != dv) || (cfg.text_dim != 0 && cfg.text_dim != dt)) {
    throw DimensionError("data feature widths " + std::to_string(dv) + "/" + std::to_string(dt) +
                         " do not match the model's " + std::to_string(cfg.visual_dim) + "/" +
                         std::to_string(cfg.text_dim));
  }
  cfg.visual_dim = dv;
  cfg.text_dim = dt;
  return cfg;
}

std::vector<ClipFeatureSequence> training_windows(const std::vector<ClipFeatureSequence>& data,
                                                  std::size_t max_seq_len) {
  std::vector<ClipFeatureSequence> out;
  for (const auto& s : data) {
    if (s.n() <= max_seq_len) {
      out.push_back(s);
      continue;
    }
    for (const auto& w : make_windows(s.n(), max_seq_len, s.video_id)) out.push_back(s.slice(w.begin, w.end));
  }
  return out;
}

SequenceLoss batch_loss(ParamBinder& bind, const Batch& batch, Stage stage, Rng& rng, bool training,
                        std::vector<std::size_t>* expert_counts) {
  const ModelConfig& cfg = bind.params().config();
  SequenceLoss out;
  for (const auto& item : batch.items) {
    const FusedStates fs = fusion_stack(bind, constant(item.visual), constant(item.text), item.mask, rng, training);
    SequenceLoss l = sequence_loss(fs, item.labels, item.n_valid, cfg, stage);
    if (expert_counts) {
      for (const auto& t : fs.gate_stats) {
        const std::size_t e_count = t.gates.cols();
        expert_counts->resize(e_count, 0);
        for (auto r : t.rows) {
          for (std::size_t e = 0; e < e_count; ++e) {
            if (t.gates.value()[r * e_count + e] != 0.0) ++(*expert_counts)[e];
          }
        }
      }
    }
    out.total = out.total.defined() ? add(out.total, l.total) : l.total;
    out.parts += l.parts;
  }
  if (!out.total.defined()) out.total = constant(Array::scalar(0.0));
  return out;
}

namespace {

nlohmann::ordered_json breakdown_json(const LossBreakdown& b) {
  nlohmann::ordered_json j;
  j["l_vts"] = b.l_vts;
  j["l_cma"] = b.l_cma;
  j["l_mcssl"] = b.l_mcssl;
  j["l_importance"] = b.l_importance;
  j["l_load"] = b.l_load;
  j["l_balance"] = b.l_balance;
  j["total"] = b.total;
  return j;
}

LossBreakdown scaled(LossBreakdown b, double s) {
  b.l_vts *= s;
  b.l_cma *= s;
  b.l_mcssl *= s;
  b.l_importance *= s;
  b.l_load *= s;
  b.l_balance *= s;
  b.total *= s;
  return b;
}

}  // namespace

TrainResult train_model(ModelParams params, const std::vector<ClipFeatureSequence>& data, const TrainOptions& opt) {
  const ModelConfig& cfg = params.config();
  const auto windows = training_windows(data, cfg.max_seq_len);
  for (const auto& w : windows) {
    if (!w.labels) throw DataError("video " + w.video_id + " has no labels");
  }
  const auto start = std::chrono::steady_clock::now();
  const char* stage_name = opt.stage == Stage::pretrain ? "pretrain" : "finetune";
  Rng rng = Rng(opt.seed).fork(opt.stage == Stage::pretrain ? 1 : 2);
  AdamW optimizer(opt.optim);
  auto ptrs = params.pointers();

  TrainResult result;
  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    std::vector<const ClipFeatureSequence*> seqs;
    for (auto i : order) seqs.push_back(&windows[i]);
    EpochSummary summary;
    summary.epoch = epoch;
    for (const auto& batch : batch_and_mask(seqs, opt.batch_size)) {
      params.zero_grad();
      SequenceLoss loss;
      std::vector<std::size_t> util;
      {
        ParamBinder bind(params);
        loss = batch_loss(bind, batch, opt.stage, rng, true, &util);
        backward(loss.total);
      }
      ++step;
      const bool ok = optimizer.step(ptrs);
      ++summary.steps;
      if (!ok) ++summary.skipped_steps;
      summary.mean += loss.parts;
      result.step_totals.push_back(loss.parts.total);
      if (opt.log) {
        nlohmann::ordered_json j;
        j["stage"] = stage_name;
        j["epoch"] = epoch;
        j["step"] = step;
        j["sequences"] = batch.items.size();
        j["loss"] = breakdown_json(loss.parts);
        if (!util.empty()) j["expert_util"] = util;
        j["skipped"] = !ok;
        j["wall_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        *opt.log << j.dump() << '\n';
      }
    }
    summary.mean = scaled(summary.mean, windows.empty() ? 0.0 : 1.0 / static_cast<double>(windows.size()));
    if (opt.valid && !opt.valid->empty()) {
      const MetricsReport r = evaluate_model(params, *opt.valid, opt.metric);
      summary.valid_avg = r.corpus.avg;
      if (result.best_epoch == 0 || summary.valid_avg > result.best_valid_avg) {
        result.best_epoch = epoch;
        result.best_valid_avg = summary.valid_avg;
        result.params = params;
      }
    }
    if (opt.log) {
      nlohmann::ordered_json j;
      j["stage"] = stage_name;
      j["epoch_end"] = epoch;
      j["steps"] = summary.steps;
      j["skipped_steps"] = summary.skipped_steps;
      j["mean_loss"] = breakdown_json(summary.mean);
      if (!std::isnan(summary.valid_avg)) j["valid_avg"] = summary.valid_avg;
      *opt.log << j.dump() << '\n';
    }
    result.epochs.push_back(summary);
  }
  if (result.best_epoch == 0) result.params = std::move(params);
  return result;
}

std::vector<double> predict_probabilities(ModelParams& params, const ClipFeatureSequence& seq) {
  NoGradGuard guard;
  const ModelConfig& cfg = params.config();
  Rng rng(0);
  const auto windows = make_windows(seq.n(), cfg.max_seq_len, seq.video_id);
  std::vector<std::vector<double>> probs;
  for (const auto& w : windows) {
    const ClipFeatureSequence part = windows.size() == 1 ? seq : seq.slice(w.begin, w.end);
    if (part.n() == 0) {
      probs.emplace_back();
      continue;
    }
    const FusedStates fs = fusion_stack(params, constant(part.visual), constant(part.text), {}, rng, false);
    probs.push_back(fs.p.value().vec());
  }
  return merge_window_predictions(windows, probs, seq.n());
}

std::vector<PredictionRecord> segment_corpus(ModelParams& params, const std::vector<ClipFeatureSequence>& data) {
  std::vector<PredictionRecord> out;
  const double thr = params.config().threshold;
  for (const auto& s : data) {
    const auto p = predict_probabilities(params, s);
    for (std::size_t i = 0; i < p.size(); ++i) {
      out.push_back({s.video_id, i, p[i], i + 1 < p.size() && p[i] > thr});
    }
  }
  return out;
}

MetricsReport evaluate_predictions(const std::vector<PredictionRecord>& records,
                                   const std::vector<ClipFeatureSequence>& ground_truth, const MetricOptions& opt) {
  std::map<std::string, std::vector<const PredictionRecord*>> by_video;
  for (const auto& r : records) by_video[r.video_id].push_back(&r);
  std::string missing;
  for (const auto& g : ground_truth) {
    if (!by_video.count(g.video_id)) missing += (missing.empty() ? "" : ", ") + g.video_id;
  }
  if (!missing.empty()) throw DataError("no predictions for videos: " + missing);

  std::vector<VideoMetrics> videos;
  for (const auto& g : ground_truth) {
    const auto& recs = by_video[g.video_id];
    TopicSegmentation pred;
    pred.n = g.n();
    pred.clip_end_times = clip_end_times(g.clip_times);
    std::vector<std::uint8_t> seen(g.n(), 0);
    for (const auto* r : recs) {
      if (r->clip_index >= g.n() || seen[r->clip_index]) {
        throw DataError("video " + g.video_id + ": duplicate or out-of-range clip " + std::to_string(r->clip_index));
      }
      seen[r->clip_index] = 1;
    }
    if (recs.size() != g.n()) {
      throw DataError("video " + g.video_id + ": " + std::to_string(recs.size()) + " records for " +
                      std::to_string(g.n()) + " clips");
    }
    std::vector<std::uint8_t> is_b(g.n(), 0);
    for (const auto* r : recs) is_b[r->clip_index] = r->boundary;
    for (std::size_t i = 0; i + 1 < g.n(); ++i) {
      if (is_b[i]) pred.boundaries.push_back(i);
    }
    videos.push_back(evaluate_video(g.video_id, pred, g.segmentation(), opt));
  }
  return aggregate(std::move(videos), opt);
}

MetricsReport evaluate_model(ModelParams& params, const std::vector<ClipFeatureSequence>& data,
                             const MetricOptions& opt) {
  return evaluate_predictions(segment_corpus(params, data), data, opt);
}

}  // namespace vts
