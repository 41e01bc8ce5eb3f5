// Command-line front end: synthetic data, pseudo-labelled pre-training data,
// training, segmentation, evaluation and checks.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "CLI11.hpp"
#include "json.hpp"
#include "vts/error.hpp"
#include "vts/fusion/checkpoint.hpp"
#include "vts/io/binary.hpp"
#include "vts/synth/synth.hpp"
#include "vts/train/model_gradcheck.hpp"
#include "vts/train/run_config.hpp"
#include "vts/train/trainer.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace vts;

namespace {

void require(const std::string& value, const char* key) {
  if (value.empty()) throw UsageError(std::string("missing required key '") + key + "' (use --set " + key + "=...)");
}

MetricOptions metric_options(const RunConfig& rc) { return {rc.metric_k, rc.loose_bs, rc.miou_gt_only}; }

std::unique_ptr<std::ofstream> open_log(const RunConfig& rc) {
  if (rc.log.empty()) return nullptr;
  if (const auto parent = fs::path(rc.log).parent_path(); !parent.empty()) fs::create_directories(parent);
  auto out = std::make_unique<std::ofstream>(rc.log, std::ios::trunc);
  if (!*out) throw DataError("cannot write log " + rc.log);
  return out;
}

void ensure_parent(const std::string& path) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
}

TrainOptions train_options(const RunConfig& rc, Stage stage, std::ostream* log, std::uint64_t seed) {
  TrainOptions o;
  o.stage = stage;
  o.epochs = stage == Stage::pretrain ? rc.pretrain_epochs : rc.finetune_epochs;
  o.optim = rc.optim;
  o.batch_size = rc.batch_size;
  o.seed = seed;
  o.log = log;
  o.metric = metric_options(rc);
  return o;
}

ModelParams fresh_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = Rng(seed).fork(0x696e6974);
  return ModelParams::init(cfg, rng);
}

// --- subcommands ----------------------------------------------------------

int cmd_synth_data(const RunConfig& rc) {
  require(rc.out_dir, "out_dir");
  const SynthCorpus c = generate_synthetic_corpus(rc.synth, rc.seed);
  const fs::path out(rc.out_dir);
  write_corpus((out / "train").string(), c.train);
  write_corpus((out / "valid").string(), c.valid);
  write_corpus((out / "test").string(), c.test);
  std::vector<ClipFeatureSequence> unl;
  for (const auto& u : c.unlabeled) unl.push_back(ClipFeatureSequence::from(u));
  write_corpus((out / "unlabeled").string(), unl);
  json j;
  j["seed"] = rc.seed;
  j["train_videos"] = c.train.size();
  j["valid_videos"] = c.valid.size();
  j["test_videos"] = c.test.size();
  j["unlabeled_videos"] = c.unlabeled.size();
  j["oracle_f1"] = c.oracle_f1;
  write_file((out / "synth.json").string(), j.dump(2) + "\n");
  std::cout << "wrote " << c.train.size() << "/" << c.valid.size() << "/" << c.test.size() << "/"
            << c.unlabeled.size() << " videos to " << rc.out_dir << " (nearest-centroid oracle F1 "
            << format_double(std::round(c.oracle_f1 * 10000.0) / 10000.0) << ")\n";
  return 0;
}

int cmd_make_pretrain_data(const RunConfig& rc) {
  require(rc.unlabeled, "unlabeled");
  require(rc.train, "train");
  require(rc.pretrain_data, "pretrain_data");
  const KdeModel kde = fit_kde(topic_durations(read_corpus(rc.train)));
  std::vector<UnlabeledVideo> videos;
  for (const auto& s : read_corpus(rc.unlabeled)) videos.push_back(s.without_labels());
  const auto pseudo = make_pretrain_corpus(videos, kde, rc.seed, rc.model.max_seq_len);
  std::vector<ClipFeatureSequence> seqs;
  std::vector<ProvenanceRecord> prov;
  for (const auto& p : pseudo) {
    seqs.push_back(p.clips);
    prov.insert(prov.end(), p.provenance.begin(), p.provenance.end());
  }
  write_corpus(rc.pretrain_data, seqs);
  write_file((fs::path(rc.pretrain_data) / "provenance.tsv").string(), format_provenance(prov));
  json k;
  k["bandwidth"] = kde.bandwidth;
  k["samples"] = kde.samples;
  write_file((fs::path(rc.pretrain_data) / "kde.json").string(), k.dump() + "\n");
  std::cout << "wrote " << seqs.size() << " pseudo-labelled videos to " << rc.pretrain_data << " (KDE from "
            << kde.samples.size() << " topics, bandwidth " << format_double(kde.bandwidth) << " s)\n";
  return 0;
}

void print_epochs(const TrainResult& r) {
  for (const auto& e : r.epochs) {
    std::cout << "epoch " << e.epoch << " mean_total " << format_double(e.mean.total);
    if (!std::isnan(e.valid_avg)) std::cout << " valid_avg " << format_double(e.valid_avg);
    if (e.skipped_steps) std::cout << " skipped_steps " << e.skipped_steps;
    std::cout << "\n";
  }
}

int cmd_pretrain(const RunConfig& rc) {
  require(rc.pretrain_data, "pretrain_data");
  require(rc.checkpoint_out, "checkpoint_out");
  const auto data = read_corpus(rc.pretrain_data);
  const ModelConfig cfg = config_for_data(rc.model, data);
  auto log = open_log(rc);
  const TrainResult r = train_model(fresh_params(cfg, rc.seed), data, train_options(rc, Stage::pretrain, log.get(), rc.seed));
  ensure_parent(rc.checkpoint_out);
  write_checkpoint(rc.checkpoint_out, r.params);
  print_epochs(r);
  if (!r.step_totals.empty()) {
    std::cout << "first_step_total " << format_double(r.step_totals.front()) << " last_step_total "
              << format_double(r.step_totals.back()) << "\n";
  }
  std::cout << "wrote " << rc.checkpoint_out << "\n";
  return 0;
}

int cmd_finetune(const RunConfig& rc) {
  require(rc.train, "train");
  require(rc.checkpoint_out, "checkpoint_out");
  const auto data = read_corpus(rc.train);
  const ModelConfig cfg = config_for_data(rc.model, data);
  std::vector<ClipFeatureSequence> valid;
  if (!rc.valid.empty()) valid = read_corpus(rc.valid);
  ModelParams init = rc.checkpoint_in.empty() ? fresh_params(cfg, rc.seed) : load_compatible_checkpoint(rc.checkpoint_in, cfg);
  auto log = open_log(rc);
  TrainOptions o = train_options(rc, Stage::finetune, log.get(), rc.seed);
  if (!valid.empty()) o.valid = &valid;
  const TrainResult r = train_model(std::move(init), data, o);
  ensure_parent(rc.checkpoint_out);
  write_checkpoint(rc.checkpoint_out, r.params);
  print_epochs(r);
  if (r.best_epoch) std::cout << "best_epoch " << r.best_epoch << " valid_avg " << format_double(r.best_valid_avg) << "\n";
  std::cout << "wrote " << rc.checkpoint_out << "\n";
  return 0;
}

int cmd_segment(const RunConfig& rc) {
  require(rc.checkpoint_in, "checkpoint_in");
  require(rc.corpus, "corpus");
  require(rc.predictions, "predictions");
  ModelParams params = read_checkpoint(rc.checkpoint_in, rc.model);
  const auto data = read_corpus(rc.corpus);
  config_for_data(params.config(), data);
  const auto records = segment_corpus(params, data);
  ensure_parent(rc.predictions);
  write_predictions(rc.predictions, records);
  std::size_t boundaries = 0;
  for (const auto& r : records) boundaries += r.boundary;
  std::cout << "wrote " << records.size() << " records (" << boundaries << " boundaries) to " << rc.predictions << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& rc) {
  require(rc.predictions, "predictions");
  require(rc.ground_truth, "ground_truth");
  const MetricsReport rep = evaluate_predictions(read_predictions(rc.predictions), read_corpus(rc.ground_truth),
                                                 metric_options(rc));
  const std::string text = report_to_json(rep);
  if (!rc.report.empty()) {
    ensure_parent(rc.report);
    write_file(rc.report, text);
  }
  std::cout << text;
  return 0;
}

int cmd_gradcheck(const RunConfig& rc) {
  const ModelConfig cfg = gradcheck_profile(rc.model);
  Rng rng(rc.seed);
  std::map<std::string, ObjectiveCheck> worst;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < rc.gradcheck_instances; ++i) {
    for (const auto& c : check_model_gradients(cfg, rc.gradcheck_clips, rng)) {
      auto it = worst.find(c.objective);
      if (it == worst.end()) {
        order.push_back(c.objective);
        worst.emplace(c.objective, c);
      } else if (!(c.max_rel_error <= it->second.max_rel_error)) {
        it->second = c;
      }
    }
  }
  bool ok = true;
  std::cout << "fusion_kind " << to_string(cfg.fusion_kind) << ", " << rc.gradcheck_instances << " instances of "
            << rc.gradcheck_clips << " clips\n";
  for (const auto& name : order) {
    const auto& c = worst[name];
    const bool pass = c.max_rel_error < 1e-4;
    ok = ok && pass;
    std::cout << name << " max_rel_error " << c.max_rel_error << " (" << c.worst_param << ") "
              << (pass ? "PASS" : "FAIL") << "\n";
  }
  return ok ? 0 : 1;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t c = s.find(',', pos);
    if (c == std::string::npos) c = s.size();
    if (c > pos) out.push_back(s.substr(pos, c - pos));
    pos = c + 1;
  }
  return out;
}

int cmd_consistency(const RunConfig& rc) {
  require(rc.annotations, "annotations");
  require(rc.corpus, "corpus");
  const auto files = split_list(rc.annotations);
  if (files.size() < 2) throw UsageError("annotations needs at least two comma-separated files");
  std::vector<std::map<std::string, std::vector<PredictionRecord>>> ann;
  for (const auto& f : files) {
    auto& m = ann.emplace_back();
    for (auto& r : read_predictions(f)) m[r.video_id].push_back(std::move(r));
  }
  json j;
  j["annotators"] = files.size();
  auto& per = j["videos"] = json::array();
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& v : read_corpus(rc.corpus)) {
    std::vector<TopicSegmentation> segs;
    for (auto& m : ann) {
      const auto it = m.find(v.video_id);
      if (it == m.end()) throw DataError("video " + v.video_id + " missing from an annotation file");
      TopicSegmentation s;
      s.n = v.n();
      s.clip_end_times = clip_end_times(v.clip_times);
      for (const auto& r : it->second) {
        if (r.boundary && r.clip_index + 1 < v.n()) s.boundaries.push_back(r.clip_index);
      }
      std::sort(s.boundaries.begin(), s.boundaries.end());
      s.validate();
      segs.push_back(std::move(s));
    }
    const double c = consistency_score(segs);
    per.push_back({{"video_id", v.video_id}, {"consistency", std::round(c * 10000.0) / 100.0}});
    total += c;
    ++count;
  }
  j["consistency"] = count ? std::round(total / static_cast<double>(count) * 10000.0) / 100.0 : 0.0;
  std::cout << j.dump(2) << "\n";
  return 0;
}

// {±PT} × {±FT-Coh} × fusion kinds, one report per cell.
int cmd_ablation(const RunConfig& rc) {
  require(rc.pretrain_data, "pretrain_data");
  require(rc.train, "train");
  require(rc.test, "test");
  require(rc.out_dir, "out_dir");
  const auto pre_data = read_corpus(rc.pretrain_data);
  const auto train = read_corpus(rc.train);
  const auto test = read_corpus(rc.test);
  std::vector<ClipFeatureSequence> valid;
  if (!rc.valid.empty()) valid = read_corpus(rc.valid);
  const std::vector<std::uint64_t> seeds = rc.seeds.empty() ? std::vector<std::uint64_t>{rc.seed} : rc.seeds;
  fs::create_directories(rc.out_dir);
  const MetricOptions mopt = metric_options(rc);

  json summary;
  summary["seeds"] = seeds;
  auto& cells = summary["cells"] = json::array();
  std::printf("%-10s %-4s %-7s %7s %7s %7s %7s %7s\n", "fusion", "PT", "FT-Coh", "F1", "BS@k", "F1@k", "mIoU", "Avg");
  for (FusionKind kind : {FusionKind::none, FusionKind::merge, FusionKind::co, FusionKind::merge_moe, FusionKind::co_moe}) {
    RunConfig base = rc;
    base.model.fusion_kind = kind;
    const ModelConfig cfg = config_for_data(base.model, train);
    std::map<std::uint64_t, ModelParams> pretrained;
    for (bool pt : {false, true}) {
      for (bool coh : {false, true}) {
        RunConfig cell = base;
        if (!coh) cell.model.theta = cell.model.gamma = 0.0;
        const ModelConfig cell_cfg = config_for_data(cell.model, train);
        const std::string name = std::string(to_string(kind)) + (pt ? "_pt" : "_nopt") + (coh ? "_ftcoh" : "_noftcoh");
        std::vector<VideoMetrics> per_seed;
        json reports = json::array();
        for (auto seed : seeds) {
          ModelParams init = fresh_params(cfg, seed);
          if (pt) {
            auto it = pretrained.find(seed);
            if (it == pretrained.end()) {
              TrainResult pre = train_model(std::move(init), pre_data, train_options(base, Stage::pretrain, nullptr, seed));
              it = pretrained.emplace(seed, std::move(pre.params)).first;
            }
            init = it->second;
          }
          // Same tensors, objective weights of this cell.
          ModelParams start = ModelParams::layout(cell_cfg);
          start.tensors() = init.tensors();
          TrainOptions o = train_options(cell, Stage::finetune, nullptr, seed);
          if (!valid.empty()) o.valid = &valid;
          TrainResult r = train_model(std::move(start), train, o);
          const MetricsReport rep = evaluate_model(r.params, test, mopt);
          const std::string file = name + "_seed" + std::to_string(seed) + ".json";
          write_file((fs::path(rc.out_dir) / file).string(), report_to_json(rep));
          reports.push_back(file);
          per_seed.push_back(rep.corpus);
        }
        json c;
        c["cell"] = name;
        c["fusion_kind"] = to_string(kind);
        c["pretrain"] = pt;
        c["ft_coh"] = coh;
        c["reports"] = reports;
        const auto pct = [](double v) { return std::round(v * 10000.0) / 100.0; };
        for (const char* col : {"F1", "BS@k", "F1@k", "mIoU", "Avg"}) {
          const auto pick = [&](const VideoMetrics& v) -> double {
            const std::string s = col;
            if (s == "F1") return v.f1;
            if (s == "BS@k") return v.bs_at_k;
            if (s == "F1@k") return v.f1_at_k;
            if (s == "mIoU") return v.miou;
            return v.avg;
          };
          double m = 0.0, s2 = 0.0;
          for (const auto& v : per_seed) m += pick(v);
          m /= static_cast<double>(per_seed.size());
          for (const auto& v : per_seed) s2 += (pick(v) - m) * (pick(v) - m);
          const double sd = per_seed.size() > 1 ? std::sqrt(s2 / static_cast<double>(per_seed.size() - 1)) : 0.0;
          c["mean"][col] = pct(m);
          c["std"][col] = pct(sd);
        }
        cells.push_back(c);
        const auto& mm = c["mean"];
        std::printf("%-10s %-4s %-7s %7.2f %7.2f %7.2f %7.2f %7.2f\n", std::string(to_string(kind)).c_str(),
                    pt ? "+" : "-", coh ? "+" : "-", mm["F1"].get<double>(), mm["BS@k"].get<double>(),
                    mm["F1@k"].get<double>(), mm["mIoU"].get<double>(), mm["Avg"].get<double>());
        std::fflush(stdout);
      }
    }
  }
  write_file((fs::path(rc.out_dir) / "ablation.json").string(), summary.dump(2) + "\n");
  return 0;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal video topic segmentation: training, inference and evaluation"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "flat key = value config file");
  app.add_option("--set", overrides, "override one key (key=value); repeatable");

  using Handler = int (*)(const RunConfig&);
  const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
      {"synth-data", "generate the planted-topic synthetic corpus", cmd_synth_data},
      {"make-pretrain-data", "pseudo-label unlabeled videos with KDE segmentation and corruption", cmd_make_pretrain_data},
      {"pretrain", "pre-train from scratch on a pseudo-labelled corpus", cmd_pretrain},
      {"finetune", "fine-tune on a labelled corpus, keeping the best validation epoch", cmd_finetune},
      {"segment", "predict boundaries for a corpus", cmd_segment},
      {"evaluate", "score predictions against ground truth", cmd_evaluate},
      {"gradcheck", "finite-difference check of every objective", cmd_gradcheck},
      {"consistency", "inter-annotator consistency of several annotation files", cmd_consistency},
      {"ablation", "pre-training x coherence-loss x fusion-kind matrix", cmd_ablation},
  };
  for (const auto& [name, help, fn] : commands) app.add_subcommand(name, help);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
      std::cout << app.help();
      return 0;
    } catch (const CLI::ParseError& e) {
      std::string valid;
      for (const auto& [name, help, fn] : commands) valid += (valid.empty() ? "" : ", ") + std::string(name);
      throw UsageError(std::string(e.what()) + " (commands: " + valid + ")");
    }
    RunConfig rc;
    if (!config_path.empty()) rc.apply_file(config_path);
    for (const auto& o : overrides) rc.apply_override(o);
    if (rc.deterministic) set_deterministic_mode(true);
    for (const auto& [name, help, fn] : commands) {
      if (app.got_subcommand(name)) return fn(rc);
    }
    return 2;
  } catch (const Error& e) {
    std::cerr << "error kind=" << e.kind() << " msg=" << quote(e.what()) << "\n";
    return e.kind() == "usage" ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=internal msg=" << quote(e.what()) << "\n";
    return 1;
  }
}
