#include "vts/train/run_config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include "vts/data/dataset.hpp"
#include "vts/error.hpp"
#include "vts/io/binary.hpp"

namespace vts {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw UsageError("invalid value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw UsageError("invalid value '" + std::string(v) + "' for " + std::string(key) + " (expected 0/1/true/false)");
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field num(T RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*m);
            else return std::to_string(c.*m);
          }};
}

template <typename T>
Field model_num(T ModelConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.model.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.model.*m);
            else return std::to_string(c.model.*m);
          }};
}

template <typename T>
Field optim_num(T AdamWConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.optim.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) { return format_double(c.optim.*m); }};
}

template <typename T>
Field synth_num(T SynthConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.synth.*m = parse_number<T>(k, v); },
          [m](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.synth.*m);
            else return std::to_string(c.synth.*m);
          }};
}

Field flag(bool RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.*m = parse_bool(k, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "1" : "0"); }};
}

Field model_flag(bool ModelConfig::*m) {
  return {[m](RunConfig& c, std::string_view k, std::string_view v) { c.model.*m = parse_bool(k, v); },
          [m](const RunConfig& c) { return std::string(c.model.*m ? "1" : "0"); }};
}

Field text(std::string RunConfig::*m) {
  return {[m](RunConfig& c, std::string_view, std::string_view v) { c.*m = std::string(v); },
          [m](const RunConfig& c) { return c.*m; }};
}

const std::map<std::string, Field, std::less<>>& fields() {
  static const std::map<std::string, Field, std::less<>> f = {
      {"fusion_kind",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.model.fusion_kind = parse_fusion_kind(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.fusion_kind)); }}},
      {"cma_form",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.model.cma_form = parse_cma_form(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.cma_form)); }}},
      {"cssl_negatives",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.model.cssl_negatives = parse_cssl_negatives(v); },
        [](const RunConfig& c) { return std::string(to_string(c.model.cssl_negatives)); }}},
      {"num_layers", model_num(&ModelConfig::num_layers)},
      {"hidden_dim", model_num(&ModelConfig::hidden_dim)},
      {"heads", model_num(&ModelConfig::heads)},
      {"expert_count", model_num(&ModelConfig::expert_count)},
      {"active_experts", model_num(&ModelConfig::active_experts)},
      {"expert_intermediate", model_num(&ModelConfig::expert_intermediate)},
      {"visual_dim", model_num(&ModelConfig::visual_dim)},
      {"text_dim", model_num(&ModelConfig::text_dim)},
      {"dropout_p", model_num(&ModelConfig::dropout_p)},
      {"temperature", model_num(&ModelConfig::temperature)},
      {"epsilon", model_num(&ModelConfig::epsilon)},
      {"alpha", model_num(&ModelConfig::alpha)},
      {"beta", model_num(&ModelConfig::beta)},
      {"gamma", model_num(&ModelConfig::gamma)},
      {"sigma", model_num(&ModelConfig::sigma)},
      {"theta", model_num(&ModelConfig::theta)},
      {"k1", model_num(&ModelConfig::k1)},
      {"k2", model_num(&ModelConfig::k2)},
      {"max_seq_len", model_num(&ModelConfig::max_seq_len)},
      {"threshold", model_num(&ModelConfig::threshold)},
      {"duplicate_visual", model_flag(&ModelConfig::duplicate_visual)},
      {"gate_noise", model_flag(&ModelConfig::gate_noise)},
      {"lr", optim_num(&AdamWConfig::lr)},
      {"beta1", optim_num(&AdamWConfig::beta1)},
      {"beta2", optim_num(&AdamWConfig::beta2)},
      {"adam_eps", optim_num(&AdamWConfig::eps)},
      {"weight_decay", optim_num(&AdamWConfig::weight_decay)},
      {"pretrain_epochs", num(&RunConfig::pretrain_epochs)},
      {"finetune_epochs", num(&RunConfig::finetune_epochs)},
      {"batch_size", num(&RunConfig::batch_size)},
      {"seed", num(&RunConfig::seed)},
      {"seeds",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          c.seeds.clear();
          std::size_t pos = 0;
          while (pos <= v.size() && !v.empty()) {
            std::size_t comma = v.find(',', pos);
            if (comma == std::string_view::npos) comma = v.size();
            c.seeds.push_back(parse_number<std::uint64_t>(k, trim(v.substr(pos, comma - pos))));
            pos = comma + 1;
          }
        },
        [](const RunConfig& c) {
          std::string s;
          for (std::size_t i = 0; i < c.seeds.size(); ++i) s += (i ? "," : "") + std::to_string(c.seeds[i]);
          return s;
        }}},
      {"deterministic", flag(&RunConfig::deterministic)},
      {"metric_k", num(&RunConfig::metric_k)},
      {"loose_bs", flag(&RunConfig::loose_bs)},
      {"miou_gt_only", flag(&RunConfig::miou_gt_only)},
      {"gradcheck_instances", num(&RunConfig::gradcheck_instances)},
      {"gradcheck_clips", num(&RunConfig::gradcheck_clips)},
      {"train", text(&RunConfig::train)},
      {"valid", text(&RunConfig::valid)},
      {"test", text(&RunConfig::test)},
      {"unlabeled", text(&RunConfig::unlabeled)},
      {"pretrain_data", text(&RunConfig::pretrain_data)},
      {"corpus", text(&RunConfig::corpus)},
      {"ground_truth", text(&RunConfig::ground_truth)},
      {"predictions", text(&RunConfig::predictions)},
      {"checkpoint_in", text(&RunConfig::checkpoint_in)},
      {"checkpoint_out", text(&RunConfig::checkpoint_out)},
      {"report", text(&RunConfig::report)},
      {"log", text(&RunConfig::log)},
      {"out_dir", text(&RunConfig::out_dir)},
      {"annotations", text(&RunConfig::annotations)},
      {"synth_train_videos", synth_num(&SynthConfig::train_videos)},
      {"synth_valid_videos", synth_num(&SynthConfig::valid_videos)},
      {"synth_test_videos", synth_num(&SynthConfig::test_videos)},
      {"synth_unlabeled_videos", synth_num(&SynthConfig::unlabeled_videos)},
      {"synth_clips_min", synth_num(&SynthConfig::clips_min)},
      {"synth_clips_max", synth_num(&SynthConfig::clips_max)},
      {"synth_topics_min", synth_num(&SynthConfig::topics_min)},
      {"synth_topics_max", synth_num(&SynthConfig::topics_max)},
      {"synth_min_topic_clips", synth_num(&SynthConfig::min_topic_clips)},
      {"synth_latent_dim", synth_num(&SynthConfig::latent_dim)},
      {"synth_visual_dim", synth_num(&SynthConfig::visual_dim)},
      {"synth_text_dim", synth_num(&SynthConfig::text_dim)},
      {"synth_noise", synth_num(&SynthConfig::noise)},
      {"synth_boundary_strength", synth_num(&SynthConfig::boundary_strength)},
      {"synth_clip_seconds_min", synth_num(&SynthConfig::clip_seconds_min)},
      {"synth_clip_seconds_max", synth_num(&SynthConfig::clip_seconds_max)},
      {"synth_mixing_seed", synth_num(&SynthConfig::mixing_seed)},
  };
  return f;
}

}  // namespace

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [k, f] : fields()) out.push_back(k);
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto it = fields().find(key);
  if (it == fields().end()) {
    std::string valid;
    for (const auto& k : keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw UsageError("unknown key '" + std::string(key) + "' (valid: " + valid + ")");
  }
  it->second.set(*this, key, trim(value));
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw UsageError("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::apply_text(std::string_view text, const std::string& what) {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      apply_override(line);
    } catch (const UsageError& e) {
      throw UsageError(what + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::apply_file(const std::string& path) { apply_text(read_file(path), path); }

std::string RunConfig::dump() const {
  std::string s;
  for (const auto& [k, f] : fields()) s += k + " = " + f.get(*this) + "\n";
  return s;
}

}  // namespace vts
