#include "vts/fusion/checkpoint.hpp"

#include <charconv>
#include <cstdio>

#include "vts/error.hpp"
#include "vts/io/binary.hpp"

namespace vts {

namespace {

std::size_t parse_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw FormatError("checkpoint: bad value '" + std::string(v) + "' for " + std::string(key));
  }
  return out;
}

}  // namespace

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig apply_architecture(ModelConfig base, std::string_view encoding) {
  std::size_t start = 0;
  while (start < encoding.size()) {
    std::size_t end = encoding.find('\n', start);
    if (end == std::string_view::npos) end = encoding.size();
    const std::string_view line = encoding.substr(start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw FormatError("checkpoint: malformed encoding line '" + std::string(line) + "'");
    const auto k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "fusion_kind") base.fusion_kind = parse_fusion_kind(v);
    else if (k == "num_layers") base.num_layers = parse_size(k, v);
    else if (k == "hidden_dim") base.hidden_dim = parse_size(k, v);
    else if (k == "heads") base.heads = parse_size(k, v);
    else if (k == "expert_count") base.expert_count = parse_size(k, v);
    else if (k == "active_experts") base.active_experts = parse_size(k, v);
    else if (k == "expert_intermediate") base.expert_intermediate = parse_size(k, v);
    else if (k == "visual_dim") base.visual_dim = parse_size(k, v);
    else if (k == "text_dim") base.text_dim = parse_size(k, v);
    else if (k == "duplicate_visual") base.duplicate_visual = parse_size(k, v) != 0;
    else throw FormatError("checkpoint: unknown architecture key '" + std::string(k) + "'");
  }
  return base;
}

std::string encode_checkpoint(const ModelParams& params) {
  ByteWriter w;
  w.bytes("VTSM");
  w.u32(kCheckpointVersion);
  const std::string enc = params.config().architecture_encoding();
  w.str(enc);
  w.u64(fnv1a64(enc));
  w.u32(static_cast<std::uint32_t>(params.tensors().size()));
  for (const auto& t : params.tensors()) {
    w.str(t.name);
    w.u32(static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double x : t.value.vec()) w.f64(x);
  }
  return w.data();
}

void write_checkpoint(const std::string& path, const ModelParams& params) { write_file(path, encode_checkpoint(params)); }

ModelParams decode_checkpoint(std::string_view bytes, const ModelConfig& base, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "VTSM") r.fail_at(0, "bad magic (expected VTSM)");
  const std::size_t version_at = r.offset();
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    r.fail_at(version_at, "unsupported version " + std::to_string(v));
  }
  const std::string enc = r.str();
  const std::size_t hash_at = r.offset();
  const std::uint64_t hash = r.u64();
  if (hash != fnv1a64(enc)) r.fail_at(hash_at, "architecture hash does not match its encoding");
  const ModelConfig cfg = apply_architecture(base, enc);
  ModelParams params = ModelParams::layout(cfg);
  const std::size_t count_at = r.offset();
  if (const auto n = r.u32(); n != params.tensors().size()) {
    r.fail_at(count_at, "expected " + std::to_string(params.tensors().size()) + " tensors, found " + std::to_string(n));
  }
  for (auto& t : params.tensors()) {
    const std::size_t name_at = r.offset();
    if (const auto name = r.str(); name != t.name) r.fail_at(name_at, "expected tensor " + t.name + ", found " + name);
    const std::size_t shape_at = r.offset();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    if (shape != t.value.shape()) {
      r.fail_at(shape_at, t.name + ": shape " + shape_str(shape) + " does not match " + shape_str(t.value.shape()));
    }
    for (auto& x : t.value.vec()) x = r.f64();
  }
  r.expect_end();
  return params;
}

ModelParams read_checkpoint(const std::string& path, const ModelConfig& base) {
  return decode_checkpoint(read_file(path), base, path);
}

ModelParams load_compatible_checkpoint(const std::string& path, const ModelConfig& expected) {
  ModelParams p = read_checkpoint(path, expected);
  const auto have = p.config().architecture_hash(), want = expected.architecture_hash();
  if (have != want) {
    throw ConfigError("checkpoint " + path + " is incompatible: config hash " + hash_hex(have) + " != " +
                      hash_hex(want));
  }
  return p;
}

}  // namespace vts
