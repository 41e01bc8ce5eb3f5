#include "vts/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>

#include "json.hpp"
#include "vts/error.hpp"
#include "vts/io/binary.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace vts {

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kVisual = "visual.vtsf";
constexpr const char* kText = "text.vtsf";

Array slice_array(const Array& a, std::size_t begin, std::size_t end) {
  const std::size_t c = a.cols();
  Array out({end - begin, c});
  std::copy(a.data() + begin * c, a.data() + end * c, out.data());
  return out;
}

}  // namespace

void ClipFeatureSequence::validate() const {
  const std::size_t count = n();
  auto fail = [&](const std::string& m) { throw DataError("video " + video_id + ": " + m); };
  if (visual.rows() != count || visual.rank() != 2) fail("visual features have " + shape_str(visual.shape()) + " for " + std::to_string(count) + " clips");
  if (text.rows() != count || text.rank() != 2) fail("text features have " + shape_str(text.shape()) + " for " + std::to_string(count) + " clips");
  for (std::size_t i = 0; i < count; ++i) {
    if (!(clip_times[i].end >= clip_times[i].start)) fail("clip " + std::to_string(i) + " ends before it starts");
    if (i > 0 && clip_times[i].start < clip_times[i - 1].end) fail("clip " + std::to_string(i) + " overlaps its predecessor");
  }
  if (labels) {
    if (labels->size() != count) fail("label count " + std::to_string(labels->size()) + " != clip count");
    for (auto l : *labels) {
      if (l > 1) fail("labels must be 0 or 1");
    }
  }
  if (!visual.all_finite() || !text.all_finite()) fail("non-finite feature value");
}

UnlabeledVideo ClipFeatureSequence::without_labels() const { return {video_id, clip_times, visual, text}; }

ClipFeatureSequence ClipFeatureSequence::from(const UnlabeledVideo& v, std::optional<std::vector<std::uint8_t>> labels) {
  return {v.video_id, v.clip_times, v.visual, v.text, std::move(labels)};
}

ClipFeatureSequence ClipFeatureSequence::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > n()) throw DataError("video " + video_id + ": bad slice");
  ClipFeatureSequence s;
  s.video_id = video_id;
  s.clip_times.assign(clip_times.begin() + static_cast<std::ptrdiff_t>(begin),
                      clip_times.begin() + static_cast<std::ptrdiff_t>(end));
  s.visual = slice_array(visual, begin, end);
  s.text = slice_array(text, begin, end);
  if (labels) s.labels = std::vector<std::uint8_t>(labels->begin() + static_cast<std::ptrdiff_t>(begin),
                                                   labels->begin() + static_cast<std::ptrdiff_t>(end));
  return s;
}

TopicSegmentation ClipFeatureSequence::segmentation() const {
  TopicSegmentation seg;
  seg.n = n();
  seg.clip_end_times = clip_end_times(clip_times);
  if (labels) {
    for (std::size_t i = 0; i + 1 < n(); ++i) {
      if ((*labels)[i]) seg.boundaries.push_back(i);
    }
  }
  return seg;
}

std::vector<double> clip_end_times(const std::vector<ClipTime>& times) {
  std::vector<double> out;
  out.reserve(times.size());
  for (const auto& t : times) out.push_back(t.end);
  return out;
}

std::string encode_vtsf(const Array& a) {
  ByteWriter w;
  w.bytes("VTSF");
  w.u32(kVtsfVersion);
  w.u32(static_cast<std::uint32_t>(a.rows()));
  w.u32(static_cast<std::uint32_t>(a.cols()));
  for (double x : a.vec()) w.f32(static_cast<float>(x));
  return w.data();
}

Array decode_vtsf(std::string_view bytes, const std::string& what) {
  ByteReader r(bytes, what);
  if (r.bytes(4) != "VTSF") r.fail_at(0, "bad magic (expected VTSF)");
  if (const auto v = r.u32(); v != kVtsfVersion) r.fail_at(4, "unsupported version " + std::to_string(v));
  const std::uint32_t rows = r.u32(), cols = r.u32();
  const std::size_t need = static_cast<std::size_t>(rows) * cols * 4;
  if (r.remaining() != need) {
    r.fail("expected " + std::to_string(need) + " data bytes for " + std::to_string(rows) + "x" +
           std::to_string(cols) + ", found " + std::to_string(r.remaining()));
  }
  Array a({rows, cols});
  for (auto& x : a.vec()) x = static_cast<double>(r.f32());
  return a;
}

void write_vtsf(const std::string& path, const Array& a) { write_file(path, encode_vtsf(a)); }

Array read_vtsf(const std::string& path) { return decode_vtsf(read_file(path), path); }

void write_features(const std::string& video_dir, const ClipFeatureSequence& seq) {
  seq.validate();
  fs::create_directories(video_dir);
  json m;
  m["format_version"] = 1;
  m["video_id"] = seq.video_id;
  m["n"] = seq.n();
  json times = json::array();
  for (const auto& t : seq.clip_times) times.push_back({t.start, t.end});
  m["clip_times"] = std::move(times);
  if (seq.labels) {
    json idx = json::array();
    for (std::size_t i = 0; i < seq.n(); ++i) {
      if ((*seq.labels)[i]) idx.push_back(i);
    }
    m["labels"] = std::move(idx);
  }
  m["visual"] = {{"file", kVisual}, {"dim", seq.visual.cols()}};
  m["text"] = {{"file", kText}, {"dim", seq.text.cols()}};
  const fs::path dir(video_dir);
  write_file((dir / kManifest).string(), m.dump(1) + "\n");
  write_vtsf((dir / kVisual).string(), seq.visual);
  write_vtsf((dir / kText).string(), seq.text);
}

ClipFeatureSequence read_features(const std::string& video_dir) {
  const fs::path dir(video_dir);
  const std::string mpath = (dir / kManifest).string();
  json m;
  try {
    m = json::parse(read_file(mpath));
  } catch (const json::exception& e) {
    throw FormatError(mpath + ": " + e.what());
  }
  ClipFeatureSequence seq;
  try {
    if (m.at("format_version").get<int>() != 1) throw FormatError(mpath + ": unsupported format_version");
    seq.video_id = m.at("video_id").get<std::string>();
    const auto n = m.at("n").get<std::size_t>();
    for (const auto& t : m.at("clip_times")) seq.clip_times.push_back({t.at(0).get<double>(), t.at(1).get<double>()});
    if (seq.clip_times.size() != n) throw FormatError(mpath + ": n does not match clip_times");
    if (m.contains("labels")) {
      std::vector<std::uint8_t> labels(n, 0);
      for (const auto& i : m["labels"]) {
        const auto idx = i.get<std::size_t>();
        if (idx >= n) throw FormatError(mpath + ": label index " + std::to_string(idx) + " out of range");
        labels[idx] = 1;
      }
      seq.labels = std::move(labels);
    }
    auto load = [&](const char* key) {
      const auto& blob = m.at(key);
      const std::string path = (dir / blob.at("file").get<std::string>()).string();
      Array a = read_vtsf(path);
      const auto dim = blob.at("dim").get<std::size_t>();
      if (a.rows() != n || a.cols() != dim) {
        throw FormatError(path + ": blob is " + shape_str(a.shape()) + ", manifest says [" + std::to_string(n) +
                          "x" + std::to_string(dim) + "] at byte offset 8");
      }
      return a;
    };
    seq.visual = load("visual");
    seq.text = load("text");
  } catch (const json::exception& e) {
    throw FormatError(mpath + ": " + e.what());
  }
  seq.validate();
  return seq;
}

void write_corpus(const std::string& corpus_dir, const std::vector<ClipFeatureSequence>& videos) {
  fs::create_directories(corpus_dir);
  for (const auto& v : videos) write_features((fs::path(corpus_dir) / v.video_id).string(), v);
}

std::vector<ClipFeatureSequence> read_corpus(const std::string& corpus_dir) {
  if (!fs::is_directory(corpus_dir)) throw DataError("corpus directory not found: " + corpus_dir);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(corpus_dir)) {
    if (e.is_directory() && fs::exists(e.path() / kManifest)) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<ClipFeatureSequence> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) out.push_back(read_features(d.string()));
  return out;
}

std::vector<Window> make_windows(std::size_t n, std::size_t max_seq_len, const std::string& video_id) {
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  std::vector<Window> out;
  if (n <= max_seq_len) {
    out.push_back({video_id, 0, n, false});
    return out;
  }
  std::size_t begin = 0;
  while (true) {
    const std::size_t end = std::min(n, begin + max_seq_len);
    out.push_back({video_id, begin, end, begin > 0});
    if (end == n) break;
    begin = end - 1;
  }
  return out;
}

std::vector<double> merge_window_predictions(const std::vector<Window>& windows,
                                             const std::vector<std::vector<double>>& window_probs, std::size_t n) {
  if (windows.size() != window_probs.size()) throw DimensionError("one probability vector per window is required");
  std::vector<double> out(n, 0.0);
  std::vector<std::uint8_t> seen(n, 0);
  for (std::size_t w = 0; w < windows.size(); ++w) {
    const auto& win = windows[w];
    if (window_probs[w].size() != win.size() || win.end > n) {
      throw DimensionError("window " + std::to_string(w) + " has " + std::to_string(window_probs[w].size()) +
                           " probabilities for " + std::to_string(win.size()) + " clips");
    }
    const bool last = w + 1 == windows.size();
    for (std::size_t i = 0; i < win.size(); ++i) {
      if (!last && i + 1 == win.size()) continue;  // junction: the next window owns it
      const std::size_t g = win.begin + i;
      if (seen[g]) throw DataError("clip " + std::to_string(g) + " assigned by two windows");
      seen[g] = 1;
      out[g] = window_probs[w][i];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen[i]) throw DataError("clip " + std::to_string(i) + " not covered by any window");
  }
  return out;
}

std::vector<Batch> batch_and_mask(const std::vector<const ClipFeatureSequence*>& seqs, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
    const std::size_t stop = std::min(seqs.size(), start + batch_size);
    Batch b;
    for (std::size_t i = start; i < stop; ++i) b.length = std::max(b.length, seqs[i]->n());
    for (std::size_t i = start; i < stop; ++i) {
      const auto& s = *seqs[i];
      PaddedSequence p;
      p.source = i;
      p.n_valid = s.n();
      p.visual = Array({b.length, s.visual.cols()});
      p.text = Array({b.length, s.text.cols()});
      std::copy(s.visual.vec().begin(), s.visual.vec().end(), p.visual.data());
      std::copy(s.text.vec().begin(), s.text.vec().end(), p.text.data());
      p.labels.assign(b.length, 0);
      if (s.labels) std::copy(s.labels->begin(), s.labels->end(), p.labels.begin());
      p.mask.assign(b.length, 0);
      std::fill(p.mask.begin(), p.mask.begin() + static_cast<std::ptrdiff_t>(s.n()), 1);
      b.items.push_back(std::move(p));
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_predictions(const std::vector<PredictionRecord>& records) {
  std::string out = "# video_id\tclip_index\tprobability\tboundary\n";
  for (const auto& r : records) {
    out += r.video_id;
    out += '\t';
    out += std::to_string(r.clip_index);
    out += '\t';
    out += format_double(r.probability);
    out += '\t';
    out += r.boundary ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::vector<PredictionRecord> parse_predictions(std::string_view text, const std::string& what) {
  std::vector<PredictionRecord> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> f;
    std::size_t s = 0;
    while (true) {
      const std::size_t tab = line.find('\t', s);
      f.push_back(line.substr(s, tab == std::string_view::npos ? std::string_view::npos : tab - s));
      if (tab == std::string_view::npos) break;
      s = tab + 1;
    }
    auto bad = [&](const std::string& m) { throw FormatError(what + ":" + std::to_string(line_no) + ": " + m); };
    if (f.size() != 4) bad("expected 4 tab-separated fields, found " + std::to_string(f.size()));
    PredictionRecord r;
    r.video_id = std::string(f[0]);
    if (auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.clip_index);
        ec != std::errc() || p != f[1].data() + f[1].size()) {
      bad("bad clip_index '" + std::string(f[1]) + "'");
    }
    if (auto [p, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), r.probability);
        ec != std::errc() || p != f[2].data() + f[2].size()) {
      bad("bad probability '" + std::string(f[2]) + "'");
    }
    if (f[3] != "0" && f[3] != "1") bad("boundary must be 0 or 1");
    r.boundary = f[3] == "1";
    out.push_back(std::move(r));
  }
  return out;
}

void write_predictions(const std::string& path, const std::vector<PredictionRecord>& records) {
  write_file(path, format_predictions(records));
}

std::vector<PredictionRecord> read_predictions(const std::string& path) { return parse_predictions(read_file(path), path); }

}  // namespace vts
