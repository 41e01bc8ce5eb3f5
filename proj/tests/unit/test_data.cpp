#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

#include "doctest.h"
#include "helpers.hpp"
#include "vts/data/dataset.hpp"
#include "vts/error.hpp"
#include "vts/io/binary.hpp"

using namespace vts;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("vts_test_" + std::to_string(Rng(reinterpret_cast<std::uintptr_t>(this)).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& s) const { return (path / s).string(); }
};

ClipFeatureSequence make_seq(const std::string& id, std::size_t n, Rng& rng, bool labelled = true) {
  ClipFeatureSequence s;
  s.video_id = id;
  double t = 0.5;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = rng.uniform(1.0, 5.0);
    s.clip_times.push_back({t, t + d});
    t += d;
  }
  s.visual = test::random_array(n, 3, rng);
  s.text = test::random_array(n, 2, rng);
  if (labelled) {
    std::vector<std::uint8_t> l(n, 0);
    for (auto& x : l) x = rng.bernoulli(0.3) ? 1 : 0;
    s.labels = l;
  }
  return s;
}

// Features are stored as f32.
Array as_f32(const Array& a) {
  Array out = a;
  for (auto& x : out.vec()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

void write_text(const std::string& path, const std::string& s) { std::ofstream(path, std::ios::binary) << s; }

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("byte reader and writer") {
  ByteWriter w;
  w.u32(0x01020304u);
  w.u64(0x0102030405060708ull);
  w.f32(1.5f);
  w.f64(-2.25);
  w.str("abc");
  const std::string& d = w.data();
  REQUIRE(d.size() == 4 + 8 + 4 + 8 + 4 + 3);
  // Little-endian on disk regardless of host order.
  CHECK(static_cast<unsigned char>(d[0]) == 0x04);
  CHECK(static_cast<unsigned char>(d[3]) == 0x01);
  CHECK(static_cast<unsigned char>(d[4]) == 0x08);
  ByteReader r(d, "blob");
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.u64() == 0x0102030405060708ull);
  CHECK(r.f32() == 1.5f);
  CHECK(r.f64() == -2.25);
  CHECK(r.str() == "abc");
  CHECK_NOTHROW(r.expect_end());
  CHECK_THROWS_AS(r.u32(), FormatError);
}

TEST_CASE("vtsf") {
  Rng rng(1);
  const Array a = test::random_array(5, 3, rng);
  const std::string bytes = encode_vtsf(a);
  CHECK(bytes.size() == 16 + 5 * 3 * 4);
  CHECK(bytes.substr(0, 4) == "VTSF");

  SUBCASE("round trip") {
    const Array b = decode_vtsf(bytes, "x");
    CHECK(b.shape() == a.shape());
    CHECK(test::max_abs_diff(b, as_f32(a)) == 0.0);
    CHECK(encode_vtsf(b) == bytes);
  }
  SUBCASE("known layout") {
    Array one({1, 1});
    one.vec()[0] = 1.0;
    const std::string e = encode_vtsf(one);
    // 1.0f is 0x3f800000.
    CHECK(e == std::string("VTSF\x01\x00\x00\x00\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f", 20));
  }
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    const auto msg = error_of([&] { decode_vtsf(b, "f.vtsf"); });
    CHECK(msg.find("f.vtsf") != std::string::npos);
    CHECK(msg.find("magic") != std::string::npos);
    CHECK(msg.find("offset 0") != std::string::npos);
  }
  SUBCASE("bad version") {
    std::string b = bytes;
    b[4] = 2;
    CHECK(error_of([&] { decode_vtsf(b, "f"); }).find("offset 4") != std::string::npos);
  }
  SUBCASE("truncated payload") {
    const auto msg = error_of([&] { decode_vtsf(bytes.substr(0, bytes.size() - 1), "f"); });
    CHECK(msg.find("offset 16") != std::string::npos);
    CHECK(msg.find("59") != std::string::npos);
  }
  SUBCASE("truncated header") {
    const auto msg = error_of([&] { decode_vtsf(bytes.substr(0, 10), "f"); });
    CHECK(msg.find("truncated") != std::string::npos);
    CHECK(msg.find("offset 8") != std::string::npos);
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(decode_vtsf(bytes + "x", "f"), FormatError); }
  SUBCASE("files") {
    TempDir dir;
    write_vtsf(dir / "a.vtsf", a);
    CHECK(test::max_abs_diff(read_vtsf(dir / "a.vtsf"), as_f32(a)) == 0.0);
    CHECK_THROWS_AS(read_vtsf(dir / "missing.vtsf"), Error);
  }
}

TEST_CASE("feature directories") {
  Rng rng(2);
  TempDir dir;
  const auto s = make_seq("lecture 1", 7, rng);

  SUBCASE("round trip") {
    write_features(dir / "v", s);
    CHECK(fs::exists(dir / "v/manifest.json"));
    CHECK(fs::exists(dir / "v/visual.vtsf"));
    CHECK(fs::exists(dir / "v/text.vtsf"));
    const auto r = read_features(dir / "v");
    CHECK(r.video_id == s.video_id);
    CHECK(r.clip_times == s.clip_times);
    CHECK(*r.labels == *s.labels);
    CHECK(test::max_abs_diff(r.visual, as_f32(s.visual)) == 0.0);
    CHECK(test::max_abs_diff(r.text, as_f32(s.text)) == 0.0);
  }
  SUBCASE("unlabelled") {
    auto u = s;
    u.labels.reset();
    write_features(dir / "u", u);
    CHECK(!read_features(dir / "u").labels);
  }
  SUBCASE("blob shape disagrees with manifest") {
    write_features(dir / "v", s);
    write_vtsf(dir / "v/text.vtsf", Array({6, 2}));
    CHECK_THROWS_AS(read_features(dir / "v"), FormatError);
  }
  SUBCASE("broken manifest") {
    write_features(dir / "v", s);
    write_text(dir / "v/manifest.json", "{not json");
    CHECK_THROWS_AS(read_features(dir / "v"), FormatError);
  }
  SUBCASE("invalid sequences are not written") {
    auto bad = s;
    bad.clip_times[3].start = bad.clip_times[2].start;
    CHECK_THROWS_AS(write_features(dir / "bad", bad), DataError);
    bad = s;
    bad.visual.vec()[0] = NAN;
    CHECK_THROWS_AS(write_features(dir / "bad", bad), DataError);
    bad = s;
    (*bad.labels)[0] = 2;
    CHECK_THROWS_AS(write_features(dir / "bad", bad), DataError);
  }
  SUBCASE("corpus") {
    std::vector<ClipFeatureSequence> vids = {make_seq("b", 3, rng), make_seq("a", 4, rng), make_seq("c", 2, rng)};
    write_corpus(dir / "corpus", vids);
    const auto r = read_corpus(dir / "corpus");
    REQUIRE(r.size() == 3);
    CHECK(r[0].video_id == "a");
    CHECK(r[1].video_id == "b");
    CHECK(r[2].clip_times == vids[2].clip_times);
    CHECK_THROWS_AS(read_corpus(dir / "nope"), DataError);
  }
}

TEST_CASE("sequence helpers") {
  Rng rng(3);
  const auto s = make_seq("v", 6, rng);
  const auto part = s.slice(2, 5);
  CHECK(part.n() == 3);
  CHECK(part.clip_times[0] == s.clip_times[2]);
  CHECK(part.visual.at(1, 2) == s.visual.at(3, 2));
  CHECK((*part.labels)[2] == (*s.labels)[4]);
  CHECK_THROWS_AS(s.slice(4, 7), DataError);

  auto l = s;
  l.labels = std::vector<std::uint8_t>{0, 1, 0, 0, 1, 1};
  const auto seg = l.segmentation();
  CHECK(seg.boundaries == std::vector<std::size_t>{1, 4});
  CHECK(seg.clip_end_times.back() == s.clip_times.back().end);

  const auto u = s.without_labels();
  const auto back = ClipFeatureSequence::from(u, s.labels);
  CHECK(back.clip_times == s.clip_times);
  CHECK(*back.labels == *s.labels);
}

TEST_CASE("make_windows") {
  SUBCASE("long video") {
    const auto w = make_windows(5000, 2048, "v");
    REQUIRE(w.size() == 3);
    CHECK(w[0] == Window{"v", 0, 2048, false});
    CHECK(w[1] == Window{"v", 2047, 4095, true});
    CHECK(w[2] == Window{"v", 4094, 5000, true});
  }
  SUBCASE("short video is a single window") {
    for (std::size_t n : {1u, 5u, 2048u}) {
      const auto w = make_windows(n, 2048);
      REQUIRE(w.size() == 1);
      CHECK(w[0].begin == 0);
      CHECK(w[0].end == n);
    }
  }
  SUBCASE("exact fit of two windows") {
    const auto w = make_windows(4095, 2048);
    REQUIRE(w.size() == 2);
    CHECK(w[1].end == 4095);
  }
  SUBCASE("random sizes cover every clip") {
    Rng rng(4);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 1 + rng.uniform_int(500);
      const std::size_t m = 2 + rng.uniform_int(60);
      const auto w = make_windows(n, m);
      CHECK(w.front().begin == 0);
      CHECK(w.back().end == n);
      for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(w[i].size() <= m);
        CHECK(w[i].size() >= 1);
        if (i > 0) CHECK(w[i].begin + 1 == w[i - 1].end);
      }
    }
  }
  SUBCASE("window length must leave room for progress") { CHECK_THROWS_AS(make_windows(10, 1), ConfigError); }
}

TEST_CASE("merge_window_predictions") {
  SUBCASE("every clip assigned once, junctions from the later window") {
    const std::size_t n = 5000;
    const auto w = make_windows(n, 2048);
    std::vector<std::vector<double>> probs;
    for (std::size_t k = 0; k < w.size(); ++k) {
      std::vector<double> p;
      // Encode window and global index so the source of every value is visible.
      for (std::size_t i = w[k].begin; i < w[k].end; ++i) p.push_back(static_cast<double>(k) * 1e6 + static_cast<double>(i));
      probs.push_back(p);
    }
    const auto merged = merge_window_predictions(w, probs, n);
    REQUIRE(merged.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t window = i < 2047 ? 0 : (i < 4094 ? 1 : 2);
      CHECK(merged[i] == static_cast<double>(window) * 1e6 + static_cast<double>(i));
    }
  }
  SUBCASE("single window is the identity") {
    const std::vector<double> p = {0.1, 0.9, 0.3};
    CHECK(merge_window_predictions(make_windows(3, 2048), {p}, 3) == p);
  }
  SUBCASE("errors") {
    const auto w = make_windows(10, 4);
    CHECK_THROWS_AS(merge_window_predictions(w, {}, 10), DimensionError);
    std::vector<std::vector<double>> probs;
    for (const auto& x : w) probs.emplace_back(x.size(), 0.5);
    probs[1].pop_back();
    CHECK_THROWS_AS(merge_window_predictions(w, probs, 10), DimensionError);
    std::vector<Window> gap = {{"", 0, 4, false}, {"", 5, 10, false}};
    CHECK_THROWS_AS(merge_window_predictions(gap, {std::vector<double>(4), std::vector<double>(5)}, 10), DataError);
    std::vector<Window> twice = {{"", 0, 6, false}, {"", 4, 10, false}};
    CHECK_THROWS_AS(merge_window_predictions(twice, {std::vector<double>(6), std::vector<double>(6)}, 10), DataError);
  }
}

TEST_CASE("batch_and_mask") {
  Rng rng(5);
  std::vector<ClipFeatureSequence> seqs = {make_seq("a", 4, rng), make_seq("b", 7, rng), make_seq("c", 2, rng)};
  std::vector<const ClipFeatureSequence*> ptrs = {&seqs[0], &seqs[1], &seqs[2]};
  const auto batches = batch_and_mask(ptrs, 2);
  REQUIRE(batches.size() == 2);
  CHECK(batches[0].length == 7);
  CHECK(batches[1].length == 2);
  const auto& a = batches[0].items[0];
  CHECK(a.source == 0);
  CHECK(a.n_valid == 4);
  CHECK(a.visual.rows() == 7);
  CHECK(a.mask == std::vector<std::uint8_t>{1, 1, 1, 1, 0, 0, 0});
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(a.visual.at(i, j) == (i < 4 ? seqs[0].visual.at(i, j) : 0.0));
    CHECK(a.labels[i] == (i < 4 ? (*seqs[0].labels)[i] : 0));
  }
  CHECK(batches[0].items[1].mask == std::vector<std::uint8_t>(7, 1));
  CHECK(batches[1].items[0].source == 2);
  CHECK_THROWS_AS(batch_and_mask(ptrs, 0), ConfigError);

  // Unlabelled sequences get zero labels.
  auto u = seqs[0];
  u.labels.reset();
  const auto ub = batch_and_mask({&u}, 4);
  CHECK(ub[0].items[0].labels == std::vector<std::uint8_t>(4, 0));
}

TEST_CASE("predictions") {
  const std::vector<PredictionRecord> recs = {{"v1", 0, 0.1, false}, {"v1", 1, 0.7250000000000001, true},
                                              {"v two", 2, 1e-300, false}, {"v3", 0, 1.0, true}};
  const std::string text = format_predictions(recs);
  CHECK(text.rfind("# video_id\tclip_index\tprobability\tboundary\n", 0) == 0);
  CHECK(text.find("v1\t0\t0.1\t0\n") != std::string::npos);
  CHECK(parse_predictions(text, "p") == recs);
  CHECK(format_predictions(parse_predictions(text, "p")) == text);

  SUBCASE("files") {
    TempDir dir;
    write_predictions(dir / "p.tsv", recs);
    CHECK(read_predictions(dir / "p.tsv") == recs);
  }
  SUBCASE("errors carry the line number") {
    const auto msg = error_of([] { parse_predictions("# h\nv\t0\t0.5\t1\nv\tx\t0.5\t1\n", "p.tsv"); });
    CHECK(msg.find("p.tsv:3") != std::string::npos);
    CHECK_THROWS_AS(parse_predictions("v\t0\t0.5\n", "p"), FormatError);
    CHECK_THROWS_AS(parse_predictions("v\t0\tabc\t1\n", "p"), FormatError);
    CHECK_THROWS_AS(parse_predictions("v\t0\t0.5\t2\n", "p"), FormatError);
    CHECK_THROWS_AS(parse_predictions("v\t-1\t0.5\t1\n", "p"), FormatError);
  }
  SUBCASE("format_double") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(1.0) == "1");
    for (double x : {1.0 / 3.0, 2.5e-17, 123456.789}) CHECK(std::stod(format_double(x)) == x);
  }
}
