#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "vts/error.hpp"
#include "vts/train/run_config.hpp"
#include "vts/train/trainer.hpp"

using namespace vts;

namespace {

ModelConfig tiny(FusionKind kind) {
  ModelConfig c = ModelConfig::desk();
  c.fusion_kind = kind;
  c.hidden_dim = 8;
  c.heads = 2;
  c.expert_intermediate = 6;
  c.visual_dim = 3;
  c.text_dim = 2;
  return c;
}

ClipFeatureSequence labelled(const std::string& id, std::size_t n, Rng& rng) {
  ClipFeatureSequence s;
  s.video_id = id;
  for (std::size_t i = 0; i < n; ++i) s.clip_times.push_back({10.0 * i, 10.0 * (i + 1)});
  s.visual = test::random_array(n, 3, rng);
  s.text = test::random_array(n, 2, rng);
  std::vector<std::uint8_t> l(n, 0);
  for (std::size_t i = 2; i < n; i += 3) l[i] = 1;
  l[n - 1] = 1;
  s.labels = l;
  return s;
}

std::vector<Array> grads(const ModelParams& p) {
  std::vector<Array> out;
  for (const auto& t : p.tensors()) out.push_back(t.grad);
  return out;
}

}  // namespace

TEST_CASE("batched loss equals the sum of per-sequence losses") {
  for (auto kind : {FusionKind::none, FusionKind::merge, FusionKind::co, FusionKind::merge_moe, FusionKind::co_moe}) {
    for (auto stage : {Stage::pretrain, Stage::finetune}) {
      CAPTURE(to_string(kind));
      Rng rng(7);
      auto cfg = tiny(kind);
      cfg.cma_form = CmaForm::lognce;
      ModelParams params = ModelParams::init(cfg, rng);
      std::vector<ClipFeatureSequence> data = {labelled("a", 5, rng), labelled("b", 9, rng), labelled("c", 3, rng)};
      std::vector<const ClipFeatureSequence*> ptrs = {&data[0], &data[1], &data[2]};

      params.zero_grad();
      double batched = 0.0;
      {
        ParamBinder bind(params);
        Rng r(1);
        const auto batches = batch_and_mask(ptrs, 3);
        REQUIRE(batches.size() == 1);
        auto loss = batch_loss(bind, batches[0], stage, r, false);
        batched = loss.total.item();
        CHECK(loss.parts.total == doctest::Approx(batched).epsilon(1e-12));
        backward(loss.total);
      }
      const auto g_batched = grads(params);

      params.zero_grad();
      double separate = 0.0;
      for (const auto& b : batch_and_mask(ptrs, 1)) {
        ParamBinder bind(params);
        Rng r(1);
        auto loss = batch_loss(bind, b, stage, r, false);
        separate += loss.total.item();
        backward(loss.total);
      }
      const auto g_separate = grads(params);

      CHECK(batched == doctest::Approx(separate).epsilon(1e-10));
      for (std::size_t i = 0; i < g_batched.size(); ++i) CHECK(test::max_abs_diff(g_batched[i], g_separate[i]) < 1e-10);
    }
  }
}

TEST_CASE("AdamW") {
  AdamWConfig c;
  c.lr = 0.1;
  c.weight_decay = 0.01;
  AdamW opt(c);
  ParamTensor p("w", Array::scalar(1.0));
  std::vector<ParamTensor*> ps = {&p};

  SUBCASE("two hand-computed steps") {
    // Step 1: decay to 0.999, m̂ = 0.5, v̂ = 0.25, step 0.1·0.5/(0.5+1e-8).
    p.grad.vec()[0] = 0.5;
    CHECK(opt.step(ps));
    CHECK(p.value.vec()[0] == doctest::Approx(0.899000002).epsilon(1e-14));
    // Step 2: m = −0.055, v = 0.00124975, bias corrections 0.19 and 0.001999.
    p.grad.vec()[0] = -1.0;
    CHECK(opt.step(ps));
    CHECK(p.value.vec()[0] == doctest::Approx(0.9347113542385653).epsilon(1e-13));
    CHECK(opt.step_count() == 2);
  }
  SUBCASE("non-finite gradients skip the step") {
    p.grad.vec()[0] = NAN;
    CHECK_FALSE(opt.step(ps));
    CHECK(p.value.vec()[0] == 1.0);
    CHECK(opt.step_count() == 0);
    p.grad.vec()[0] = INFINITY;
    CHECK_FALSE(opt.step(ps));
    // The moments were never touched, so the next good step is a first step.
    p.grad.vec()[0] = 0.5;
    CHECK(opt.step(ps));
    CHECK(p.value.vec()[0] == doctest::Approx(0.899000002).epsilon(1e-14));
  }
  SUBCASE("parameter list may not change") {
    p.grad.vec()[0] = 0.5;
    opt.step(ps);
    ParamTensor q("q", Array::scalar(0.0));
    std::vector<ParamTensor*> two = {&p, &q};
    CHECK_THROWS_AS(opt.step(two), DimensionError);
  }
}

TEST_CASE("RunConfig") {
  SUBCASE("text with comments") {
    RunConfig rc;
    rc.apply_text("# profile\nfusion_kind = merge_moe  # inline\n\nhidden_dim=16\nlr = 3e-3\nseeds = 1, 2,3\n"
                  "synth_noise = 0\ngate_noise = false\n",
                  "x.cfg");
    CHECK(rc.model.fusion_kind == FusionKind::merge_moe);
    CHECK(rc.model.hidden_dim == 16);
    CHECK(rc.optim.lr == 3e-3);
    CHECK(rc.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(rc.synth.noise == 0.0);
    CHECK_FALSE(rc.model.gate_noise);
  }
  SUBCASE("errors name the line") {
    RunConfig rc;
    try {
      rc.apply_text("lr = 1\n\nbogus = 3\n", "x.cfg");
      FAIL("expected a usage error");
    } catch (const UsageError& e) {
      CHECK(std::string(e.what()).find("x.cfg:3") != std::string::npos);
      CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    CHECK_THROWS_AS(rc.apply_text("hidden_dim = -4\n", "x"), UsageError);
    CHECK_THROWS_AS(rc.apply_text("hidden_dim = 4.5\n", "x"), UsageError);
    CHECK_THROWS_AS(rc.apply_text("deterministic = maybe\n", "x"), UsageError);
    CHECK_THROWS_AS(rc.apply_override("lr"), UsageError);
    CHECK_THROWS(rc.set("fusion_kind", "sideways"));
  }
  SUBCASE("dump round-trips") {
    RunConfig rc;
    rc.set("heads", "2");
    rc.set("train", "data/train");
    rc.set("temperature", "0.1");
    RunConfig back;
    back.apply_text(rc.dump(), "dump");
    CHECK(back.dump() == rc.dump());
    CHECK(back.model.heads == 2);
    CHECK(back.train == "data/train");
    CHECK(RunConfig::keys().size() > 40);
  }
}

TEST_CASE("config_for_data and training_windows") {
  Rng rng(3);
  std::vector<ClipFeatureSequence> data = {labelled("a", 5, rng), labelled("b", 11, rng)};
  ModelConfig c = tiny(FusionKind::co);
  c.visual_dim = 0;
  c.text_dim = 0;
  const auto got = config_for_data(c, data);
  CHECK(got.visual_dim == 3);
  CHECK(got.text_dim == 2);
  c.visual_dim = 4;
  CHECK_THROWS_AS(config_for_data(c, data), DimensionError);
  CHECK_THROWS_AS(config_for_data(c, {}), DataError);
  auto odd = data;
  odd[1].text = Array({11, 5});
  CHECK_THROWS_AS(config_for_data(tiny(FusionKind::co), odd), DimensionError);

  const auto w = training_windows(data, 4);
  // 5 clips → [0,4) [3,5); 11 clips → [0,4) [3,7) [6,10) [9,11).
  REQUIRE(w.size() == 6);
  CHECK(w[1].n() == 2);
  CHECK(w[1].clip_times[0] == data[0].clip_times[3]);
  CHECK(w[5].n() == 2);
  CHECK(training_windows(data, 2048).size() == 2);
}

TEST_CASE("predict_probabilities") {
  Rng rng(4);
  auto cfg = tiny(FusionKind::co_moe);
  ModelParams params = ModelParams::init(cfg, rng);
  const auto s = labelled("v", 10, rng);

  SUBCASE("short sequences run in one pass") {
    const auto p = predict_probabilities(params, s);
    REQUIRE(p.size() == 10);
    Rng r(0);
    NoGradGuard g;
    const auto fs = fusion_stack(params, constant(s.visual), constant(s.text), {}, r, false);
    CHECK(p == fs.p.value().vec());
  }
  SUBCASE("long sequences are windowed") {
    auto wcfg = cfg;
    wcfg.max_seq_len = 4;
    ModelParams wp = ModelParams::layout(wcfg);
    for (std::size_t i = 0; i < wp.tensors().size(); ++i) wp.at(i).value = params.at(i).value;
    const auto p = predict_probabilities(wp, s);
    REQUIRE(p.size() == 10);
    // Windows [0,4) [3,7) [6,10); junction clips come from the later window.
    const auto last = predict_probabilities(params, s.slice(6, 10));
    for (std::size_t i = 6; i < 10; ++i) CHECK(p[i] == last[i - 6]);
    const auto mid = predict_probabilities(params, s.slice(3, 7));
    CHECK(p[3] == mid[0]);
    CHECK(p[5] == mid[2]);
  }
  SUBCASE("segment_corpus thresholds and never marks the last clip") {
    params.tensors().back().value.fill(100.0);  // predictor bias: every p ≈ 1
    const auto recs = segment_corpus(params, {s});
    REQUIRE(recs.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(recs[i].clip_index == i);
      CHECK(recs[i].boundary == (i < 9));
    }
  }
}

TEST_CASE("evaluate_predictions") {
  Rng rng(5);
  const auto a = labelled("a", 6, rng);  // boundaries at clips 2 and 5
  const auto b = labelled("b", 4, rng);  // boundary at clip 2
  std::vector<PredictionRecord> recs;
  for (std::size_t i = 0; i < 6; ++i) recs.push_back({"a", i, 0.0, i == 2});
  for (std::size_t i = 0; i < 4; ++i) recs.push_back({"b", i, 0.0, false});
  MetricOptions opt;
  opt.k = 0.0;
  const auto r = evaluate_predictions(recs, {a, b}, opt);
  REQUIRE(r.videos.size() == 2);
  CHECK(r.videos[0].f1 == 1.0);
  CHECK(r.videos[1].f1 == 0.0);
  CHECK(r.corpus.f1 == 0.5);

  SUBCASE("record order does not matter") {
    auto shuffled = recs;
    std::reverse(shuffled.begin(), shuffled.end());
    CHECK(evaluate_predictions(shuffled, {a, b}, opt).corpus.f1 == 0.5);
  }
  SUBCASE("missing, duplicate and extra records") {
    CHECK_THROWS_AS(evaluate_predictions({recs.begin(), recs.begin() + 6}, {a, b}, opt), DataError);
    auto dup = recs;
    dup[1].clip_index = 0;
    CHECK_THROWS_AS(evaluate_predictions(dup, {a, b}, opt), DataError);
    auto extra = recs;
    extra.push_back({"b", 4, 0.0, false});
    CHECK_THROWS_AS(evaluate_predictions(extra, {a, b}, opt), DataError);
    auto shortv = recs;
    shortv.pop_back();
    CHECK_THROWS_AS(evaluate_predictions(shortv, {a, b}, opt), DataError);
  }
}

TEST_CASE("train_model") {
  DeterministicGuard det;
  Rng rng(6);
  std::vector<ClipFeatureSequence> data;
  for (int i = 0; i < 5; ++i) data.push_back(labelled("v" + std::to_string(i), 6 + i, rng));
  auto cfg = tiny(FusionKind::co_moe);
  TrainOptions opt;
  opt.epochs = 3;
  opt.batch_size = 2;
  opt.optim.lr = 1e-2;
  opt.seed = 9;

  Rng init(1);
  const ModelParams start = ModelParams::init(cfg, init);
  std::ostringstream log;
  opt.log = &log;
  const auto r1 = train_model(start, data, opt);
  opt.log = nullptr;
  const auto r2 = train_model(start, data, opt);

  CHECK(r1.step_totals.size() == 9);  // 3 epochs × ceil(5 / 2)
  CHECK(r1.epochs.size() == 3);
  CHECK(r1.step_totals == r2.step_totals);
  for (std::size_t i = 0; i < start.tensors().size(); ++i) {
    CHECK(r1.params.at(i).value.vec() == r2.params.at(i).value.vec());
  }
  CHECK(r1.params.at(0).value.vec() != start.at(0).value.vec());
  CHECK(r1.best_epoch == 0);

  std::istringstream lines(log.str());
  std::string line;
  int steps = 0, epochs = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("step")) {
      ++steps;
      CHECK(j.at("skipped") == false);
      CHECK(j.at("expert_util").size() == 4);
      CHECK(j.at("loss").contains("l_balance"));
    } else {
      ++epochs;
      CHECK(j.contains("mean_loss"));
    }
  }
  CHECK(steps == 9);
  CHECK(epochs == 3);

  SUBCASE("validation keeps the best epoch") {
    opt.valid = &data;
    auto r = train_model(start, data, opt);
    REQUIRE(r.best_epoch >= 1);
    double best = -1.0;
    for (const auto& e : r.epochs) best = std::max(best, e.valid_avg);
    CHECK(r.best_valid_avg == best);
    CHECK(evaluate_model(r.params, data, opt.metric).corpus.avg == doctest::Approx(best));
  }
  SUBCASE("unlabelled data is rejected") {
    auto u = data;
    u[2].labels.reset();
    CHECK_THROWS_AS(train_model(start, u, opt), DataError);
  }
}
