#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include <tslab/trainer.hpp>

#include "gradcheck.hpp"

using namespace tslab;

namespace {

// Independent reference simulator for the plateau/early-stop protocol,
// written directly from the rules: improvement = drop by more than min_delta;
// cut the rate by the factor (never below the floor) after `plateau` straight
// non-improving epochs, resetting that counter on a cut; stop after `stop`
// straight non-improving epochs; both counters reset on improvement.
struct SimulatorOutcome {
  std::vector<real> lr_per_epoch;
  std::vector<std::size_t> cut_epochs;   // 1-based
  std::size_t stop_epoch = 0;            // 1-based, 0 = ran to the end
};

SimulatorOutcome simulate(const std::vector<real>& losses, const TrainConfig& cfg) {
  SimulatorOutcome out;
  real lr = cfg.base_lr;
  real best = std::numeric_limits<real>::infinity();
  std::size_t since_improve_plateau = 0, since_improve_stop = 0;
  for (std::size_t e = 0; e < losses.size() && e < cfg.max_epochs; ++e) {
    out.lr_per_epoch.push_back(lr);
    if (losses[e] < best - cfg.min_delta) {
      best = losses[e];
      since_improve_plateau = 0;
      since_improve_stop = 0;
    } else {
      ++since_improve_plateau;
      ++since_improve_stop;
      if (since_improve_plateau >= cfg.plateau_patience) {
        lr = std::max(lr * cfg.plateau_factor, cfg.lr_floor);
        out.cut_epochs.push_back(e + 1);
        since_improve_plateau = 0;
      }
      if (since_improve_stop >= cfg.early_stop_patience) {
        out.stop_epoch = e + 1;
        break;
      }
    }
  }
  return out;
}

SimulatorOutcome drive_schedule(const std::vector<real>& losses, const TrainConfig& cfg) {
  TrainSchedule schedule(cfg);
  SimulatorOutcome out;
  for (std::size_t e = 0; e < losses.size() && e < cfg.max_epochs; ++e) {
    out.lr_per_epoch.push_back(schedule.lr());
    auto d = schedule.observe(losses[e]);
    if (d.lr_cut) out.cut_epochs.push_back(e + 1);
    if (d.stop) {
      out.stop_epoch = e + 1;
      break;
    }
  }
  return out;
}

SplitDataset learnable_split(std::uint64_t seed, std::size_t n = 80, std::size_t length = 24) {
  SynthParams params;
  params.channels = 1;
  params.length = length;
  params.source.size = n;
  params.source.seed = seed;
  params.target.size = 10;
  params.target.seed = seed + 1;
  auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, params, seed);
  auto s = split(src, seed);
  auto [processed, state] = preprocess(s);
  return processed;
}

ArchitectureSpec small_cnq(std::size_t length = 24, std::uint64_t seed = 3) {
  ArchitectureSpec spec;
  spec.family = Family::convnetquake_ingv;
  spec.input_channels = 1;
  spec.input_length = length;
  spec.head = HeadKind::regression;
  spec.scale = 0.25;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("mse loss") {
  std::vector<real> a{1.0, 2.0};
  CHECK(mse(a, a) == 0.0);
  std::vector<real> p{2.0, 0.0}, t{0.0, 0.0};
  CHECK(mse(p, t) == 2.0);
  CHECK_THROWS_AS(mse(std::vector<real>{1.0}, std::vector<real>{1.0, 2.0}), param_error);

  RngStream rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<real> x(33), y(33);
    for (std::size_t i = 0; i < 33; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
    }
    real acc = 0.0;
    for (std::size_t i = 0; i < 33; ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
    CHECK(mse(x, y) == Catch::Approx(acc / 33.0).epsilon(1e-9));
  }
}

TEST_CASE("crossentropy loss") {
  SECTION("perfect one-hot is zero") {
    std::vector<std::vector<real>> probs{{0.0, 1.0, 0.0}};
    std::vector<std::size_t> labels{1};
    CHECK(crossentropy(probs, labels) == Catch::Approx(0.0).margin(1e-9));
  }
  SECTION("uniform over four classes is ln 4") {
    std::vector<std::vector<real>> probs{{0.25, 0.25, 0.25, 0.25}};
    std::vector<std::size_t> labels{2};
    CHECK(crossentropy(probs, labels) == Catch::Approx(std::log(4.0)));
  }
  SECTION("hand-evaluated two-instance batch") {
    std::vector<std::vector<real>> probs{{0.5, 0.5}, {0.25, 0.75}};
    std::vector<std::size_t> labels{0, 0};
    CHECK(crossentropy(probs, labels) == Catch::Approx((std::log(2.0) + std::log(4.0)) / 2.0));
  }
  SECTION("label range and simplex checks") {
    std::vector<std::vector<real>> probs{{0.5, 0.5}};
    std::vector<std::size_t> bad{2};
    CHECK_THROWS_AS(crossentropy(probs, bad), param_error);
    std::vector<std::vector<real>> not_simplex{{0.4, 0.4}};
    std::vector<std::size_t> labels{0};
    CHECK_THROWS_AS(crossentropy(not_simplex, labels), param_error);
  }
}

TEST_CASE("schedule automaton anchors") {
  TrainConfig cfg;

  SECTION("strictly decreasing losses never cut and never stop") {
    TrainSchedule s(cfg);
    for (int e = 0; e < 100; ++e) {
      auto d = s.observe(1.0 - 0.01 * e);
      CHECK(d.improved);
      CHECK_FALSE(d.lr_cut);
      CHECK_FALSE(d.stop);
      CHECK(s.lr() == 0.001);
    }
  }
  SECTION("flat losses: first cut at epoch 5, stop once ten epochs sit flat") {
    TrainSchedule s(cfg);
    std::vector<std::size_t> cuts;
    std::size_t stop_epoch = 0;
    for (std::size_t e = 1; e <= 30 && stop_epoch == 0; ++e) {
      auto d = s.observe(1.0);
      if (d.lr_cut) cuts.push_back(e);
      if (d.stop) stop_epoch = e;
    }
    // epoch 1 improves on +inf; epochs 2-5 are the four flat epochs
    REQUIRE(cuts.size() == 2);
    CHECK(cuts[0] == 5);
    CHECK(cuts[1] == 9);
    CHECK(stop_epoch == 11);  // ten consecutive non-improving epochs: 2..11
    CHECK(s.lr() == Catch::Approx(0.001 * 0.2 * 0.2));
  }
  SECTION("repeated flat losses walk the rate down to the floor") {
    TrainConfig wide = cfg;
    wide.early_stop_patience = 1000;
    TrainSchedule s(wide);
    std::vector<real> lrs{s.lr()};
    for (int e = 0; e < 30; ++e) {
      auto d = s.observe(1.0);
      if (d.lr_cut) lrs.push_back(s.lr());
    }
    REQUIRE(lrs.size() >= 6);
    CHECK(lrs[0] == Catch::Approx(1e-3));
    CHECK(lrs[1] == Catch::Approx(2e-4));
    CHECK(lrs[2] == Catch::Approx(4e-5));
    CHECK(lrs[3] == Catch::Approx(8e-6));
    CHECK(lrs[4] == Catch::Approx(1.6e-6));
    CHECK(lrs[5] == Catch::Approx(5e-7));  // clamped, never below 0.5e-6
    for (real lr : lrs) CHECK(lr >= 5e-7);
  }
}

TEST_CASE("schedule matches the independent simulator on random scripts") {
  RngStream rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    TrainConfig cfg;
    cfg.plateau_patience = 1 + rng.index(6);
    cfg.early_stop_patience = 1 + rng.index(15);
    cfg.max_epochs = 1 + rng.index(60);
    std::vector<real> losses(60);
    real level = 1.0;
    for (auto& l : losses) {
      if (rng.uniform() < 0.4) level -= rng.uniform();  // improvements
      l = level + (rng.uniform() < 0.3 ? rng.uniform() * 0.5 : 0.0);
    }
    auto a = simulate(losses, cfg);
    auto b = drive_schedule(losses, cfg);
    CHECK(a.lr_per_epoch == b.lr_per_epoch);
    CHECK(a.cut_epochs == b.cut_epochs);
    CHECK(a.stop_epoch == b.stop_epoch);
  }
}

TEST_CASE("negative log-likelihood through softmax matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    RngStream rng(seed);
    std::vector<real> lv(5);
    for (auto& v : lv) v = rng.normal();
    Tensor logits = Tensor::from({5}, lv);
    logits.set_requires_grad(true);
    const std::size_t label = rng.index(5);
    auto forward = [&] { return neg_log_prob_loss(softmax(logits), label); };
    auto result = check(forward, {logits});
    INFO(result.detail);
    CHECK(result.pass);
  }
}

TEST_CASE("classification training runs end to end") {
  SynthParams params;
  params.channels = 1;
  params.length = 24;
  params.source.size = 10;
  params.source.seed = 5;
  params.target.size = 90;
  params.target.seed = 6;
  params.target.task = TaskKind::classification;
  params.target.num_classes = 3;
  auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, params, 17);
  auto s = split(tgt, 3);
  auto [data, state] = preprocess(s);

  ArchitectureSpec spec = small_cnq(24, 9);
  spec.head = HeadKind::classification;
  spec.num_classes = 3;
  auto model = build(spec);
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.batch_size = 16;
  RngStream rng(77);
  auto history = train(*model, data, cfg, rng);

  REQUIRE(!history.epochs.empty());
  for (const auto& e : history.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
    CHECK(e.val_metric >= 0.0);
    CHECK(e.val_metric <= 1.0);  // weighted F1
  }
  CHECK(history.final_test_score >= 0.0);
  CHECK(history.final_test_score <= 1.0);
  CHECK(history.final_test_score == Catch::Approx(evaluate(*model, data.test)).epsilon(1e-12));
}

TEST_CASE("training descends on a learnable task") {
  std::size_t successes = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto data = learnable_split(seed);
    auto spec = small_cnq(24, seed);
    auto model = build(spec);
    TrainConfig cfg;
    cfg.max_epochs = 5;
    cfg.batch_size = 16;
    RngStream rng(seed * 31);
    auto history = train(*model, data, cfg, rng);
    REQUIRE(history.epochs.size() == 5);
    if (history.epochs.back().train_loss < history.epochs.front().train_loss) ++successes;
  }
  CHECK(successes >= 4);  // sanity descent, one seed may fail
}

TEST_CASE("run history bookkeeping") {
  auto data = learnable_split(7);
  auto model = build(small_cnq(24, 7));
  TrainConfig cfg;
  cfg.max_epochs = 6;
  cfg.batch_size = 16;
  RngStream rng(99);
  auto history = train(*model, data, cfg, rng);

  SECTION("epoch cap and stop reason") {
    CHECK(history.epochs.size() <= 250);
    CHECK((history.stopped_by == StopReason::max_epochs || history.stopped_by == StopReason::early_stop));
    CHECK(history.best_epoch < history.epochs.size());
  }
  SECTION("learning rate never increases and stays above the floor") {
    for (std::size_t e = 1; e < history.epochs.size(); ++e) {
      CHECK(history.epochs[e].lr <= history.epochs[e - 1].lr);
      CHECK(history.epochs[e].lr >= cfg.lr_floor);
    }
  }
  SECTION("restored weights reproduce the recorded best validation loss") {
    const real recorded = history.epochs[history.best_epoch].val_loss;
    CHECK(eval_loss(*model, data.val) == Catch::Approx(recorded).epsilon(1e-12));
  }
  SECTION("final test score is the evaluation of the restored model") {
    CHECK(history.final_test_score == Catch::Approx(evaluate(*model, data.test)).epsilon(1e-12));
  }
}

TEST_CASE("training is deterministic under fixed seeds") {
  auto run_once = [] {
    auto data = learnable_split(11);
    auto model = build(small_cnq(24, 11));
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.batch_size = 16;
    RngStream rng(55);
    return train(*model, data, cfg, rng);
  };
  auto a = run_once();
  auto b = run_once();
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t e = 0; e < a.epochs.size(); ++e) {
    CHECK(a.epochs[e].train_loss == b.epochs[e].train_loss);
    CHECK(a.epochs[e].val_loss == b.epochs[e].val_loss);
  }
  CHECK(a.final_test_score == b.final_test_score);
}

TEST_CASE("evaluate") {
  SECTION("constant-zero regressor on all-zero targets has zero MAE") {
    auto spec = small_cnq(24, 1);
    auto model = build(spec);
    for (Parameter* p : model->parameters())
      for (auto& v : p->value.values()) v = 0.0;
    TimeSeriesDataset ds;
    ds.name = "zeros";
    ds.task_kind = TaskKind::regression;
    ds.channels = 1;
    ds.length = 24;
    ds.instances.resize(5);
    RngStream rng(2);
    for (auto& inst : ds.instances) {
      inst.x.assign(24, 0.0);
      for (auto& v : inst.x) v = rng.normal();
      inst.target = 0.0;
    }
    CHECK(evaluate(*model, ds) == 0.0);
  }
  SECTION("deterministic across calls and dropout-independent in eval mode") {
    ArchitectureSpec spec;
    spec.family = Family::magnet;  // magnet carries dropout layers
    spec.input_channels = 1;
    spec.input_length = 32;
    spec.head = HeadKind::regression;
    spec.scale = 0.25;
    spec.seed = 5;
    auto model = build(spec);
    auto data = learnable_split(3, 80, 32);
    const real a = evaluate(*model, data.val);
    const real b = evaluate(*model, data.val);
    CHECK(a == b);
  }
  SECTION("task mismatch raises") {
    auto model = build(small_cnq(24, 1));
    TimeSeriesDataset ds;
    ds.name = "cls";
    ds.task_kind = TaskKind::classification;
    ds.num_classes = 2;
    ds.channels = 1;
    ds.length = 24;
    ds.instances.resize(2);
    for (auto& inst : ds.instances) inst.x.assign(24, 0.5);
    ds.instances[0].target = 0;
    ds.instances[1].target = 1;
    CHECK_THROWS_AS(evaluate(*model, ds), param_error);
  }
}

TEST_CASE("history serialization round trips") {
  RunHistory history;
  history.epochs = {{0.5, 0.4, 0.3, 0.001}, {0.4, 0.35, 0.25, 0.001}, {0.39, 0.36, 0.26, 0.0002}};
  history.stopped_by = StopReason::early_stop;
  history.best_epoch = 1;
  history.final_test_score = 0.123456789;
  history.wall_time_seconds = 12.5;

  const std::string text = history_to_jsonl(history);
  std::istringstream in(text);
  auto parsed = history_from_jsonl(in);
  REQUIRE(parsed.has_value());
  CHECK(parsed->epochs.size() == 3);
  CHECK(parsed->epochs[2].lr == 0.0002);
  CHECK(parsed->stopped_by == StopReason::early_stop);
  CHECK(parsed->best_epoch == 1);
  CHECK(parsed->final_test_score == 0.123456789);

  SECTION("incomplete logs are rejected") {
    // drop the final (summary) line
    const auto last_newline = text.rfind('\n', text.size() - 2);
    std::string truncated = text.substr(0, last_newline + 1);
    REQUIRE(truncated.find("summary") == std::string::npos);
    std::istringstream bad(truncated);
    CHECK_FALSE(history_from_jsonl(bad).has_value());
  }
  SECTION("serialization is deterministic") {
    CHECK(history_to_jsonl(history) == text);
  }
}
