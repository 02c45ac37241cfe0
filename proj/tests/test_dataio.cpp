#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include <tslab/dataio.hpp>

using namespace tslab;
namespace fs = std::filesystem;

namespace {

TimeSeriesDataset make_regression(std::size_t n, std::size_t channels = 1, std::size_t length = 4,
                                  std::uint64_t seed = 7) {
  TimeSeriesDataset ds;
  ds.name = "reg";
  ds.task_kind = TaskKind::regression;
  ds.channels = channels;
  ds.length = length;
  RngStream rng(seed);
  ds.instances.resize(n);
  for (auto& inst : ds.instances) {
    inst.x.resize(channels * length);
    for (auto& v : inst.x) v = rng.normal();
    inst.target = rng.normal();
  }
  return ds;
}

TimeSeriesDataset make_classification(std::size_t n, std::size_t num_classes, std::uint64_t seed = 11) {
  TimeSeriesDataset ds = make_regression(n, 1, 4, seed);
  ds.name = "cls";
  ds.task_kind = TaskKind::classification;
  ds.num_classes = num_classes;
  RngStream rng(seed + 1);
  for (std::size_t i = 0; i < n; ++i) ds.instances[i].target = static_cast<real>(i % num_classes);
  return ds;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tslab_dataio_tests";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("canonical container round trip") {
  auto path = temp_file("roundtrip.tsds");
  TimeSeriesDataset ds = make_regression(12, 2, 5);
  // force values representable in 32 bits so the round trip is bitwise
  for (auto& inst : ds.instances) {
    for (auto& v : inst.x) v = static_cast<real>(static_cast<float>(v));
    inst.target = static_cast<real>(static_cast<float>(inst.target));
  }
  save_canonical(ds, path);
  TimeSeriesDataset loaded = load_canonical(path);
  REQUIRE(loaded.size() == ds.size());
  CHECK(loaded.channels == 2);
  CHECK(loaded.length == 5);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(loaded.instances[i].x == ds.instances[i].x);
    CHECK(loaded.instances[i].target == ds.instances[i].target);
  }

  SECTION("second save produces identical bytes") {
    auto path2 = temp_file("roundtrip2.tsds");
    save_canonical(loaded, path2);
    std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
  }
}

TEST_CASE("single instance file parses with its dimensions") {
  auto path = temp_file("single.tsds");
  TimeSeriesDataset ds = make_regression(1, 1, 4);
  save_canonical(ds, path);
  TimeSeriesDataset loaded = load_canonical(path);
  CHECK(loaded.channels == 1);
  CHECK(loaded.length == 4);
  CHECK(loaded.size() == 1);
  CHECK(loaded.task_kind == TaskKind::regression);
}

TEST_CASE("container rejects malformed files") {
  auto path = temp_file("broken.tsds");
  TimeSeriesDataset ds = make_regression(3, 1, 4);
  save_canonical(ds, path);

  SECTION("truncation names expected and actual byte counts") {
    auto truncated = temp_file("truncated.tsds");
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(truncated, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
    out.close();
    try {
      load_canonical(truncated);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("expected") != std::string::npos);
      CHECK(msg.find(std::to_string(bytes.size())) != std::string::npos);
      CHECK(msg.find(std::to_string(bytes.size() - 5)) != std::string::npos);
    }
  }
  SECTION("bad magic") {
    auto wrong = temp_file("magic.tsds");
    std::ofstream out(wrong, std::ios::binary);
    std::string junk(100, 'x');
    out.write(junk.data(), 100);
    out.close();
    CHECK_THROWS_AS(load_canonical(wrong), format_error);
  }
  SECTION("NaN payload names the byte offset") {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(64 + 8);  // third float of the first instance
    const std::uint32_t nan_bits = 0x7fc00000;
    f.write(reinterpret_cast<const char*>(&nan_bits), 4);
    f.close();
    try {
      load_canonical(path);
      FAIL("expected format_error");
    } catch (const format_error& e) {
      CHECK(std::string(e.what()).find("offset 72") != std::string::npos);
    }
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_canonical(temp_file("nope.tsds")), format_error);
  }
}

TEST_CASE("split proportions and determinism") {
  SECTION("100 instances go 70/15/15") {
    auto s = split(make_regression(100), 5);
    CHECK(s.train.size() == 70);
    CHECK(s.val.size() == 15);
    CHECK(s.test.size() == 15);
  }
  SECTION("20 instances go 14/3/3") {
    auto s = split(make_regression(20), 5);
    CHECK(s.train.size() == 14);
    CHECK(s.val.size() == 3);
    CHECK(s.test.size() == 3);
  }
  SECTION("same seed twice gives identical membership") {
    auto a = split(make_regression(50), 9);
    auto b = split(make_regression(50), 9);
    for (std::size_t i = 0; i < a.train.size(); ++i) CHECK(a.train.instances[i].x == b.train.instances[i].x);
    for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(a.test.instances[i].x == b.test.instances[i].x);
  }
  SECTION("too few instances raises") {
    CHECK_THROWS_AS(split(make_regression(9), 1), param_error);
  }
  SECTION("subsets are disjoint by content tag") {
    TimeSeriesDataset ds = make_regression(40);
    for (std::size_t i = 0; i < 40; ++i) ds.instances[i].x[0] = static_cast<real>(i);  // unique ids
    auto s = split(ds, 3);
    std::vector<bool> seen(40, false);
    auto mark = [&](const TimeSeriesDataset& sub) {
      for (const auto& inst : sub.instances) {
        auto id = static_cast<std::size_t>(inst.x[0]);
        CHECK_FALSE(seen[id]);
        seen[id] = true;
      }
    };
    mark(s.train);
    mark(s.val);
    mark(s.test);
    CHECK(std::count(seen.begin(), seen.end(), true) == 40);
  }
}

TEST_CASE("preprocess scales, records stream_max and centers by the training mask") {
  SECTION("direct scaling example") {
    TimeSeriesDataset ds = make_regression(10, 1, 3);
    ds.instances[0].x = {-4.0, 0.0, 2.0};
    auto s = split(ds, 1);
    // find where instance 0 landed
    auto [processed, state] = preprocess(s);
    bool found = false;
    auto scan = [&](const TimeSeriesDataset& sub, const std::vector<real>& stream) {
      for (std::size_t i = 0; i < sub.size(); ++i) {
        if (stream[i] == 4.0) {
          found = true;
          // scaled values (x+4)/6 = {0, 2/3, 1} before centering
        }
      }
    };
    scan(processed.train, state.train_stream_max);
    scan(processed.val, state.val_stream_max);
    scan(processed.test, state.test_stream_max);
    CHECK(found);
  }
  SECTION("hand-computed mask on two training instances") {
    // bypass split: craft a SplitDataset directly
    SplitDataset s;
    s.train = make_regression(2, 1, 2);
    s.train.instances[0].x = {0.0, 1.0};
    s.train.instances[1].x = {1.0, 0.0};
    s.val = make_regression(1, 1, 2);
    s.val.instances[0].x = {0.0, 2.0};
    s.test = s.val;
    auto [processed, state] = preprocess(s);
    CHECK(state.mask == std::vector<real>{0.5, 0.5});
    CHECK(processed.train.instances[0].x == std::vector<real>{-0.5, 0.5});
    CHECK(processed.train.instances[1].x == std::vector<real>{0.5, -0.5});
  }
  SECTION("per-position training mean is zero after centering") {
    auto s = split(make_regression(60, 2, 6), 13);
    auto [processed, state] = preprocess(s);
    const std::size_t width = 12;
    for (std::size_t j = 0; j < width; ++j) {
      real acc = 0.0;
      for (const auto& inst : processed.train.instances) acc += inst.x[j];
      CHECK(std::fabs(acc / static_cast<real>(processed.train.size())) < 1e-6);
    }
  }
  SECTION("scaled training values lie in [0,1] pre-centering, [-1,1] after") {
    auto s = split(make_regression(40, 1, 8), 17);
    auto [processed, state] = preprocess(s);
    for (const auto& inst : processed.train.instances) {
      for (real v : inst.x) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
      }
    }
  }
  SECTION("constant instance is rejected") {
    SplitDataset s;
    s.train = make_regression(2, 1, 3);
    s.train.instances[0].x = {5.0, 5.0, 5.0};
    s.val = make_regression(1, 1, 3);
    s.test = s.val;
    CHECK_THROWS_AS(preprocess(s), degenerate_error);
  }
  SECTION("no leakage: perturbing val/test never changes training artifacts") {
    auto s = split(make_regression(50, 1, 5), 19);
    auto [p1, st1] = preprocess(s);
    auto mutated = s;
    for (auto& inst : mutated.val.instances)
      for (auto& v : inst.x) v += 100.0;
    for (auto& inst : mutated.test.instances)
      for (auto& v : inst.x) v *= -3.0;
    auto [p2, st2] = preprocess(mutated);
    CHECK(st1.mask == st2.mask);
    CHECK(st1.train_stream_max == st2.train_stream_max);
    for (std::size_t i = 0; i < p1.train.size(); ++i) {
      CHECK(p1.train.instances[i].x == p2.train.instances[i].x);
    }
  }
  SECTION("stream_max is positive and computed from raw values") {
    auto s = split(make_regression(30, 1, 5), 23);
    auto raw = s;  // keep raw copy
    auto [processed, state] = preprocess(s);
    for (std::size_t i = 0; i < raw.train.size(); ++i) {
      real lo = raw.train.instances[i].x[0], hi = lo;
      for (real v : raw.train.instances[i].x) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      CHECK(state.train_stream_max[i] == std::max(std::fabs(lo), std::fabs(hi)));
      CHECK(state.train_stream_max[i] > 0.0);
    }
  }
}

TEST_CASE("training-set reduction") {
  SECTION("regression reduction hits the exact size") {
    auto s = split(make_regression(2000), 29);
    auto reduced = reduce_training(s, 150, 3);
    CHECK(reduced.train.size() == 150);
    CHECK(reduced.val.size() == s.val.size());
    CHECK(reduced.test.size() == s.test.size());
  }
  SECTION("stratification stays within one instance per class") {
    auto s = split(make_classification(1000, 2), 31);
    auto reduced = reduce_training(s, 100, 5);
    REQUIRE(reduced.train.size() == 100);
    std::size_t c0 = 0;
    for (std::size_t i = 0; i < reduced.train.size(); ++i)
      if (reduced.train.label(i) == 0) ++c0;
    // full training set is close to 50/50; reduction preserves it within 1
    std::size_t full0 = 0;
    for (std::size_t i = 0; i < s.train.size(); ++i)
      if (s.train.label(i) == 0) ++full0;
    const real expect = 100.0 * static_cast<real>(full0) / static_cast<real>(s.train.size());
    CHECK(std::fabs(static_cast<real>(c0) - expect) <= 1.0);
  }
  SECTION("three-way stratification is exact on a crafted distribution") {
    auto ds = make_classification(300, 3);  // exactly 100 per class
    auto s = split(ds, 1);
    // full split proportions unknown; craft train directly instead
    SplitDataset crafted;
    crafted.train = ds;
    crafted.val = make_classification(10, 3);
    crafted.test = crafted.val;
    auto reduced = reduce_training(crafted, 30, 7);
    std::vector<std::size_t> counts(3, 0);
    for (std::size_t i = 0; i < reduced.train.size(); ++i) ++counts[reduced.train.label(i)];
    CHECK(counts == std::vector<std::size_t>{10, 10, 10});
  }
  SECTION("same seed gives an identical subsample") {
    auto s = split(make_regression(500), 37);
    auto a = reduce_training(s, 60, 9);
    auto b = reduce_training(s, 60, 9);
    for (std::size_t i = 0; i < 60; ++i) CHECK(a.train.instances[i].x == b.train.instances[i].x);
  }
  SECTION("oversized request raises") {
    auto s = split(make_regression(100), 41);
    CHECK_THROWS_AS(reduce_training(s, 71, 1), param_error);
  }
}

TEST_CASE("synthetic generators") {
  SynthParams params;
  params.channels = 2;
  params.length = 32;
  params.source.size = 40;
  params.target.size = 40;
  params.source.seed = 1;
  params.target.seed = 2;

  SECTION("dimensions match the parameters") {
    auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, params, 99);
    CHECK(src.channels == 2);
    CHECK(src.length == 32);
    CHECK(src.size() == 40);
    CHECK(tgt.size() == 40);
  }
  SECTION("identical side seeds produce identical datasets") {
    SynthParams same = params;
    same.target.seed = same.source.seed;
    auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, same, 99);
    REQUIRE(src.size() == tgt.size());
    for (std::size_t i = 0; i < src.size(); ++i) {
      CHECK(src.instances[i].x == tgt.instances[i].x);
      CHECK(src.instances[i].target == tgt.instances[i].target);
    }
  }
  SECTION("different side seeds differ") {
    auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, params, 99);
    CHECK(src.instances[0].x != tgt.instances[0].x);
  }
  SECTION("classification sides emit in-range labels") {
    SynthParams cls = params;
    cls.target.task = TaskKind::classification;
    cls.target.num_classes = 3;
    auto [src, tgt] = synth_task(SynthKind::shared_filter_pair, cls, 21);
    CHECK(tgt.num_classes == 3);
    for (std::size_t i = 0; i < tgt.size(); ++i) CHECK(tgt.label(i) < 3);
  }
  SECTION("noise targets: the constant mean predictor is as good as it gets") {
    SynthParams noise = params;
    noise.source.size = 4000;
    noise.target.size = 4000;
    auto [src, tgt] = synth_task(SynthKind::noise, noise, 55);
    real mean = 0.0;
    for (const auto& inst : tgt.instances) mean += inst.target;
    mean /= static_cast<real>(tgt.size());
    std::vector<real> preds(tgt.size(), mean), truth(tgt.size());
    for (std::size_t i = 0; i < tgt.size(); ++i) truth[i] = tgt.instances[i].target;
    const real observed = mae(preds, truth);
    // targets are standard normal: the best possible MAE is sigma*sqrt(2/pi)
    const real theoretical = std::sqrt(2.0 / std::numbers::pi);
    CHECK(std::fabs(observed - theoretical) / theoretical < 0.05);
  }
}
