#include <catch2/catch_amalgamated.hpp>

#include <set>

#include <tslab/model.hpp>

#include "gradcheck.hpp"

using namespace tslab;

namespace {

ArchitectureSpec base_spec(Family family, std::size_t channels = 1, std::size_t length = 64) {
  ArchitectureSpec spec;
  spec.family = family;
  spec.input_channels = channels;
  spec.input_length = length;
  spec.head = HeadKind::regression;
  spec.scale = 0.25;
  spec.seed = 42;
  return spec;
}

Tensor random_input(std::size_t channels, std::size_t length, std::uint64_t seed) {
  RngStream rng(seed);
  std::vector<real> v(channels * length);
  for (auto& x : v) x = rng.normal();
  return Tensor::from({channels, length}, std::move(v));
}

std::size_t count_with_suffix(const std::vector<Parameter*>& params, const std::string& suffix) {
  std::size_t n = 0;
  for (const auto* p : params) {
    if (p->name.size() >= suffix.size() &&
        p->name.compare(p->name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      ++n;
    }
  }
  return n;
}

}  // namespace

TEST_CASE("spec validation") {
  auto spec = base_spec(Family::magnet);
  spec.head = HeadKind::classification;
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), param_error);

  auto spec2 = base_spec(Family::tcn);
  spec2.variant = CnqVariant::speech;
  CHECK_THROWS_AS(spec2.validate(), param_error);

  auto spec3 = base_spec(Family::tcn, 5);
  spec3.validate();
  CHECK(spec3.nonstandard_channels);
  auto spec4 = base_spec(Family::tcn, 3);
  spec4.validate();
  CHECK_FALSE(spec4.nonstandard_channels);
}

TEST_CASE("convnetquake_ingv structure") {
  auto spec = base_spec(Family::convnetquake_ingv, 3, 128);
  spec.scale = 1.0;
  auto model = build(spec);

  SECTION("exactly nine conv layers in the transferable prefix") {
    CHECK(count_with_suffix(model->transferable_parameters(), ".kernel") == 9);
    CHECK(model->transferable_parameters().size() == 18);  // kernel + bias each
  }
  SECTION("variant coefficients") {
    auto emg = spec;
    emg.variant = CnqVariant::emg;
    auto emg_model = build(emg);
    CHECK(emg_model->l2_penalty().item() == 0.0);

    auto sp = spec;
    sp.variant = CnqVariant::sp500;
    auto sp_model = build(sp);
    auto basem = build(spec);
    // identical seeds, shared he/glorot draws differ, but the ratio of the
    // penalty to the raw squared norm must be the coefficient
    real raw = 0.0;
    for (Parameter* p : sp_model->transferable_parameters()) {
      if (p->name.ends_with(".kernel")) {
        for (real v : p->value.values()) raw += v * v;
      }
    }
    CHECK(sp_model->l2_penalty().item() == Catch::Approx(0.7 * raw).epsilon(1e-12));
  }
  SECTION("hand-computed penalty on a planted kernel") {
    auto tiny = base_spec(Family::convnetquake_ingv, 1, 64);
    auto m = build(tiny);
    for (Parameter* p : m->transferable_parameters()) {
      for (auto& v : p->value.values()) v = 0.0;
    }
    // plant [1, 2] into the first kernel
    m->transferable_parameters()[0]->value.values()[0] = 1.0;
    m->transferable_parameters()[0]->value.values()[1] = 2.0;
    CHECK(m->l2_penalty().item() == Catch::Approx(0.005));
  }
}

TEST_CASE("magnet structure") {
  auto spec = base_spec(Family::magnet, 3, 128);
  spec.scale = 1.0;
  auto model = build(spec);
  SECTION("recurrent output width is 200 into the head") {
    Parameter* head_weight = nullptr;
    for (Parameter* p : model->head_parameters()) {
      if (p->name == "head.out.weight") head_weight = p;
    }
    REQUIRE(head_weight != nullptr);
    CHECK(head_weight->value.dim(1) == 200);
  }
  SECTION("transferable prefix is the two conv layers") {
    CHECK(model->transferable_parameters().size() == 4);
    CHECK(count_with_suffix(model->transferable_parameters(), ".kernel") == 2);
  }
}

TEST_CASE("tcn structure") {
  auto spec = base_spec(Family::tcn, 1, 64);
  spec.scale = 1.0;
  auto model = build(spec);
  SECTION("every conv kernel has K=8 and F=24 at scale 1") {
    std::size_t checked = 0;
    for (Parameter* p : model->transferable_parameters()) {
      if (p->name.ends_with(".direction")) {
        CHECK(p->value.dim(0) == 24);
        CHECK(p->value.dim(2) == 8);
        ++checked;
      }
    }
    CHECK(checked == 8);  // 4 levels x 2 convs
  }
  SECTION("dilations double per level via causality horizon") {
    // receptive field of the default stack covers (8-1)*(1+2+4+8)*2+1 inputs
    auto m2 = build(spec);
    CHECK(m2->transferable_parameters().size() == model->transferable_parameters().size());
  }
}

TEST_CASE("mlstm_fcn structure") {
  auto spec = base_spec(Family::mlstm_fcn, 3, 40);
  spec.scale = 1.0;
  auto model = build(spec);
  SECTION("lstm consumes one step per channel, each step length-N wide") {
    Parameter* w_ih = nullptr;
    for (Parameter* p : model->head_parameters()) {
      if (p->name == "lstm.w_ih") w_ih = p;
    }
    REQUIRE(w_ih != nullptr);
    CHECK(w_ih->value.dim(1) == 40);  // input width is the series length
  }
  SECTION("transferable prefix holds conv and batch-norm parameters only") {
    CHECK(model->transferable_parameters().size() == 3 * 4);  // kernel, bias, gamma, beta per block
    CHECK(model->transfer_buffers().size() == 6);             // running mean/var per block
    for (Parameter* p : model->transferable_parameters()) {
      CHECK(p->name.find(".se.") == std::string::npos);
    }
  }
}

TEST_CASE("forward contracts") {
  auto spec = base_spec(Family::convnetquake_ingv, 1, 64);
  spec.stream_max_enabled = true;
  auto model = build(spec);
  RngStream rng(1);
  Tensor x = random_input(1, 64, 5);

  SECTION("missing stream_max raises") {
    CHECK_THROWS_AS(model->forward(x, std::nullopt, Mode::eval, rng), contract_error);
  }
  SECTION("superfluous stream_max raises") {
    auto plain = base_spec(Family::convnetquake_ingv, 1, 64);
    auto m2 = build(plain);
    CHECK_THROWS_AS(m2->forward(x, 1.5, Mode::eval, rng), contract_error);
  }
  SECTION("length mismatch raises") {
    Tensor bad = random_input(1, 32, 5);
    CHECK_THROWS_AS(model->forward(bad, 1.5, Mode::eval, rng), dim_error);
  }
  SECTION("stream widens the first head dense input by one") {
    Parameter* with = nullptr;
    for (Parameter* p : model->head_parameters())
      if (p->name == "head.fc1.weight") with = p;
    auto plain = base_spec(Family::convnetquake_ingv, 1, 64);
    auto m2 = build(plain);
    Parameter* without = nullptr;
    for (Parameter* p : m2->head_parameters())
      if (p->name == "head.fc1.weight") without = p;
    REQUIRE(with != nullptr);
    REQUIRE(without != nullptr);
    CHECK(with->value.dim(1) == without->value.dim(1) + 1);
  }
}

TEST_CASE("classification head is a softmax simplex") {
  for (Family family : {Family::convnetquake_ingv, Family::magnet, Family::mlstm_fcn, Family::tcn}) {
    auto spec = base_spec(family, 1, 64);
    spec.head = HeadKind::classification;
    spec.num_classes = 4;
    auto model = build(spec);
    RngStream rng(2);
    Tensor probs = model->forward(random_input(1, 64, 3), std::nullopt, Mode::eval, rng);
    REQUIRE(probs.size() == 4);
    real sum = 0.0;
    for (real v : probs.values()) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::fabs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("same spec and seed rebuild bitwise-identical parameters") {
  for (Family family : {Family::convnetquake_ingv, Family::magnet, Family::mlstm_fcn, Family::tcn}) {
    auto spec = base_spec(family, 3, 64);
    auto a = build(spec);
    auto b = build(spec);
    REQUIRE(a->parameters().size() == b->parameters().size());
    for (std::size_t i = 0; i < a->parameters().size(); ++i) {
      CHECK(a->parameters()[i]->name == b->parameters()[i]->name);
      CHECK(a->parameters()[i]->value.values() == b->parameters()[i]->value.values());
    }
  }
}

TEST_CASE("two forwards with identical seeds are bitwise identical") {
  for (Family family : {Family::convnetquake_ingv, Family::magnet, Family::mlstm_fcn, Family::tcn}) {
    auto spec = base_spec(family, 1, 64);
    auto model = build(spec);
    Tensor x = random_input(1, 64, 7);
    RngStream r1(9), r2(9);
    Tensor out1 = model->forward(x, std::nullopt, Mode::train, r1);
    Tensor out2 = model->forward(x, std::nullopt, Mode::train, r2);
    CHECK(out1.values() == out2.values());
  }
}

TEST_CASE("parameter partition is total and disjoint") {
  for (Family family : {Family::convnetquake_ingv, Family::magnet, Family::mlstm_fcn, Family::tcn}) {
    auto spec = base_spec(family, 3, 64);
    auto model = build(spec);
    CHECK(model->transferable_parameters().size() + model->head_parameters().size() ==
          model->parameters().size());
    std::set<std::string> names;
    for (Parameter* p : model->parameters()) {
      CHECK(names.insert(p->name).second);  // unique names
    }
  }
}

TEST_CASE("tcn output at time t ignores future inputs at every depth") {
  for (std::size_t levels : {1ul, 2ul, 4ul}) {
    auto spec = base_spec(Family::tcn, 1, 32);
    spec.tcn.levels = levels;
    auto model = build(spec);
    RngStream rng(3);
    std::vector<real> base(32);
    RngStream data_rng(17);
    for (auto& v : base) v = data_rng.normal();

    // compare the head features (last-step column) indirectly: probe the
    // full stack by asking for output with futures perturbed beyond t = 10;
    // the last-step feature may change, so probe an internal equivalent - a
    // shortened input whose last step is t.
    const std::size_t t = 10;
    std::vector<real> cut(base.begin(), base.begin() + t + 1);
    auto spec_cut = spec;
    spec_cut.input_length = t + 1;
    auto model_cut = build(spec_cut);
    // share weights between the two lengths
    for (std::size_t i = 0; i < model->parameters().size(); ++i) {
      model_cut->parameters()[i]->value.values() = model->parameters()[i]->value.values();
    }
    std::vector<real> mutated = base;
    for (std::size_t u = t + 1; u < 32; ++u) mutated[u] += 5.0;

    auto spec_full = spec;
    auto out_cut = model_cut->forward(Tensor::from({1, t + 1}, cut), std::nullopt, Mode::eval, rng);
    // full forward on mutated futures, truncated to the same step, must match
    auto full_model = build(spec_full);
    for (std::size_t i = 0; i < model->parameters().size(); ++i) {
      full_model->parameters()[i]->value.values() = model->parameters()[i]->value.values();
    }
    std::vector<real> mutated_cut(mutated.begin(), mutated.begin() + t + 1);
    auto out_cut2 = model_cut->forward(Tensor::from({1, t + 1}, mutated_cut), std::nullopt, Mode::eval, rng);
    for (std::size_t i = 0; i < out_cut.size(); ++i) {
      CHECK(out_cut.values()[i] == Catch::Approx(out_cut2.values()[i]).margin(1e-12));
    }
  }
}

TEST_CASE("full architectures pass sampled finite-difference checks") {
  for (Family family : {Family::convnetquake_ingv, Family::magnet, Family::mlstm_fcn, Family::tcn}) {
    auto spec = base_spec(family, 1, 24);
    spec.stream_max_enabled = true;
    auto model = build(spec);
    Tensor x = random_input(1, 24, 13);
    // jitter to a generic point: zero biases sit exactly on ReLU kinks at
    // causally padded positions, where the loss has no derivative at all
    RngStream jitter(99);
    for (Parameter* p : model->parameters())
      for (auto& v : p->value.values()) v += jitter.normal() * 0.03;
    RngStream sampler(31);
    auto forward = [&] {
      RngStream rng(77);  // fixed stream so dropout masks repeat across evals
      Tensor out = model->forward(x, 2.5, Mode::train, rng);
      return add(sum_squares(out), model->l2_penalty());
    };
    std::vector<Tensor> tensors;
    for (Parameter* p : model->parameters()) tensors.push_back(p->value);
    auto result = check(forward, tensors, 1e-3, 1e-4, 1e-6, 4, &sampler);
    INFO(family_name(family) << ": " << result.detail);
    CHECK(result.pass);
  }
}
