#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include <tslab/rng.hpp>
#include <tslab/stats.hpp>

using namespace tslab;

namespace {

// Independent brute-force Wilcoxon oracle: average ranks by sorting pairs,
// then enumerate every sign assignment directly on the rank values.
double wilcoxon_oracle_p(const std::vector<real>& deltas) {
  std::vector<real> nz;
  for (real d : deltas)
    if (d != 0.0) nz.push_back(d);
  const std::size_t n = nz.size();
  std::vector<std::pair<real, std::size_t>> sorted;
  for (std::size_t i = 0; i < n; ++i) sorted.emplace_back(std::fabs(nz[i]), i);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1].first == sorted[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k) rank[sorted[k].second] = avg;
    i = j + 1;
  }
  double t_obs = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (nz[k] > 0.0) t_obs += rank[k];
  std::size_t le = 0, ge = 0;
  const std::uint64_t total = 1ULL << n;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double t = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (mask & (1ULL << k)) t += rank[k];
    if (t <= t_obs + 1e-9) ++le;
    if (t >= t_obs - 1e-9) ++ge;
  }
  return std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
}

// Independent brute-force two-stage procedure, straight from its published
// definition: BH at q/(1+q), then BH at q' * m / m0.
std::vector<bool> bky_oracle(const std::vector<real>& pvalues, real q) {
  const std::size_t m = pvalues.size();
  auto bh = [&](real level) {
    std::vector<real> sorted = pvalues;
    std::sort(sorted.begin(), sorted.end());
    std::size_t r = 0;
    for (std::size_t k = 1; k <= m; ++k)
      if (sorted[k - 1] <= static_cast<real>(k) * level / static_cast<real>(m)) r = k;
    real threshold = r > 0 ? sorted[r - 1] : -1.0;
    std::vector<bool> rejected(m);
    for (std::size_t idx = 0; idx < m; ++idx) rejected[idx] = pvalues[idx] <= threshold;
    return std::make_pair(r, rejected);
  };
  const real q1 = q / (1.0 + q);
  auto [r1, stage1] = bh(q1);
  if (r1 == 0) return std::vector<bool>(m, false);
  if (r1 == m) return std::vector<bool>(m, true);
  return bh(q1 * static_cast<real>(m) / static_cast<real>(m - r1)).second;
}

}  // namespace

TEST_CASE("sign test critical values") {
  CHECK(sign_test_critical(240) == 136);
  CHECK(sign_test_critical(1) == 2);
  CHECK(sign_test_critical(48) == 31);  // ceil((48 + 1.96*sqrt(48))/2) = ceil(30.79)
}

TEST_CASE("sign test verdicts") {
  CHECK(sign_test(204, 36) == SignVerdict::significant_tl);
  CHECK(sign_test(120, 120) == SignVerdict::not_significant);
  CHECK(sign_test(135, 105) == SignVerdict::not_significant);
  CHECK(sign_test(136, 104) == SignVerdict::significant_tl);

  SECTION("swapping wins and losses mirrors the verdict") {
    RngStream rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t wins = rng.index(60);
      const std::size_t losses = 1 + rng.index(60);
      const auto a = sign_test(wins, losses);
      const auto b = sign_test(losses, wins);
      if (a == SignVerdict::significant_tl) CHECK(b == SignVerdict::significant_referent);
      if (a == SignVerdict::significant_referent) CHECK(b == SignVerdict::significant_tl);
      if (a == SignVerdict::not_significant) CHECK(b == SignVerdict::not_significant);
    }
  }
}

TEST_CASE("wilcoxon exact anchors") {
  SECTION("six positive deltas with distinct magnitudes") {
    auto r = wilcoxon({{1.0, 2.0, 3.0, 4.0, 5.0, 6.0}});
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == Catch::Approx(2.0 / 64.0));
  }
  SECTION("five positive deltas cannot reach 0.05") {
    auto r = wilcoxon({{0.1, 0.2, 0.3, 0.4, 0.5}});
    CHECK(r.p_value == Catch::Approx(2.0 / 32.0));
    CHECK(r.p_value > 0.05);
  }
  SECTION("antisymmetric sample sits at the median") {
    auto r = wilcoxon({{1.0, -1.0, 2.0, -2.0, 3.0, -3.0}});
    CHECK(r.p_value == 1.0);
  }
  SECTION("all-zero deltas is degenerate") {
    CHECK_THROWS_AS(wilcoxon({{0.0, 0.0}}), degenerate_error);
  }
}

TEST_CASE("wilcoxon matches the brute-force enumeration oracle") {
  RngStream rng(17);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng.index(10);
    std::vector<real> deltas(n);
    for (auto& d : deltas) {
      d = rng.normal();
      if (rng.uniform() < 0.3) d = std::round(d * 4.0) / 4.0;  // induce ties and zeros
    }
    bool all_zero = true;
    for (real d : deltas) all_zero = all_zero && d == 0.0;
    if (all_zero) continue;
    const auto r = wilcoxon({deltas});
    const double oracle = wilcoxon_oracle_p(deltas);
    CHECK(r.p_value == Catch::Approx(oracle).margin(1e-12));
    // the rejection decision at 0.05 must match bit for bit
    CHECK((r.p_value <= 0.05) == (oracle <= 0.05));
  }
}

TEST_CASE("wilcoxon scale invariance") {
  RngStream rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.index(20);
    std::vector<real> deltas(n);
    for (auto& d : deltas) d = rng.normal();
    const real c = 0.01 + 10.0 * rng.uniform();
    std::vector<real> scaled = deltas;
    for (auto& d : scaled) d *= c;
    CHECK(wilcoxon({deltas}).p_value == Catch::Approx(wilcoxon({scaled}).p_value).margin(1e-12));
  }
}

TEST_CASE("wilcoxon exact and normal branches agree near the crossover") {
  RngStream rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<real> deltas(kWilcoxonExactLimit);
    for (auto& d : deltas) d = rng.normal() + 0.3;
    const auto exact = wilcoxon({deltas});

    // recompute with the approximate branch by feeding n = 16 and removing
    // the weakest delta's influence is not possible directly; instead check
    // the documented guard: exact p at n=15 vs normal approximation formula
    const std::size_t n = deltas.size();
    std::vector<real> abs_values(n);
    for (std::size_t i = 0; i < n; ++i) abs_values[i] = std::fabs(deltas[i]);
    std::vector<std::pair<real, std::size_t>> sorted;
    for (std::size_t i = 0; i < n; ++i) sorted.emplace_back(abs_values[i], i);
    std::sort(sorted.begin(), sorted.end());
    std::vector<real> rank(n);
    for (std::size_t i = 0; i < n; ++i) rank[sorted[i].second] = static_cast<real>(i + 1);
    real w_pos = 0.0, w_neg = 0.0;
    for (std::size_t i = 0; i < n; ++i) (deltas[i] > 0 ? w_pos : w_neg) += rank[i];
    const real w = std::min(w_pos, w_neg);
    const real mean = static_cast<real>(n) * (n + 1.0) / 4.0;
    const real var = static_cast<real>(n) * (n + 1.0) * (2.0 * n + 1.0) / 24.0;
    const real z = (w - mean + 0.5) / std::sqrt(var);
    const real approx_p = std::min(1.0, 2.0 * 0.5 * std::erfc(-z / std::sqrt(2.0)));
    CHECK(std::fabs(exact.p_value - approx_p) <= 0.02);
  }
}

TEST_CASE("bky anchors") {
  SECTION("single small p-value is rejected") {
    std::vector<real> p{0.03};
    auto r = bky_correct(p, 0.05);
    CHECK(r.rejected[0]);
  }
  SECTION("all ones rejects nothing") {
    std::vector<real> p{1.0, 1.0, 1.0};
    auto r = bky_correct(p, 0.05);
    CHECK_FALSE(r.rejected[0]);
    CHECK_FALSE(r.rejected[1]);
    CHECK_FALSE(r.rejected[2]);
  }
  SECTION("invalid q raises") {
    std::vector<real> p{0.5};
    CHECK_THROWS_AS(bky_correct(p, 0.0), param_error);
    CHECK_THROWS_AS(bky_correct(p, 1.0), param_error);
  }
  SECTION("out-of-range p raises") {
    std::vector<real> p{1.5};
    CHECK_THROWS_AS(bky_correct(p, 0.05), param_error);
  }
}

TEST_CASE("bky matches the brute-force two-stage oracle") {
  RngStream rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t m = 1 + rng.index(12);
    std::vector<real> p(m);
    for (auto& v : p) {
      v = rng.uniform();
      if (rng.uniform() < 0.4) v *= 0.1;  // cluster some small p-values
    }
    const auto mine = bky_correct(p, 0.05);
    const auto oracle = bky_oracle(p, 0.05);
    for (std::size_t i = 0; i < m; ++i) CHECK(mine.rejected[i] == oracle[i]);
  }
}

TEST_CASE("bky rejection set is monotone in q") {
  RngStream rng(37);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 2 + rng.index(10);
    std::vector<real> p(m);
    for (auto& v : p) v = rng.uniform();
    const real q1 = 0.01 + 0.3 * rng.uniform();
    const real q2 = q1 + (0.98 - q1) * rng.uniform();
    const auto r1 = bky_correct(p, q1);
    const auto r2 = bky_correct(p, q2);
    for (std::size_t i = 0; i < m; ++i) {
      if (r1.rejected[i]) CHECK(r2.rejected[i]);
    }
  }
}

TEST_CASE("bky adjusted values") {
  RngStream rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + rng.index(8);
    std::vector<real> p(m);
    for (auto& v : p) v = rng.uniform();
    const real q = 0.02 + 0.5 * rng.uniform();
    const auto r = bky_correct(p, q);
    for (std::size_t i = 0; i < m; ++i) {
      CHECK(r.adjusted[i] >= 0.0);
      CHECK(r.adjusted[i] <= 1.0);
      // the adjusted value is the smallest q rejecting hypothesis i
      CHECK(r.rejected[i] == (r.adjusted[i] <= q));
    }
    // monotone against the p ordering
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    for (std::size_t k = 1; k < m; ++k) CHECK(r.adjusted[order[k - 1]] <= r.adjusted[order[k]] + 1e-12);
  }
}
