#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tslab/common.hpp"

namespace tslab {

// ---------------------------------------------------------------------------
// Two-tailed sign test on win/loss counts. A side is significant at 0.05 when
// its wins reach ceil((N + 1.96*sqrt(N)) / 2) out of N = wins + losses.
// ---------------------------------------------------------------------------

inline std::size_t sign_test_critical(std::size_t n) {
  if (n < 1) throw param_error("sign_test_critical: n must be >= 1");
  const real bound = (static_cast<real>(n) + 1.96 * std::sqrt(static_cast<real>(n))) / 2.0;
  return static_cast<std::size_t>(std::ceil(bound));
}

enum class SignVerdict { significant_tl, significant_referent, not_significant };

inline SignVerdict sign_test(std::size_t wins, std::size_t losses) {
  if (wins + losses < 1) throw param_error("sign_test: need at least one decided case");
  const std::size_t critical = sign_test_critical(wins + losses);
  if (wins >= critical) return SignVerdict::significant_tl;
  if (losses >= critical) return SignVerdict::significant_referent;
  return SignVerdict::not_significant;
}

// ---------------------------------------------------------------------------
// Wilcoxon signed-ranks test. Zero deltas are discarded, absolute deltas are
// ranked with average ranks on ties, and W = min(positive-rank sum,
// negative-rank sum). Exact two-sided p by enumerating all 2^n sign
// assignments for n <= 15; above that a normal approximation with
// tie-corrected variance and a 0.5 continuity correction.
// ---------------------------------------------------------------------------

struct PairedSample {
  std::vector<real> deltas;  // oriented so positive = TL better
};

struct WilcoxonResult {
  real statistic = 0.0;  // min of the two rank sums
  real p_value = 1.0;
  std::size_t n = 0;  // non-zero deltas used
};

constexpr std::size_t kWilcoxonExactLimit = 15;

namespace detail_stats {

inline real normal_cdf(real z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Average ranks of |deltas|, ascending, ties averaged.
inline std::vector<real> average_ranks(const std::vector<real>& abs_values) {
  const std::size_t n = abs_values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return abs_values[a] < abs_values[b]; });
  std::vector<real> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_values[order[j + 1]] == abs_values[order[i]]) ++j;
    const real avg = (static_cast<real>(i + 1) + static_cast<real>(j + 1)) / 2.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace detail_stats

inline WilcoxonResult wilcoxon(const PairedSample& sample) {
  check_finite(sample.deltas, "wilcoxon");
  std::vector<real> nonzero;
  for (real d : sample.deltas)
    if (d != 0.0) nonzero.push_back(d);
  const std::size_t n = nonzero.size();
  if (n == 0) throw degenerate_error("wilcoxon: all deltas are zero");

  std::vector<real> abs_values(n);
  for (std::size_t i = 0; i < n; ++i) abs_values[i] = std::fabs(nonzero[i]);
  const std::vector<real> ranks = detail_stats::average_ranks(abs_values);

  real w_pos = 0.0, w_neg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (nonzero[i] > 0.0) w_pos += ranks[i];
    else w_neg += ranks[i];
  }
  const real w = std::min(w_pos, w_neg);

  WilcoxonResult result;
  result.statistic = w;
  result.n = n;

  if (n <= kWilcoxonExactLimit) {
    // Enumerate sign assignments; count T = positive-rank sum against the
    // observed w_pos. Ranks are half-integral at worst, so compare doubled
    // integer sums exactly.
    std::vector<long long> r2(n);
    for (std::size_t i = 0; i < n; ++i) r2[i] = static_cast<long long>(std::llround(ranks[i] * 2.0));
    const long long t_obs = static_cast<long long>(std::llround(w_pos * 2.0));
    long long le = 0, ge = 0;
    const std::uint64_t total = 1ULL << n;
    for (std::uint64_t mask = 0; mask < total; ++mask) {
      long long t = 0;
      for (std::size_t i = 0; i < n; ++i)
        if (mask & (1ULL << i)) t += r2[i];
      if (t <= t_obs) ++le;
      if (t >= t_obs) ++ge;
    }
    const real p = 2.0 * static_cast<real>(std::min(le, ge)) / static_cast<real>(total);
    result.p_value = std::min(1.0, p);
    return result;
  }

  const real nn = static_cast<real>(n);
  const real mean = nn * (nn + 1.0) / 4.0;
  real variance = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  // tie correction: subtract sum(t^3 - t)/48 per tie group
  std::vector<real> sorted_abs = abs_values;
  std::sort(sorted_abs.begin(), sorted_abs.end());
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && sorted_abs[j + 1] == sorted_abs[i]) ++j;
    const real t = static_cast<real>(j - i + 1);
    variance -= (t * t * t - t) / 48.0;
    i = j + 1;
  }
  if (variance <= 0.0) throw degenerate_error("wilcoxon: zero variance after tie correction");
  const real z = (w - mean + 0.5) / std::sqrt(variance);
  result.p_value = std::min(1.0, 2.0 * detail_stats::normal_cdf(z));
  return result;
}

// ---------------------------------------------------------------------------
// Two-stage Benjamini-Krieger-Yekutieli FDR control (the 2006 "two-stage
// linear step-up" definition): stage one runs Benjamini-Hochberg at
// q' = q/(1+q); with r1 rejections the null count is estimated as
// m0 = m - r1 and stage two reruns the step-up at q'* m/m0. r1 == 0 rejects
// nothing, r1 == m rejects everything. Adjusted values are the smallest q at
// which each hypothesis would be rejected.
// ---------------------------------------------------------------------------

struct BkyResult {
  std::vector<bool> rejected;
  std::vector<real> adjusted;
};

namespace detail_stats {

// Linear step-up (Benjamini-Hochberg) rejection count at level `level` over
// ascending p-values. Returns r = largest k with p_(k) <= k*level/m.
inline std::size_t bh_reject_count(const std::vector<real>& sorted_p, real level) {
  const std::size_t m = sorted_p.size();
  std::size_t r = 0;
  for (std::size_t k = 1; k <= m; ++k) {
    if (sorted_p[k - 1] <= static_cast<real>(k) * level / static_cast<real>(m)) r = k;
  }
  return r;
}

// Number of hypotheses rejected by the full two-stage procedure at level q.
inline std::size_t bky_reject_count(const std::vector<real>& sorted_p, real q) {
  const std::size_t m = sorted_p.size();
  const real q1 = q / (1.0 + q);
  const std::size_t r1 = bh_reject_count(sorted_p, q1);
  if (r1 == 0) return 0;
  if (r1 == m) return m;
  const real q2 = q1 * static_cast<real>(m) / static_cast<real>(m - r1);
  return bh_reject_count(sorted_p, q2);
}

}  // namespace detail_stats

inline BkyResult bky_correct(std::span<const real> pvalues, real q) {
  if (q <= 0.0 || q >= 1.0) throw param_error("bky_correct: q must be in (0, 1)");
  const std::size_t m = pvalues.size();
  for (real p : pvalues) {
    if (!(p >= 0.0 && p <= 1.0)) throw param_error("bky_correct: p-values must lie in [0, 1]");
  }
  std::vector<real> sorted_p(pvalues.begin(), pvalues.end());
  std::sort(sorted_p.begin(), sorted_p.end());

  const std::size_t r = detail_stats::bky_reject_count(sorted_p, q);
  const real threshold = r > 0 ? sorted_p[r - 1] : -1.0;

  BkyResult result;
  result.rejected.resize(m);
  result.adjusted.resize(m);
  for (std::size_t i = 0; i < m; ++i) result.rejected[i] = pvalues[i] <= threshold;

  // Smallest q rejecting hypothesis i, found by bisection. Both stages are
  // linear step-ups, so the rejection set grows with q and is always a
  // prefix of the sorted p-values; bisection per distinct p suffices.
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t need =
        static_cast<std::size_t>(std::upper_bound(sorted_p.begin(), sorted_p.end(), pvalues[i]) - sorted_p.begin());
    real lo = 0.0, hi = 1.0;
    if (detail_stats::bky_reject_count(sorted_p, 1.0 - 1e-12) < need) {
      result.adjusted[i] = 1.0;
      continue;
    }
    for (int iter = 0; iter < 64; ++iter) {
      const real mid = 0.5 * (lo + hi);
      if (detail_stats::bky_reject_count(sorted_p, mid) >= need) hi = mid;
      else lo = mid;
    }
    result.adjusted[i] = std::min(1.0, hi);
  }
  return result;
}

}  // namespace tslab
