#pragma once

#include <iostream>
#include <map>
#include <optional>

#include "tslab/harness.hpp"
#include "tslab/metrics.hpp"

namespace tslab {

// ---------------------------------------------------------------------------
// Report stage: pure functions of the result store. Pairing discipline is
// structural: a comparison cell always joins the TL runs of one
// (architecture, source, target, reduction) with the referent runs of the
// same architecture on the identical target data, rerun by rerun. Within a
// rerun the grid entry with the best validation-selected score provides the
// TL model; its test score and convergence rate enter the cell.
// ---------------------------------------------------------------------------

struct RerunOutcome {
  std::size_t rerun = 0;
  bool complete = false;
  std::size_t omega_index = 0;  // selected by validation score
  real tl_test = 0.0;
  real tl_convergence = 0.0;
  bool tl_degenerate = false;
  real ref_test = 0.0;
  real ref_convergence = 0.0;
  bool ref_degenerate = false;
  std::vector<std::optional<real>> omega_tests;  // per-omega test scores
};

struct ComparisonCell {
  std::string arch, source, target;
  std::size_t reduction = 0;
  bool intra_domain = false;
  TaskKind task = TaskKind::regression;
  bool complete = false;
  real tl_score = 0.0;
  real referent_score = 0.0;
  bool win_score = false;
  std::optional<real> tl_convergence, referent_convergence;
  std::size_t convergence_pairs = 0;
  std::optional<bool> win_convergence;  // absent when every rerun pair was degenerate
  std::vector<RerunOutcome> reruns;
};

struct WinLossRow {
  std::string partition;  // intra-domain | cross-domain | total
  std::string metric;     // score | convergence
  std::size_t wins = 0, losses = 0, cases = 0;
  std::size_t critical = 0;
  std::string verdict;
};

struct MatrixCell {
  std::string source, target;
  std::size_t reduction = 0;
  bool missing = false;     // no complete comparison cells behind it
  std::size_t n = 0;        // paired samples pooled over (arch, rerun)
  real mean_pct = 0.0;      // 100 * mean(delta) / mean(referent)
  real p_value = 1.0;
  real p_adjusted = 1.0;
  bool significant = false;
  bool degenerate = false;  // all deltas zero
};

struct UtilizationRow {
  std::string arch;
  std::string partition;
  std::size_t wins = 0, cases = 0;
};

struct OmegaGainRow {
  std::string arch;
  real omega = 0.0;
  std::size_t n = 0;
  real mean_pct = 0.0;
};

struct DirectionalRow {
  std::string target;
  std::size_t reduction = 0;
  real median_tl = 0.0, median_ref = 0.0;
  bool tl_better = false;
  std::size_t wins = 0, losses = 0, cases = 0;
  std::string verdict;
};

struct Report {
  std::vector<ComparisonCell> cells;
  std::vector<WinLossRow> win_loss;
  std::vector<MatrixCell> score_matrix;
  std::vector<MatrixCell> convergence_matrix;
  std::vector<UtilizationRow> utilization;
  std::vector<OmegaGainRow> omega_gains;
  std::vector<DirectionalRow> directional;
  std::size_t total_cases = 0, complete_cases = 0;
};

namespace detail_report {

inline bool better(real a, real b, TaskKind task) {
  return task == TaskKind::classification ? a > b : a < b;
}

inline real oriented_delta(real tl, real ref, TaskKind task) {
  return task == TaskKind::classification ? tl - ref : ref - tl;
}

inline std::string verdict_name(SignVerdict v) {
  switch (v) {
    case SignVerdict::significant_tl: return "significant_tl";
    case SignVerdict::significant_referent: return "significant_referent";
    case SignVerdict::not_significant: return "not_significant";
  }
  return "?";
}

inline real median(std::vector<real> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

struct PooledSample {
  std::vector<real> deltas;
  std::vector<real> refs;
};

}  // namespace detail_report

inline Report report_from_store(const ExperimentConfig& cfg) {
  StoreLayout store{cfg.output_dir};
  Report report;

  std::map<std::string, TimeSeriesDataset> data;
  for (const auto& ds : cfg.datasets) data.emplace(ds.name, materialize_dataset(ds, store.datasets_dir()));

  const auto pairs = scheduled_pairs(cfg);

  // ---- comparison cells -------------------------------------------------
  for (const auto& arch : cfg.architectures) {
    for (const auto& [source, target] : pairs) {
      for (std::size_t size : cfg.reduction_sizes) {
        ComparisonCell cell;
        cell.arch = arch.label;
        cell.source = source;
        cell.target = target;
        cell.reduction = size;
        cell.intra_domain = cfg.dataset(source).domain == cfg.dataset(target).domain;
        cell.task = data.at(target).task_kind;

        std::vector<real> tl_tests, ref_tests;
        std::vector<real> conv_tl, conv_ref;
        bool all_complete = true;
        for (std::size_t rerun = 0; rerun < cfg.reruns; ++rerun) {
          RerunOutcome outcome;
          outcome.rerun = rerun;
          auto baseline = detail_harness::read_history(store.baseline_log(arch.label, target, size, rerun));
          bool rerun_ok = baseline.has_value();
          std::optional<std::size_t> best_index;
          real best_val = 0.0;
          outcome.omega_tests.resize(cfg.omega_grid.size());
          std::vector<RunHistory> grid(cfg.omega_grid.size());
          for (std::size_t w = 0; w < cfg.omega_grid.size(); ++w) {
            auto h = detail_harness::read_history(store.finetune_log(arch.label, source, target, size, rerun, w));
            if (!h) {
              rerun_ok = false;
              continue;
            }
            grid[w] = *h;
            outcome.omega_tests[w] = h->final_test_score;
            const real val_score = h->epochs[h->best_epoch].val_metric;
            if (!best_index || detail_report::better(val_score, best_val, cell.task)) {
              best_index = w;
              best_val = val_score;
            }
          }
          if (rerun_ok && best_index) {
            outcome.complete = true;
            outcome.omega_index = *best_index;
            const RunHistory& selected = grid[*best_index];
            outcome.tl_test = selected.final_test_score;
            auto tl_rate = convergence_rate({selected.metric_curve(), cell.task});
            outcome.tl_convergence = tl_rate.value;
            outcome.tl_degenerate = tl_rate.degenerate;
            outcome.ref_test = baseline->final_test_score;
            auto ref_rate = convergence_rate({baseline->metric_curve(), cell.task});
            outcome.ref_convergence = ref_rate.value;
            outcome.ref_degenerate = ref_rate.degenerate;

            tl_tests.push_back(outcome.tl_test);
            ref_tests.push_back(outcome.ref_test);
            if (!outcome.tl_degenerate && !outcome.ref_degenerate) {
              conv_tl.push_back(outcome.tl_convergence);
              conv_ref.push_back(outcome.ref_convergence);
            }
          } else {
            all_complete = false;
          }
          cell.reruns.push_back(std::move(outcome));
        }

        cell.complete = all_complete && !tl_tests.empty();
        if (cell.complete) {
          auto mean = [](const std::vector<real>& v) {
            real acc = 0.0;
            for (real x : v) acc += x;
            return acc / static_cast<real>(v.size());
          };
          cell.tl_score = mean(tl_tests);
          cell.referent_score = mean(ref_tests);
          cell.win_score = detail_report::better(cell.tl_score, cell.referent_score, cell.task);
          cell.convergence_pairs = conv_tl.size();
          if (!conv_tl.empty()) {
            cell.tl_convergence = mean(conv_tl);
            cell.referent_convergence = mean(conv_ref);
            cell.win_convergence = *cell.tl_convergence > *cell.referent_convergence;
          }
        }
        report.cells.push_back(std::move(cell));
      }
    }
  }

  report.total_cases = report.cells.size();
  for (const auto& cell : report.cells)
    if (cell.complete) ++report.complete_cases;

  // ---- win/loss summary with sign tests ----------------------------------
  auto tabulate = [&](const std::string& partition, auto include) {
    for (const std::string metric : {"score", "convergence"}) {
      WinLossRow row;
      row.partition = partition;
      row.metric = metric;
      for (const auto& cell : report.cells) {
        if (!cell.complete || !include(cell)) continue;
        if (metric == std::string("score")) {
          ++row.cases;
          cell.win_score ? ++row.wins : ++row.losses;
        } else if (cell.win_convergence.has_value()) {
          ++row.cases;
          *cell.win_convergence ? ++row.wins : ++row.losses;
        }
      }
      if (row.cases > 0) {
        row.critical = sign_test_critical(row.cases);
        row.verdict = detail_report::verdict_name(sign_test(row.wins, row.losses));
      } else {
        row.verdict = "no_cases";
      }
      report.win_loss.push_back(std::move(row));
    }
  };
  tabulate("intra-domain", [](const ComparisonCell& c) { return c.intra_domain; });
  tabulate("cross-domain", [](const ComparisonCell& c) { return !c.intra_domain; });
  tabulate("total", [](const ComparisonCell&) { return true; });

  // ---- per source-target-reduction matrices -------------------------------
  auto build_matrix = [&](bool convergence) {
    std::vector<MatrixCell> cells;
    for (const auto& [source, target] : pairs) {
      for (std::size_t size : cfg.reduction_sizes) {
        MatrixCell mc;
        mc.source = source;
        mc.target = target;
        mc.reduction = size;
        detail_report::PooledSample pooled;
        for (const auto& cell : report.cells) {
          if (cell.source != source || cell.target != target || cell.reduction != size || !cell.complete) continue;
          for (const auto& r : cell.reruns) {
            if (!r.complete) continue;
            if (convergence) {
              if (r.tl_degenerate || r.ref_degenerate) continue;
              pooled.deltas.push_back(r.tl_convergence - r.ref_convergence);
              pooled.refs.push_back(r.ref_convergence);
            } else {
              pooled.deltas.push_back(detail_report::oriented_delta(r.tl_test, r.ref_test, cell.task));
              pooled.refs.push_back(r.ref_test);
            }
          }
        }
        mc.n = pooled.deltas.size();
        if (mc.n == 0) {
          mc.missing = true;
        } else {
          real mean_delta = 0.0, mean_ref = 0.0;
          for (std::size_t i = 0; i < pooled.deltas.size(); ++i) {
            mean_delta += pooled.deltas[i];
            mean_ref += pooled.refs[i];
          }
          mean_delta /= static_cast<real>(mc.n);
          mean_ref /= static_cast<real>(mc.n);
          mc.mean_pct = mean_ref != 0.0 ? 100.0 * mean_delta / std::fabs(mean_ref) : 0.0;
          try {
            mc.p_value = wilcoxon({pooled.deltas}).p_value;
          } catch (const degenerate_error&) {
            mc.p_value = 1.0;
            mc.degenerate = true;
          }
        }
        cells.push_back(std::move(mc));
      }
    }
    // one BKY family per matrix kind at q = 0.05
    std::vector<real> pvals;
    std::vector<std::size_t> index;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (!cells[i].missing) {
        pvals.push_back(cells[i].p_value);
        index.push_back(i);
      }
    }
    if (!pvals.empty()) {
      auto corrected = bky_correct(pvals, 0.05);
      for (std::size_t k = 0; k < index.size(); ++k) {
        cells[index[k]].p_adjusted = corrected.adjusted[k];
        cells[index[k]].significant = corrected.rejected[k];
      }
    }
    return cells;
  };
  report.score_matrix = build_matrix(false);
  report.convergence_matrix = build_matrix(true);

  // ---- per-architecture utilization (wins by score) -----------------------
  for (const auto& arch : cfg.architectures) {
    for (const std::string partition : {"intra-domain", "cross-domain", "total"}) {
      UtilizationRow row;
      row.arch = arch.label;
      row.partition = partition;
      for (const auto& cell : report.cells) {
        if (cell.arch != arch.label || !cell.complete) continue;
        if (partition == std::string("intra-domain") && !cell.intra_domain) continue;
        if (partition == std::string("cross-domain") && cell.intra_domain) continue;
        ++row.cases;
        if (cell.win_score) ++row.wins;
      }
      report.utilization.push_back(std::move(row));
    }
  }

  // ---- per-omega mean gain series -----------------------------------------
  for (const auto& arch : cfg.architectures) {
    for (std::size_t w = 0; w < cfg.omega_grid.size(); ++w) {
      OmegaGainRow row;
      row.arch = arch.label;
      row.omega = cfg.omega_grid[w];
      real mean_delta = 0.0, mean_ref = 0.0;
      for (const auto& cell : report.cells) {
        if (cell.arch != arch.label) continue;
        for (const auto& r : cell.reruns) {
          if (!r.complete || !r.omega_tests[w].has_value()) continue;
          mean_delta += detail_report::oriented_delta(*r.omega_tests[w], r.ref_test, cell.task);
          mean_ref += r.ref_test;
          ++row.n;
        }
      }
      if (row.n > 0 && mean_ref != 0.0) {
        row.mean_pct = 100.0 * (mean_delta / static_cast<real>(row.n)) /
                       std::fabs(mean_ref / static_cast<real>(row.n));
      }
      report.omega_gains.push_back(std::move(row));
    }
  }

  // ---- directional sanity at the smallest reduction ------------------------
  const std::size_t smallest = *std::min_element(cfg.reduction_sizes.begin(), cfg.reduction_sizes.end());
  std::set<std::string> target_names;
  for (const auto& [s, t] : pairs) target_names.insert(t);
  for (const auto& target : target_names) {
    DirectionalRow row;
    row.target = target;
    row.reduction = smallest;
    std::vector<real> tls, refs;
    const TaskKind task = data.at(target).task_kind;
    for (const auto& cell : report.cells) {
      if (cell.target != target || cell.reduction != smallest || !cell.complete) continue;
      for (const auto& r : cell.reruns) {
        if (!r.complete) continue;
        tls.push_back(r.tl_test);
        refs.push_back(r.ref_test);
        ++row.cases;
        detail_report::better(r.tl_test, r.ref_test, task) ? ++row.wins : ++row.losses;
      }
    }
    if (row.cases == 0) continue;
    row.median_tl = detail_report::median(tls);
    row.median_ref = detail_report::median(refs);
    row.tl_better = detail_report::better(row.median_tl, row.median_ref, task) || row.median_tl == row.median_ref;
    row.verdict = detail_report::verdict_name(sign_test(row.wins, row.losses));
    report.directional.push_back(std::move(row));
  }

  return report;
}

// ---------------------------------------------------------------------------
// Writers: a machine-readable summary plus delimiter-separated tables.
// ---------------------------------------------------------------------------

namespace detail_report {

inline void write_matrix_tsv(const fs::path& path, const std::vector<MatrixCell>& cells) {
  std::ostringstream out;
  out << "source\ttarget\treduction\tn\tmean_pct\tp_value\tp_adjusted\tsignificant\tdegenerate\tmissing\n";
  for (const auto& c : cells) {
    out << c.source << "\t" << c.target << "\t" << c.reduction << "\t" << c.n << "\t";
    if (c.missing) {
      out << "NA\tNA\tNA\tNA\tNA\t1\n";
      continue;
    }
    out << c.mean_pct << "\t" << c.p_value << "\t" << c.p_adjusted << "\t" << (c.significant ? 1 : 0) << "\t"
        << (c.degenerate ? 1 : 0) << "\t0\n";
  }
  detail_harness::write_text_file(path, out.str());
}

}  // namespace detail_report

inline void write_report(const Report& report, const ExperimentConfig& cfg) {
  StoreLayout store{cfg.output_dir};
  fs::create_directories(store.report_dir());

  json summary;
  summary["schema"] = 1;
  summary["cases"] = {{"total", report.total_cases}, {"complete", report.complete_cases}};

  json win_loss = json::array();
  {
    std::ostringstream tsv;
    tsv << "partition\tmetric\twins\tlosses\tcases\tcritical\tverdict\n";
    for (const auto& row : report.win_loss) {
      tsv << row.partition << "\t" << row.metric << "\t" << row.wins << "\t" << row.losses << "\t" << row.cases
          << "\t" << row.critical << "\t" << row.verdict << "\n";
      win_loss.push_back({{"partition", row.partition},
                          {"metric", row.metric},
                          {"wins", row.wins},
                          {"losses", row.losses},
                          {"cases", row.cases},
                          {"critical", row.critical},
                          {"verdict", row.verdict}});
    }
    detail_harness::write_text_file(store.report_dir() / "win_loss.tsv", tsv.str());
  }
  summary["win_loss"] = win_loss;

  auto matrix_json = [](const std::vector<MatrixCell>& cells) {
    json arr = json::array();
    for (const auto& c : cells) {
      arr.push_back({{"source", c.source},
                     {"target", c.target},
                     {"reduction", c.reduction},
                     {"missing", c.missing},
                     {"n", c.n},
                     {"mean_pct", c.mean_pct},
                     {"p_value", c.p_value},
                     {"p_adjusted", c.p_adjusted},
                     {"significant", c.significant},
                     {"degenerate", c.degenerate}});
    }
    return arr;
  };
  summary["score_matrix"] = matrix_json(report.score_matrix);
  summary["convergence_matrix"] = matrix_json(report.convergence_matrix);
  detail_report::write_matrix_tsv(store.report_dir() / "score_matrix.tsv", report.score_matrix);
  detail_report::write_matrix_tsv(store.report_dir() / "convergence_matrix.tsv", report.convergence_matrix);

  {
    std::ostringstream tsv;
    tsv << "arch\tpartition\twins\tcases\n";
    json arr = json::array();
    for (const auto& row : report.utilization) {
      tsv << row.arch << "\t" << row.partition << "\t" << row.wins << "\t" << row.cases << "\n";
      arr.push_back({{"arch", row.arch}, {"partition", row.partition}, {"wins", row.wins}, {"cases", row.cases}});
    }
    detail_harness::write_text_file(store.report_dir() / "utilization.tsv", tsv.str());
    summary["utilization"] = arr;
  }

  {
    std::ostringstream tsv;
    tsv << "arch\tomega\tn\tmean_pct\n";
    json arr = json::array();
    for (const auto& row : report.omega_gains) {
      tsv << row.arch << "\t" << row.omega << "\t" << row.n << "\t" << row.mean_pct << "\n";
      arr.push_back({{"arch", row.arch}, {"omega", row.omega}, {"n", row.n}, {"mean_pct", row.mean_pct}});
    }
    detail_harness::write_text_file(store.report_dir() / "omega_gains.tsv", tsv.str());
    summary["omega_gains"] = arr;
  }

  {
    std::ostringstream tsv;
    tsv << "target\treduction\tmedian_tl\tmedian_ref\ttl_better\twins\tlosses\tcases\tverdict\n";
    json arr = json::array();
    for (const auto& row : report.directional) {
      tsv << row.target << "\t" << row.reduction << "\t" << row.median_tl << "\t" << row.median_ref << "\t"
          << (row.tl_better ? 1 : 0) << "\t" << row.wins << "\t" << row.losses << "\t" << row.cases << "\t"
          << row.verdict << "\n";
      arr.push_back({{"target", row.target},
                     {"reduction", row.reduction},
                     {"median_tl", row.median_tl},
                     {"median_ref", row.median_ref},
                     {"tl_better", row.tl_better},
                     {"wins", row.wins},
                     {"losses", row.losses},
                     {"cases", row.cases},
                     {"verdict", row.verdict}});
    }
    detail_harness::write_text_file(store.report_dir() / "directional.tsv", tsv.str());
    summary["directional"] = arr;
  }

  json cells = json::array();
  for (const auto& cell : report.cells) {
    json reruns = json::array();
    for (const auto& r : cell.reruns) {
      json omega_tests = json::array();
      for (const auto& t : r.omega_tests) {
        if (t.has_value()) omega_tests.push_back(*t);
        else omega_tests.push_back(nullptr);
      }
      reruns.push_back({{"rerun", r.rerun},
                        {"complete", r.complete},
                        {"omega_index", r.omega_index},
                        {"tl_test", r.tl_test},
                        {"tl_convergence", r.tl_convergence},
                        {"tl_degenerate", r.tl_degenerate},
                        {"ref_test", r.ref_test},
                        {"ref_convergence", r.ref_convergence},
                        {"ref_degenerate", r.ref_degenerate},
                        {"omega_tests", omega_tests}});
    }
    json c = {{"arch", cell.arch},
              {"source", cell.source},
              {"target", cell.target},
              {"reduction", cell.reduction},
              {"intra_domain", cell.intra_domain},
              {"complete", cell.complete},
              {"tl_score", cell.tl_score},
              {"referent_score", cell.referent_score},
              {"win_score", cell.win_score},
              {"convergence_pairs", cell.convergence_pairs},
              {"reruns", reruns}};
    if (cell.tl_convergence) c["tl_convergence"] = *cell.tl_convergence;
    if (cell.referent_convergence) c["referent_convergence"] = *cell.referent_convergence;
    if (cell.win_convergence) c["win_convergence"] = *cell.win_convergence;
    cells.push_back(std::move(c));
  }
  summary["cells"] = cells;

  detail_harness::write_text_file(store.report_dir() / "summary.json", summary.dump(2) + "\n");
}

inline void print_report(const Report& report, std::ostream& out) {
  out << "cases: " << report.complete_cases << "/" << report.total_cases << " complete\n";
  for (const auto& row : report.win_loss) {
    out << row.partition << " by " << row.metric << ": " << row.wins << " wins / " << row.losses
        << " losses of " << row.cases << " (critical " << row.critical << ") -> " << row.verdict << "\n";
  }
  for (const auto& row : report.directional) {
    out << "directional @" << row.target << " r" << row.reduction << ": median TL " << row.median_tl
        << " vs scratch " << row.median_ref << " -> " << (row.tl_better ? "TL better or equal" : "TL worse")
        << ", sign test " << row.wins << "W/" << row.losses << "L -> " << row.verdict << "\n";
  }
}

}  // namespace tslab
