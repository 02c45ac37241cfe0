#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "tslab/stats.hpp"
#include "tslab/trainer.hpp"
#include "tslab/transfer.hpp"

namespace tslab {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration.
// ---------------------------------------------------------------------------

enum class DatasetRole { source, target, both };

struct SynthDatasetSpec {
  SynthKind kind = SynthKind::shared_filter_pair;
  std::string side = "source";  // which half of the generated pair this is
  std::uint64_t pair_seed = 0;
  SynthParams params;
};

struct DatasetConfig {
  std::string name;
  std::string domain;
  DatasetRole role = DatasetRole::both;
  bool stream_max = false;
  fs::path path;  // canonical container; empty when synthetic
  std::optional<SynthDatasetSpec> synth;
};

struct ArchConfig {
  std::string label;
  Family family = Family::convnetquake_ingv;
  CnqVariant variant = CnqVariant::base;
  real scale = 1.0;
  TcnParams tcn;
};

struct ExperimentConfig {
  std::vector<DatasetConfig> datasets;
  std::vector<ArchConfig> architectures;
  std::vector<real> omega_grid = default_omega_grid();
  std::size_t reruns = 7;
  std::size_t pretrain_repeats = 10;
  std::vector<std::size_t> reduction_sizes = {1500, 9000};
  TrainConfig train;
  std::uint64_t seed_root = 0;
  fs::path output_dir = "out";
  std::size_t workers = 0;  // 0 = logical core count; TSLAB_WORKERS overrides

  const DatasetConfig& dataset(const std::string& name) const {
    for (const auto& d : datasets)
      if (d.name == name) return d;
    throw param_error("config: unknown dataset " + name);
  }
  const ArchConfig& architecture(const std::string& label) const {
    for (const auto& a : architectures)
      if (a.label == label) return a;
    throw param_error("config: unknown architecture " + label);
  }
  std::vector<const DatasetConfig*> sources() const {
    std::vector<const DatasetConfig*> out;
    for (const auto& d : datasets)
      if (d.role != DatasetRole::target) out.push_back(&d);
    return out;
  }
  std::vector<const DatasetConfig*> targets() const {
    std::vector<const DatasetConfig*> out;
    for (const auto& d : datasets)
      if (d.role != DatasetRole::source) out.push_back(&d);
    return out;
  }
};

namespace detail_harness {

inline bool path_safe(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
                    c == '-' || c == '.';
    if (!ok) return false;
  }
  return true;
}

inline TaskKind task_from_string(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification") return TaskKind::classification;
  throw param_error("config: unknown task kind " + s);
}

inline SynthSideParams parse_synth_side(const json& j) {
  SynthSideParams side;
  side.size = j.value("size", side.size);
  side.task = task_from_string(j.value("task", "regression"));
  side.num_classes = j.value("num_classes", side.num_classes);
  side.seed = j.value("seed", side.seed);
  return side;
}

}  // namespace detail_harness

inline ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw param_error("config: cannot open " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw param_error("config: invalid JSON in " + path.string());

  ExperimentConfig cfg;
  cfg.output_dir = j.value("output_dir", std::string("out"));
  cfg.seed_root = j.value("seed_root", std::uint64_t{0});
  cfg.workers = j.value("workers", std::size_t{0});
  cfg.reruns = j.value("reruns", cfg.reruns);
  cfg.pretrain_repeats = j.value("pretrain_repeats", cfg.pretrain_repeats);
  if (j.contains("omega_grid")) cfg.omega_grid = j["omega_grid"].get<std::vector<real>>();
  if (j.contains("reduction_sizes")) cfg.reduction_sizes = j["reduction_sizes"].get<std::vector<std::size_t>>();

  if (j.contains("train")) {
    const json& t = j["train"];
    cfg.train.base_lr = t.value("base_lr", cfg.train.base_lr);
    cfg.train.plateau_patience = t.value("plateau_patience", cfg.train.plateau_patience);
    cfg.train.plateau_factor = t.value("plateau_factor", cfg.train.plateau_factor);
    cfg.train.lr_floor = t.value("lr_floor", cfg.train.lr_floor);
    cfg.train.early_stop_patience = t.value("early_stop_patience", cfg.train.early_stop_patience);
    cfg.train.max_epochs = t.value("max_epochs", cfg.train.max_epochs);
    cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
    cfg.train.min_delta = t.value("min_delta", cfg.train.min_delta);
  }

  for (const json& a : j.value("architectures", json::array())) {
    ArchConfig arch;
    arch.family = family_from_name(a.at("family").get<std::string>());
    arch.label = a.value("label", family_name(arch.family));
    arch.variant = cnq_variant_from_name(a.value("variant", "base"));
    arch.scale = a.value("scale", 1.0);
    if (a.contains("tcn")) {
      const json& t = a["tcn"];
      arch.tcn.kernel = t.value("kernel", arch.tcn.kernel);
      arch.tcn.filters = t.value("filters", arch.tcn.filters);
      arch.tcn.levels = t.value("levels", arch.tcn.levels);
      arch.tcn.dropout = t.value("dropout", arch.tcn.dropout);
    }
    cfg.architectures.push_back(std::move(arch));
  }

  for (const json& d : j.value("datasets", json::array())) {
    DatasetConfig ds;
    ds.name = d.at("name").get<std::string>();
    ds.domain = d.value("domain", std::string("unlabeled"));
    const std::string role = d.value("role", "both");
    if (role == "source") ds.role = DatasetRole::source;
    else if (role == "target") ds.role = DatasetRole::target;
    else if (role == "both") ds.role = DatasetRole::both;
    else throw param_error("config: unknown dataset role " + role);
    ds.stream_max = d.value("stream_max", false);
    if (d.contains("path")) ds.path = d["path"].get<std::string>();
    if (d.contains("synthetic")) {
      const json& s = d["synthetic"];
      SynthDatasetSpec synth;
      const std::string kind = s.value("kind", "shared_filter_pair");
      if (kind == "shared_filter_pair") synth.kind = SynthKind::shared_filter_pair;
      else if (kind == "noise") synth.kind = SynthKind::noise;
      else throw param_error("config: unknown synthetic kind " + kind);
      synth.side = s.value("side", "source");
      if (synth.side != "source" && synth.side != "target") {
        throw param_error("config: synthetic side must be source or target");
      }
      synth.pair_seed = s.value("pair_seed", std::uint64_t{0});
      synth.params.channels = s.value("channels", synth.params.channels);
      synth.params.length = s.value("length", synth.params.length);
      synth.params.filter_bank = s.value("filter_bank", synth.params.filter_bank);
      synth.params.filter_width = s.value("filter_width", synth.params.filter_width);
      synth.params.noise_level = s.value("noise_level", synth.params.noise_level);
      if (s.contains("source")) synth.params.source = detail_harness::parse_synth_side(s["source"]);
      if (s.contains("target")) synth.params.target = detail_harness::parse_synth_side(s["target"]);
      ds.synth = std::move(synth);
    }
    cfg.datasets.push_back(std::move(ds));
  }
  return cfg;
}

inline void validate_config(const ExperimentConfig& cfg) {
  if (cfg.architectures.empty()) throw param_error("config: no architectures");
  if (cfg.datasets.empty()) throw param_error("config: no datasets");
  if (cfg.reruns < 1 || cfg.pretrain_repeats < 1) throw param_error("config: reruns and pretrain_repeats >= 1");
  if (cfg.omega_grid.empty()) throw param_error("config: empty omega grid");
  for (real w : cfg.omega_grid)
    if (w <= 0.0) throw param_error("config: omega values must be > 0");
  if (cfg.reduction_sizes.empty()) throw param_error("config: no reduction sizes");
  cfg.train.validate();

  std::set<std::string> names;
  for (const auto& d : cfg.datasets) {
    if (!detail_harness::path_safe(d.name)) throw param_error("config: dataset name not path-safe: " + d.name);
    if (!names.insert(d.name).second) throw param_error("config: duplicate dataset name " + d.name);
    if (d.path.empty() == !d.synth.has_value()) {
      throw param_error("config: dataset " + d.name + " needs exactly one of path or synthetic");
    }
    if (!d.path.empty() && !fs::exists(d.path)) {
      throw param_error("config: dataset file missing: " + d.path.string());
    }
  }
  std::set<std::string> labels;
  for (const auto& a : cfg.architectures) {
    if (!detail_harness::path_safe(a.label)) throw param_error("config: architecture label not path-safe: " + a.label);
    if (!labels.insert(a.label).second) throw param_error("config: duplicate architecture label " + a.label);
    if (a.variant != CnqVariant::base && a.family != Family::convnetquake_ingv) {
      throw param_error("config: variant set on non-convnetquake architecture " + a.label);
    }
    if (a.scale <= 0.0) throw param_error("config: scale must be > 0 for " + a.label);
  }

  // source != target pairs only; at least one pair must be schedulable
  std::size_t pairs = 0;
  for (const auto* s : cfg.sources())
    for (const auto* t : cfg.targets())
      if (s->name != t->name) ++pairs;
  if (pairs == 0) throw param_error("config: no source/target pairs to schedule");
}

// ---------------------------------------------------------------------------
// Dataset materialization. Synthetic datasets are generated deterministically
// from their spec and persisted into the store for inspection; canonical
// files load as-is.
// ---------------------------------------------------------------------------

inline TimeSeriesDataset materialize_dataset(const DatasetConfig& ds, const fs::path& store_dir) {
  if (!ds.path.empty()) {
    TimeSeriesDataset data = load_canonical(ds.path);
    data.name = ds.name;
    return data;
  }
  const auto& synth = *ds.synth;
  auto [source, target] = synth_task(synth.kind, synth.params, synth.pair_seed);
  TimeSeriesDataset data = synth.side == "source" ? std::move(source) : std::move(target);
  data.name = ds.name;
  fs::create_directories(store_dir);
  const fs::path file = store_dir / (ds.name + ".tsds");
  if (!fs::exists(file)) save_canonical(data, file);
  return data;
}

// ---------------------------------------------------------------------------
// Unit naming, seeds and store paths.
// ---------------------------------------------------------------------------

struct StoreLayout {
  fs::path root;
  fs::path datasets_dir() const { return root / "datasets"; }
  fs::path bundles_dir() const { return root / "bundles"; }
  fs::path logs_dir() const { return root / "logs"; }
  fs::path report_dir() const { return root / "report"; }
  fs::path manifest() const { return root / "manifest.jsonl"; }

  fs::path bundle_file(const std::string& arch, const std::string& source) const {
    return bundles_dir() / (arch + "__" + source + ".tswb");
  }
  fs::path pretrain_log(const std::string& arch, const std::string& source, std::size_t rep) const {
    return logs_dir() / "pretrain" / (arch + "__" + source) / ("rep_" + std::to_string(rep) + ".jsonl");
  }
  fs::path baseline_log(const std::string& arch, const std::string& target, std::size_t size,
                        std::size_t rerun) const {
    return logs_dir() / "baselines" / (arch + "__" + target + "__r" + std::to_string(size)) /
           ("rerun_" + std::to_string(rerun) + ".jsonl");
  }
  fs::path finetune_log(const std::string& arch, const std::string& source, const std::string& target,
                        std::size_t size, std::size_t rerun, std::size_t omega_index) const {
    return logs_dir() / "runs" / (arch + "__" + source + "__" + target + "__r" + std::to_string(size)) /
           ("rerun_" + std::to_string(rerun)) / ("omega_" + std::to_string(omega_index) + ".jsonl");
  }
};

namespace detail_harness {

inline std::uint64_t split_seed(const ExperimentConfig& cfg, const std::string& dataset) {
  return derive_seed(cfg.seed_root, "split|" + dataset);
}
inline std::uint64_t reduce_seed(const ExperimentConfig& cfg, const std::string& target, std::size_t size,
                                 std::size_t rerun) {
  return derive_seed(cfg.seed_root,
                     "reduce|" + target + "|" + std::to_string(size) + "|" + std::to_string(rerun));
}
inline std::uint64_t pretrain_seed(const ExperimentConfig& cfg, const std::string& arch,
                                   const std::string& source, std::size_t rep) {
  return derive_seed(cfg.seed_root, "pretrain|" + arch + "|" + source + "|" + std::to_string(rep));
}
inline std::uint64_t baseline_seed(const ExperimentConfig& cfg, const std::string& arch,
                                   const std::string& target, std::size_t size, std::size_t rerun) {
  return derive_seed(cfg.seed_root, "baseline|" + arch + "|" + target + "|" + std::to_string(size) + "|" +
                                        std::to_string(rerun));
}
inline std::uint64_t finetune_seed(const ExperimentConfig& cfg, const std::string& arch,
                                   const std::string& source, const std::string& target, std::size_t size,
                                   std::size_t rerun, std::size_t omega_index) {
  return derive_seed(cfg.seed_root, "finetune|" + arch + "|" + source + "|" + target + "|" +
                                        std::to_string(size) + "|" + std::to_string(rerun) + "|" +
                                        std::to_string(omega_index));
}

inline ArchitectureSpec spec_for(const ArchConfig& arch, const TimeSeriesDataset& data, bool stream_max,
                                 std::size_t input_channels, std::uint64_t seed) {
  ArchitectureSpec spec;
  spec.family = arch.family;
  spec.variant = arch.variant;
  spec.scale = arch.scale;
  spec.tcn = arch.tcn;
  spec.input_channels = input_channels;
  spec.input_length = data.length;
  spec.head = data.task_kind == TaskKind::classification ? HeadKind::classification : HeadKind::regression;
  spec.num_classes = data.num_classes;
  spec.stream_max_enabled = stream_max;
  spec.seed = seed;
  spec.validate();
  return spec;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw format_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

inline std::optional<RunHistory> read_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  return history_from_jsonl(in);
}

}  // namespace detail_harness

// ---------------------------------------------------------------------------
// Command primitives. Each writes unit-private log files; a unit is complete
// when its log parses to a full history, which is what resume checks.
// ---------------------------------------------------------------------------

// The prepared data for one (target, reduction, rerun): split with the
// per-dataset seed, reduce the training set with the per-rerun seed, then
// preprocess (the mask comes from the reduced training set, which is the set
// the model actually trains on).
inline SplitDataset prepare_target_data(const ExperimentConfig& cfg, const TimeSeriesDataset& data,
                                        std::size_t size, std::size_t rerun) {
  SplitDataset s = split(data, detail_harness::split_seed(cfg, data.name));
  if (size > s.train.size()) {
    throw param_error("reduction " + std::to_string(size) + " exceeds training size " +
                      std::to_string(s.train.size()) + " of " + data.name);
  }
  s = reduce_training(s, size, detail_harness::reduce_seed(cfg, data.name, size, rerun));
  auto [processed, state] = preprocess(s);
  return std::move(processed);
}

inline SplitDataset prepare_source_data(const ExperimentConfig& cfg, const TimeSeriesDataset& data) {
  SplitDataset s = split(data, detail_harness::split_seed(cfg, data.name));
  auto [processed, state] = preprocess(s);
  return std::move(processed);
}

// Pretraining: `repeats` trainings from scratch with derived seeds; the best
// by validation loss at its best epoch becomes the bundle. Numeric failures
// skip the repeat; all repeats failing is a command error.
inline fs::path cmd_pretrain(const ExperimentConfig& cfg, const TimeSeriesDataset& data,
                             const ArchConfig& arch, const StoreLayout& store) {
  const DatasetConfig& ds_cfg = cfg.dataset(data.name);
  SplitDataset prepared = prepare_source_data(cfg, data);

  struct Candidate {
    std::size_t rep;
    real best_val_loss;
    std::uint64_t seed;
  };
  std::vector<Candidate> candidates;
  std::string last_error;

  for (std::size_t rep = 0; rep < cfg.pretrain_repeats; ++rep) {
    const fs::path log = store.pretrain_log(arch.label, data.name, rep);
    const std::uint64_t seed = detail_harness::pretrain_seed(cfg, arch.label, data.name, rep);
    std::optional<RunHistory> history = detail_harness::read_history(log);
    if (!history) {
      try {
        auto spec = detail_harness::spec_for(arch, data, ds_cfg.stream_max, data.channels,
                                             derive_seed(seed, "init"));
        auto model = build(spec);
        RngStream rng(derive_seed(seed, "train"));
        RunHistory h = train(*model, prepared, cfg.train, rng);
        detail_harness::write_text_file(log, history_to_jsonl(h));
        history = std::move(h);
      } catch (const numeric_error& e) {
        last_error = e.what();
        continue;  // failed repeat is logged by the caller and skipped
      }
    }
    candidates.push_back({rep, history->epochs[history->best_epoch].val_loss, seed});
  }
  if (candidates.empty()) {
    throw state_error("pretrain " + arch.label + " on " + data.name + ": all repeats failed (" + last_error +
                      ")");
  }
  const auto best = *std::min_element(candidates.begin(), candidates.end(), [](const auto& a, const auto& b) {
    if (a.best_val_loss != b.best_val_loss) return a.best_val_loss < b.best_val_loss;
    return a.rep < b.rep;
  });

  // rebuild the winning model deterministically and extract its weights
  auto spec = detail_harness::spec_for(arch, data, ds_cfg.stream_max, data.channels,
                                       derive_seed(best.seed, "init"));
  auto model = build(spec);
  RngStream rng(derive_seed(best.seed, "train"));
  train(*model, prepared, cfg.train, rng);
  WeightBundle bundle = extract(*model);
  bundle.provenance_dataset = data.name;
  bundle.provenance_seed = best.seed;

  fs::create_directories(store.bundles_dir());
  const fs::path bundle_path = store.bundle_file(arch.label, data.name);
  save_bundle(bundle, bundle_path);
  return bundle_path;
}

// Referent (scratch) training for one (arch, target, reduction, rerun).
inline RunHistory cmd_baseline(const ExperimentConfig& cfg, const TimeSeriesDataset& data,
                               const ArchConfig& arch, std::size_t size, std::size_t rerun,
                               const StoreLayout& store) {
  const fs::path log = store.baseline_log(arch.label, data.name, size, rerun);
  if (auto existing = detail_harness::read_history(log)) return *existing;

  const DatasetConfig& ds_cfg = cfg.dataset(data.name);
  SplitDataset prepared = prepare_target_data(cfg, data, size, rerun);
  const std::uint64_t seed = detail_harness::baseline_seed(cfg, arch.label, data.name, size, rerun);
  auto spec =
      detail_harness::spec_for(arch, data, ds_cfg.stream_max, data.channels, derive_seed(seed, "init"));
  auto model = build(spec);
  RngStream rng(derive_seed(seed, "train"));
  RunHistory history = train(*model, prepared, cfg.train, rng);
  detail_harness::write_text_file(log, history_to_jsonl(history));
  return history;
}

// Fine-tuning for one (arch, bundle, target, reduction, rerun, omega).
inline RunHistory cmd_finetune(const ExperimentConfig& cfg, const WeightBundle& bundle,
                               const TimeSeriesDataset& data, const ArchConfig& arch, std::size_t size,
                               std::size_t rerun, std::size_t omega_index, const StoreLayout& store) {
  const fs::path log =
      store.finetune_log(arch.label, bundle.provenance_dataset, data.name, size, rerun, omega_index);
  if (auto existing = detail_harness::read_history(log)) return *existing;

  const DatasetConfig& ds_cfg = cfg.dataset(data.name);
  SplitDataset prepared = prepare_target_data(cfg, data, size, rerun);
  const std::uint64_t seed = detail_harness::finetune_seed(cfg, arch.label, bundle.provenance_dataset,
                                                           data.name, size, rerun, omega_index);

  WeightBundle adapted = adapt_channels(bundle, data.channels);
  auto spec = detail_harness::spec_for(arch, data, ds_cfg.stream_max, bundle_model_channels(adapted),
                                       derive_seed(seed, "init"));
  auto model = build(spec);
  implant(adapted, *model);
  assign_multipliers(*model, cfg.omega_grid[omega_index]);

  RngStream rng(derive_seed(seed, "train"));
  RunHistory history = train(*model, prepared, cfg.train, rng);
  detail_harness::write_text_file(log, history_to_jsonl(history));
  return history;
}

// ---------------------------------------------------------------------------
// Full experiment run: pretrain each (architecture, source) once, then for
// every (architecture, source, target, reduction, rerun) train the referent
// and the omega grid. Units are independent and scheduled onto a bounded
// worker pool; completed units are detected from their logs and skipped.
// ---------------------------------------------------------------------------

struct RunOptions {
  std::size_t max_units = std::numeric_limits<std::size_t>::max();  // execution budget (for tests/resume)
  bool quiet = false;
};

struct RunStats {
  std::size_t executed = 0;
  std::size_t skipped = 0;   // already complete
  std::size_t failed = 0;
  std::size_t deferred = 0;  // not run because the budget ran out
  bool complete() const { return failed == 0 && deferred == 0; }
};

namespace detail_harness {

struct Unit {
  std::string id;   // sort key and manifest identity
  std::string kind; // pretrain | baseline | finetune
  std::uint64_t seed = 0;
  fs::path artifact;       // store-relative, so stores stay relocatable
  std::function<bool()> is_complete;
  std::function<void()> execute;
};

inline std::size_t worker_count(const ExperimentConfig& cfg) {
  if (const char* env = std::getenv("TSLAB_WORKERS")) {
    const long n = std::atol(env);
    if (n > 0) return static_cast<std::size_t>(n);
  }
  if (cfg.workers > 0) return cfg.workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? hc : 1;
}

struct UnitOutcome {
  std::string id;
  std::string kind;
  std::string status;  // ok | failed | deferred
  std::string artifact;
  std::string message;
};

// Executes one phase of units on a worker pool. Budget counts executions.
inline void run_phase(std::vector<Unit>& units, std::size_t workers, std::atomic<std::size_t>& budget,
                      std::mutex& io_mutex, const fs::path& manifest, std::vector<UnitOutcome>& outcomes,
                      RunStats& stats, bool quiet) {
  std::atomic<std::size_t> next{0};
  std::mutex state_mutex;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= units.size()) return;
      Unit& unit = units[i];
      UnitOutcome outcome{unit.id, unit.kind, "ok", unit.artifact.string(), ""};
      bool executed = false;
      try {
        if (unit.is_complete()) {
          std::lock_guard lock(state_mutex);
          ++stats.skipped;
        } else {
          // claim budget
          std::size_t remaining = budget.load();
          bool claimed = false;
          while (remaining > 0 && !(claimed = budget.compare_exchange_weak(remaining, remaining - 1))) {
          }
          if (!claimed) {
            outcome.status = "deferred";
            std::lock_guard lock(state_mutex);
            ++stats.deferred;
          } else {
            unit.execute();
            executed = true;
            std::lock_guard lock(state_mutex);
            ++stats.executed;
          }
        }
      } catch (const std::exception& e) {
        outcome.status = "failed";
        outcome.message = e.what();
        std::lock_guard lock(state_mutex);
        ++stats.failed;
      }
      {
        std::lock_guard lock(io_mutex);
        std::ofstream out(manifest, std::ios::app);
        json line = {{"unit", outcome.id}, {"kind", outcome.kind}, {"status", outcome.status},
                     {"artifact", outcome.artifact}};
        if (!outcome.message.empty()) line["message"] = outcome.message;
        out << line.dump() << "\n";
        outcomes.push_back(outcome);
        if (!quiet && (executed || outcome.status != "ok")) {
          std::fprintf(stderr, "[%s] %s %s\n", outcome.status.c_str(), outcome.kind.c_str(), outcome.id.c_str());
        }
      }
    }
  };

  std::vector<std::thread> pool;
  const std::size_t n = std::max<std::size_t>(1, std::min(workers, units.size()));
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

}  // namespace detail_harness

// Scheduled (source, target) pairs: every source/target combination with
// distinct datasets.
inline std::vector<std::pair<std::string, std::string>> scheduled_pairs(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> pairs;
  for (const auto* s : cfg.sources())
    for (const auto* t : cfg.targets())
      if (s->name != t->name) pairs.emplace_back(s->name, t->name);
  return pairs;
}

inline RunStats run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {}) {
  validate_config(cfg);
  StoreLayout store{cfg.output_dir};
  fs::create_directories(store.root);
  fs::create_directories(store.logs_dir());

  // materialize datasets once; immutable afterwards
  std::map<std::string, TimeSeriesDataset> data;
  for (const auto& ds : cfg.datasets) data.emplace(ds.name, materialize_dataset(ds, store.datasets_dir()));

  const auto pairs = scheduled_pairs(cfg);
  std::set<std::string> active_sources, active_targets;
  for (const auto& [s, t] : pairs) {
    active_sources.insert(s);
    active_targets.insert(t);
  }

  // seed-collision check over the whole schedule
  {
    std::set<std::uint64_t> seeds;
    auto add = [&seeds](std::uint64_t seed) {
      if (!seeds.insert(seed).second) throw state_error("schedule: unit seed collision");
    };
    for (const auto& arch : cfg.architectures) {
      for (const auto& source : active_sources)
        for (std::size_t rep = 0; rep < cfg.pretrain_repeats; ++rep)
          add(detail_harness::pretrain_seed(cfg, arch.label, source, rep));
      for (const auto& target : active_targets)
        for (std::size_t size : cfg.reduction_sizes)
          for (std::size_t rerun = 0; rerun < cfg.reruns; ++rerun)
            add(detail_harness::baseline_seed(cfg, arch.label, target, size, rerun));
      for (const auto& [source, target] : pairs)
        for (std::size_t size : cfg.reduction_sizes)
          for (std::size_t rerun = 0; rerun < cfg.reruns; ++rerun)
            for (std::size_t w = 0; w < cfg.omega_grid.size(); ++w)
              add(detail_harness::finetune_seed(cfg, arch.label, source, target, size, rerun, w));
    }
  }

  RunStats stats;
  std::atomic<std::size_t> budget{options.max_units};
  std::mutex io_mutex;
  std::vector<detail_harness::UnitOutcome> outcomes;
  const std::size_t workers = detail_harness::worker_count(cfg);

  // phase 1: pretraining
  std::vector<detail_harness::Unit> pretrain_units;
  for (const auto& arch : cfg.architectures) {
    for (const auto& source : active_sources) {
      detail_harness::Unit unit;
      unit.id = "pretrain|" + arch.label + "|" + source;
      unit.kind = "pretrain";
      unit.artifact = fs::relative(store.bundle_file(arch.label, source), store.root);
      unit.is_complete = [&cfg, &store, arch, source] {
        if (!fs::exists(store.bundle_file(arch.label, source))) return false;
        for (std::size_t rep = 0; rep < cfg.pretrain_repeats; ++rep) {
          if (!detail_harness::read_history(store.pretrain_log(arch.label, source, rep))) return false;
        }
        return true;
      };
      unit.execute = [&cfg, &store, &data, arch, source] {
        cmd_pretrain(cfg, data.at(source), cfg.architecture(arch.label), store);
      };
      pretrain_units.push_back(std::move(unit));
    }
  }
  std::sort(pretrain_units.begin(), pretrain_units.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  detail_harness::run_phase(pretrain_units, workers, budget, io_mutex, store.manifest(), outcomes, stats,
                            options.quiet);

  // phase 2: referents and fine-tuning grids (fine-tunes depend on bundles)
  std::vector<detail_harness::Unit> run_units;
  for (const auto& arch : cfg.architectures) {
    for (const auto& target : active_targets) {
      for (std::size_t size : cfg.reduction_sizes) {
        for (std::size_t rerun = 0; rerun < cfg.reruns; ++rerun) {
          detail_harness::Unit unit;
          unit.id = "baseline|" + arch.label + "|" + target + "|r" + std::to_string(size) + "|" +
                    std::to_string(rerun);
          unit.kind = "baseline";
          unit.artifact = fs::relative(store.baseline_log(arch.label, target, size, rerun), store.root);
          unit.is_complete = [&store, arch, target, size, rerun] {
            return detail_harness::read_history(store.baseline_log(arch.label, target, size, rerun)).has_value();
          };
          unit.execute = [&cfg, &store, &data, arch, target, size, rerun] {
            cmd_baseline(cfg, data.at(target), cfg.architecture(arch.label), size, rerun, store);
          };
          run_units.push_back(std::move(unit));
        }
      }
    }
    for (const auto& [source, target] : pairs) {
      for (std::size_t size : cfg.reduction_sizes) {
        for (std::size_t rerun = 0; rerun < cfg.reruns; ++rerun) {
          for (std::size_t w = 0; w < cfg.omega_grid.size(); ++w) {
            detail_harness::Unit unit;
            unit.id = "finetune|" + arch.label + "|" + source + "|" + target + "|r" + std::to_string(size) +
                      "|" + std::to_string(rerun) + "|w" + std::to_string(w);
            unit.kind = "finetune";
            unit.artifact = fs::relative(store.finetune_log(arch.label, source, target, size, rerun, w), store.root);
            unit.is_complete = [&store, arch, source, target, size, rerun, w] {
              return detail_harness::read_history(store.finetune_log(arch.label, source, target, size, rerun, w))
                  .has_value();
            };
            unit.execute = [&cfg, &store, &data, arch, source, target, size, rerun, w] {
              const fs::path bundle_path = store.bundle_file(arch.label, source);
              if (!fs::exists(bundle_path)) {
                throw state_error("finetune: missing bundle " + bundle_path.string());
              }
              WeightBundle bundle = load_bundle(bundle_path);
              cmd_finetune(cfg, bundle, data.at(target), cfg.architecture(arch.label), size, rerun, w, store);
            };
            run_units.push_back(std::move(unit));
          }
        }
      }
    }
  }
  std::sort(run_units.begin(), run_units.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  detail_harness::run_phase(run_units, workers, budget, io_mutex, store.manifest(), outcomes, stats,
                            options.quiet);

  // canonical manifest: one sorted record per unit, derived from store state,
  // so an interrupted-then-resumed run converges to the uninterrupted bytes
  std::vector<detail_harness::Unit*> all_units;
  for (auto& u : pretrain_units) all_units.push_back(&u);
  for (auto& u : run_units) all_units.push_back(&u);
  std::sort(all_units.begin(), all_units.end(), [](const auto* a, const auto* b) { return a->id < b->id; });
  std::ostringstream manifest_text;
  for (const auto* unit : all_units) {
    std::string status = unit->is_complete() ? "ok" : "missing";
    std::string message;
    for (const auto& outcome : outcomes) {
      if (outcome.id == unit->id && outcome.status == "failed") {
        status = "failed";
        message = outcome.message;
      }
    }
    json line = {{"unit", unit->id}, {"kind", unit->kind}, {"status", status},
                 {"artifact", unit->artifact.string()}};
    if (!message.empty()) line["message"] = message;
    manifest_text << line.dump() << "\n";
  }
  detail_harness::write_text_file(store.manifest(), manifest_text.str());
  return stats;
}

}  // namespace tslab
