#pragma once

#include <chrono>
#include <istream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tslab/dataio.hpp"
#include "tslab/metrics.hpp"
#include "tslab/model.hpp"
#include "tslab/optim.hpp"

namespace tslab {

// ---------------------------------------------------------------------------
// Training protocol: Adam at base rate 0.001; the rate is cut by factor 0.2
// after four consecutive epochs without validation-loss improvement (never
// below 5e-7); training stops after ten consecutive epochs without
// improvement or at 250 epochs; the best-epoch weights are restored at exit.
// ---------------------------------------------------------------------------

struct TrainConfig {
  real base_lr = 0.001;
  std::size_t plateau_patience = 4;
  real plateau_factor = 0.2;
  real lr_floor = 5e-7;
  std::size_t early_stop_patience = 10;
  std::size_t max_epochs = 250;
  std::size_t batch_size = 32;
  // Improvement means a decrease of more than this; shared by both counters.
  real min_delta = 1e-8;

  void validate() const {
    if (plateau_factor <= 0.0 || plateau_factor >= 1.0) throw param_error("train config: plateau_factor in (0,1)");
    if (lr_floor <= 0.0) throw param_error("train config: lr_floor must be > 0");
    if (plateau_patience < 1 || early_stop_patience < 1) throw param_error("train config: patience must be >= 1");
    if (max_epochs < 1 || batch_size < 1) throw param_error("train config: max_epochs and batch_size >= 1");
    if (base_lr <= 0.0) throw param_error("train config: base_lr must be > 0");
  }
};

enum class StopReason { early_stop, max_epochs };

struct EpochRecord {
  real train_loss = 0.0;
  real val_loss = 0.0;
  real val_metric = 0.0;
  real lr = 0.0;
};

struct RunHistory {
  std::vector<EpochRecord> epochs;
  StopReason stopped_by = StopReason::max_epochs;
  std::size_t best_epoch = 0;  // 0-based index of the minimum validation loss
  real final_test_score = 0.0;
  // Wall time stays in memory only; the serialized log must be identical
  // across reruns with the same seeds.
  real wall_time_seconds = 0.0;

  std::vector<real> metric_curve() const {
    std::vector<real> curve;
    curve.reserve(epochs.size());
    for (const auto& e : epochs) curve.push_back(e.val_metric);
    return curve;
  }
};

// The plateau/early-stop automaton, separated from the epoch loop so scripted
// loss sequences can drive it directly. Both counters track epochs since the
// last improvement; a rate cut resets only the plateau counter.
class TrainSchedule {
 public:
  explicit TrainSchedule(const TrainConfig& cfg) : cfg_(cfg), lr_(cfg.base_lr) {}

  struct Decision {
    bool improved = false;
    bool lr_cut = false;
    bool stop = false;
  };

  real lr() const { return lr_; }

  Decision observe(real val_loss) {
    Decision d;
    if (val_loss < best_ - cfg_.min_delta) {
      best_ = val_loss;
      plateau_wait_ = 0;
      stop_wait_ = 0;
      d.improved = true;
      return d;
    }
    ++plateau_wait_;
    ++stop_wait_;
    if (plateau_wait_ >= cfg_.plateau_patience) {
      lr_ = std::max(lr_ * cfg_.plateau_factor, cfg_.lr_floor);
      plateau_wait_ = 0;
      d.lr_cut = true;
    }
    if (stop_wait_ >= cfg_.early_stop_patience) d.stop = true;
    return d;
  }

 private:
  TrainConfig cfg_;
  real lr_;
  real best_ = std::numeric_limits<real>::infinity();
  std::size_t plateau_wait_ = 0;
  std::size_t stop_wait_ = 0;
};

// ---------------------------------------------------------------------------
// Loss functions.
// ---------------------------------------------------------------------------

inline real mse(std::span<const real> pred, std::span<const real> truth) {
  if (pred.size() != truth.size()) throw param_error("mse: length mismatch");
  if (pred.empty()) throw param_error("mse: empty input");
  real acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const real d = pred[i] - truth[i];
    acc += d * d;
  }
  return acc / static_cast<real>(pred.size());
}

constexpr real kProbClamp = 1e-12;

inline real crossentropy(const std::vector<std::vector<real>>& probs, std::span<const std::size_t> labels) {
  if (probs.size() != labels.size()) throw param_error("crossentropy: length mismatch");
  if (probs.empty()) throw param_error("crossentropy: empty batch");
  real acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    real sum = 0.0;
    for (real p : probs[i]) sum += p;
    if (std::fabs(sum - 1.0) > 1e-6) {
      throw param_error("crossentropy: probabilities sum to " + std::to_string(sum) + " at instance " +
                        std::to_string(i));
    }
    if (labels[i] >= probs[i].size()) {
      throw param_error("crossentropy: label out of range at instance " + std::to_string(i));
    }
    acc += -std::log(std::max(probs[i][labels[i]], kProbClamp));
  }
  return acc / static_cast<real>(probs.size());
}

// Graph-building per-instance losses used by the epoch loop.

inline Tensor squared_error_loss(const Tensor& pred, real target) {
  return sum_squares(sub(pred, Tensor::scalar(target)));
}

inline Tensor neg_log_prob_loss(const Tensor& probs, std::size_t label) {
  if (label >= probs.size()) throw param_error("loss: label out of range");
  const real p = std::max(probs.values()[label], kProbClamp);
  auto pn = probs.node();
  const bool clamped = probs.values()[label] < kProbClamp;
  return make_op({1}, {-std::log(p)}, {probs}, [pn, label, p, clamped](detail::Node& self) {
    if (!pn->requires_grad || clamped) return;
    pn->ensure_grad();
    pn->grad[label] += self.grad[0] * (-1.0 / p);
  });
}

// ---------------------------------------------------------------------------
// Evaluation: MAE for regression, weighted F1 for classification, computed
// in eval mode (dropout off, batch norm on running statistics).
// ---------------------------------------------------------------------------

namespace detail_trainer {

inline std::optional<real> instance_stream(const Model& model, const TimeSeriesDataset& ds, std::size_t i) {
  if (!model.spec().stream_max_enabled) return std::nullopt;
  if (ds.stream_max.size() != ds.size()) {
    throw contract_error("evaluate: dataset " + ds.name + " lacks stream_max values");
  }
  return ds.stream_max[i];
}

}  // namespace detail_trainer

inline real evaluate(Model& model, const TimeSeriesDataset& ds) {
  const bool classification = model.spec().head == HeadKind::classification;
  if (classification != (ds.task_kind == TaskKind::classification)) {
    throw param_error("evaluate: model head does not match task kind of " + ds.name);
  }
  if (ds.size() == 0) throw param_error("evaluate: empty dataset " + ds.name);
  NoGradGuard no_grad;
  RngStream rng(0);  // eval mode draws nothing
  if (classification) {
    std::vector<std::size_t> preds(ds.size()), labels(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      Tensor x = Tensor::from({ds.channels, ds.length}, ds.instances[i].x);
      Tensor probs = model.forward(x, detail_trainer::instance_stream(model, ds, i), Mode::eval, rng);
      std::size_t best = 0;
      for (std::size_t k = 1; k < probs.size(); ++k)
        if (probs.values()[k] > probs.values()[best]) best = k;
      preds[i] = best;
      labels[i] = ds.label(i);
    }
    return weighted_f1(preds, labels, ds.num_classes);
  }
  std::vector<real> preds(ds.size()), truth(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor x = Tensor::from({ds.channels, ds.length}, ds.instances[i].x);
    Tensor out = model.forward(x, detail_trainer::instance_stream(model, ds, i), Mode::eval, rng);
    preds[i] = out.item();
    truth[i] = ds.instances[i].target;
  }
  return mae(preds, truth);
}

// Mean per-instance loss in eval mode, without the L2 penalty.
inline real eval_loss(Model& model, const TimeSeriesDataset& ds) {
  if (ds.size() == 0) throw param_error("eval_loss: empty dataset " + ds.name);
  NoGradGuard no_grad;
  RngStream rng(0);
  const bool classification = ds.task_kind == TaskKind::classification;
  real acc = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Tensor x = Tensor::from({ds.channels, ds.length}, ds.instances[i].x);
    Tensor out = model.forward(x, detail_trainer::instance_stream(model, ds, i), Mode::eval, rng);
    if (classification) {
      acc += -std::log(std::max(out.values()[ds.label(i)], kProbClamp));
    } else {
      const real d = out.item() - ds.instances[i].target;
      acc += d * d;
    }
  }
  return acc / static_cast<real>(ds.size());
}

// ---------------------------------------------------------------------------
// The epoch loop.
// ---------------------------------------------------------------------------

inline RunHistory train(Model& model, const SplitDataset& data, const TrainConfig& cfg, RngStream& rng) {
  cfg.validate();
  const bool classification = data.train.task_kind == TaskKind::classification;
  if (classification != (model.spec().head == HeadKind::classification)) {
    throw param_error("train: model head does not match task kind");
  }
  if (data.train.size() == 0 || data.val.size() == 0 || data.test.size() == 0) {
    throw param_error("train: empty split");
  }

  const auto t0 = std::chrono::steady_clock::now();
  Adam opt(model.parameters());
  TrainSchedule schedule(cfg);
  RunHistory history;
  std::vector<std::vector<real>> best_state = model.save_state();

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const real lr_epoch = schedule.lr();
    rng.shuffle(order);
    real loss_sum = 0.0;
    std::size_t batch_count = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      opt.zero_grad();
      Tensor batch_loss = Tensor::scalar(0.0);
      for (std::size_t bi = start; bi < end; ++bi) {
        const std::size_t i = order[bi];
        const Instance& inst = data.train.instances[i];
        Tensor x = Tensor::from({data.train.channels, data.train.length}, inst.x);
        Tensor out = model.forward(x, detail_trainer::instance_stream(model, data.train, i), Mode::train, rng);
        Tensor loss = classification ? neg_log_prob_loss(out, data.train.label(i))
                                     : squared_error_loss(out, inst.target);
        batch_loss = add(batch_loss, loss);
      }
      batch_loss = add(scale(batch_loss, 1.0 / static_cast<real>(end - start)), model.l2_penalty());
      if (!std::isfinite(batch_loss.item())) {
        throw numeric_error("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      backward(batch_loss);
      opt.step(lr_epoch);
      loss_sum += batch_loss.item();
      ++batch_count;
    }

    const real val_loss = eval_loss(model, data.val);
    if (!std::isfinite(val_loss)) {
      throw numeric_error("train: non-finite validation loss at epoch " + std::to_string(epoch + 1));
    }
    const real val_metric = evaluate(model, data.val);
    history.epochs.push_back({loss_sum / static_cast<real>(batch_count), val_loss, val_metric, lr_epoch});

    const auto decision = schedule.observe(val_loss);
    if (decision.improved) {
      best_state = model.save_state();
      history.best_epoch = epoch;
    }
    if (decision.stop) {
      history.stopped_by = StopReason::early_stop;
      break;
    }
  }
  if (history.epochs.size() == cfg.max_epochs && history.stopped_by != StopReason::early_stop) {
    history.stopped_by = StopReason::max_epochs;
  }

  model.load_state(best_state);
  history.final_test_score = evaluate(model, data.test);
  history.wall_time_seconds =
      std::chrono::duration_cast<std::chrono::duration<real>>(std::chrono::steady_clock::now() - t0).count();
  return history;
}

// ---------------------------------------------------------------------------
// RunHistory log: one JSON record per epoch plus a summary record (schema 1).
// ---------------------------------------------------------------------------

constexpr int kHistorySchema = 1;

inline std::string history_to_jsonl(const RunHistory& history) {
  std::ostringstream out;
  for (std::size_t i = 0; i < history.epochs.size(); ++i) {
    const auto& e = history.epochs[i];
    nlohmann::json line = {
        {"type", "epoch"},   {"epoch", i + 1},          {"train_loss", e.train_loss},
        {"val_loss", e.val_loss}, {"val_metric", e.val_metric}, {"lr", e.lr},
    };
    out << line.dump() << "\n";
  }
  nlohmann::json summary = {
      {"type", "summary"},
      {"schema", kHistorySchema},
      {"epochs", history.epochs.size()},
      {"stopped_by", history.stopped_by == StopReason::early_stop ? "early_stop" : "max_epochs"},
      {"best_epoch", history.best_epoch + 1},
      {"final_test_score", history.final_test_score},
  };
  out << summary.dump() << "\n";
  return out.str();
}

// Parses a complete log; returns nullopt when the log is absent, truncated,
// or fails to parse (resume treats such units as not yet done).
inline std::optional<RunHistory> history_from_jsonl(std::istream& in) {
  RunHistory history;
  bool has_summary = false;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json record = nlohmann::json::parse(line, nullptr, false);
    if (record.is_discarded() || !record.contains("type")) return std::nullopt;
    if (record["type"] == "epoch") {
      history.epochs.push_back({record["train_loss"].get<real>(), record["val_loss"].get<real>(),
                                record["val_metric"].get<real>(), record["lr"].get<real>()});
    } else if (record["type"] == "summary") {
      if (record.value("schema", 0) != kHistorySchema) return std::nullopt;
      if (record.value("epochs", std::size_t{0}) != history.epochs.size()) return std::nullopt;
      history.stopped_by =
          record["stopped_by"] == "early_stop" ? StopReason::early_stop : StopReason::max_epochs;
      history.best_epoch = record["best_epoch"].get<std::size_t>() - 1;
      history.final_test_score = record["final_test_score"].get<real>();
      has_summary = true;
    }
  }
  if (!has_summary || history.epochs.empty()) return std::nullopt;
  return history;
}

}  // namespace tslab
