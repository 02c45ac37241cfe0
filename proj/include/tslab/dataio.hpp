#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "tslab/metrics.hpp"
#include "tslab/rng.hpp"

namespace tslab {

// ---------------------------------------------------------------------------
// Canonical dataset container: 64-byte header + little-endian 32-bit payload,
// instance-major (C*N observation floats, then one target). The fixed layout
// keeps the files parseable from any language and round-trips bit-exactly.
//
//   offset  size  field
//   0       8     magic "TSLBDSET"
//   8       4     version (1)
//   12      4     task kind (0 regression, 1 classification)
//   16      4     channel count C
//   20      4     length N
//   24      8     instance count
//   32      4     num_classes (0 for regression)
//   36      4     target dtype (0 = float32, 1 = int32 class index)
//   40      24    zero padding
// ---------------------------------------------------------------------------

constexpr char kDatasetMagic[8] = {'T', 'S', 'L', 'B', 'D', 'S', 'E', 'T'};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr std::size_t kHeaderSize = 64;

struct Instance {
  std::vector<real> x;  // C*N row-major (channel-major)
  real target = 0.0;
};

struct TimeSeriesDataset {
  std::string name;
  TaskKind task_kind = TaskKind::regression;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::size_t num_classes = 0;  // classification only
  std::vector<Instance> instances;
  // Per-instance stream_max, aligned with `instances`; filled by preprocess.
  std::vector<real> stream_max;

  std::size_t size() const { return instances.size(); }

  std::size_t label(std::size_t i) const {
    return static_cast<std::size_t>(std::llround(instances[i].target));
  }

  void validate() const {
    if (channels < 1 || length < 1) throw param_error("dataset " + name + ": empty dimensions");
    for (std::size_t i = 0; i < instances.size(); ++i) {
      if (instances[i].x.size() != channels * length) {
        throw dim_error("dataset " + name + ": instance " + std::to_string(i) + " has wrong size");
      }
      if (task_kind == TaskKind::classification) {
        if (num_classes < 2) throw param_error("dataset " + name + ": classification needs >= 2 classes");
        if (label(i) >= num_classes) {
          throw param_error("dataset " + name + ": label out of range at instance " + std::to_string(i));
        }
      }
    }
    if (!stream_max.empty() && stream_max.size() != instances.size()) {
      throw dim_error("dataset " + name + ": stream_max size mismatch");
    }
  }
};

inline void save_canonical(const TimeSeriesDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::vector<unsigned char> bytes;
  bytes.reserve(kHeaderSize + ds.size() * (ds.channels * ds.length * 4 + 4));
  bytes.insert(bytes.end(), kDatasetMagic, kDatasetMagic + 8);
  le::put_u32(bytes, kDatasetVersion);
  le::put_u32(bytes, ds.task_kind == TaskKind::classification ? 1u : 0u);
  le::put_u32(bytes, static_cast<std::uint32_t>(ds.channels));
  le::put_u32(bytes, static_cast<std::uint32_t>(ds.length));
  le::put_u64(bytes, static_cast<std::uint64_t>(ds.size()));
  le::put_u32(bytes, static_cast<std::uint32_t>(ds.num_classes));
  le::put_u32(bytes, ds.task_kind == TaskKind::classification ? 1u : 0u);
  while (bytes.size() < kHeaderSize) bytes.push_back(0);

  for (const Instance& inst : ds.instances) {
    for (real v : inst.x) le::put_f32(bytes, static_cast<float>(v));
    if (ds.task_kind == TaskKind::classification) {
      le::put_i32(bytes, static_cast<std::int32_t>(std::llround(inst.target)));
    } else {
      le::put_f32(bytes, static_cast<float>(inst.target));
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("save: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("save: write failed for " + path.string());
}

inline TimeSeriesDataset load_canonical(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("load: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderSize) {
    throw format_error("load " + path.string() + ": truncated header, expected " +
                       std::to_string(kHeaderSize) + " bytes, got " + std::to_string(bytes.size()));
  }
  if (!std::equal(kDatasetMagic, kDatasetMagic + 8, bytes.data())) {
    throw format_error("load " + path.string() + ": bad magic");
  }
  const std::uint32_t version = le::get_u32(bytes.data() + 8);
  if (version != kDatasetVersion) {
    throw format_error("load " + path.string() + ": unsupported version " + std::to_string(version));
  }

  TimeSeriesDataset ds;
  ds.name = path.stem().string();
  ds.task_kind = le::get_u32(bytes.data() + 12) == 1 ? TaskKind::classification : TaskKind::regression;
  ds.channels = le::get_u32(bytes.data() + 16);
  ds.length = le::get_u32(bytes.data() + 20);
  const std::uint64_t count = le::get_u64(bytes.data() + 24);
  ds.num_classes = le::get_u32(bytes.data() + 32);
  const std::uint32_t target_dtype = le::get_u32(bytes.data() + 36);

  const std::size_t per_instance = ds.channels * ds.length * 4 + 4;
  const std::size_t expected = kHeaderSize + count * per_instance;
  if (bytes.size() != expected) {
    throw format_error("load " + path.string() + ": expected " + std::to_string(expected) +
                       " bytes, got " + std::to_string(bytes.size()));
  }

  ds.instances.resize(count);
  std::size_t off = kHeaderSize;
  for (std::uint64_t i = 0; i < count; ++i) {
    Instance& inst = ds.instances[i];
    inst.x.resize(ds.channels * ds.length);
    for (std::size_t j = 0; j < inst.x.size(); ++j, off += 4) {
      const float v = le::get_f32(bytes.data() + off);
      if (!std::isfinite(v)) {
        throw format_error("load " + path.string() + ": non-finite value at byte offset " + std::to_string(off));
      }
      inst.x[j] = static_cast<real>(v);
    }
    if (target_dtype == 1) {
      inst.target = static_cast<real>(le::get_i32(bytes.data() + off));
    } else {
      const float t = le::get_f32(bytes.data() + off);
      if (!std::isfinite(t)) {
        throw format_error("load " + path.string() + ": non-finite target at byte offset " + std::to_string(off));
      }
      inst.target = static_cast<real>(t);
    }
    off += 4;
  }
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------
// 70/15/15 split: seeded uniform shuffle, then a contiguous cut. Train and
// validation sizes are floored, the remainder goes to test.
// ---------------------------------------------------------------------------

struct SplitDataset {
  TimeSeriesDataset train, val, test;
  std::uint64_t split_seed = 0;
};

inline SplitDataset split(const TimeSeriesDataset& ds, std::uint64_t seed) {
  if (ds.size() < 10) {
    throw param_error("split: need at least 10 instances, got " + std::to_string(ds.size()));
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  RngStream rng(seed);
  rng.shuffle(order);

  const std::size_t n_train = static_cast<std::size_t>(0.7 * static_cast<real>(ds.size()));
  const std::size_t n_val = static_cast<std::size_t>(0.15 * static_cast<real>(ds.size()));

  SplitDataset out;
  out.split_seed = seed;
  auto make_subset = [&](std::size_t begin, std::size_t end, const char* tag) {
    TimeSeriesDataset sub;
    sub.name = ds.name + "." + tag;
    sub.task_kind = ds.task_kind;
    sub.channels = ds.channels;
    sub.length = ds.length;
    sub.num_classes = ds.num_classes;
    sub.instances.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) sub.instances.push_back(ds.instances[order[i]]);
    return sub;
  };
  out.train = make_subset(0, n_train, "train");
  out.val = make_subset(n_train, n_train + n_val, "val");
  out.test = make_subset(n_train + n_val, ds.size(), "test");
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing: per-instance stream_max and [0,1] min-max scaling, then
// centering by the mask of per-position means computed from the training
// subset only.
// ---------------------------------------------------------------------------

struct PreprocessState {
  std::vector<real> mask;  // C*N means over scaled training instances
  std::vector<real> train_stream_max, val_stream_max, test_stream_max;
};

namespace detail_dataio {

inline std::vector<real> scale_subset(TimeSeriesDataset& ds) {
  std::vector<real> stream(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& x = ds.instances[i].x;
    real lo = x[0], hi = x[0];
    for (real v : x) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      throw degenerate_error("preprocess: constant instance " + std::to_string(i) + " in " + ds.name);
    }
    stream[i] = std::max(std::fabs(lo), std::fabs(hi));
    const real inv = 1.0 / (hi - lo);
    for (real& v : x) v = (v - lo) * inv;
  }
  ds.stream_max = stream;
  return stream;
}

}  // namespace detail_dataio

inline std::pair<SplitDataset, PreprocessState> preprocess(const SplitDataset& input) {
  SplitDataset out = input;
  PreprocessState state;
  state.train_stream_max = detail_dataio::scale_subset(out.train);
  state.val_stream_max = detail_dataio::scale_subset(out.val);
  state.test_stream_max = detail_dataio::scale_subset(out.test);

  const std::size_t width = out.train.channels * out.train.length;
  state.mask.assign(width, 0.0);
  if (out.train.size() == 0) throw param_error("preprocess: empty training set");
  for (const Instance& inst : out.train.instances) {
    for (std::size_t j = 0; j < width; ++j) state.mask[j] += inst.x[j];
  }
  const real inv_n = 1.0 / static_cast<real>(out.train.size());
  for (real& v : state.mask) v *= inv_n;

  auto center = [&](TimeSeriesDataset& ds) {
    for (Instance& inst : ds.instances)
      for (std::size_t j = 0; j < width; ++j) inst.x[j] -= state.mask[j];
  };
  center(out.train);
  center(out.val);
  center(out.test);
  return {std::move(out), std::move(state)};
}

// ---------------------------------------------------------------------------
// Training-set reduction. Classification reduction is stratified: floor
// allocation per class by proportion, remainder by largest fractional part,
// seeded selection within each class.
// ---------------------------------------------------------------------------

inline SplitDataset reduce_training(const SplitDataset& input, std::size_t size, std::uint64_t seed) {
  if (size > input.train.size()) {
    throw param_error("reduce_training: requested " + std::to_string(size) + " of " +
                      std::to_string(input.train.size()) + " training instances");
  }
  SplitDataset out;
  out.split_seed = input.split_seed;
  out.val = input.val;
  out.test = input.test;
  out.train = input.train;
  out.train.instances.clear();
  out.train.stream_max.clear();

  RngStream rng(seed);
  std::vector<std::size_t> chosen;
  if (input.train.task_kind == TaskKind::classification) {
    const std::size_t k = input.train.num_classes;
    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < input.train.size(); ++i) by_class[input.train.label(i)].push_back(i);

    const real total = static_cast<real>(input.train.size());
    std::vector<std::size_t> take(k, 0);
    std::vector<std::pair<real, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const real exact = static_cast<real>(size) * static_cast<real>(by_class[c].size()) / total;
      take[c] = std::min(by_class[c].size(), static_cast<std::size_t>(exact));
      assigned += take[c];
      remainders.emplace_back(exact - static_cast<real>(take[c]), c);
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (const auto& [frac, c] : remainders) {
      if (assigned >= size) break;
      if (take[c] < by_class[c].size()) {
        ++take[c];
        ++assigned;
      }
    }
    // distribute any shortfall caused by exhausted classes
    for (std::size_t c = 0; c < k && assigned < size; ++c) {
      while (take[c] < by_class[c].size() && assigned < size) {
        ++take[c];
        ++assigned;
      }
    }
    for (std::size_t c = 0; c < k; ++c) {
      rng.shuffle(by_class[c]);
      chosen.insert(chosen.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(take[c]));
    }
  } else {
    std::vector<std::size_t> order(input.train.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(size));
  }
  std::sort(chosen.begin(), chosen.end());
  for (std::size_t i : chosen) {
    out.train.instances.push_back(input.train.instances[i]);
    if (!input.train.stream_max.empty()) out.train.stream_max.push_back(input.train.stream_max[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic task generators for desk-scale experiments.
//
// shared_filter_pair draws one random FIR filter bank from the pair seed and
// generates both datasets from signals whose targets depend on the bank's
// response energies, so convolutional features learned on the source transfer
// to the target by construction. The per-side streams depend only on
// (bank, side seed, size, task), so equal side seeds give equal datasets.
//
// noise makes the targets independent of the inputs; the constant mean
// predictor is as good as any model there.
// ---------------------------------------------------------------------------

enum class SynthKind { shared_filter_pair, noise };

struct SynthSideParams {
  std::size_t size = 1000;
  TaskKind task = TaskKind::regression;
  std::size_t num_classes = 0;
  std::uint64_t seed = 1;
};

struct SynthParams {
  std::size_t channels = 1;
  std::size_t length = 64;
  std::size_t filter_bank = 6;
  std::size_t filter_width = 9;
  real noise_level = 0.05;
  SynthSideParams source;
  SynthSideParams target;
};

namespace detail_dataio {

inline TimeSeriesDataset synth_side(SynthKind kind, const SynthParams& p, const SynthSideParams& side,
                                    const std::vector<std::vector<real>>& bank, std::uint64_t pair_seed) {
  TimeSeriesDataset ds;
  ds.task_kind = side.task;
  ds.channels = p.channels;
  ds.length = p.length;
  ds.num_classes = side.task == TaskKind::classification ? side.num_classes : 0;
  if (side.task == TaskKind::classification && side.num_classes < 2) {
    throw param_error("synth_task: classification side needs >= 2 classes");
  }

  RngStream rng(derive_seed(pair_seed, "side:" + std::to_string(side.seed)));
  const std::size_t n_filters = bank.size();
  const std::size_t n_heads = side.task == TaskKind::classification ? side.num_classes : 1;
  std::vector<real> head(n_heads * n_filters);
  for (real& w : head) w = rng.normal();

  const std::size_t cn = p.channels * p.length;
  ds.instances.resize(side.size);
  std::vector<real> feats(n_filters);
  for (Instance& inst : ds.instances) {
    inst.x.resize(cn);
    const real amp = std::exp(rng.uniform(-1.0, 1.5));
    for (std::size_t c = 0; c < p.channels; ++c) {
      real a = rng.normal(), b = rng.normal();
      for (std::size_t t = 0; t < p.length; ++t) {
        const real cnew = rng.normal();
        inst.x[c * p.length + t] = amp * (a + b + cnew) / 3.0;  // MA(3) smoothing
        a = b;
        b = cnew;
      }
    }
    // response energy of each bank filter, summed over channels
    for (std::size_t f = 0; f < n_filters; ++f) {
      const auto& filt = bank[f];
      real energy = 0.0;
      std::size_t count = 0;
      for (std::size_t t = 0; t + p.filter_width <= p.length; ++t) {
        real acc = 0.0;
        for (std::size_t c = 0; c < p.channels; ++c)
          for (std::size_t k = 0; k < p.filter_width; ++k)
            acc += filt[c * p.filter_width + k] * inst.x[c * p.length + t + k];
        energy += acc * acc;
        ++count;
      }
      feats[f] = std::sqrt(energy / static_cast<real>(std::max<std::size_t>(count, 1)));
    }
    if (kind == SynthKind::noise) {
      inst.target = side.task == TaskKind::classification
                        ? static_cast<real>(rng.index(side.num_classes))
                        : rng.normal();
    } else if (side.task == TaskKind::classification) {
      std::size_t best = 0;
      real best_score = -std::numeric_limits<real>::infinity();
      for (std::size_t h = 0; h < n_heads; ++h) {
        real score = 0.0;
        for (std::size_t f = 0; f < n_filters; ++f) score += head[h * n_filters + f] * feats[f];
        if (score > best_score) {
          best_score = score;
          best = h;
        }
      }
      inst.target = static_cast<real>(best);
    } else {
      real y = 0.0;
      for (std::size_t f = 0; f < n_filters; ++f) y += head[f] * feats[f];
      inst.target = y + p.noise_level * rng.normal();
    }
  }
  return ds;
}

}  // namespace detail_dataio

inline std::pair<TimeSeriesDataset, TimeSeriesDataset> synth_task(SynthKind kind, const SynthParams& p,
                                                                  std::uint64_t seed) {
  if (p.channels < 1 || p.length < 1) throw param_error("synth_task: empty dimensions");
  if (p.filter_width > p.length) throw param_error("synth_task: filter wider than signal");
  RngStream bank_rng(derive_seed(seed, "filter-bank"));
  std::vector<std::vector<real>> bank(p.filter_bank);
  const real scale = 1.0 / std::sqrt(static_cast<real>(p.channels * p.filter_width));
  for (auto& filt : bank) {
    filt.resize(p.channels * p.filter_width);
    for (real& v : filt) v = bank_rng.normal() * scale;
  }
  auto source = detail_dataio::synth_side(kind, p, p.source, bank, seed);
  auto target = detail_dataio::synth_side(kind, p, p.target, bank, seed);
  source.name = "synth_source";
  target.name = "synth_target";
  source.validate();
  target.validate();
  return {std::move(source), std::move(target)};
}

}  // namespace tslab
