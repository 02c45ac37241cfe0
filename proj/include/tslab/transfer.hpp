#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tslab/model.hpp"

namespace tslab {

// ---------------------------------------------------------------------------
// WeightBundle: the transferable state of a trained model — the conv-block
// parameters in layer order plus their normalization buffers, tagged with the
// source channel count and provenance.
// ---------------------------------------------------------------------------

struct WeightBundle {
  Family family = Family::convnetquake_ingv;
  std::size_t source_channels = 0;
  std::size_t input_replication = 1;  // >1 instructs the consumer to tile single-channel inputs
  std::string provenance_dataset;
  std::uint64_t provenance_seed = 0;
  std::vector<std::pair<std::string, Tensor>> entries;                 // parameters, layer order
  std::vector<std::pair<std::string, std::vector<real>>> norm_state;   // batch-norm running stats
  std::vector<std::string> input_kernels;                              // names adapted across channel counts
};

inline WeightBundle extract(Model& model) {
  WeightBundle bundle;
  bundle.family = model.spec().family;
  bundle.source_channels = model.spec().input_channels;
  bundle.input_replication = model.input_replication();
  bundle.input_kernels = model.input_kernel_names();
  for (Parameter* p : model.transferable_parameters()) {
    bundle.entries.emplace_back(p->name, p->value.clone_detached());
  }
  for (const auto& [name, buf] : model.transfer_buffers()) {
    bundle.norm_state.emplace_back(name, *buf);
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Channel adaptation. Supported pairs: equal counts (identity), 1 -> 3
// (first-layer kernels replicated along the input-channel axis, biases and
// later layers untouched), and 3 -> 1 (bundle unchanged, consumer tiles the
// single input channel to three at forward time). Replicated kernels are not
// rescaled. For weight-normalized kernels the gain is renormalized so the
// effective kernel is exactly the replicated original.
// ---------------------------------------------------------------------------

inline WeightBundle adapt_channels(const WeightBundle& bundle, std::size_t target_channels) {
  WeightBundle out = bundle;
  // tensors are shared handles; detach so surgery never writes through to
  // the input bundle
  for (auto& [name, tensor] : out.entries) tensor = tensor.clone_detached();
  if (bundle.source_channels == target_channels) return out;
  const bool one_to_three = bundle.source_channels == 1 && target_channels == 3;
  const bool three_to_one = bundle.source_channels == 3 && target_channels == 1;
  if (!one_to_three && !three_to_one) {
    throw param_error("adapt_channels: unsupported pair (" + std::to_string(bundle.source_channels) + " -> " +
                      std::to_string(target_channels) + ")");
  }

  if (three_to_one) {
    out.input_replication = 3;
    return out;
  }

  auto find_entry = [&out](const std::string& name) -> Tensor* {
    for (auto& [n, t] : out.entries)
      if (n == name) return &t;
    return nullptr;
  };

  for (const std::string& name : bundle.input_kernels) {
    Tensor* kernel = find_entry(name);
    if (kernel == nullptr) throw surgery_error("adapt_channels: missing input kernel " + name);
    if (kernel->rank() != 3 || kernel->dim(1) != 1) {
      throw surgery_error("adapt_channels: " + name + " is not a single-channel kernel");
    }
    const std::size_t c_out = kernel->dim(0), k = kernel->dim(2);
    std::vector<real> replicated(c_out * 3 * k);
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < k; ++i) replicated[(o * 3 + c) * k + i] = kernel->values()[o * k + i];
    const Tensor original = *kernel;
    *kernel = Tensor::from({c_out, 3, k}, std::move(replicated));

    // weight-norm pairs: keep g * v/||v|| equal to the replicated original
    if (name.size() > 10 && name.compare(name.size() - 10, 10, ".direction") == 0) {
      Tensor* gain = find_entry(name.substr(0, name.size() - 10) + ".gain");
      if (gain == nullptr) throw surgery_error("adapt_channels: missing gain for " + name);
      for (std::size_t o = 0; o < c_out; ++o) {
        real old_sq = 0.0, new_sq = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
          const real v = original.values()[o * k + i];
          old_sq += v * v;
        }
        for (std::size_t c = 0; c < 3; ++c)
          for (std::size_t i = 0; i < k; ++i) {
            const real v = kernel->values()[(o * 3 + c) * k + i];
            new_sq += v * v;
          }
        if (old_sq <= kWeightNormEps * kWeightNormEps) {
          throw numeric_error("adapt_channels: zero-norm direction in " + name);
        }
        gain->values()[o] *= std::sqrt(new_sq) / std::sqrt(old_sq);
      }
    }
  }
  out.source_channels = 3;
  return out;
}

// Channel count the target model must be built with to accept this bundle.
inline std::size_t bundle_model_channels(const WeightBundle& bundle) { return bundle.source_channels; }

// ---------------------------------------------------------------------------
// Implant: overwrite the target's transferable prefix from the bundle. Head
// parameters keep their fresh random initialization.
// ---------------------------------------------------------------------------

inline Model& implant(const WeightBundle& bundle, Model& target) {
  if (bundle.family != target.spec().family) {
    throw surgery_error("implant: bundle family " + family_name(bundle.family) + " != target family " +
                        family_name(target.spec().family));
  }
  if (bundle.source_channels != target.spec().input_channels) {
    throw surgery_error("implant: bundle channels " + std::to_string(bundle.source_channels) +
                        " != target channels " + std::to_string(target.spec().input_channels));
  }
  auto& params = target.transferable_parameters();
  if (params.size() != bundle.entries.size()) {
    throw surgery_error("implant: bundle has " + std::to_string(bundle.entries.size()) + " entries, target has " +
                        std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, tensor] = bundle.entries[i];
    if (params[i]->name != name) {
      throw surgery_error("implant: entry " + name + " does not match target parameter " + params[i]->name);
    }
    if (params[i]->value.shape() != tensor.shape()) {
      throw surgery_error("implant: shape mismatch at entry " + name);
    }
    params[i]->value.values() = tensor.values();
  }
  auto& buffers = target.transfer_buffers();
  if (buffers.size() != bundle.norm_state.size()) {
    throw surgery_error("implant: normalization state count mismatch");
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    const auto& [name, values] = bundle.norm_state[i];
    if (buffers[i].first != name || buffers[i].second->size() != values.size()) {
      throw surgery_error("implant: normalization state mismatch at " + name);
    }
    *buffers[i].second = values;
  }
  target.set_input_replication(bundle.input_replication);
  return target;
}

// ---------------------------------------------------------------------------
// Layer-wise learning rates: every transferable parameter trains at
// omega * base rate, head parameters at the base rate.
// ---------------------------------------------------------------------------

inline Model& assign_multipliers(Model& model, real omega) {
  if (omega <= 0.0) throw param_error("assign_multipliers: omega must be > 0");
  for (Parameter* p : model.transferable_parameters()) p->lr_multiplier = omega;
  for (Parameter* p : model.head_parameters()) p->lr_multiplier = 1.0;
  return model;
}

inline std::vector<real> default_omega_grid() {
  return {0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0};
}

// ---------------------------------------------------------------------------
// Bundle files reuse the canonical little-endian container layout with a
// distinct magic. Payload values are 32-bit floats.
// ---------------------------------------------------------------------------

constexpr char kBundleMagic[8] = {'T', 'S', 'L', 'B', 'W', 'B', 'D', 'L'};
constexpr std::uint32_t kBundleVersion = 1;

inline void save_bundle(const WeightBundle& bundle, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes;
  bytes.insert(bytes.end(), kBundleMagic, kBundleMagic + 8);
  le::put_u32(bytes, kBundleVersion);
  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.family));
  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.source_channels));
  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.input_replication));
  le::put_u64(bytes, bundle.provenance_seed);

  auto put_string = [&bytes](const std::string& s) {
    le::put_u32(bytes, static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  };
  put_string(bundle.provenance_dataset);
  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.input_kernels.size()));
  for (const auto& name : bundle.input_kernels) put_string(name);

  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.entries.size()));
  for (const auto& [name, tensor] : bundle.entries) {
    put_string(name);
    le::put_u32(bytes, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t d : tensor.shape()) le::put_u32(bytes, static_cast<std::uint32_t>(d));
    for (real v : tensor.values()) le::put_f32(bytes, static_cast<float>(v));
  }
  le::put_u32(bytes, static_cast<std::uint32_t>(bundle.norm_state.size()));
  for (const auto& [name, values] : bundle.norm_state) {
    put_string(name);
    le::put_u32(bytes, static_cast<std::uint32_t>(values.size()));
    for (real v : values) le::put_f32(bytes, static_cast<float>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw format_error("save_bundle: cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw format_error("save_bundle: write failed for " + path.string());
}

inline WeightBundle load_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw format_error("load_bundle: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t off = 0;
  auto need = [&](std::size_t n) {
    if (off + n > bytes.size()) {
      throw format_error("load_bundle " + path.string() + ": truncated at byte offset " + std::to_string(off));
    }
  };
  need(8);
  if (!std::equal(kBundleMagic, kBundleMagic + 8, bytes.data())) {
    throw format_error("load_bundle " + path.string() + ": bad magic");
  }
  off = 8;
  auto read_u32 = [&]() {
    need(4);
    const std::uint32_t v = le::get_u32(bytes.data() + off);
    off += 4;
    return v;
  };
  auto read_u64 = [&]() {
    need(8);
    const std::uint64_t v = le::get_u64(bytes.data() + off);
    off += 8;
    return v;
  };
  auto read_string = [&]() {
    const std::uint32_t len = read_u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes.data() + off), len);
    off += len;
    return s;
  };

  const std::uint32_t version = read_u32();
  if (version != kBundleVersion) {
    throw format_error("load_bundle " + path.string() + ": unsupported version " + std::to_string(version));
  }
  WeightBundle bundle;
  bundle.family = static_cast<Family>(read_u32());
  bundle.source_channels = read_u32();
  bundle.input_replication = read_u32();
  bundle.provenance_seed = read_u64();
  bundle.provenance_dataset = read_string();
  const std::uint32_t n_kernels = read_u32();
  for (std::uint32_t i = 0; i < n_kernels; ++i) bundle.input_kernels.push_back(read_string());

  const std::uint32_t n_entries = read_u32();
  for (std::uint32_t i = 0; i < n_entries; ++i) {
    std::string name = read_string();
    const std::uint32_t rank = read_u32();
    std::vector<std::size_t> shape(rank);
    std::size_t count = 1;
    for (auto& d : shape) {
      d = read_u32();
      count *= d;
    }
    std::vector<real> values(count);
    for (auto& v : values) {
      need(4);
      const float f = le::get_f32(bytes.data() + off);
      if (!std::isfinite(f)) {
        throw format_error("load_bundle " + path.string() + ": non-finite value at byte offset " +
                           std::to_string(off));
      }
      v = static_cast<real>(f);
      off += 4;
    }
    bundle.entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  const std::uint32_t n_state = read_u32();
  for (std::uint32_t i = 0; i < n_state; ++i) {
    std::string name = read_string();
    const std::uint32_t count = read_u32();
    std::vector<real> values(count);
    for (auto& v : values) {
      need(4);
      v = static_cast<real>(le::get_f32(bytes.data() + off));
      off += 4;
    }
    bundle.norm_state.emplace_back(std::move(name), std::move(values));
  }
  if (off != bytes.size()) {
    throw format_error("load_bundle " + path.string() + ": " + std::to_string(bytes.size() - off) +
                       " trailing bytes");
  }
  return bundle;
}

}  // namespace tslab
