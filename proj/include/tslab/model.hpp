#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tslab/ops.hpp"
#include "tslab/param.hpp"

namespace tslab {

enum class Family { convnetquake_ingv, magnet, mlstm_fcn, tcn };
enum class CnqVariant { base, speech, emg, sp500 };
enum class HeadKind { regression, classification };

inline std::string family_name(Family f) {
  switch (f) {
    case Family::convnetquake_ingv: return "convnetquake_ingv";
    case Family::magnet: return "magnet";
    case Family::mlstm_fcn: return "mlstm_fcn";
    case Family::tcn: return "tcn";
  }
  return "?";
}

inline Family family_from_name(const std::string& s) {
  if (s == "convnetquake_ingv") return Family::convnetquake_ingv;
  if (s == "magnet") return Family::magnet;
  if (s == "mlstm_fcn") return Family::mlstm_fcn;
  if (s == "tcn") return Family::tcn;
  throw param_error("unknown architecture family: " + s);
}

inline std::string cnq_variant_name(CnqVariant v) {
  switch (v) {
    case CnqVariant::base: return "base";
    case CnqVariant::speech: return "speech";
    case CnqVariant::emg: return "emg";
    case CnqVariant::sp500: return "sp500";
  }
  return "?";
}

inline CnqVariant cnq_variant_from_name(const std::string& s) {
  if (s == "base") return CnqVariant::base;
  if (s == "speech") return CnqVariant::speech;
  if (s == "emg") return CnqVariant::emg;
  if (s == "sp500") return CnqVariant::sp500;
  throw param_error("unknown convnetquake_ingv variant: " + s);
}

// Hyperparameters of the temporal convolutional network, taken from the
// "adding problem" configuration of the original work: kernel 8, 24 filters,
// dilations doubling up to 8 (four levels), dropout 0.
struct TcnParams {
  std::size_t kernel = 8;
  std::size_t filters = 24;
  std::size_t levels = 4;
  real dropout = 0.0;
};

struct ArchitectureSpec {
  Family family = Family::convnetquake_ingv;
  std::size_t input_channels = 1;
  std::size_t input_length = 64;
  HeadKind head = HeadKind::regression;
  std::size_t num_classes = 0;
  bool stream_max_enabled = false;
  CnqVariant variant = CnqVariant::base;
  real scale = 1.0;  // width multiplier for filter counts and recurrent units
  TcnParams tcn;
  std::uint64_t seed = 0;
  bool nonstandard_channels = false;  // set by validate() when C is not 1 or 3

  void validate() {
    if (input_channels < 1 || input_length < 1) throw param_error("spec: empty input dimensions");
    nonstandard_channels = input_channels != 1 && input_channels != 3;
    if (head == HeadKind::classification && num_classes < 2) {
      throw param_error("spec: classification head requires num_classes >= 2");
    }
    if (variant != CnqVariant::base && family != Family::convnetquake_ingv) {
      throw param_error("spec: variants exist only for convnetquake_ingv");
    }
    if (scale <= 0.0) throw param_error("spec: scale must be > 0");
    if (family == Family::tcn && (tcn.kernel < 1 || tcn.filters < 1 || tcn.levels < 1)) {
      throw param_error("spec: invalid tcn hyperparameters");
    }
  }

  std::size_t head_width() const { return head == HeadKind::classification ? num_classes : 1; }

  std::size_t scaled(std::size_t n) const {
    const auto s = static_cast<std::size_t>(static_cast<real>(n) * scale);
    return std::max<std::size_t>(1, s);
  }
};

// ---------------------------------------------------------------------------
// Weight initializers. The convolution initializers follow the per-variant
// choices reported for ConvNetQuake_INGV; the remaining layers keep the
// defaults of the framework the original works were built with
// (glorot_uniform), with the LSTM forget-gate bias at 1.0.
// ---------------------------------------------------------------------------

enum class Init { glorot_uniform, glorot_normal, he_normal, he_uniform, zeros };

inline Tensor init_tensor(std::vector<std::size_t> shape, Init kind, std::size_t fan_in, std::size_t fan_out,
                          RngStream& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<real> values(n, 0.0);
  switch (kind) {
    case Init::glorot_uniform: {
      const real limit = std::sqrt(6.0 / static_cast<real>(fan_in + fan_out));
      for (real& v : values) v = rng.uniform(-limit, limit);
      break;
    }
    case Init::glorot_normal: {
      const real stddev = std::sqrt(2.0 / static_cast<real>(fan_in + fan_out));
      for (real& v : values) v = rng.normal(0.0, stddev);
      break;
    }
    case Init::he_normal: {
      const real stddev = std::sqrt(2.0 / static_cast<real>(fan_in));
      for (real& v : values) v = rng.normal(0.0, stddev);
      break;
    }
    case Init::he_uniform: {
      const real limit = std::sqrt(6.0 / static_cast<real>(fan_in));
      for (real& v : values) v = rng.uniform(-limit, limit);
      break;
    }
    case Init::zeros:
      break;
  }
  return Tensor::from(std::move(shape), std::move(values));
}

// ---------------------------------------------------------------------------
// Layer building blocks owning their parameters.
// ---------------------------------------------------------------------------

struct ConvLayer {
  Parameter kernel, bias;
  std::size_t stride = 1, dilation = 1;
  PadMode pad = PadMode::same;

  ConvLayer() = default;
  ConvLayer(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k, std::size_t stride,
            PadMode pad, Init init, RngStream& rng)
      : kernel(name + ".kernel", init_tensor({c_out, c_in, k}, init, c_in * k, c_out * k, rng)),
        bias(name + ".bias", Tensor::zeros({c_out})),
        stride(stride),
        pad(pad) {}

  Tensor apply(const Tensor& x) const { return conv1d(x, kernel.value, bias.value, stride, dilation, pad); }
};

struct DenseLayer {
  Parameter weight, bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out, Init init, RngStream& rng)
      : weight(name + ".weight", init_tensor({out, in}, init, in, out, rng)),
        bias(name + ".bias", Tensor::zeros({out})) {}

  Tensor apply(const Tensor& x) const { return dense(x, weight.value, bias.value); }
};

struct BatchNormLayer {
  Parameter gamma, beta;
  std::vector<real> running_mean, running_var;
  real momentum = 0.1;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", Tensor::from({channels}, std::vector<real>(channels, 1.0))),
        beta(name + ".beta", Tensor::zeros({channels})),
        running_mean(channels, 0.0),
        running_var(channels, 1.0) {}

  Tensor apply(const Tensor& x, Mode mode) {
    return batch_norm(x, gamma.value, beta.value, running_mean, running_var, mode, momentum);
  }
};

struct SqueezeExciteLayer {
  DenseLayer reduce, expand;

  SqueezeExciteLayer() = default;
  SqueezeExciteLayer(const std::string& name, std::size_t channels, std::size_t reduction, RngStream& rng)
      : reduce(name + ".reduce", channels, std::max<std::size_t>(1, channels / reduction), Init::he_normal, rng),
        expand(name + ".expand", std::max<std::size_t>(1, channels / reduction), channels, Init::he_normal, rng) {}

  Tensor apply(const Tensor& x) const {
    Tensor squeezed = global_avg_pool(x);
    Tensor excited = sigmoid(expand.apply(relu(reduce.apply(squeezed))));
    return scale_channels(x, excited);
  }
};

struct LstmLayer {
  Parameter w_ih, w_hh, bias;
  std::size_t units = 0;

  LstmLayer() = default;
  LstmLayer(const std::string& name, std::size_t input_dim, std::size_t units, RngStream& rng)
      : w_ih(name + ".w_ih", init_tensor({4 * units, input_dim}, Init::glorot_uniform, input_dim, units, rng)),
        w_hh(name + ".w_hh", init_tensor({4 * units, units}, Init::glorot_uniform, units, units, rng)),
        bias(name + ".bias", Tensor::zeros({4 * units})),
        units(units) {
    // forget-gate bias at 1.0 (gate order i, f, g, o)
    for (std::size_t i = units; i < 2 * units; ++i) bias.value.values()[i] = 1.0;
  }

  LstmWeights weights() const { return LstmWeights{w_ih.value, w_hh.value, bias.value, units}; }
};

struct WeightNormConvLayer {
  Parameter gain, direction, bias;
  std::size_t dilation = 1;

  WeightNormConvLayer() = default;
  WeightNormConvLayer(const std::string& name, std::size_t c_in, std::size_t c_out, std::size_t k,
                      std::size_t dilation, RngStream& rng)
      : gain(name + ".gain", Tensor::zeros({c_out})),
        direction(name + ".direction", init_tensor({c_out, c_in, k}, Init::he_normal, c_in * k, c_out * k, rng)),
        bias(name + ".bias", Tensor::zeros({c_out})),
        dilation(dilation) {
    // g = ||v|| per filter so the effective kernel equals the raw init
    const std::size_t per = c_in * k;
    for (std::size_t o = 0; o < c_out; ++o) {
      real acc = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        const real v = direction.value.values()[o * per + i];
        acc += v * v;
      }
      gain.value.values()[o] = std::sqrt(acc);
    }
  }

  Tensor apply(const Tensor& x) const {
    Tensor kernel = weight_norm_kernel(gain.value, direction.value);
    return conv1d(x, kernel, bias.value, 1, dilation, PadMode::causal);
  }
};

// ---------------------------------------------------------------------------
// Model base. Parameters are registered in layer order and partitioned into
// the transferable prefix (conv blocks including their in-block normalization
// parameters) and the head set (everything trained from scratch after
// transfer). Named buffers carry batch-norm running statistics, which travel
// with weight bundles and with best-epoch snapshots.
// ---------------------------------------------------------------------------

class Model {
 public:
  explicit Model(ArchitectureSpec spec) : spec_(std::move(spec)) {}
  virtual ~Model() = default;

  const ArchitectureSpec& spec() const { return spec_; }

  // When > 1, a single-channel input is tiled to this many channels before
  // the first layer (set by transfer surgery for 3-to-1 channel adaptation).
  std::size_t input_replication() const { return input_replication_; }
  void set_input_replication(std::size_t r) { input_replication_ = r; }

  Tensor forward(const Tensor& x, std::optional<real> stream_max, Mode mode, RngStream& rng) {
    if (spec_.stream_max_enabled && !stream_max.has_value()) {
      throw contract_error(family_name(spec_.family) + ": stream_max input required but missing");
    }
    if (!spec_.stream_max_enabled && stream_max.has_value()) {
      throw contract_error(family_name(spec_.family) + ": stream_max input supplied but not enabled");
    }
    Tensor input = x;
    if (input_replication_ > 1 && x.rank() == 2 && x.dim(0) == 1) {
      input = tile_rows(x, input_replication_);
    }
    if (input.rank() != 2 || input.dim(0) != spec_.input_channels) {
      throw dim_error(family_name(spec_.family) + ": expected " + std::to_string(spec_.input_channels) +
                      " input channels");
    }
    if (input.dim(1) != spec_.input_length) {
      throw dim_error(family_name(spec_.family) + ": expected input length " +
                      std::to_string(spec_.input_length) + ", got " + std::to_string(input.dim(1)));
    }
    std::optional<Tensor> stream;
    if (stream_max.has_value()) stream = Tensor::scalar(*stream_max);
    Tensor out = run(input, stream, mode, rng);
    if (spec_.head == HeadKind::classification) out = softmax(out);
    return out;
  }

  // Sum over regularized conv kernels of coefficient * ||w||^2; zero for
  // families whose original works specify no L2 term.
  virtual Tensor l2_penalty() const { return Tensor::scalar(0.0); }

  const std::vector<Parameter*>& parameters() { return all_; }
  const std::vector<Parameter*>& transferable_parameters() { return transferable_; }
  const std::vector<Parameter*>& head_parameters() { return head_; }
  const std::vector<std::pair<std::string, std::vector<real>*>>& transfer_buffers() { return buffers_; }

  // Names of the first-layer kernels whose input-channel axis must be
  // adapted when transferring across channel counts.
  const std::vector<std::string>& input_kernel_names() const { return input_kernels_; }

  void zero_grad() {
    for (Parameter* p : all_) p->value.zero_grad();
  }

  // Full mutable state (parameters + buffers) for best-epoch snapshots.
  std::vector<std::vector<real>> save_state() const {
    std::vector<std::vector<real>> state;
    state.reserve(all_.size() + buffers_.size());
    for (const Parameter* p : all_) state.push_back(p->value.values());
    for (const auto& [name, buf] : buffers_) state.push_back(*buf);
    return state;
  }

  void load_state(const std::vector<std::vector<real>>& state) {
    if (state.size() != all_.size() + buffers_.size()) throw state_error("load_state: entry count mismatch");
    std::size_t i = 0;
    for (Parameter* p : all_) {
      if (state[i].size() != p->value.size()) throw state_error("load_state: size mismatch at " + p->name);
      p->value.values() = state[i++];
    }
    for (auto& [name, buf] : buffers_) {
      if (state[i].size() != buf->size()) throw state_error("load_state: size mismatch at " + name);
      *buf = state[i++];
    }
  }

 protected:
  virtual Tensor run(const Tensor& x, const std::optional<Tensor>& stream, Mode mode, RngStream& rng) = 0;

  void register_parameter(Parameter* p, bool transferable) {
    all_.push_back(p);
    (transferable ? transferable_ : head_).push_back(p);
  }
  void register_input_kernel(const std::string& name) { input_kernels_.push_back(name); }
  void register_conv(ConvLayer& layer, bool transferable) {
    register_parameter(&layer.kernel, transferable);
    register_parameter(&layer.bias, transferable);
  }
  void register_dense(DenseLayer& layer, bool transferable) {
    register_parameter(&layer.weight, transferable);
    register_parameter(&layer.bias, transferable);
  }
  void register_batch_norm(BatchNormLayer& layer, bool transferable) {
    register_parameter(&layer.gamma, transferable);
    register_parameter(&layer.beta, transferable);
    if (transferable) {
      buffers_.emplace_back(layer.gamma.name.substr(0, layer.gamma.name.size() - 6) + ".running_mean",
                            &layer.running_mean);
      buffers_.emplace_back(layer.gamma.name.substr(0, layer.gamma.name.size() - 6) + ".running_var",
                            &layer.running_var);
    }
  }
  void register_lstm(LstmLayer& layer, bool transferable) {
    register_parameter(&layer.w_ih, transferable);
    register_parameter(&layer.w_hh, transferable);
    register_parameter(&layer.bias, transferable);
  }
  void register_se(SqueezeExciteLayer& layer, bool transferable) {
    register_dense(layer.reduce, transferable);
    register_dense(layer.expand, transferable);
  }
  void register_wnconv(WeightNormConvLayer& layer, bool transferable) {
    register_parameter(&layer.gain, transferable);
    register_parameter(&layer.direction, transferable);
    register_parameter(&layer.bias, transferable);
  }

  static Tensor with_stream(const Tensor& features, const std::optional<Tensor>& stream) {
    return stream.has_value() ? concat(features, *stream) : features;
  }

 private:
  ArchitectureSpec spec_;
  std::vector<Parameter*> all_, transferable_, head_;
  std::vector<std::pair<std::string, std::vector<real>*>> buffers_;
  std::vector<std::string> input_kernels_;
  std::size_t input_replication_ = 1;
};

// ---------------------------------------------------------------------------
// ConvNetQuake_INGV: nine stride-2 same-padded conv layers (ReLU), flattened
// into two fully connected layers; stream_max joins the flattened features.
// Variants change the conv initializer and L2 coefficient: base 0.001 /
// glorot_uniform, speech 0.001 / he_normal, emg 0 / glorot_normal,
// sp500 0.7 / he_normal.
// ---------------------------------------------------------------------------

class ConvNetQuakeIngv final : public Model {
 public:
  static constexpr std::size_t kConvLayers = 9;
  static constexpr std::size_t kFilters = 32;
  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kFcWidth = 128;

  ConvNetQuakeIngv(ArchitectureSpec spec, RngStream& rng) : Model(std::move(spec)) {
    const auto& s = this->spec();
    switch (s.variant) {
      case CnqVariant::base: conv_init_ = Init::glorot_uniform; l2_coeff_ = 0.001; break;
      case CnqVariant::speech: conv_init_ = Init::he_normal; l2_coeff_ = 0.001; break;
      case CnqVariant::emg: conv_init_ = Init::glorot_normal; l2_coeff_ = 0.0; break;
      case CnqVariant::sp500: conv_init_ = Init::he_normal; l2_coeff_ = 0.7; break;
    }
    const std::size_t filters = s.scaled(kFilters);
    convs_.reserve(kConvLayers);
    std::size_t c = s.input_channels;
    std::size_t n = s.input_length;
    for (std::size_t i = 0; i < kConvLayers; ++i) {
      convs_.emplace_back("conv." + std::to_string(i), c, filters, kKernel, 2, PadMode::same, conv_init_, rng);
      c = filters;
      n = (n + 1) / 2;
    }
    const std::size_t flat = filters * n + (s.stream_max_enabled ? 1 : 0);
    fc1_ = DenseLayer("head.fc1", flat, kFcWidth, Init::glorot_uniform, rng);
    out_ = DenseLayer("head.out", kFcWidth, s.head_width(), Init::glorot_uniform, rng);

    for (auto& conv : convs_) register_conv(conv, true);
    register_dense(fc1_, false);
    register_dense(out_, false);
    register_input_kernel("conv.0.kernel");
  }

  Tensor l2_penalty() const override {
    if (l2_coeff_ == 0.0) return Tensor::scalar(0.0);
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& conv : convs_) acc = add(acc, sum_squares(conv.kernel.value));
    return scale(acc, l2_coeff_);
  }

 protected:
  Tensor run(const Tensor& x, const std::optional<Tensor>& stream, Mode, RngStream&) override {
    Tensor h = x;
    for (const auto& conv : convs_) h = relu(conv.apply(h));
    Tensor flat = with_stream(reshape(h, {h.size()}), stream);
    return out_.apply(relu(fc1_.apply(flat)));
  }

 private:
  std::vector<ConvLayer> convs_;
  DenseLayer fc1_, out_;
  Init conv_init_ = Init::glorot_uniform;
  real l2_coeff_ = 0.0;
};

// ---------------------------------------------------------------------------
// MagNet: two activation-free conv layers (64 and 32 filters, kernel 3,
// following the original MagNet design), each followed by dropout 0.2 and max pooling 4, then a
// bidirectional LSTM with 100 units feeding a single dense output.
// ---------------------------------------------------------------------------

class MagNet final : public Model {
 public:
  static constexpr std::size_t kFilters1 = 64;
  static constexpr std::size_t kFilters2 = 32;
  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kLstmUnits = 100;
  static constexpr real kDropout = 0.2;
  static constexpr std::size_t kPool = 4;

  MagNet(ArchitectureSpec spec, RngStream& rng) : Model(std::move(spec)) {
    const auto& s = this->spec();
    if (s.input_length < kPool * kPool) {
      throw param_error("magnet: input length must be at least " + std::to_string(kPool * kPool));
    }
    const std::size_t f1 = s.scaled(kFilters1), f2 = s.scaled(kFilters2);
    const std::size_t units = s.scaled(kLstmUnits);
    conv1_ = ConvLayer("conv.0", s.input_channels, f1, kKernel, 1, PadMode::same, Init::glorot_uniform, rng);
    conv2_ = ConvLayer("conv.1", f1, f2, kKernel, 1, PadMode::same, Init::glorot_uniform, rng);
    lstm_fwd_ = LstmLayer("lstm.fwd", f2, units, rng);
    lstm_bwd_ = LstmLayer("lstm.bwd", f2, units, rng);
    out_ = DenseLayer("head.out", 2 * units + (s.stream_max_enabled ? 1 : 0), s.head_width(),
                      Init::glorot_uniform, rng);

    register_conv(conv1_, true);
    register_conv(conv2_, true);
    register_lstm(lstm_fwd_, false);
    register_lstm(lstm_bwd_, false);
    register_dense(out_, false);
    register_input_kernel("conv.0.kernel");
  }

 protected:
  Tensor run(const Tensor& x, const std::optional<Tensor>& stream, Mode mode, RngStream& rng) override {
    Tensor h = max_pool1d(dropout(conv1_.apply(x), kDropout, mode, rng), kPool);
    h = max_pool1d(dropout(conv2_.apply(h), kDropout, mode, rng), kPool);
    std::vector<Tensor> steps;
    steps.reserve(h.dim(1));
    for (std::size_t t = 0; t < h.dim(1); ++t) steps.push_back(col(h, t));
    const LstmWeights fwd = lstm_fwd_.weights();
    const LstmWeights bwd = lstm_bwd_.weights();
    Tensor features = lstm(steps, fwd, &bwd);
    return out_.apply(with_stream(features, stream));
  }

 private:
  ConvLayer conv1_, conv2_;
  LstmLayer lstm_fwd_, lstm_bwd_;
  DenseLayer out_;
};

// ---------------------------------------------------------------------------
// MLSTM-FCN: a fully convolutional branch (three conv blocks with batch norm
// and ReLU, squeeze-excite after the first two, global average pooling) in
// parallel with an LSTM branch that consumes the dimension-transposed input
// (one step per input channel, each step the full length-N series), followed
// by dropout 0.8. Branch outputs concatenate into the head. Block dimensions
// (128/256/128 filters, kernels 8/5/3, squeeze-excite reduction 16, 8 LSTM
// units) follow the original MLSTM-FCN design.
// ---------------------------------------------------------------------------

class MlstmFcn final : public Model {
 public:
  static constexpr std::size_t kFilters[3] = {128, 256, 128};
  static constexpr std::size_t kKernels[3] = {8, 5, 3};
  static constexpr std::size_t kSeReduction = 16;
  static constexpr std::size_t kLstmUnits = 8;
  static constexpr real kDropout = 0.8;

  MlstmFcn(ArchitectureSpec spec, RngStream& rng) : Model(std::move(spec)) {
    const auto& s = this->spec();
    std::size_t c = s.input_channels;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t f = s.scaled(kFilters[i]);
      convs_[i] = ConvLayer("fcn." + std::to_string(i) + ".conv", c, f, kKernels[i], 1, PadMode::same,
                            Init::he_uniform, rng);
      bns_[i] = BatchNormLayer("fcn." + std::to_string(i) + ".bn", f);
      c = f;
    }
    ses_[0] = SqueezeExciteLayer("fcn.0.se", s.scaled(kFilters[0]), kSeReduction, rng);
    ses_[1] = SqueezeExciteLayer("fcn.1.se", s.scaled(kFilters[1]), kSeReduction, rng);
    const std::size_t units = s.scaled(kLstmUnits);
    lstm_ = LstmLayer("lstm", s.input_length, units, rng);
    const std::size_t feat = s.scaled(kFilters[2]) + units + (s.stream_max_enabled ? 1 : 0);
    out_ = DenseLayer("head.out", feat, s.head_width(), Init::glorot_uniform, rng);

    // transferable prefix: conv kernels/biases with their batch-norm
    // parameters; squeeze-excite dense weights stay with the head set and are
    // re-initialized on transfer, like the other fully connected layers
    for (std::size_t i = 0; i < 3; ++i) {
      register_conv(convs_[i], true);
      register_batch_norm(bns_[i], true);
    }
    register_se(ses_[0], false);
    register_se(ses_[1], false);
    register_lstm(lstm_, false);
    register_dense(out_, false);
    register_input_kernel("fcn.0.conv.kernel");
  }

 protected:
  Tensor run(const Tensor& x, const std::optional<Tensor>& stream, Mode mode, RngStream& rng) override {
    // fully convolutional branch
    Tensor h = x;
    for (std::size_t i = 0; i < 3; ++i) {
      h = relu(bns_[i].apply(convs_[i].apply(h), mode));
      if (i < 2) h = ses_[i].apply(h);
    }
    Tensor fcn_features = global_avg_pool(h);

    // LSTM branch over the transposed input: one step per channel
    std::vector<Tensor> steps;
    steps.reserve(x.dim(0));
    for (std::size_t c = 0; c < x.dim(0); ++c) steps.push_back(row(x, c));
    Tensor lstm_features = dropout(lstm_pass(steps, lstm_.weights()), kDropout, mode, rng);

    return out_.apply(with_stream(concat(fcn_features, lstm_features), stream));
  }

 private:
  ConvLayer convs_[3];
  BatchNormLayer bns_[3];
  SqueezeExciteLayer ses_[2];
  LstmLayer lstm_;
  DenseLayer out_;
};

// ---------------------------------------------------------------------------
// TCN: residual blocks of (weight-normalized dilated causal conv, ReLU,
// dropout) twice, with an additive skip (1x1 projection when the widths
// differ) and a ReLU after the sum. Dilations double per level. The head
// reads the last time step.
// ---------------------------------------------------------------------------

class Tcn final : public Model {
 public:
  struct Block {
    WeightNormConvLayer conv1, conv2;
    std::optional<ConvLayer> downsample;
  };

  Tcn(ArchitectureSpec spec, RngStream& rng) : Model(std::move(spec)) {
    const auto& s = this->spec();
    const std::size_t f = s.scaled(s.tcn.filters);
    blocks_.reserve(s.tcn.levels);
    std::size_t c = s.input_channels;
    for (std::size_t i = 0; i < s.tcn.levels; ++i) {
      const std::size_t dilation = static_cast<std::size_t>(1) << i;
      Block block;
      const std::string prefix = "block." + std::to_string(i);
      block.conv1 = WeightNormConvLayer(prefix + ".conv1", c, f, s.tcn.kernel, dilation, rng);
      block.conv2 = WeightNormConvLayer(prefix + ".conv2", f, f, s.tcn.kernel, dilation, rng);
      if (c != f) {
        block.downsample =
            ConvLayer(prefix + ".downsample", c, f, 1, 1, PadMode::valid, Init::glorot_uniform, rng);
      }
      blocks_.push_back(std::move(block));
      c = f;
    }
    out_ = DenseLayer("head.out", f + (s.stream_max_enabled ? 1 : 0), s.head_width(), Init::glorot_uniform, rng);

    for (auto& block : blocks_) {
      register_wnconv(block.conv1, true);
      register_wnconv(block.conv2, true);
      if (block.downsample) register_conv(*block.downsample, true);
    }
    register_dense(out_, false);
    register_input_kernel("block.0.conv1.direction");
    if (blocks_[0].downsample) register_input_kernel("block.0.downsample.kernel");
  }

 protected:
  Tensor run(const Tensor& x, const std::optional<Tensor>& stream, Mode mode, RngStream& rng) override {
    const real rate = spec().tcn.dropout;
    Tensor h = x;
    for (const auto& block : blocks_) {
      Tensor branch = dropout(relu(block.conv1.apply(h)), rate, mode, rng);
      branch = dropout(relu(block.conv2.apply(branch)), rate, mode, rng);
      Tensor skip = block.downsample ? block.downsample->apply(h) : h;
      h = relu(add(branch, skip));
    }
    Tensor features = col(h, h.dim(1) - 1);
    return out_.apply(with_stream(features, stream));
  }

 private:
  std::vector<Block> blocks_;
  DenseLayer out_;
};

// ---------------------------------------------------------------------------

inline std::unique_ptr<Model> build(ArchitectureSpec spec, RngStream& rng) {
  spec.validate();
  switch (spec.family) {
    case Family::convnetquake_ingv: return std::make_unique<ConvNetQuakeIngv>(std::move(spec), rng);
    case Family::magnet: return std::make_unique<MagNet>(std::move(spec), rng);
    case Family::mlstm_fcn: return std::make_unique<MlstmFcn>(std::move(spec), rng);
    case Family::tcn: return std::make_unique<Tcn>(std::move(spec), rng);
  }
  throw param_error("build: unsupported family");
}

inline std::unique_ptr<Model> build(const ArchitectureSpec& spec) {
  RngStream rng(spec.seed);
  return build(spec, rng);
}

}  // namespace tslab
