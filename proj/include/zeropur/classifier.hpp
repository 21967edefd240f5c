#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "zeropur/tape.hpp"
#include "zeropur/tensor_io.hpp"

namespace zp {

struct ClassifierSpec {
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 4;
  std::array<std::size_t, 3> widths{16, 32, 64};
  std::array<std::size_t, 3> strides{1, 2, 2};
};

struct ForwardResult {
  Var logits;
  /// Global-average-pooled pre-pool feature, [N, widths[2]].
  Var embedding;
  std::map<std::string, Var> taps;
};

/// TinyResNet: three residual stages of two 3x3 convolutions each, per-channel
/// affine in place of batch norm, a head affine + relu ("prepool"), global
/// average pooling and a linear layer.
///
/// Taps, in forward order: stage1, stage2, stage3, prepool.
class Classifier {
 public:
  Classifier() = default;
  /// He-initialised weights drawn from `seed`.
  static Classifier tiny_resnet(const ClassifierSpec& spec, std::uint64_t seed, DType dtype = default_dtype());

  static const std::vector<std::string>& tap_universe();
  /// Throws ConfigError on a name outside tap_universe().
  static void check_taps(std::span<const std::string> taps);

  const ClassifierSpec& spec() const { return spec_; }
  std::size_t num_classes() const { return spec_.num_classes; }
  Shape input_shape() const { return {spec_.in_channels, spec_.height, spec_.width}; }
  DType dtype() const;
  Classifier to(DType dtype) const;

  const std::vector<std::string>& parameter_names() const { return names_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const Tensor& parameter(const std::string& name) const;
  /// Replaces all parameters; shapes must match the current ones.
  void set_parameters(std::vector<Tensor> params);
  std::size_t parameter_count() const;

  /// Records the forward pass with the weights as tape constants.
  ForwardResult forward(Tape& tape, Var x, std::span<const std::string> taps = {}) const;
  /// Same, with caller-supplied parameter handles (in parameter_names() order).
  ForwardResult forward(Tape& tape, Var x, std::span<const std::string> taps, std::span<const Var> params) const;

  /// Tape-free conveniences, evaluated in chunks.
  Tensor logits(const Tensor& x) const;
  std::vector<int> predict(const Tensor& x) const;
  Tensor embedding(const Tensor& x) const;
  /// Value of tap `name` (or "embedding" / "logits") for a batch.
  Tensor feature(const Tensor& x, const std::string& name) const;

  std::vector<NamedTensor> to_tensors() const;
  /// Rebuilds the architecture from tensor names and shapes.
  static Classifier from_tensors(const std::vector<NamedTensor>& tensors);

 private:
  void check_input(const Var& x) const;

  ClassifierSpec spec_;
  std::vector<std::string> names_;
  std::vector<Tensor> params_;
};

void save_weights(const Classifier& model, const std::filesystem::path& path);
Classifier load_weights(const std::filesystem::path& path);

double accuracy(const std::vector<int>& predictions, std::span<const int> labels);

struct TapDeviation {
  std::string tap;
  double deviation_norm = 0.0;  ///< |f_l(x+d) - f_l(x)|
  double linear_norm = 0.0;     ///< |J_l d|
  double remainder_norm = 0.0;  ///< |f_l(x+d) - f_l(x) - J_l d|
};

struct DeviationProfile {
  std::vector<TapDeviation> taps;  ///< tap_universe() order, then "logits"
  const TapDeviation& at(const std::string& tap) const;
};

/// Per-tap deviation e_l = f_l(x+delta) - f_l(x) with first-order predictions
/// from central differences along delta. Evaluated in f64.
DeviationProfile layer_deviation(const Classifier& model, const Tensor& x, const Tensor& delta);

struct RemainderFit {
  std::vector<double> scales;
  std::vector<double> remainders;
  double slope = 0.0;  ///< least-squares slope of log remainder vs log scale
};

/// Remainder |f(x+t d) - f(x) - t J d| at each scale t for tap `tap`.
RemainderFit remainder_scaling(const Classifier& model, const Tensor& x, const Tensor& direction,
                               const std::string& tap, std::span<const double> scales);

}  // namespace zp
