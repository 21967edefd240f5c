#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "zeropur/attacks.hpp"
#include "zeropur/classifier.hpp"
#include "zeropur/image_ops.hpp"

namespace zp {

struct GuidedShiftConfig {
  std::size_t iterations = 32;
  double step = 1.0 / 255.0;
  double eps = 8.0 / 255.0;
  BlurOp blur = BlurOp::gaussian(1.2);
  /// Random start u ~ U[-rho*eps, rho*eps] per pixel.
  double random_start = 0.125;
  std::uint64_t seed = 0;
  /// Differentiate through the blur branch too (Gaussian only). Off: the
  /// blurred embedding is a constant target recomputed every iteration.
  bool differentiate_blur = false;
  Norm norm = Norm::linf;

  void validate() const;
};

struct AdaptiveProjectionConfig {
  std::size_t iterations = 32;
  double eps = 8.0 / 255.0;
  std::vector<std::string> taps = {"stage1", "stage2", "stage3", "prepool"};
  double lambda1 = 1.0;
  /// The projection term is a raw inner product of feature maps (gradient
  /// norms ~1e4-1e5 on the toy model) while the perceptual distance has unit
  /// scale, hence the large weight.
  double lambda2 = 1.0e4;
  /// Taps of the perceptual distance; empty means the same as `taps`.
  std::vector<std::string> lpips_taps;
  Norm norm = Norm::linf;

  void validate() const;
  const std::vector<std::string>& perceptual_taps() const { return lpips_taps.empty() ? taps : lpips_taps; }
};

struct GsTraceRow {
  std::size_t t = 0;
  double cos_g_nat = 0.0;     ///< cos(f(x_g^t), f(x)); NaN without a natural reference
  double cos_blur_nat = 0.0;  ///< cos(f(blur(x_g^t)), f(x)); NaN without a natural reference
  double cos_g_blur = 0.0;    ///< cos(f(x_g^t), f(blur(x_g^t)))
};

/// One sample's trace: iterations + 1 rows, t = 0..T_g.
using GsTrace = std::vector<GsTraceRow>;

struct GuidedShiftResult {
  Tensor x_g;
  std::vector<GsTrace> traces;  ///< one per sample
};

/// Guided Shift on a batch. `natural`, when given, fills the *_nat trace columns.
/// Sample i draws its random start from stream (cfg.seed, i).
GuidedShiftResult guided_shift(const Classifier& model, const Tensor& x_adv, const GuidedShiftConfig& cfg,
                               const Tensor* natural = nullptr);

/// Per-sample mean over a batch of traces.
GsTrace mean_trace(std::span<const GsTrace> traces);
void write_trace_csv(const std::filesystem::path& path, const GsTrace& trace);

/// Perceptual feature stack: per tap, channel-normalised activations scaled by
/// 1/sqrt(h*w), flattened and concatenated -> [N, D].
Var perceptual_features(const ForwardResult& forward, std::span<const std::string> taps);
/// Per-sample |phi(a) - phi(b)|, [N].
Tensor lpips_distance(const Classifier& model, const Tensor& a, const Tensor& b, std::span<const std::string> taps);

struct AdaptiveProjectionResult {
  Tensor x_p;
  /// projection[t][i] = sum_l du_g^l . du_p^l for sample i after t iterations, t = 0..T_p.
  std::vector<std::vector<double>> projection;
};

AdaptiveProjectionResult adaptive_projection(const Classifier& model, const Tensor& x_init, const Tensor& x_g,
                                             const AdaptiveProjectionConfig& cfg, bool record_projection = false);

struct Dynamics {
  std::vector<double> f1;  ///< per-sample |lambda1 * grad of the projection term|
  std::vector<double> f2;  ///< per-sample |lambda2 * grad of the perceptual term|
};

Dynamics measure_dynamics(const Classifier& model, const Tensor& x_init, const Tensor& x_g, const Tensor& x_p,
                          const AdaptiveProjectionConfig& cfg);

Tensor zeropur(const Classifier& model, const Tensor& x_init, const GuidedShiftConfig& gs,
               const AdaptiveProjectionConfig& ap);

enum class DefenseMode { none, gs_only, zeropur };
DefenseMode parse_defense_mode(const std::string& name);
const char* defense_mode_name(DefenseMode mode);

/// Applies the defense; the GS seed is replaced by `seed`.
Tensor defend(const Classifier& model, const Tensor& x, DefenseMode mode, GuidedShiftConfig gs,
              const AdaptiveProjectionConfig& ap, std::uint64_t seed);

/// Purifier callback for BPDA built from a defense configuration.
Purifier make_purifier(const Classifier& model, DefenseMode mode, const GuidedShiftConfig& gs,
                       const AdaptiveProjectionConfig& ap);

}  // namespace zp
