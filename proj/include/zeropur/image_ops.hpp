#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "zeropur/tape.hpp"
#include "zeropur/tensor.hpp"

// Smoothing operators used as purification guides, plus the l-inf / l2 ball
// and [0,1] range projections. Images are [..., H, W]; every filter works
// plane by plane with reflect padding (d c b | a b c d | c b a).
namespace zp {

enum class BlurKind { identity, gaussian, median, tvm };

struct BlurOp {
  BlurKind kind = BlurKind::gaussian;
  double sigma = 1.2;       ///< gaussian
  int window = 3;           ///< median, one of 3/5/7
  double tv_weight = 0.1;   ///< tvm
  int tv_iterations = 30;   ///< tvm

  static BlurOp identity() { return {BlurKind::identity}; }
  static BlurOp gaussian(double sigma) { return {BlurKind::gaussian, sigma}; }
  static BlurOp median(int window) { return {BlurKind::median, 1.2, window}; }
  static BlurOp tvm(double weight = 0.1, int iterations = 30) { return {BlurKind::tvm, 1.2, 3, weight, iterations}; }

  /// Throws ConfigError if the parameters violate the operator's domain.
  void validate() const;
  /// e.g. "gaussian(1.2)", "median(3)", "tvm(0.1,30)".
  std::string describe() const;
  /// Operator family name: identity / gaussian / median / tvm.
  std::string kind_name() const;
  /// The level column of sweep tables: sigma, window, or weight.
  double level() const;
};

BlurKind parse_blur_kind(const std::string& name);

/// Torch-style reflection of index `i` into [0, n).
std::size_t reflect_index(long i, std::size_t n);

/// Normalised 1-D Gaussian taps over [-r, r] with r = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur, output clamped to [0,1]. Throws ConfigError if sigma <= 0.
Tensor gaussian_blur(const Tensor& images, double sigma);
/// Differentiable Gaussian blur (the linear part; inputs in [0,1] never reach the clamp).
Var gaussian_blur(Var images, double sigma);

/// Per-plane k x k sliding median. Throws ConfigError for even or non-positive k.
Tensor median_filter(const Tensor& images, int window);

/// Total-variation minimisation, min_u 0.5|u - x|^2 + weight * TV(u), via a fixed
/// number of Chambolle dual-projection steps per plane; output clamped to [0,1].
Tensor tvm(const Tensor& images, double weight, int iterations);

/// Applies any BlurOp (no gradient).
Tensor apply_blur(const BlurOp& op, const Tensor& images);

/// Isotropic total variation with forward differences, summed over all planes.
double total_variation(const Tensor& images);

/// clamp(x, center - eps, center + eps) with the bounds rounded in the tensor's
/// precision, so the result always passes within_linf_ball. Throws ConfigError for eps < 0.
Tensor project_linf(const Tensor& x, const Tensor& center, double eps);
/// Per-sample (axis 0) projection of x - center onto the l2 ball of radius eps.
Tensor project_l2(const Tensor& x, const Tensor& center, double eps);
Tensor clip01(const Tensor& x);

/// x + step * sign(direction), with sign(0) = 0.
Tensor sign_step(const Tensor& x, const Tensor& direction, double step);
/// x + step * direction / |direction|_2 per sample (zero directions leave x unchanged).
Tensor normalized_step(const Tensor& x, const Tensor& direction, double step);

/// Largest |x - center| over all elements.
double linf_distance(const Tensor& x, const Tensor& center);
/// Exact budget check: center - eps <= x <= center + eps elementwise, evaluated
/// in the tensor's precision (the same arithmetic project_linf uses).
bool within_linf_ball(const Tensor& x, const Tensor& center, double eps);
bool within_unit_range(const Tensor& x);

}  // namespace zp
