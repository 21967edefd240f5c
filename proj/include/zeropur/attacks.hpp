#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "zeropur/classifier.hpp"

namespace zp {

enum class AttackKind { fgsm, pgd, di2_fgsm, bpda_pgd };
enum class Norm { linf, l2 };

AttackKind parse_attack_kind(const std::string& name);
const char* attack_kind_name(AttackKind kind);
Norm parse_norm(const std::string& name);
const char* norm_name(Norm norm);

struct AttackConfig {
  AttackKind kind = AttackKind::pgd;
  double eps = 8.0 / 255.0;
  std::size_t steps = 10;
  double step_size = 2.0 / 255.0;
  bool random_start = true;
  Norm norm = Norm::linf;
  std::uint64_t seed = 0;
  /// DI2-FGSM: per-sample, per-step probability of the resize-and-pad transform.
  double di_prob = 0.5;
  /// DI2-FGSM: the resized side is drawn from [di_min_scale * h, h].
  double di_min_scale = 0.9;
  /// BPDA: purifier draws averaged per gradient evaluation.
  std::size_t bpda_samples = 1;

  void validate() const;
};

/// Batch purifier used by BPDA. `seed` varies per attack iteration and draw.
using Purifier = std::function<Tensor(const Tensor& x, std::uint64_t seed)>;

/// Gradient of the per-sample cross-entropy w.r.t. the input batch.
Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels);

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
Tensor di2_fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg);
Tensor bpda_pgd(const Classifier& model, const Purifier& purifier, const Tensor& x, std::span<const int> labels,
                const AttackConfig& cfg);

/// Dispatches on cfg.kind; `purifier` is required for BPDA only.
Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                  const Purifier* purifier = nullptr);

/// Iterates the attack for max(checkpoints) steps (cfg.steps is ignored) and
/// returns the iterate after each requested step count. Because every random
/// draw is keyed by (seed, sample, step), the snapshot at k steps equals a run
/// with cfg.steps = k.
std::vector<Tensor> attack_checkpoints(const Classifier& model, const Tensor& x, std::span<const int> labels,
                                       const AttackConfig& cfg, std::span<const std::size_t> checkpoints,
                                       const Purifier* purifier = nullptr);

}  // namespace zp
