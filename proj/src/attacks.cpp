#include "zeropur/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "zeropur/image_ops.hpp"
#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

namespace zp {

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "fgsm") return AttackKind::fgsm;
  if (name == "pgd") return AttackKind::pgd;
  if (name == "di2fgsm" || name == "di2_fgsm" || name == "di2-fgsm") return AttackKind::di2_fgsm;
  if (name == "bpda" || name == "bpda_pgd" || name == "bpda-pgd") return AttackKind::bpda_pgd;
  throw ConfigError("unknown attack kind '" + name + "' (expected fgsm, pgd, di2fgsm or bpda)");
}

const char* attack_kind_name(AttackKind kind) {
  switch (kind) {
    case AttackKind::fgsm:
      return "fgsm";
    case AttackKind::pgd:
      return "pgd";
    case AttackKind::di2_fgsm:
      return "di2fgsm";
    default:
      return "bpda";
  }
}

Norm parse_norm(const std::string& name) {
  if (name == "linf") return Norm::linf;
  if (name == "l2") return Norm::l2;
  throw ConfigError("unknown norm '" + name + "' (expected linf or l2)");
}

const char* norm_name(Norm norm) { return norm == Norm::linf ? "linf" : "l2"; }

void AttackConfig::validate() const {
  if (!(eps >= 0.0)) throw ConfigError("attack.eps must be >= 0");
  if (kind != AttackKind::fgsm && steps < 1) throw ConfigError("attack.steps must be >= 1 for iterative attacks");
  if (!(step_size > 0.0)) throw ConfigError("attack.step_size must be > 0");
  if (!(di_prob >= 0.0 && di_prob <= 1.0)) throw ConfigError("attack.di_prob must lie in [0,1]");
  if (!(di_min_scale > 0.0 && di_min_scale <= 1.0)) throw ConfigError("attack.di_min_scale must lie in (0,1]");
  if (bpda_samples < 1) throw ConfigError("attack.bpda_samples must be >= 1");
}

namespace {

constexpr std::size_t kChunk = 64;

void check_batch(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != labels.size()) {
    throw ShapeError("attack: " + std::to_string(labels.size()) + " labels for batch " + shape_str(x.shape()));
  }
  if (x.dtype() != model.dtype()) throw ShapeError("attack: input and model precision differ");
}

// dCE/dlogits per row up to a positive per-row factor, computed in double.
// The exact gradient is exp(lead - lse) * (r_j, -sum r_j) with r_j = exp(z_j - lead)
// over the wrong classes; on confident rows that prefactor underflows f32, and
// a sign or normalised step only needs the bracket.
Tensor ascent_weights(const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Tensor w = Tensor::zeros_like(logits);
  for (std::size_t i = 0; i < n; ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    double lead = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) {
      if (j != y) lead = std::max(lead, logits.at(i * c + j));
    }
    double rest = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      if (j != y) rest += std::exp(logits.at(i * c + j) - lead);
    }
    for (std::size_t j = 0; j < c; ++j) {
      w.set(i * c + j, j == y ? -1.0 : std::exp(logits.at(i * c + j) - lead) / rest);
    }
  }
  return w;
}

// Per-sample input gradient, optionally through a per-sample resize-and-pad.
// With `exact` false the gradient is rescaled per sample (see ascent_weights).
Tensor gradient(const Classifier& model, const Tensor& x, std::span<const int> labels,
                const std::vector<ops::ResizePad>* transform, bool exact = false) {
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < x.dim(0); b += kChunk) {
    const std::size_t e = std::min(b + kChunk, x.dim(0));
    Tape tape;
    const Var xv = tape.leaf(x.slice0(b, e), true);
    Var in = xv;
    if (transform) in = ops::resize_pad(xv, std::span(transform->data() + b, e - b));
    const auto out = model.forward(tape, in);
    const auto lab = labels.subspan(b, e - b);
    // Sum rather than mean so each sample's gradient does not depend on the chunk size.
    const Var loss = exact ? ops::scale(ops::cross_entropy(out.logits, lab), static_cast<double>(e - b))
                           : ops::dot(tape.constant(ascent_weights(out.logits.value(), lab)), out.logits);
    tape.backward(loss);
    parts.push_back(tape.grad(xv));
  }
  if (parts.empty()) return Tensor::zeros_like(x);
  return parts.size() == 1 ? parts.front() : concat0(parts);
}

Tensor project(const Tensor& v, const Tensor& center, const AttackConfig& cfg) {
  return clip01(cfg.norm == Norm::linf ? project_linf(v, center, cfg.eps) : project_l2(v, center, cfg.eps));
}

Tensor ascend(const Tensor& v, const Tensor& g, const AttackConfig& cfg, double step) {
  return cfg.norm == Norm::linf ? sign_step(v, g, step) : normalized_step(v, g, step);
}

Tensor random_start(const Tensor& x, const AttackConfig& cfg) {
  Tensor out = x.clone();
  const std::size_t n = x.dim(0), d = x.numel() / std::max<std::size_t>(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    if (cfg.norm == Norm::linf) {
      for (std::size_t j = 0; j < d; ++j) out.set(i * d + j, x.at(i * d + j) + rng.uniform(-cfg.eps, cfg.eps));
    } else {
      std::vector<double> dir(d);
      double ss = 0.0;
      for (double& v : dir) {
        v = rng.normal();
        ss += v * v;
      }
      const double r = cfg.eps * rng.uniform() / std::sqrt(ss);
      for (std::size_t j = 0; j < d; ++j) out.set(i * d + j, x.at(i * d + j) + r * dir[j]);
    }
  }
  return project(out, x, cfg);
}

std::vector<ops::ResizePad> draw_transforms(const Tensor& x, const AttackConfig& cfg, std::size_t step) {
  const std::size_t h = x.dim(2);
  const auto lo = static_cast<std::size_t>(std::ceil(cfg.di_min_scale * static_cast<double>(h)));
  std::vector<ops::ResizePad> out(x.dim(0), {h, 0, 0});
  for (std::size_t i = 0; i < out.size(); ++i) {
    Rng rng(derive_seed(cfg.seed, i, step + 1));
    if (!rng.bernoulli(cfg.di_prob)) continue;
    const std::size_t size = lo + rng.below(h - lo + 1);
    out[i] = {size, rng.below(h - size + 1), rng.below(h - size + 1)};
  }
  return out;
}

Tensor bpda_gradient(const Classifier& model, const Purifier& purifier, const Tensor& x, std::span<const int> labels,
                     const AttackConfig& cfg, std::size_t step) {
  Tensor acc;
  for (std::size_t s = 0; s < cfg.bpda_samples; ++s) {
    const Tensor xp = purifier(x, derive_seed(cfg.seed, 0xb9daULL, step * cfg.bpda_samples + s));
    require_same_shape(xp, x, "bpda purifier");
    const Tensor g = gradient(model, xp, labels, nullptr);
    if (s == 0) {
      acc = g;
      continue;
    }
    dispatch(g.dtype(), [&]<class T>(T) {
      auto a = acc.mutable_view<T>();
      const auto gv = g.view<T>();
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += gv[i];
    });
  }
  return acc;
}

std::vector<Tensor> iterate(const Classifier& model, const Tensor& x, std::span<const int> labels,
                            const AttackConfig& cfg, std::span<const std::size_t> checkpoints,
                            const Purifier* purifier) {
  const std::size_t total = checkpoints.empty() ? 0 : *std::max_element(checkpoints.begin(), checkpoints.end());
  std::vector<Tensor> snaps(checkpoints.size());
  Tensor xt = cfg.random_start ? random_start(x, cfg) : x;
  auto snapshot = [&](std::size_t done) {
    for (std::size_t k = 0; k < checkpoints.size(); ++k) {
      if (checkpoints[k] == done) snaps[k] = xt;
    }
  };
  snapshot(0);
  for (std::size_t t = 0; t < total; ++t) {
    Tensor g;
    switch (cfg.kind) {
      case AttackKind::bpda_pgd:
        if (!purifier) throw ConfigError("bpda attack requires a purifier");
        g = bpda_gradient(model, *purifier, xt, labels, cfg, t);
        break;
      case AttackKind::di2_fgsm: {
        const auto tr = draw_transforms(xt, cfg, t);
        g = gradient(model, xt, labels, &tr);
        break;
      }
      default:
        g = gradient(model, xt, labels, nullptr);
    }
    xt = project(ascend(xt, g, cfg, cfg.step_size), x, cfg);
    snapshot(t + 1);
  }
  return snaps;
}

}  // namespace

Tensor input_gradient(const Classifier& model, const Tensor& x, std::span<const int> labels) {
  check_batch(model, x, labels);
  return gradient(model, x, labels, nullptr, true);
}

Tensor fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  cfg.validate();
  check_batch(model, x, labels);
  if (cfg.eps == 0.0) return x;
  return project(ascend(x, gradient(model, x, labels, nullptr), cfg, cfg.eps), x, cfg);
}

std::vector<Tensor> attack_checkpoints(const Classifier& model, const Tensor& x, std::span<const int> labels,
                                       const AttackConfig& cfg, std::span<const std::size_t> checkpoints,
                                       const Purifier* purifier) {
  cfg.validate();
  check_batch(model, x, labels);
  if (cfg.kind == AttackKind::fgsm) throw ConfigError("attack_checkpoints: fgsm is single-step");
  return iterate(model, x, labels, cfg, checkpoints, purifier);
}

namespace {

Tensor run_iterative(const Classifier& model, const Tensor& x, std::span<const int> labels, AttackConfig cfg,
                     AttackKind kind, const Purifier* purifier) {
  cfg.kind = kind;
  const std::size_t steps[] = {cfg.steps};
  return attack_checkpoints(model, x, labels, cfg, steps, purifier).front();
}

}  // namespace

Tensor pgd(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  return run_iterative(model, x, labels, cfg, AttackKind::pgd, nullptr);
}

Tensor di2_fgsm(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  return run_iterative(model, x, labels, cfg, AttackKind::di2_fgsm, nullptr);
}

Tensor bpda_pgd(const Classifier& model, const Purifier& purifier, const Tensor& x, std::span<const int> labels,
                const AttackConfig& cfg) {
  return run_iterative(model, x, labels, cfg, AttackKind::bpda_pgd, &purifier);
}

Tensor run_attack(const Classifier& model, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg,
                  const Purifier* purifier) {
  switch (cfg.kind) {
    case AttackKind::fgsm:
      return fgsm(model, x, labels, cfg);
    case AttackKind::pgd:
      return pgd(model, x, labels, cfg);
    case AttackKind::di2_fgsm:
      return di2_fgsm(model, x, labels, cfg);
    default:
      if (!purifier) throw ConfigError("bpda attack requires a purifier");
      return bpda_pgd(model, *purifier, x, labels, cfg);
  }
}

}  // namespace zp
