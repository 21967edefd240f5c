#include "zeropur/purify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>

#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

namespace zp {

namespace {

constexpr std::size_t kChunk = 64;

template <class Fn>
Tensor chunked(const Tensor& x, Fn&& fn) {
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < x.dim(0); b += kChunk) parts.push_back(fn(b, std::min(b + kChunk, x.dim(0))));
  if (parts.empty()) return x;
  return parts.size() == 1 ? parts.front() : concat0(parts);
}

Tensor project_to(const Tensor& v, const Tensor& center, double eps, Norm norm) {
  return clip01(norm == Norm::linf ? project_linf(v, center, eps) : project_l2(v, center, eps));
}

Tensor step_along(const Tensor& v, const Tensor& g, double step, Norm norm) {
  return norm == Norm::linf ? sign_step(v, g, step) : normalized_step(v, g, step);
}

std::vector<double> row_cosines(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), d = a.dim(1);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = a.at(i * d + j), y = b.at(i * d + j);
      ab += x * y;
      aa += x * x;
      bb += y * y;
    }
    out[i] = ab / std::sqrt(aa * bb);
  }
  return out;
}

double row_norm(const Tensor& a, std::size_t row) {
  const std::size_t d = a.numel() / a.dim(0);
  double ss = 0.0;
  for (std::size_t j = 0; j < d; ++j) ss += a.at(row * d + j) * a.at(row * d + j);
  return std::sqrt(ss);
}

bool rows_identical(const Tensor& a, const Tensor& b, std::size_t row) {
  const std::size_t d = a.numel() / a.dim(0);
  for (std::size_t j = 0; j < d; ++j) {
    if (a.at(row * d + j) != b.at(row * d + j)) return false;
  }
  return true;
}

void zero_row(Tensor& g, std::size_t row) {
  const std::size_t d = g.numel() / g.dim(0);
  for (std::size_t j = 0; j < d; ++j) g.set(row * d + j, 0.0);
}

void check_images(const Classifier& model, const Tensor& x, const char* op) {
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected an NCHW batch, got " + shape_str(x.shape()));
  if (x.dtype() != model.dtype()) throw ShapeError(std::string(op) + ": input and model precision differ");
}

std::vector<std::string> union_taps(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::string> out;
  for (const auto& t : Classifier::tap_universe()) {
    if (std::find(a.begin(), a.end(), t) != a.end() || std::find(b.begin(), b.end(), t) != b.end()) out.push_back(t);
  }
  return out;
}

}  // namespace

void GuidedShiftConfig::validate() const {
  if (!(step > 0.0)) throw ConfigError("gs.step must be > 0");
  if (!(eps >= 0.0)) throw ConfigError("gs.eps must be >= 0");
  if (!(random_start >= 0.0 && random_start <= 1.0)) throw ConfigError("gs.random_start must lie in [0,1]");
  blur.validate();
  if (differentiate_blur && blur.kind != BlurKind::gaussian && blur.kind != BlurKind::identity) {
    throw ConfigError("gs.differentiate_blur needs a Gaussian (or identity) blur");
  }
}

void AdaptiveProjectionConfig::validate() const {
  if (iterations < 1) throw ConfigError("ap.iterations must be >= 1");
  if (!(eps >= 0.0)) throw ConfigError("ap.eps must be >= 0");
  if (taps.empty()) throw ConfigError("ap.taps must name at least one tap");
  Classifier::check_taps(taps);
  Classifier::check_taps(lpips_taps);
  if (lambda1 < 0.0 || lambda2 < 0.0 || !(lambda1 + lambda2 > 0.0)) {
    throw ConfigError("ap.lambda1 and ap.lambda2 must be >= 0 with a positive sum");
  }
}

// ---- Guided Shift ------------------------------------------------------------

namespace {

Tensor gs_start(const Tensor& x_adv, const GuidedShiftConfig& cfg, std::size_t offset) {
  Tensor out = x_adv.clone();
  const std::size_t n = x_adv.dim(0), d = x_adv.numel() / std::max<std::size_t>(n, 1);
  const double r = cfg.random_start * cfg.eps;
  if (r == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg.seed, offset + i));
    for (std::size_t j = 0; j < d; ++j) out.set(i * d + j, x_adv.at(i * d + j) + rng.uniform(-r, r));
  }
  return project_to(out, x_adv, cfg.eps, cfg.norm);
}

Tensor gs_chunk(const Classifier& model, const Tensor& x_adv, const GuidedShiftConfig& cfg, const Tensor* natural,
                std::size_t offset, std::vector<GsTrace>& traces) {
  const std::size_t n = x_adv.dim(0);
  const Tensor z_nat = natural ? model.embedding(*natural) : Tensor();
  Tensor xg = gs_start(x_adv, cfg, offset);
  for (std::size_t t = 0;; ++t) {
    Tape tape;
    const Var xv = tape.leaf(xg, true);
    const Var z = model.forward(tape, xv).embedding;
    Var zb;
    if (cfg.differentiate_blur && cfg.blur.kind == BlurKind::gaussian) {
      zb = model.forward(tape, gaussian_blur(xv, cfg.blur.sigma)).embedding;
    } else {
      zb = tape.constant(model.embedding(apply_blur(cfg.blur, xg)));
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (row_norm(z.value(), i) < 1e-12 || row_norm(zb.value(), i) < 1e-12) {
        throw NumericError("guided_shift iteration " + std::to_string(t) + ": degenerate embedding for sample " +
                           std::to_string(offset + i));
      }
    }
    const Var c = ops::cosine_similarity(z, zb);
    const std::vector<double> nat_g = natural ? row_cosines(z.value(), z_nat) : std::vector<double>{};
    const std::vector<double> nat_b = natural ? row_cosines(zb.value(), z_nat) : std::vector<double>{};
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t i = 0; i < n; ++i) {
      traces[offset + i].push_back({t, natural ? nat_g[i] : nan, natural ? nat_b[i] : nan, c.value().at(i)});
    }
    if (t == cfg.iterations) break;
    tape.backward(ops::sum(c));
    Tensor g = tape.grad(xv);
    // cos(z, z) is stationary in z; floating-point residue must not become a sign step.
    for (std::size_t i = 0; i < n; ++i) {
      if (rows_identical(z.value(), zb.value(), i)) zero_row(g, i);
    }
    xg = project_to(step_along(xg, g, cfg.step, cfg.norm), x_adv, cfg.eps, cfg.norm);
  }
  return xg;
}

}  // namespace

GuidedShiftResult guided_shift(const Classifier& model, const Tensor& x_adv, const GuidedShiftConfig& cfg,
                               const Tensor* natural) {
  cfg.validate();
  check_images(model, x_adv, "guided_shift");
  if (!within_unit_range(x_adv)) throw ConfigError("guided_shift: x_adv must lie in [0,1]");
  if (natural) require_same_shape(*natural, x_adv, "guided_shift natural reference");
  GuidedShiftResult r;
  r.traces.resize(x_adv.dim(0));
  r.x_g = chunked(x_adv, [&](std::size_t b, std::size_t e) {
    const Tensor nat = natural ? natural->slice0(b, e) : Tensor();
    return gs_chunk(model, x_adv.slice0(b, e), cfg, natural ? &nat : nullptr, b, r.traces);
  });
  return r;
}

GsTrace mean_trace(std::span<const GsTrace> traces) {
  if (traces.empty()) return {};
  GsTrace out(traces.front().size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t].t = t;
    for (const auto& tr : traces) {
      out[t].cos_g_nat += tr.at(t).cos_g_nat;
      out[t].cos_blur_nat += tr.at(t).cos_blur_nat;
      out[t].cos_g_blur += tr.at(t).cos_g_blur;
    }
    const auto k = static_cast<double>(traces.size());
    out[t].cos_g_nat /= k;
    out[t].cos_blur_nat /= k;
    out[t].cos_g_blur /= k;
  }
  return out;
}

void write_trace_csv(const std::filesystem::path& path, const GsTrace& trace) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(9);
  out << "t,cos_g_nat,cos_blur_nat,cos_g_blur\n";
  for (const auto& r : trace) out << r.t << ',' << r.cos_g_nat << ',' << r.cos_blur_nat << ',' << r.cos_g_blur << '\n';
}

// ---- perceptual distance -------------------------------------------------------

Var perceptual_features(const ForwardResult& forward, std::span<const std::string> taps) {
  if (taps.empty()) throw ConfigError("perceptual features need at least one tap");
  std::vector<Var> parts;
  for (const auto& name : taps) {
    const auto it = forward.taps.find(name);
    if (it == forward.taps.end()) throw ConfigError("tap '" + name + "' was not recorded by the forward pass");
    const Var f = it->second;
    const Shape& s = f.shape();
    const std::size_t plane = s[2] * s[3];
    const Tensor& v = f.value();
    bool degenerate = false;
    for (std::size_t i = 0; i < s[0] && !degenerate; ++i) {
      for (std::size_t p = 0; p < plane && !degenerate; ++p) {
        double ss = 0.0;
        for (std::size_t c = 0; c < s[1]; ++c) ss += v.at((i * s[1] + c) * plane + p) * v.at((i * s[1] + c) * plane + p);
        degenerate = std::sqrt(ss) <= 1e-12;
      }
    }
    if (degenerate) {
      static std::once_flag once;
      std::call_once(once, [&] {
        std::cerr << "warning: zero-norm activations at tap " << name << "; those locations contribute 0\n";
      });
    }
    parts.push_back(ops::flatten(ops::scale(ops::channel_normalize(f), 1.0 / std::sqrt(static_cast<double>(plane)))));
  }
  return parts.size() == 1 ? parts.front() : ops::concat_columns(parts);
}

Tensor lpips_distance(const Classifier& model, const Tensor& a, const Tensor& b, std::span<const std::string> taps) {
  if (taps.empty()) throw ConfigError("lpips_distance: taps must be nonempty");
  Classifier::check_taps(taps);
  require_same_shape(a, b, "lpips_distance");
  check_images(model, a, "lpips_distance");
  std::vector<double> d;
  for (std::size_t s = 0; s < a.dim(0); s += kChunk) {
    const std::size_t e = std::min(s + kChunk, a.dim(0));
    Tape tape;
    const Var pa = perceptual_features(model.forward(tape, tape.constant(a.slice0(s, e)), taps), taps);
    const Var pb = perceptual_features(model.forward(tape, tape.constant(b.slice0(s, e)), taps), taps);
    const Tensor r = ops::row_l2_norm(ops::sub(pa, pb)).value();
    for (std::size_t i = 0; i < r.numel(); ++i) d.push_back(r.at(i));
  }
  return Tensor::from({d.size()}, d, a.dtype());
}

// ---- Adaptive Projection -------------------------------------------------------

namespace {

struct ApAnchor {
  std::map<std::string, Tensor> f_init;
  std::map<std::string, Tensor> du_g;
  Tensor phi_init;
};

ApAnchor anchor(const Classifier& model, const Tensor& x_init, const Tensor& x_g, const AdaptiveProjectionConfig& cfg,
                const std::vector<std::string>& all) {
  ApAnchor a;
  Tape tape;
  const auto fi = model.forward(tape, tape.constant(x_init), all);
  const auto fg = model.forward(tape, tape.constant(x_g), cfg.taps);
  for (const auto& name : all) a.f_init[name] = fi.taps.at(name).value();
  for (const auto& name : cfg.taps) a.du_g[name] = ops::sub(fg.taps.at(name), fi.taps.at(name)).value();
  if (cfg.lambda2 > 0.0) a.phi_init = perceptual_features(fi, cfg.perceptual_taps()).value();
  return a;
}

// Projection term sum_l du_g^l . (f_l(x_p) - f_l(x_init)) over the whole chunk.
Var projection_term(Tape& tape, const ForwardResult& r, const ApAnchor& a, const AdaptiveProjectionConfig& cfg) {
  Var total;
  for (std::size_t k = 0; k < cfg.taps.size(); ++k) {
    const auto& name = cfg.taps[k];
    const Var du_p = ops::sub(r.taps.at(name), tape.constant(a.f_init.at(name)));
    const Var term = ops::dot(tape.constant(a.du_g.at(name)), du_p);
    total = k == 0 ? term : ops::add(total, term);
  }
  return total;
}

Var perceptual_term(Tape& tape, const ForwardResult& r, const ApAnchor& a, const AdaptiveProjectionConfig& cfg) {
  const Var phi = perceptual_features(r, cfg.perceptual_taps());
  return ops::sum(ops::row_l2_norm(ops::sub(phi, tape.constant(a.phi_init))));
}

std::vector<double> per_sample_projection(const ForwardResult& r, const ApAnchor& a,
                                          const AdaptiveProjectionConfig& cfg) {
  std::vector<double> out;
  for (const auto& name : cfg.taps) {
    const Tensor& f = r.taps.at(name).value();
    const Tensor& fi = a.f_init.at(name);
    const Tensor& du = a.du_g.at(name);
    const std::size_t n = f.dim(0), d = f.numel() / n;
    out.resize(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += du.at(i * d + j) * (f.at(i * d + j) - fi.at(i * d + j));
      out[i] += s;
    }
  }
  return out;
}

Tensor ap_chunk(const Classifier& model, const Tensor& x_init, const Tensor& x_g, const AdaptiveProjectionConfig& cfg,
                std::vector<std::vector<double>>* projection, std::size_t offset) {
  const auto all = union_taps(cfg.taps, cfg.lambda2 > 0.0 ? cfg.perceptual_taps() : std::vector<std::string>{});
  const ApAnchor a = anchor(model, x_init, x_g, cfg, all);
  const double eta = cfg.eps / static_cast<double>(cfg.iterations);
  Tensor xp = x_init;
  for (std::size_t t = 0;; ++t) {
    const bool last = t == cfg.iterations;
    if (last && !projection) break;
    Tape tape;
    const Var xv = tape.leaf(xp, true);
    const auto r = model.forward(tape, xv, all);
    if (projection) {
      const auto p = per_sample_projection(r, a, cfg);
      std::copy(p.begin(), p.end(), (*projection)[t].begin() + static_cast<long>(offset));
    }
    if (last) break;
    Var loss;
    bool have = false;
    if (cfg.lambda1 > 0.0) {
      loss = ops::scale(projection_term(tape, r, a, cfg), -cfg.lambda1 / static_cast<double>(cfg.taps.size()));
      have = true;
    }
    if (cfg.lambda2 > 0.0) {
      const Var pr = ops::scale(perceptual_term(tape, r, a, cfg), cfg.lambda2);
      loss = have ? ops::add(loss, pr) : pr;
    }
    tape.backward(loss);
    xp = project_to(step_along(xp, tape.grad(xv), -eta, cfg.norm), x_init, cfg.eps, cfg.norm);
  }
  return xp;
}

}  // namespace

AdaptiveProjectionResult adaptive_projection(const Classifier& model, const Tensor& x_init, const Tensor& x_g,
                                             const AdaptiveProjectionConfig& cfg, bool record_projection) {
  cfg.validate();
  check_images(model, x_init, "adaptive_projection");
  require_same_shape(x_init, x_g, "adaptive_projection");
  AdaptiveProjectionResult r;
  if (record_projection) r.projection.assign(cfg.iterations + 1, std::vector<double>(x_init.dim(0), 0.0));
  r.x_p = chunked(x_init, [&](std::size_t b, std::size_t e) {
    return ap_chunk(model, x_init.slice0(b, e), x_g.slice0(b, e), cfg, record_projection ? &r.projection : nullptr,
                    b);
  });
  return r;
}

Dynamics measure_dynamics(const Classifier& model, const Tensor& x_init, const Tensor& x_g, const Tensor& x_p,
                          const AdaptiveProjectionConfig& cfg) {
  cfg.validate();
  check_images(model, x_init, "measure_dynamics");
  require_same_shape(x_init, x_g, "measure_dynamics");
  require_same_shape(x_init, x_p, "measure_dynamics");
  Dynamics dyn;
  auto norms = [](const Tensor& g) {
    const std::size_t n = g.dim(0), d = g.numel() / n;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += g.at(i * d + j) * g.at(i * d + j);
      out[i] = std::sqrt(s);
    }
    return out;
  };
  AdaptiveProjectionConfig full = cfg;
  full.lambda2 = 1.0;  // anchor needs the perceptual reference regardless of the weight
  const auto all = union_taps(full.taps, full.perceptual_taps());
  for (std::size_t b = 0; b < x_init.dim(0); b += kChunk) {
    const std::size_t e = std::min(b + kChunk, x_init.dim(0));
    const ApAnchor a = anchor(model, x_init.slice0(b, e), x_g.slice0(b, e), full, all);
    for (int which = 0; which < 2; ++which) {
      const double weight = which == 0 ? cfg.lambda1 : cfg.lambda2;
      auto& dst = which == 0 ? dyn.f1 : dyn.f2;
      if (weight == 0.0) {
        dst.resize(e, 0.0);
        continue;
      }
      Tape tape;
      const Var xv = tape.leaf(x_p.slice0(b, e), true);
      const auto r = model.forward(tape, xv, all);
      const Var term = which == 0 ? ops::scale(projection_term(tape, r, a, full),
                                               weight / static_cast<double>(full.taps.size()))
                                  : ops::scale(perceptual_term(tape, r, a, full), weight);
      tape.backward(term);
      const auto n = norms(tape.grad(xv));
      dst.insert(dst.end(), n.begin(), n.end());
    }
  }
  return dyn;
}

Tensor zeropur(const Classifier& model, const Tensor& x_init, const GuidedShiftConfig& gs,
               const AdaptiveProjectionConfig& ap) {
  const Tensor x_g = guided_shift(model, x_init, gs).x_g;
  return adaptive_projection(model, x_init, x_g, ap).x_p;
}

DefenseMode parse_defense_mode(const std::string& name) {
  if (name == "none") return DefenseMode::none;
  if (name == "gs-only" || name == "gs_only" || name == "gs") return DefenseMode::gs_only;
  if (name == "zeropur") return DefenseMode::zeropur;
  throw ConfigError("unknown defense mode '" + name + "' (expected none, gs-only or zeropur)");
}

const char* defense_mode_name(DefenseMode mode) {
  switch (mode) {
    case DefenseMode::none:
      return "none";
    case DefenseMode::gs_only:
      return "gs-only";
    default:
      return "zeropur";
  }
}

Tensor defend(const Classifier& model, const Tensor& x, DefenseMode mode, GuidedShiftConfig gs,
              const AdaptiveProjectionConfig& ap, std::uint64_t seed) {
  gs.seed = seed;
  switch (mode) {
    case DefenseMode::none:
      return x;
    case DefenseMode::gs_only:
      return guided_shift(model, x, gs).x_g;
    default:
      return zeropur(model, x, gs, ap);
  }
}

Purifier make_purifier(const Classifier& model, DefenseMode mode, const GuidedShiftConfig& gs,
                       const AdaptiveProjectionConfig& ap) {
  return [model, mode, gs, ap](const Tensor& x, std::uint64_t seed) { return defend(model, x, mode, gs, ap, seed); };
}

}  // namespace zp
