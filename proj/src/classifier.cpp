#include "zeropur/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

namespace zp {

namespace {

constexpr std::size_t kChunk = 64;

struct ParamSlot {
  std::string name;
  Shape shape;
  enum class Init { he, ones, zeros } init;
};

bool needs_projection(const ClassifierSpec& s, std::size_t stage) {
  const std::size_t in = stage == 0 ? s.in_channels : s.widths[stage - 1];
  return in != s.widths[stage] || s.strides[stage] != 1;
}

std::vector<ParamSlot> layout(const ClassifierSpec& s) {
  using I = ParamSlot::Init;
  std::vector<ParamSlot> out;
  for (std::size_t st = 0; st < 3; ++st) {
    const std::string p = "stage" + std::to_string(st + 1) + ".";
    const std::size_t in = st == 0 ? s.in_channels : s.widths[st - 1], w = s.widths[st];
    out.push_back({p + "conv1.weight", {w, in, 3, 3}, I::he});
    out.push_back({p + "affine1.scale", {w}, I::ones});
    out.push_back({p + "affine1.bias", {w}, I::zeros});
    out.push_back({p + "conv2.weight", {w, w, 3, 3}, I::he});
    out.push_back({p + "affine2.scale", {w}, I::ones});
    out.push_back({p + "affine2.bias", {w}, I::zeros});
    if (needs_projection(s, st)) {
      out.push_back({p + "proj.weight", {w, in, 1, 1}, I::he});
      out.push_back({p + "proj_affine.scale", {w}, I::ones});
      out.push_back({p + "proj_affine.bias", {w}, I::zeros});
    }
  }
  out.push_back({"head.scale", {s.widths[2]}, I::ones});
  out.push_back({"head.bias", {s.widths[2]}, I::zeros});
  // Zero logits at init: otherwise the quickest way to lower the loss is to
  // shrink the features, which kills the relus before any shape is learned.
  out.push_back({"fc.weight", {s.num_classes, s.widths[2]}, I::zeros});
  out.push_back({"fc.bias", {s.num_classes}, I::zeros});
  return out;
}

void validate_spec(const ClassifierSpec& s) {
  if (s.in_channels == 0 || s.height == 0 || s.width == 0 || s.num_classes < 2) {
    throw ConfigError("classifier: need channels, height, width >= 1 and at least 2 classes");
  }
  for (std::size_t st = 0; st < 3; ++st) {
    if (s.widths[st] == 0 || s.strides[st] == 0) throw ConfigError("classifier: stage widths and strides must be >= 1");
  }
}

}  // namespace

const std::vector<std::string>& Classifier::tap_universe() {
  static const std::vector<std::string> taps{"stage1", "stage2", "stage3", "prepool"};
  return taps;
}

void Classifier::check_taps(std::span<const std::string> taps) {
  const auto& all = tap_universe();
  for (const auto& t : taps) {
    if (std::find(all.begin(), all.end(), t) == all.end()) {
      throw ConfigError("unknown tap '" + t + "' (expected stage1, stage2, stage3 or prepool)");
    }
  }
}

Classifier Classifier::tiny_resnet(const ClassifierSpec& spec, std::uint64_t seed, DType dtype) {
  validate_spec(spec);
  Classifier m;
  m.spec_ = spec;
  const auto slots = layout(spec);
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& slot = slots[i];
    Tensor t(slot.shape, DType::f64);
    auto v = t.mutable_view<double>();
    Rng rng(derive_seed(seed, i));
    switch (slot.init) {
      case ParamSlot::Init::he: {
        const double fan_in = static_cast<double>(slot.shape[1] * slot.shape[2] * slot.shape[3]);
        const double sd = std::sqrt(2.0 / fan_in);
        for (double& x : v) x = sd * rng.normal();
        break;
      }
      case ParamSlot::Init::ones:
        std::fill(v.begin(), v.end(), 1.0);
        break;
      case ParamSlot::Init::zeros:
        break;
    }
    m.names_.push_back(slot.name);
    m.params_.push_back(t.to(dtype));
  }
  return m;
}

DType Classifier::dtype() const { return params_.empty() ? default_dtype() : params_.front().dtype(); }

Classifier Classifier::to(DType dtype) const {
  Classifier m = *this;
  for (auto& p : m.params_) p = p.to(dtype);
  return m;
}

const Tensor& Classifier::parameter(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ConfigError("no parameter named '" + name + "'");
  return params_[static_cast<std::size_t>(it - names_.begin())];
}

void Classifier::set_parameters(std::vector<Tensor> params) {
  if (params.size() != params_.size()) throw ShapeError("set_parameters: wrong parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != params_[i].shape()) {
      throw ShapeError("set_parameters: " + names_[i] + " expects " + shape_str(params_[i].shape()) + ", got " +
                       shape_str(params[i].shape()));
    }
  }
  params_ = std::move(params);
}

std::size_t Classifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

void Classifier::check_input(const Var& x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != spec_.in_channels || s[2] != spec_.height || s[3] != spec_.width) {
    throw ShapeError("classifier input " + shape_str(s) + " does not match [N," + std::to_string(spec_.in_channels) +
                     "," + std::to_string(spec_.height) + "," + std::to_string(spec_.width) + "]");
  }
}

ForwardResult Classifier::forward(Tape& tape, Var x, std::span<const std::string> taps) const {
  std::vector<Var> params;
  params.reserve(params_.size());
  for (const auto& p : params_) params.push_back(tape.constant(p));
  return forward(tape, x, taps, params);
}

ForwardResult Classifier::forward(Tape&, Var x, std::span<const std::string> taps, std::span<const Var> params) const {
  check_taps(taps);
  check_input(x);
  if (params.size() != params_.size()) throw ShapeError("forward: wrong number of parameter handles");
  std::size_t k = 0;
  auto next = [&] { return params[k++]; };
  auto wanted = [&](const std::string& name) { return std::find(taps.begin(), taps.end(), name) != taps.end(); };

  ForwardResult out;
  // Per-image contrast normalisation: shape, not colour or brightness, carries the class.
  Var h = ops::instance_standardize(x);
  for (std::size_t st = 0; st < 3; ++st) {
    const std::size_t stride = spec_.strides[st];
    Var r = ops::conv2d(h, next(), stride, 1);
    Var s1 = next(), b1 = next();
    r = ops::relu(ops::channel_affine(r, s1, b1));
    r = ops::conv2d(r, next(), 1, 1);
    Var s2 = next(), b2 = next();
    r = ops::channel_affine(r, s2, b2);
    Var shortcut = h;
    if (needs_projection(spec_, st)) {
      shortcut = ops::conv2d(h, next(), stride, 0);
      Var sp = next(), bp = next();
      shortcut = ops::channel_affine(shortcut, sp, bp);
    }
    h = ops::relu(ops::add(r, shortcut));
    const std::string name = "stage" + std::to_string(st + 1);
    if (wanted(name)) out.taps[name] = h;
  }
  Var hs = next(), hb = next();
  h = ops::relu(ops::channel_affine(h, hs, hb));
  if (wanted("prepool")) out.taps["prepool"] = h;
  out.embedding = ops::global_avg_pool(h);
  Var fw = next(), fb = next();
  out.logits = ops::linear(out.embedding, fw, fb);
  return out;
}

Tensor Classifier::feature(const Tensor& x, const std::string& name) const {
  if (x.rank() != 4) throw ShapeError("classifier input must be NCHW, got " + shape_str(x.shape()));
  const bool is_tap = name != "embedding" && name != "logits";
  const std::vector<std::string> taps = is_tap ? std::vector<std::string>{name} : std::vector<std::string>{};
  std::vector<Tensor> parts;
  for (std::size_t b = 0; b < x.dim(0); b += kChunk) {
    Tape tape;
    const auto r = forward(tape, tape.constant(x.slice0(b, std::min(b + kChunk, x.dim(0)))), taps);
    parts.push_back(is_tap ? r.taps.at(name).value() : name == "logits" ? r.logits.value() : r.embedding.value());
  }
  if (parts.empty()) return logits(x.slice0(0, 0));
  return parts.size() == 1 ? parts.front() : concat0(parts);
}

Tensor Classifier::logits(const Tensor& x) const {
  if (x.rank() == 4 && x.dim(0) == 0) return Tensor({0, spec_.num_classes}, x.dtype());
  return feature(x, "logits");
}

Tensor Classifier::embedding(const Tensor& x) const { return feature(x, "embedding"); }

std::vector<int> Classifier::predict(const Tensor& x) const {
  const Tensor z = logits(x);
  const std::size_t n = z.dim(0), c = z.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j) {
      if (z.at(i * c + j) > z.at(i * c + best)) best = j;
    }
    out[i] = static_cast<int>(best);
  }
  return out;
}

std::vector<NamedTensor> Classifier::to_tensors() const {
  std::vector<NamedTensor> out;
  out.emplace_back("meta.input_shape", Tensor::from({3}, {static_cast<double>(spec_.in_channels),
                                                          static_cast<double>(spec_.height),
                                                          static_cast<double>(spec_.width)}, DType::f32));
  out.emplace_back("meta.strides", Tensor::from({3}, {static_cast<double>(spec_.strides[0]),
                                                      static_cast<double>(spec_.strides[1]),
                                                      static_cast<double>(spec_.strides[2])}, DType::f32));
  for (std::size_t i = 0; i < params_.size(); ++i) out.emplace_back(names_[i], params_[i]);
  return out;
}

Classifier Classifier::from_tensors(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, t] : tensors) {
    if (!by_name.emplace(name, t).second) throw FormatError("duplicate tensor '" + name + "'");
  }
  auto need = [&](const std::string& name) -> const Tensor& {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("weights file lacks tensor '" + name + "'");
    return it->second;
  };
  ClassifierSpec spec;
  const Tensor& c1 = need("stage1.conv1.weight");
  if (c1.rank() != 4) throw FormatError("stage1.conv1.weight must be rank 4");
  spec.in_channels = c1.dim(1);
  for (std::size_t st = 0; st < 3; ++st) {
    const Tensor& w = need("stage" + std::to_string(st + 1) + ".conv1.weight");
    if (w.rank() != 4) throw FormatError("conv weights must be rank 4");
    spec.widths[st] = w.dim(0);
  }
  const Tensor& fc = need("fc.weight");
  if (fc.rank() != 2) throw FormatError("fc.weight must be rank 2");
  spec.num_classes = fc.dim(0);
  if (auto it = by_name.find("meta.input_shape"); it != by_name.end()) {
    if (it->second.numel() != 3) throw FormatError("meta.input_shape must hold 3 values");
    spec.in_channels = static_cast<std::size_t>(it->second.at(0));
    spec.height = static_cast<std::size_t>(it->second.at(1));
    spec.width = static_cast<std::size_t>(it->second.at(2));
  }
  if (auto it = by_name.find("meta.strides"); it != by_name.end()) {
    if (it->second.numel() != 3) throw FormatError("meta.strides must hold 3 values");
    for (std::size_t st = 0; st < 3; ++st) spec.strides[st] = static_cast<std::size_t>(it->second.at(st));
  }
  try {
    validate_spec(spec);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("weights describe an invalid network: ") + e.what());
  }
  Classifier m;
  m.spec_ = spec;
  std::size_t used = 0;
  for (const auto& slot : layout(spec)) {
    const Tensor& t = need(slot.name);
    if (t.shape() != slot.shape) {
      throw FormatError("shape mismatch for '" + slot.name + "': expected " + shape_str(slot.shape) + ", got " +
                        shape_str(t.shape()));
    }
    m.names_.push_back(slot.name);
    m.params_.push_back(t);
    ++used;
  }
  used += by_name.count("meta.input_shape") + by_name.count("meta.strides");
  if (used != by_name.size()) throw FormatError("weights file holds tensors this architecture does not use");
  return m;
}

void save_weights(const Classifier& model, const std::filesystem::path& path) {
  save_tensors(path, model.to_tensors());
}

Classifier load_weights(const std::filesystem::path& path) { return Classifier::from_tensors(load_tensors(path)); }

double accuracy(const std::vector<int>& predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw ShapeError("accuracy: prediction/label count mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

// ---- layer deviation -------------------------------------------------------

const TapDeviation& DeviationProfile::at(const std::string& tap) const {
  for (const auto& t : taps) {
    if (t.tap == tap) return t;
  }
  throw ConfigError("deviation profile has no tap '" + tap + "'");
}

namespace {

std::vector<std::string> deviation_taps() {
  auto names = Classifier::tap_universe();
  names.push_back("logits");
  return names;
}

std::map<std::string, Tensor> all_features(const Classifier& model, const Tensor& x) {
  Tape tape;
  const auto& taps = Classifier::tap_universe();
  const auto r = model.forward(tape, tape.constant(x), taps);
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : r.taps) out[name] = v.value();
  out["logits"] = r.logits.value();
  return out;
}

Tensor axpy(const Tensor& x, const Tensor& d, double t) {
  Tensor out = x.clone();
  auto o = out.mutable_view<double>();
  const auto dv = d.view<double>();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += t * dv[i];
  return out;
}

double diff_norm(const Tensor& a, const Tensor& b, const Tensor* c = nullptr) {
  const auto av = a.view<double>(), bv = b.view<double>();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double r = av[i] - bv[i] - (c ? c->view<double>()[i] : 0.0);
    s += r * r;
  }
  return std::sqrt(s);
}

double norm(const Tensor& a) {
  double s = 0.0;
  for (double v : a.view<double>()) s += v * v;
  return std::sqrt(s);
}

// Central-difference directional derivative of every feature along d.
std::map<std::string, Tensor> jvp(const Classifier& model, const Tensor& x, const Tensor& d) {
  double dmax = 0.0;
  for (double v : d.view<double>()) dmax = std::max(dmax, std::abs(v));
  std::map<std::string, Tensor> out;
  const auto names = deviation_taps();
  if (dmax == 0.0) {
    const auto f = all_features(model, x);
    for (const auto& n : names) out[n] = Tensor::zeros_like(f.at(n));
    return out;
  }
  const double h = 1e-6 / dmax;
  const auto fp = all_features(model, axpy(x, d, h));
  const auto fm = all_features(model, axpy(x, d, -h));
  for (const auto& n : names) {
    Tensor j = Tensor::zeros_like(fp.at(n));
    auto jv = j.mutable_view<double>();
    const auto p = fp.at(n).view<double>(), m = fm.at(n).view<double>();
    for (std::size_t i = 0; i < jv.size(); ++i) jv[i] = (p[i] - m[i]) / (2.0 * h);
    out[n] = std::move(j);
  }
  return out;
}

}  // namespace

DeviationProfile layer_deviation(const Classifier& model, const Tensor& x, const Tensor& delta) {
  require_same_shape(x.to(DType::f64), delta.to(DType::f64), "layer_deviation");
  const Classifier m = model.to(DType::f64);
  const Tensor xd = x.to(DType::f64), dd = delta.to(DType::f64);
  const auto f0 = all_features(m, xd);
  const auto f1 = all_features(m, axpy(xd, dd, 1.0));
  const auto j = jvp(m, xd, dd);
  DeviationProfile p;
  for (const auto& n : deviation_taps()) {
    p.taps.push_back({n, diff_norm(f1.at(n), f0.at(n)), norm(j.at(n)), diff_norm(f1.at(n), f0.at(n), &j.at(n))});
  }
  return p;
}

RemainderFit remainder_scaling(const Classifier& model, const Tensor& x, const Tensor& direction,
                               const std::string& tap, std::span<const double> scales) {
  const auto names = deviation_taps();
  if (std::find(names.begin(), names.end(), tap) == names.end()) throw ConfigError("unknown tap '" + tap + "'");
  if (scales.size() < 2) throw ConfigError("remainder_scaling needs at least two scales");
  const Classifier m = model.to(DType::f64);
  const Tensor xd = x.to(DType::f64), dd = direction.to(DType::f64);
  require_same_shape(xd, dd, "remainder_scaling");
  const Tensor f0 = all_features(m, xd).at(tap);
  const Tensor j = jvp(m, xd, dd).at(tap);
  RemainderFit fit;
  std::vector<double> lx, ly;
  for (double t : scales) {
    const Tensor ft = all_features(m, axpy(xd, dd, t)).at(tap);
    const auto a = ft.view<double>(), b = f0.view<double>(), jv = j.view<double>();
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double r = a[i] - b[i] - t * jv[i];
      s += r * r;
    }
    fit.scales.push_back(t);
    fit.remainders.push_back(std::sqrt(s));
    if (s > 0.0) {
      lx.push_back(std::log(t));
      ly.push_back(0.5 * std::log(s));
    }
  }
  if (lx.size() >= 2) {
    const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
    const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) {
      sxy += (lx[i] - mx) * (ly[i] - my);
      sxx += (lx[i] - mx) * (lx[i] - mx);
    }
    fit.slope = sxy / sxx;
  }
  return fit;
}

}  // namespace zp
