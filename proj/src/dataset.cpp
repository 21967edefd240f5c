#include "zeropur/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "zeropur/rng.hpp"

namespace zp {

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) throw ShapeError("dataset slice out of range");
  return {images.slice0(begin, end), std::vector<int>(labels.begin() + static_cast<long>(begin),
                                                      labels.begin() + static_cast<long>(end)),
          num_classes, split};
}

void LabeledDataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw FormatError("dataset: " + std::to_string(labels.size()) + " labels for images " + shape_str(images.shape()));
  }
  for (std::size_t i = 0; i < images.numel(); ++i) {
    const double v = images.at(i);
    if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset: pixel value outside [0,1]");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes) throw FormatError("dataset: label out of range");
  }
}

namespace {

constexpr std::size_t kSide = 32;
constexpr int kSuper = 4;  // sub-samples per axis for anti-aliased edges

bool inside(int cls, double x, double y, double cx, double cy, double s, int orientation, double phase,
            double period) {
  const double dx = x - cx, dy = y - cy;
  switch (cls) {
    case 0:
      return dx * dx + dy * dy <= s * s;
    case 1:
      return std::abs(dx) <= 0.85 * s && std::abs(dy) <= 0.85 * s;
    case 2: {
      const double arm = 0.38 * s;
      return (std::abs(dx) <= arm && std::abs(dy) <= s) || (std::abs(dy) <= arm && std::abs(dx) <= s);
    }
    default: {
      if (std::abs(dx) > s || std::abs(dy) > s) return false;
      const double u = orientation == 0 ? dx : orientation == 1 ? dy : (dx + dy) * 0.7071;
      return std::fmod(u + phase + 100.0, period) < 0.5 * period;
    }
  }
}

void render_shape(int cls, Rng& rng, float* out) {
  // Colour contrast is kept moderate so the classes are separable but not
  // trivially robust at the usual 8/255 budget. Stripes carry many edges, so
  // they get a lower contrast than the solid shapes.
  const double contrast = cls == 3 ? 0.6 : 1.0;
  double bg[3], fg[3];
  for (int c = 0; c < 3; ++c) {
    bg[c] = rng.uniform(0.1, 0.55);
    fg[c] = bg[c] + rng.uniform(0.12, 0.44) * contrast;
  }
  const double s = rng.uniform(6.0, 11.0);
  const double cx = rng.uniform(10.0, 22.0), cy = rng.uniform(10.0, 22.0);
  const int orientation = static_cast<int>(rng.below(3));
  // Stripe periods stay well above the blur scale so stripes survive smoothing.
  const double period = rng.uniform(6.0, 9.0);
  const double phase = rng.uniform(0.0, period);
  const double noise = 0.02;
  for (std::size_t y = 0; y < kSide; ++y) {
    for (std::size_t x = 0; x < kSide; ++x) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy) {
        for (int sx = 0; sx < kSuper; ++sx) {
          const double px = static_cast<double>(x) + (sx + 0.5) / kSuper;
          const double py = static_cast<double>(y) + (sy + 0.5) / kSuper;
          hits += inside(cls, px, py, cx, cy, s, orientation, phase, period) ? 1 : 0;
        }
      }
      const double cover = static_cast<double>(hits) / (kSuper * kSuper);
      for (int c = 0; c < 3; ++c) {
        const double v = bg[c] + cover * (fg[c] - bg[c]) + noise * rng.normal();
        out[(static_cast<std::size_t>(c) * kSide + y) * kSide + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

}  // namespace

LabeledDataset gen_shapes_dataset(std::uint64_t seed, std::size_t n_per_class, std::string split) {
  constexpr std::size_t classes = std::size(kShapeClasses);
  const std::size_t n = n_per_class * classes;
  LabeledDataset d{Tensor({n, 3, kSide, kSide}, DType::f32), std::vector<int>(n), classes, std::move(split)};
  auto px = d.images.mutable_view<float>();
  const std::size_t stride = 3 * kSide * kSide;
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(n); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const int cls = static_cast<int>(idx % classes);
    Rng rng(derive_seed(seed, idx));
    render_shape(cls, rng, px.data() + idx * stride);
    d.labels[idx] = cls;
  }
  return d;
}

LabeledDataset load_cifar10_bin(const std::filesystem::path& path) {
  constexpr std::size_t kRecord = 3073, kPixels = 3072;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open CIFAR-10 batch " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t records = bytes.size() / kRecord;
  if (bytes.size() % kRecord != 0) {
    throw FormatError("record " + std::to_string(records) + " incomplete at byte offset " +
                      std::to_string(records * kRecord) + " (" + std::to_string(bytes.size() % kRecord) + " of " +
                      std::to_string(kRecord) + " bytes)");
  }
  LabeledDataset d{Tensor({records, 3, 32, 32}, DType::f32), std::vector<int>(records), 10, "cifar10"};
  auto px = d.images.mutable_view<float>();
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecord;
    if (rec[0] >= 10) {
      throw FormatError("record " + std::to_string(r) + " has label " + std::to_string(rec[0]) + " at byte offset " +
                        std::to_string(r * kRecord));
    }
    d.labels[r] = rec[0];
    for (std::size_t i = 0; i < kPixels; ++i) px[r * kPixels + i] = static_cast<float>(rec[1 + i]) / 255.0f;
  }
  return d;
}

std::vector<std::size_t> label_histogram(const LabeledDataset& data) {
  std::vector<std::size_t> h(data.num_classes, 0);
  for (int y : data.labels) ++h.at(static_cast<std::size_t>(y));
  return h;
}

}  // namespace zp
