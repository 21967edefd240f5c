#include "zeropur/augment.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "zeropur/image_ops.hpp"

namespace zp {

Augmentation parse_augmentation(const std::string& name) {
  if (name == "vanilla") return Augmentation::vanilla;
  if (name == "base") return Augmentation::base;
  if (name == "strong") return Augmentation::strong;
  throw ConfigError("unknown augmentation preset '" + name + "' (expected vanilla, base or strong)");
}

const char* augmentation_name(Augmentation preset) {
  switch (preset) {
    case Augmentation::vanilla:
      return "vanilla";
    case Augmentation::base:
      return "base";
    default:
      return "strong";
  }
}

std::vector<std::string> augmentation_ops(Augmentation preset) {
  switch (preset) {
    case Augmentation::vanilla:
      return {};
    case Augmentation::base:
      return {"ResizeCrop", "HorizontalFlip"};
    default:
      return {"ResizeCrop", "ColorJitter", "Grayscale", "GaussianBlur", "Solarization", "Equalization",
              "HorizontalFlip"};
  }
}

namespace {

struct Image {
  std::span<float> px;
  std::size_t c, h, w;
  float& operator()(std::size_t ch, std::size_t y, std::size_t x) { return px[(ch * h + y) * w + x]; }
};

// Random square crop covering 64-100% of the area, resized back bilinearly.
void resize_crop(Image img, Rng& rng) {
  const double scale = std::sqrt(rng.uniform(0.64, 1.0));
  const double ch = scale * static_cast<double>(img.h), cw = scale * static_cast<double>(img.w);
  const double y0 = rng.uniform(0.0, static_cast<double>(img.h) - ch);
  const double x0 = rng.uniform(0.0, static_cast<double>(img.w) - cw);
  std::vector<float> src(img.px.begin(), img.px.end());
  auto sample = [&](std::size_t c, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(img.h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(img.w - 1));
    const auto yi = static_cast<std::size_t>(y), xi = static_cast<std::size_t>(x);
    const std::size_t y1 = std::min(yi + 1, img.h - 1), x1 = std::min(xi + 1, img.w - 1);
    const double fy = y - static_cast<double>(yi), fx = x - static_cast<double>(xi);
    auto at = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(src[(c * img.h + yy) * img.w + xx]); };
    return (1 - fy) * ((1 - fx) * at(yi, xi) + fx * at(yi, x1)) + fy * ((1 - fx) * at(y1, xi) + fx * at(y1, x1));
  };
  for (std::size_t c = 0; c < img.c; ++c) {
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w; ++x) {
        const double sy = y0 + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(img.h) - 0.5;
        const double sx = x0 + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(img.w) - 0.5;
        img(c, y, x) = static_cast<float>(sample(c, sy, sx));
      }
    }
  }
}

void horizontal_flip(Image img, Rng& rng) {
  if (!rng.bernoulli(0.5)) return;
  for (std::size_t c = 0; c < img.c; ++c) {
    for (std::size_t y = 0; y < img.h; ++y) {
      for (std::size_t x = 0; x < img.w / 2; ++x) std::swap(img(c, y, x), img(c, y, img.w - 1 - x));
    }
  }
}

std::vector<float> luminance(Image img) {
  std::vector<float> lum(img.h * img.w);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    if (img.c == 3) {
      lum[i] = 0.299f * img.px[i] + 0.587f * img.px[lum.size() + i] + 0.114f * img.px[2 * lum.size() + i];
    } else {
      lum[i] = img.px[i];
    }
  }
  return lum;
}

void color_jitter(Image img, Rng& rng) {
  if (!rng.bernoulli(0.8)) return;
  const double brightness = rng.uniform(0.6, 1.4);
  const double contrast = rng.uniform(0.6, 1.4);
  const double saturation = rng.uniform(0.6, 1.4);
  for (float& v : img.px) v = static_cast<float>(std::clamp(v * brightness, 0.0, 1.0));
  const auto lum = luminance(img);
  double mean = 0.0;
  for (float v : lum) mean += v;
  mean /= static_cast<double>(lum.size());
  for (float& v : img.px) v = static_cast<float>(std::clamp(mean + (v - mean) * contrast, 0.0, 1.0));
  const auto gray = luminance(img);
  for (std::size_t c = 0; c < img.c; ++c) {
    for (std::size_t i = 0; i < gray.size(); ++i) {
      float& v = img.px[c * gray.size() + i];
      v = static_cast<float>(std::clamp(gray[i] + (v - gray[i]) * saturation, 0.0, 1.0));
    }
  }
}

void grayscale(Image img, Rng& rng) {
  if (!rng.bernoulli(0.2)) return;
  const auto gray = luminance(img);
  for (std::size_t c = 0; c < img.c; ++c) std::copy(gray.begin(), gray.end(), img.px.begin() + c * gray.size());
}

void blur(Image img, Rng& rng) {
  if (!rng.bernoulli(0.2)) return;
  const double sigma = rng.uniform(0.2, 1.0);
  Tensor t({1, img.c, img.h, img.w}, DType::f32);
  auto tv = t.mutable_view<float>();
  std::copy(img.px.begin(), img.px.end(), tv.begin());
  const Tensor out = gaussian_blur(t, sigma);
  std::copy(out.view<float>().begin(), out.view<float>().end(), img.px.begin());
}

void solarize(Image img, Rng& rng) {
  if (!rng.bernoulli(0.1)) return;
  for (float& v : img.px) {
    if (v >= 0.5f) v = 1.0f - v;
  }
}

// Per-channel histogram equalisation over 256 levels.
void equalize(Image img, Rng& rng) {
  if (!rng.bernoulli(0.1)) return;
  const std::size_t plane = img.h * img.w;
  for (std::size_t c = 0; c < img.c; ++c) {
    std::array<std::size_t, 256> hist{};
    auto level = [](float v) { return static_cast<std::size_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); };
    for (std::size_t i = 0; i < plane; ++i) ++hist[level(img.px[c * plane + i])];
    std::array<double, 256> cdf{};
    std::size_t run = 0;
    for (std::size_t k = 0; k < 256; ++k) {
      run += hist[k];
      cdf[k] = static_cast<double>(run) / static_cast<double>(plane);
    }
    for (std::size_t i = 0; i < plane; ++i) {
      float& v = img.px[c * plane + i];
      v = static_cast<float>(cdf[level(v)]);
    }
  }
}

}  // namespace

void augment_image(Augmentation preset, std::span<float> chw, std::size_t channels, std::size_t height,
                   std::size_t width, Rng& rng) {
  if (chw.size() != channels * height * width) throw ShapeError("augment_image: buffer size mismatch");
  const Image img{chw, channels, height, width};
  switch (preset) {
    case Augmentation::vanilla:
      return;
    case Augmentation::base:
      resize_crop(img, rng);
      horizontal_flip(img, rng);
      return;
    case Augmentation::strong:
      resize_crop(img, rng);
      color_jitter(img, rng);
      grayscale(img, rng);
      blur(img, rng);
      solarize(img, rng);
      equalize(img, rng);
      horizontal_flip(img, rng);
      return;
  }
}

Tensor augment_batch(const Tensor& images, std::span<const std::size_t> indices, Augmentation preset,
                     std::uint64_t seed, std::uint64_t epoch) {
  if (images.rank() != 4) throw ShapeError("augment_batch: expected NCHW images");
  for (std::size_t idx : indices) {
    if (idx >= images.dim(0)) throw ShapeError("augment_batch: index out of range");
  }
  const Tensor src = images.to(DType::f32);
  const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3), stride = c * h * w;
  Tensor out({indices.size(), c, h, w}, DType::f32);
  auto dst = out.mutable_view<float>();
  const auto in = src.view<float>();
#pragma omp parallel for schedule(static)
  for (long i = 0; i < static_cast<long>(indices.size()); ++i) {
    const auto b = static_cast<std::size_t>(i);
    const std::size_t idx = indices[b];
    std::copy_n(in.begin() + static_cast<long>(idx * stride), stride, dst.begin() + static_cast<long>(b * stride));
    Rng rng(derive_seed(seed, epoch, idx));
    augment_image(preset, dst.subspan(b * stride, stride), c, h, w, rng);
  }
  return out;
}

}  // namespace zp
