#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "zeropur/augment.hpp"
#include "zeropur/classifier.hpp"
#include "zeropur/dataset.hpp"
#include "zeropur/image_ops.hpp"
#include "zeropur/rng.hpp"
#include "zeropur/tensor_io.hpp"
#include "zeropur/train.hpp"

using namespace zp;
namespace fs = std::filesystem;

namespace {

ClassifierSpec small_spec(std::size_t classes = 4) {
  ClassifierSpec s;
  s.height = s.width = 8;
  s.num_classes = classes;
  s.widths = {4, 6, 8};
  return s;
}

Tensor random_batch(std::uint64_t seed, std::size_t n, const ClassifierSpec& s, DType dt = DType::f32) {
  Rng rng(seed);
  Tensor t({n, s.in_channels, s.height, s.width}, dt);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, rng.uniform());
  return t;
}

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("zeropur_test_" + name); }

// Two classes separated linearly: the brighter half is the left or the right one.
LabeledDataset separable_set(std::size_t n, const ClassifierSpec& s) {
  LabeledDataset d{Tensor({n, s.in_channels, s.height, s.width}, DType::f32), std::vector<int>(n), 2, "toy"};
  Rng rng(99);
  const std::size_t per = s.in_channels * s.height * s.width;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < per; ++j) {
      const bool left = j % s.width < s.width / 2;
      const double base = left == (d.labels[i] == 0) ? 0.7 : 0.3;
      d.images.set(i * per + j, base + rng.uniform(-0.15, 0.15));
    }
  }
  return d;
}

}  // namespace

TEST_CASE("forward_with_taps: empty set, determinism, unknown taps") {
  const auto spec = small_spec();
  const Classifier m = Classifier::tiny_resnet(spec, 1);
  const Tensor x = random_batch(2, 3, spec);
  Tape tape;
  const auto r = m.forward(tape, tape.constant(x));
  CHECK(r.taps.empty());
  CHECK(r.logits.shape() == Shape{3, 4});

  const std::vector<std::string> last{"prepool"};
  Tape t1, t2;
  const auto a = m.forward(t1, t1.constant(x), last);
  const auto b = m.forward(t2, t2.constant(x), last);
  CHECK(a.taps.at("prepool").value().identical(b.taps.at("prepool").value()));

  const std::vector<std::string> bad{"stage9"};
  Tape t3;
  CHECK_THROWS_AS(m.forward(t3, t3.constant(x), bad), ConfigError);
  CHECK_THROWS_AS(m.logits(random_batch(2, 1, small_spec(), DType::f32).reshaped({1, 3, 4, 16})), ShapeError);
}

TEST_CASE("tap values do not depend on which other taps are requested") {
  const auto spec = small_spec();
  const Classifier m = Classifier::tiny_resnet(spec, 3);
  const Tensor x = random_batch(4, 2, spec);
  Tape t1, t2;
  const auto all = m.forward(t1, t1.constant(x), Classifier::tap_universe());
  for (const auto& name : Classifier::tap_universe()) {
    CHECK(m.feature(x, name).identical(all.taps.at(name).value()));
  }
  CHECK(m.logits(x).identical(all.logits.value()));
}

TEST_CASE("first-order deviation agrees with the directional derivative") {
  const auto spec = small_spec();
  const Classifier m = Classifier::tiny_resnet(spec, 5, DType::f64);
  const Tensor x = random_batch(6, 1, spec, DType::f64);
  Rng rng(7);
  Tensor delta = Tensor::zeros_like(x);
  for (std::size_t i = 0; i < delta.numel(); ++i) delta.set(i, rng.bernoulli(0.5) ? 1e-3 : -1e-3);
  const auto p = layer_deviation(m, x, delta);
  for (const auto& t : p.taps) {
    CHECK(t.remainder_norm <= 0.05 * t.linear_norm);
  }
  const auto zero = layer_deviation(m, x, Tensor::zeros_like(x));
  for (const auto& t : zero.taps) CHECK(t.deviation_norm == 0.0);
}

TEST_CASE("weights round-trip and corruption errors") {
  const auto spec = small_spec();
  const Classifier m = Classifier::tiny_resnet(spec, 8);
  const fs::path path = temp_file("weights.zpwt");
  save_weights(m, path);
  const Classifier back = load_weights(path);
  CHECK(back.parameter_names() == m.parameter_names());
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_batch(100 + s, 1, spec);
    CHECK(back.logits(x).identical(m.logits(x)));
  }

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK_THROWS_WITH_AS(decode_tensors(bytes.substr(0, bytes.size() - 3)), doctest::Contains("unexpected EOF"),
                       FormatError);
  CHECK_THROWS_WITH_AS(decode_tensors(encode_tensors({})),
                       doctest::Contains("no tensors"), FormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_WITH_AS(decode_tensors(bad_magic), doctest::Contains("magic"), FormatError);
  std::string bad_version = bytes;
  bad_version[4] = 2;
  CHECK_THROWS_WITH_AS(decode_tensors(bad_version), doctest::Contains("version"), FormatError);

  auto tensors = m.to_tensors();
  for (auto& [name, t] : tensors) {
    if (name == "fc.bias") t = Tensor::zeros({7});
  }
  CHECK_THROWS_WITH_AS(Classifier::from_tensors(tensors), doctest::Contains("shape mismatch"), FormatError);
  fs::remove(path);
}

TEST_CASE("trainer: separable toy set, zero epochs, determinism") {
  const auto spec = small_spec(2);
  const LabeledDataset data = separable_set(64, spec);
  const Classifier init = Classifier::tiny_resnet(spec, 9);
  TrainRecipe r;
  r.preset = Augmentation::vanilla;
  r.epochs = 5;
  r.batch_size = 16;
  r.seed = 4;
  const auto res = train(init, data, r);
  CHECK(res.history.size() == 5);
  CHECK(accuracy(res.model.predict(data.images), data.labels) >= 0.99);

  TrainRecipe none = r;
  none.epochs = 0;
  const auto same = train(init, data, none);
  CHECK(encode_tensors(same.model.to_tensors()) == encode_tensors(init.to_tensors()));

  TrainRecipe shortr = r;
  shortr.epochs = 2;
  shortr.preset = Augmentation::strong;
  const auto a = train(init, data, shortr), b = train(init, data, shortr);
  CHECK(encode_tensors(a.model.to_tensors()) == encode_tensors(b.model.to_tensors()));

  LabeledDataset empty = data.slice(0, 0);
  CHECK_THROWS_AS(train(init, empty, r), ConfigError);
}

TEST_CASE("learning-rate schedule warms up linearly and decays to zero") {
  TrainRecipe r;
  r.epochs = 10;
  r.warmup_epochs = 1;
  CHECK(scheduled_lr(r, 0, 10) == doctest::Approx(0.01));
  CHECK(scheduled_lr(r, 9, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(r, 10, 10) == doctest::Approx(0.1));
  CHECK(scheduled_lr(r, 99, 10) < 1e-3);
}

TEST_CASE("augmentation presets and determinism") {
  CHECK(augmentation_ops(Augmentation::vanilla).empty());
  CHECK(augmentation_ops(Augmentation::base) == std::vector<std::string>{"ResizeCrop", "HorizontalFlip"});
  CHECK(augmentation_ops(Augmentation::strong).size() == 7);
  CHECK_THROWS_AS(parse_augmentation("medium"), ConfigError);

  const LabeledDataset d = gen_shapes_dataset(3, 4);
  const std::vector<std::size_t> idx{0, 5, 9, 14};
  const Tensor v = augment_batch(d.images, idx, Augmentation::vanilla, 1, 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    CHECK(v.slice0(k, k + 1).identical(d.images.slice0(idx[k], idx[k] + 1)));
  }
  for (Augmentation p : {Augmentation::base, Augmentation::strong}) {
    const Tensor a = augment_batch(d.images, idx, p, 1, 2), b = augment_batch(d.images, idx, p, 1, 2);
    CHECK(a.identical(b));
    CHECK(within_unit_range(a));
    CHECK_FALSE(a.identical(augment_batch(d.images, idx, p, 1, 3)));
  }
}

TEST_CASE("procedural shapes dataset") {
  const LabeledDataset a = gen_shapes_dataset(5, 6), b = gen_shapes_dataset(5, 6);
  CHECK(a.images.identical(b.images));
  CHECK(a.labels == b.labels);
  CHECK(label_histogram(a) == std::vector<std::size_t>{6, 6, 6, 6});
  CHECK(a.images.shape() == Shape{24, 3, 32, 32});
  a.validate();
  CHECK_FALSE(a.images.identical(gen_shapes_dataset(6, 6).images));
}

TEST_CASE("CIFAR-10 binary reader") {
  const fs::path path = temp_file("cifar.bin");
  std::string bytes(2 * 3073, '\0');
  bytes[0] = 3;
  bytes[1] = static_cast<char>(255);
  bytes[3072] = 17;
  bytes[3073] = 9;
  bytes[3074] = 1;
  bytes[2 * 3073 - 1] = static_cast<char>(128);
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  const LabeledDataset d = load_cifar10_bin(path);
  CHECK(d.labels == std::vector<int>{3, 9});
  CHECK(d.images.at(0) == 1.0f);
  CHECK(d.images.at(3071) == doctest::Approx(17.0 / 255.0));
  CHECK(d.images.at(3072) == doctest::Approx(1.0 / 255.0));
  CHECK(d.images.at(2 * 3072 - 1) == doctest::Approx(128.0 / 255.0));

  std::ofstream(path, std::ios::binary).write(bytes.data(), 3073 + 100);
  CHECK_THROWS_WITH_AS(load_cifar10_bin(path), doctest::Contains("record 1 incomplete"), FormatError);

  std::string big(10000 * 3073, '\0');
  for (std::size_t r = 0; r < 10000; ++r) big[r * 3073] = static_cast<char>(r % 10);
  std::ofstream(path, std::ios::binary).write(big.data(), static_cast<std::streamsize>(big.size()));
  const auto hist = label_histogram(load_cifar10_bin(path));
  CHECK(std::accumulate(hist.begin(), hist.end(), std::size_t{0}) == 10000);
  fs::remove(path);
}
