#include "zeropur/train.hpp"

#include <cmath>
#include <numeric>

#include "zeropur/ops.hpp"
#include "zeropur/rng.hpp"

namespace zp {

void TrainRecipe::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0,1)");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
  if (grad_clip < 0.0) throw ConfigError("train.grad_clip must be >= 0");
}

double scheduled_lr(const TrainRecipe& r, std::size_t step, std::size_t steps_per_epoch) {
  const std::size_t total = r.epochs * steps_per_epoch;
  const std::size_t warm = std::min(r.warmup_epochs * steps_per_epoch, total);
  if (step < warm) return r.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  const std::size_t span = total - warm;
  if (span == 0) return r.lr;
  const double progress = static_cast<double>(step - warm) / static_cast<double>(span);
  return 0.5 * r.lr * (1.0 + std::cos(3.141592653589793 * progress));
}

TrainResult train(const Classifier& init, const LabeledDataset& data, const TrainRecipe& recipe,
                  const LabeledDataset* held_out, const EpochCallback& on_epoch) {
  recipe.validate();
  if (data.size() == 0) throw ConfigError("train: empty dataset");
  if (data.num_classes != init.num_classes()) {
    throw ConfigError("train: dataset has " + std::to_string(data.num_classes) + " classes, model has " +
                      std::to_string(init.num_classes()));
  }
  TrainResult result{init, {}, 0.0};
  Classifier& model = result.model;
  const DType dtype = model.dtype();
  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + recipe.batch_size - 1) / recipe.batch_size;

  std::vector<Tensor> params = model.parameters();
  std::vector<Tensor> velocity;
  for (const auto& p : params) velocity.push_back(Tensor::zeros_like(p));

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < recipe.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(recipe.seed, 0x5eed, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    EpochStats stats{epoch + 1, 0.0, 0.0, -1.0, 0.0};
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += recipe.batch_size, ++step) {
      const std::span<const std::size_t> idx(order.data() + b, std::min(recipe.batch_size, n - b));
      const Tensor xb = augment_batch(data.images, idx, recipe.preset, recipe.seed, epoch).to(dtype);
      std::vector<int> yb;
      for (std::size_t i : idx) yb.push_back(data.labels[i]);

      const double lr = scheduled_lr(recipe, step, steps_per_epoch);
      Tape tape;
      std::vector<Var> pv;
      for (const auto& p : params) pv.push_back(tape.leaf(p, true));
      double loss_value = 0.0;
      try {
        const auto out = model.forward(tape, tape.constant(xb), {}, pv);
        const Var loss = ops::cross_entropy(out.logits, yb);
        loss_value = loss.value().item();
        const Tensor& z = out.logits.value();
        for (std::size_t i = 0; i < yb.size(); ++i) {
          std::size_t best = 0;
          for (std::size_t j = 1; j < z.dim(1); ++j) {
            if (z.at(i * z.dim(1) + j) > z.at(i * z.dim(1) + best)) best = j;
          }
          correct += static_cast<int>(best) == yb[i] ? 1 : 0;
        }
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + " step " +
                           std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(loss_value)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + " step " +
                           std::to_string(step) + ": loss is not finite");
      }
      std::vector<Tensor> grads;
      double sq = 0.0;
      for (const Var& p : pv) {
        grads.push_back(tape.grad(p));
        for (double v : grads.back().values()) sq += v * v;
      }
      const double gnorm = std::sqrt(sq);
      const double clip = recipe.grad_clip > 0.0 && gnorm > recipe.grad_clip ? recipe.grad_clip / gnorm : 1.0;
      for (std::size_t k = 0; k < params.size(); ++k) {
        const Tensor& g = grads[k];
        dispatch(dtype, [&]<class T>(T) {
          auto w = params[k].mutable_view<T>();
          auto v = velocity[k].mutable_view<T>();
          const auto gv = g.view<T>();
          const T mu = static_cast<T>(recipe.momentum), wd = static_cast<T>(recipe.weight_decay);
          const T eta = static_cast<T>(lr), c = static_cast<T>(clip);
          for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + c * gv[i] + wd * w[i];
            w[i] -= eta * v[i];
          }
        });
        if (!params[k].all_finite()) {
          throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + " step " +
                             std::to_string(step) + ": parameter " + model.parameter_names()[k] + " is not finite");
        }
      }
      stats.loss += loss_value * static_cast<double>(idx.size());
      stats.lr = lr;
    }
    model.set_parameters(params);
    stats.loss /= static_cast<double>(n);
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (held_out) stats.eval_accuracy = accuracy(model.predict(held_out->images.to(dtype)), held_out->labels);
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  const LabeledDataset& ref = held_out ? *held_out : data;
  result.final_accuracy = accuracy(model.predict(ref.images.to(dtype)), ref.labels);
  return result;
}

}  // namespace zp
