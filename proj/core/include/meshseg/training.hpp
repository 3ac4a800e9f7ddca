#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "meshseg/model.hpp"
#include "meshseg/volume.hpp"

namespace meshseg {

/// Dense [batch][channel][z][y][x] tensor used on the training path.
template <typename T>
struct Tensor {
  int batch = 0;
  int channels = 0;
  Extents extents{};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int batch_, int channels_, Extents extents_)
      : batch(batch_), channels(channels_), extents(extents_),
        data(static_cast<std::size_t>(batch_) * static_cast<std::size_t>(channels_) *
                 static_cast<std::size_t>(extents_.product()),
             T{0}) {}

  std::size_t voxels() const noexcept { return static_cast<std::size_t>(extents.product()); }
  std::size_t sample_size() const noexcept { return static_cast<std::size_t>(channels) * voxels(); }
  T* sample(int b) noexcept { return data.data() + static_cast<std::size_t>(b) * sample_size(); }
  const T* sample(int b) const noexcept { return data.data() + static_cast<std::size_t>(b) * sample_size(); }
  T* channel(int b, int c) noexcept { return sample(b) + static_cast<std::size_t>(c) * voxels(); }
  const T* channel(int b, int c) const noexcept { return sample(b) + static_cast<std::size_t>(c) * voxels(); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.batch = batch;
    out.channels = channels;
    out.extents = extents;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

/// Sub-cube inputs in [0, 1] and their one-hot targets.
struct Batch {
  Tensor<float> inputs;          // batch x 1 x cube^3
  Tensor<float> targets_onehot;  // batch x classes x cube^3
};

struct LabelledVolume {
  Volume3D image;
  Volume3D labels;
};

/// Divide each pair into halo-free sub-cubes, min-max normalise each cube to
/// [0, 1], one-hot the labels, shuffle with `seed` and group into batches of
/// `batch_size`. A trailing partial batch is dropped. Throws LabelOutOfRange.
std::vector<Batch> make_batches(std::span<const LabelledVolume> volumes, int cube, int batch_size, int classes,
                                std::uint64_t seed);

/// Min-max normalisation to [0, 1]; a constant input becomes all zeros.
void normalize_unit_range(std::span<float> values);

template <typename T>
struct LossAndGradient {
  T loss = 0;
  Tensor<T> grad_scores;
};

/// Mean over batch and voxels of -sum_c y log softmax(s)_c, with gradient (p - y) / N.
template <typename T>
LossAndGradient<T> softmax_ce(const Tensor<T>& scores, const Tensor<T>& targets_onehot);

/// Unweighted mean of per-class Dice 2|X∩Y| / (|X|+|Y|); a class absent from
/// both volumes scores 1. Class 0 is skipped when `ignore_background`.
double macro_dice(const Volume3D& pred, const Volume3D& truth, int classes, bool ignore_background = false);

struct PassConfig {
  bool train = true;                  // batch statistics + stochastic dropout
  bool update_running_stats = false;  // write new running mean/var into params
  double bn_momentum = 0.1;
  double dropout_override = -1.0;     // < 0: use each layer's dropout_p
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct GradientResult {
  T loss = 0;
  std::vector<T> param_grads;  // same layout as the weight blob; running-stat slots stay 0
  Tensor<T> input_grad;
  Tensor<T> scores;
};

/// Forward pass through every layer plus softmax cross-entropy and the exact
/// reverse-mode gradient. `params` uses the weight-blob layout of `model`.
template <typename T>
GradientResult<T> backward(const ModelSpec& model, std::vector<T>& params, const Tensor<T>& inputs,
                           const Tensor<T>& targets_onehot, const PassConfig& config);

/// Forward pass only; returns the loss. Never touches running statistics.
template <typename T>
T forward_loss(const ModelSpec& model, const std::vector<T>& params, const Tensor<T>& inputs,
               const Tensor<T>& targets_onehot, const PassConfig& config);

/// Forward pass only; returns class scores.
template <typename T>
Tensor<T> forward_scores(const ModelSpec& model, const std::vector<T>& params, const Tensor<T>& inputs,
                         const PassConfig& config);

struct Hyperparams {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double dropout_p = -1.0;  // < 0: use the manifest value
  double bn_momentum = 0.1;
};

struct FitLogEntry {
  std::int64_t step = 0;
  double loss = 0.0;
  double macro_dice = 0.0;
};

struct TrainState {
  ModelSpec model;
  std::vector<float> velocity;
  std::int64_t step = 0;
  std::uint64_t rng_seed = 0;
  Hyperparams hyper;
  double last_loss = 0.0;
  std::vector<FitLogEntry> history;

  TrainState() = default;
  TrainState(ModelSpec model_, std::uint64_t seed, Hyperparams hp = {});
};

/// Heavy-ball update v <- mu v - eta g; w <- w + v.
void sgd_update(std::span<float> weights, std::span<float> velocity, std::span<const float> grads,
                double learning_rate, double momentum);

/// One SGD step on `batch`. Throws NonFiniteLoss.
TrainState train_step(TrainState state, const Batch& batch);

struct FitOptions {
  std::int64_t eval_interval = 50;
  std::function<void(const FitLogEntry&)> on_log;
};

/// `steps` train_step calls cycling through `batches`; every eval_interval
/// steps the loss and the training-batch macro Dice are appended to history.
TrainState fit(TrainState state, std::span<const Batch> batches, std::int64_t steps, const FitOptions& options = {});

}  // namespace meshseg
