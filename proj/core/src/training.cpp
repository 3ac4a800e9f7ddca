#include "meshseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "conv_kernels.hpp"
#include "meshseg/error.hpp"
#include "meshseg/tiling.hpp"

namespace meshseg {

void normalize_unit_range(std::span<float> values) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) {
    std::fill(values.begin(), values.end(), 0.0f);
    return;
  }
  for (float& v : values) v = static_cast<float>((v - lo) / (hi - lo));
}

namespace {

std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }

}  // namespace

std::vector<Batch> make_batches(std::span<const LabelledVolume> volumes, int cube, int batch_size, int classes,
                                std::uint64_t seed) {
  if (batch_size < 1) fail(ErrorKind::InvalidArgument, "batch size must be at least 1");
  if (classes < 1) fail(ErrorKind::InvalidArgument, "need at least one class");
  const Extents ce{cube, cube, cube};

  struct Cube {
    std::vector<float> image;
    std::vector<int> labels;
  };
  std::vector<Cube> cubes;
  for (std::size_t v = 0; v < volumes.size(); ++v) {
    const auto& [image, labels] = volumes[v];
    if (image.extents() != labels.extents()) {
      fail(ErrorKind::ShapeMismatch, "image and label extents differ for pair " + std::to_string(v));
    }
    for (float l : labels.data()) {
      if (!(l >= 0.0f && l < static_cast<float>(classes)) || l != std::floor(l)) {
        fail(ErrorKind::LabelOutOfRange, "label value " + std::to_string(l) + " outside 0.." +
                                             std::to_string(classes - 1) + " in pair " + std::to_string(v));
      }
    }
    const SubvolumeGrid grid = divide(image.extents(), cube, 0);
    for (const Tile& t : grid.tiles) {
      // short trailing cubes are zero padded (background) up to cube^3
      Cube c{std::vector<float>(static_cast<std::size_t>(ce.product()), 0.0f),
             std::vector<int>(static_cast<std::size_t>(ce.product()), 0)};
      std::vector<float> core;
      core.reserve(static_cast<std::size_t>(t.core_extents.product()));
      for (int z = 0; z < t.core_extents.z; ++z)
        for (int y = 0; y < t.core_extents.y; ++y)
          for (int x = 0; x < t.core_extents.x; ++x)
            core.push_back(image.at(t.core_origin.x + x, t.core_origin.y + y, t.core_origin.z + z));
      normalize_unit_range(core);
      std::size_t k = 0;
      for (int z = 0; z < t.core_extents.z; ++z) {
        for (int y = 0; y < t.core_extents.y; ++y) {
          for (int x = 0; x < t.core_extents.x; ++x, ++k) {
            const auto idx = static_cast<std::size_t>(x + cube * (y + cube * z));
            c.image[idx] = core[k];
            c.labels[idx] = static_cast<int>(labels.at(t.core_origin.x + x, t.core_origin.y + y, t.core_origin.z + z));
          }
        }
      }
      cubes.push_back(std::move(c));
    }
  }

  std::mt19937_64 rng(seed);
  for (std::size_t i = cubes.size(); i > 1; --i) {
    std::swap(cubes[i - 1], cubes[bounded(rng, i)]);
  }

  std::vector<Batch> batches;
  const std::size_t per = static_cast<std::size_t>(batch_size);
  const std::size_t vox = static_cast<std::size_t>(ce.product());
  for (std::size_t start = 0; start + per <= cubes.size(); start += per) {
    Batch b{Tensor<float>(batch_size, 1, ce), Tensor<float>(batch_size, classes, ce)};
    for (int s = 0; s < batch_size; ++s) {
      const Cube& c = cubes[start + static_cast<std::size_t>(s)];
      std::copy(c.image.begin(), c.image.end(), b.inputs.sample(s));
      for (std::size_t i = 0; i < vox; ++i) b.targets_onehot.channel(s, c.labels[i])[i] = 1.0f;
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

template <typename T>
LossAndGradient<T> softmax_ce(const Tensor<T>& scores, const Tensor<T>& targets) {
  if (scores.batch != targets.batch || scores.channels != targets.channels || scores.extents != targets.extents) {
    fail(ErrorKind::ShapeMismatch, "scores and targets differ in shape");
  }
  LossAndGradient<T> out{T{0}, Tensor<T>(scores.batch, scores.channels, scores.extents)};
  const std::size_t vox = scores.voxels();
  const std::size_t n = static_cast<std::size_t>(scores.batch) * vox;
  const T inv_n = T{1} / static_cast<T>(n);
  double total = 0.0;
  std::vector<T> p(static_cast<std::size_t>(scores.channels));
  for (int b = 0; b < scores.batch; ++b) {
    for (std::size_t i = 0; i < vox; ++i) {
      T m = -std::numeric_limits<T>::infinity();
      for (int c = 0; c < scores.channels; ++c) m = std::max(m, scores.channel(b, c)[i]);
      T z = 0;
      for (int c = 0; c < scores.channels; ++c) {
        p[static_cast<std::size_t>(c)] = std::exp(scores.channel(b, c)[i] - m);
        z += p[static_cast<std::size_t>(c)];
      }
      const T log_z = std::log(z);
      for (int c = 0; c < scores.channels; ++c) {
        const T y = targets.channel(b, c)[i];
        const T log_p = scores.channel(b, c)[i] - m - log_z;
        if (y != T{0}) total -= static_cast<double>(y * log_p);
        out.grad_scores.channel(b, c)[i] = (p[static_cast<std::size_t>(c)] / z - y) * inv_n;
      }
    }
  }
  out.loss = static_cast<T>(total / static_cast<double>(n));
  return out;
}

double macro_dice(const Volume3D& pred, const Volume3D& truth, int classes, bool ignore_background) {
  if (pred.extents() != truth.extents()) fail(ErrorKind::ShapeMismatch, "label volumes differ in extents");
  if (classes < 1) fail(ErrorKind::InvalidArgument, "need at least one class");
  std::vector<std::int64_t> inter(static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> np(static_cast<std::size_t>(classes), 0);
  std::vector<std::int64_t> nt(static_cast<std::size_t>(classes), 0);
  auto in_range = [classes](float v) { return v >= 0.0f && v < static_cast<float>(classes); };
  const auto a = pred.data();
  const auto b = truth.data();
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool pa = in_range(a[i]);
    const bool pb = in_range(b[i]);
    if (pa) ++np[static_cast<std::size_t>(a[i])];
    if (pb) ++nt[static_cast<std::size_t>(b[i])];
    if (pa && pb && a[i] == b[i]) ++inter[static_cast<std::size_t>(a[i])];
  }
  double sum = 0.0;
  int used = 0;
  for (int c = ignore_background ? 1 : 0; c < classes; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const std::int64_t denom = np[k] + nt[k];
    sum += denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter[k]) / static_cast<double>(denom);
    ++used;
  }
  return used == 0 ? 1.0 : sum / used;
}

namespace {

template <typename T>
struct LayerCache {
  Tensor<T> input;          // input to the layer (conv, batchnorm)
  std::vector<T> mean;      // batchnorm statistics used in the forward pass
  std::vector<T> inv_std;
  std::vector<T> multiplier;  // dropout, one per (sample, channel)
  Tensor<T> output;         // relu output (gradient mask)
};

detail::ConvGeometry conv_geometry(const LayerSpec& l, Extents in) {
  return {l.in_channels, l.out_channels, in, l.output_extents(in), l.kernel, l.dilation, l.padding};
}

std::size_t slot(std::size_t byte_offset) {
  return byte_offset / sizeof(float);
}

template <typename T>
Tensor<T> run_forward(const ModelSpec& model, std::vector<T>& params, const Tensor<T>& inputs,
                      const PassConfig& config, std::vector<LayerCache<T>>* caches) {
  if (inputs.channels != 1) fail(ErrorKind::ShapeMismatch, "training input must have one channel");
  if (params.size() != model.weights.size()) fail(ErrorKind::BlobSizeMismatch, "parameter vector size mismatch");
  std::mt19937_64 rng(config.dropout_seed);
  Tensor<T> x = inputs;
  if (caches) caches->assign(model.layers.size(), {});

  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const LayerSpec& l = model.layers[li];
    if (x.channels != l.in_channels) fail(ErrorKind::ShapeMismatch, "layer " + std::to_string(li + 1) + " channel mismatch");
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const auto g = conv_geometry(l, x.extents);
        Tensor<T> y(x.batch, l.out_channels, g.out);
        for (int b = 0; b < x.batch; ++b) {
          detail::conv_forward(x.sample(b), y.sample(b), params.data() + slot(l.weight_offset),
                               params.data() + slot(l.bias_offset), g);
        }
        if (caches) (*caches)[li].input = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::BatchNorm3d: {
        const std::size_t vox = x.voxels();
        const double n = static_cast<double>(vox) * x.batch;
        std::vector<T> mean(static_cast<std::size_t>(x.channels));
        std::vector<T> inv_std(static_cast<std::size_t>(x.channels));
        T* rmean = params.data() + slot(l.mean_offset);
        T* rvar = params.data() + slot(l.var_offset);
        for (int c = 0; c < x.channels; ++c) {
          const auto k = static_cast<std::size_t>(c);
          if (config.train) {
            double s = 0.0;
            for (int b = 0; b < x.batch; ++b)
              for (std::size_t i = 0; i < vox; ++i) s += static_cast<double>(x.channel(b, c)[i]);
            const double mu = s / n;
            double ss = 0.0;
            for (int b = 0; b < x.batch; ++b)
              for (std::size_t i = 0; i < vox; ++i) {
                const double d = static_cast<double>(x.channel(b, c)[i]) - mu;
                ss += d * d;
              }
            const double var = ss / n;
            mean[k] = static_cast<T>(mu);
            inv_std[k] = static_cast<T>(1.0 / std::sqrt(var + l.epsilon));
            if (config.update_running_stats) {
              const double m = config.bn_momentum;
              const double unbiased = n > 1.0 ? var * n / (n - 1.0) : var;
              rmean[k] = static_cast<T>((1.0 - m) * static_cast<double>(rmean[k]) + m * mu);
              rvar[k] = static_cast<T>((1.0 - m) * static_cast<double>(rvar[k]) + m * unbiased);
            }
          } else {
            if (rvar[k] < T{0}) fail(ErrorKind::NegativeVariance, "running variance < 0");
            mean[k] = rmean[k];
            inv_std[k] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(rvar[k]) + l.epsilon));
          }
        }
        if (caches) (*caches)[li].input = x;
        const T* scale = params.data() + slot(l.scale_offset);
        const T* shift = params.data() + slot(l.shift_offset);
        for (int b = 0; b < x.batch; ++b) {
          for (int c = 0; c < x.channels; ++c) {
            const auto k = static_cast<std::size_t>(c);
            T* ch = x.channel(b, c);
            for (std::size_t i = 0; i < vox; ++i) ch[i] = scale[k] * ((ch[i] - mean[k]) * inv_std[k]) + shift[k];
          }
        }
        if (caches) {
          (*caches)[li].mean = std::move(mean);
          (*caches)[li].inv_std = std::move(inv_std);
        }
        break;
      }
      case LayerKind::ReLU: {
        for (T& v : x.data) v = v > T{0} ? v : T{0};
        if (caches) (*caches)[li].output = x;
        break;
      }
      case LayerKind::Dropout3d: {
        const double p = config.dropout_override >= 0.0 ? config.dropout_override : l.dropout_p;
        std::vector<T> mult(static_cast<std::size_t>(x.batch) * static_cast<std::size_t>(x.channels), T{1});
        if (config.train && p > 0.0) {
          const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
          for (T& m : mult) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            m = u < p ? T{0} : keep_scale;
          }
          for (int b = 0; b < x.batch; ++b) {
            for (int c = 0; c < x.channels; ++c) {
              const T m = mult[static_cast<std::size_t>(b * x.channels + c)];
              T* ch = x.channel(b, c);
              for (std::size_t i = 0; i < x.voxels(); ++i) ch[i] *= m;
            }
          }
        }
        if (caches) (*caches)[li].multiplier = std::move(mult);
        break;
      }
    }
  }
  return x;
}

}  // namespace

template <typename T>
GradientResult<T> backward(const ModelSpec& model, std::vector<T>& params, const Tensor<T>& inputs,
                           const Tensor<T>& targets, const PassConfig& config) {
  std::vector<LayerCache<T>> caches;
  GradientResult<T> result;
  result.scores = run_forward(model, params, inputs, config, &caches);
  auto [loss, grad] = softmax_ce(result.scores, targets);
  result.loss = loss;
  result.param_grads.assign(params.size(), T{0});

  Tensor<T> g = std::move(grad);
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const LayerSpec& l = model.layers[li];
    LayerCache<T>& cache = caches[li];
    switch (l.kind) {
      case LayerKind::Conv3d: {
        const Tensor<T>& x = cache.input;
        const auto geo = conv_geometry(l, x.extents);
        Tensor<T> gin(x.batch, x.channels, x.extents);
        for (int b = 0; b < x.batch; ++b) {
          detail::conv_backward(x.sample(b), g.sample(b), params.data() + slot(l.weight_offset), gin.sample(b),
                                result.param_grads.data() + slot(l.weight_offset),
                                result.param_grads.data() + slot(l.bias_offset), geo);
        }
        g = std::move(gin);
        break;
      }
      case LayerKind::BatchNorm3d: {
        const Tensor<T>& x = cache.input;
        const std::size_t vox = x.voxels();
        const double n = static_cast<double>(vox) * x.batch;
        const T* scale = params.data() + slot(l.scale_offset);
        T* gscale = result.param_grads.data() + slot(l.scale_offset);
        T* gshift = result.param_grads.data() + slot(l.shift_offset);
        for (int c = 0; c < x.channels; ++c) {
          const auto k = static_cast<std::size_t>(c);
          const T mu = cache.mean[k];
          const T inv = cache.inv_std[k];
          double sum_dy = 0.0;
          double sum_dy_xhat = 0.0;
          for (int b = 0; b < x.batch; ++b) {
            const T* xc = x.channel(b, c);
            const T* gc = g.channel(b, c);
            for (std::size_t i = 0; i < vox; ++i) {
              sum_dy += static_cast<double>(gc[i]);
              sum_dy_xhat += static_cast<double>(gc[i]) * static_cast<double>((xc[i] - mu) * inv);
            }
          }
          gscale[k] += static_cast<T>(sum_dy_xhat);
          gshift[k] += static_cast<T>(sum_dy);
          for (int b = 0; b < x.batch; ++b) {
            const T* xc = x.channel(b, c);
            T* gc = g.channel(b, c);
            if (config.train) {
              const T mean_dy = static_cast<T>(sum_dy / n);
              const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / n);
              for (std::size_t i = 0; i < vox; ++i) {
                const T xhat = (xc[i] - mu) * inv;
                gc[i] = scale[k] * inv * (gc[i] - mean_dy - xhat * mean_dy_xhat);
              }
            } else {
              for (std::size_t i = 0; i < vox; ++i) gc[i] *= scale[k] * inv;
            }
          }
        }
        break;
      }
      case LayerKind::ReLU: {
        const Tensor<T>& y = cache.output;
        for (std::size_t i = 0; i < g.data.size(); ++i) {
          if (!(y.data[i] > T{0})) g.data[i] = T{0};
        }
        break;
      }
      case LayerKind::Dropout3d: {
        for (int b = 0; b < g.batch; ++b) {
          for (int c = 0; c < g.channels; ++c) {
            const T m = cache.multiplier[static_cast<std::size_t>(b * g.channels + c)];
            if (m == T{1}) continue;
            T* gc = g.channel(b, c);
            for (std::size_t i = 0; i < g.voxels(); ++i) gc[i] *= m;
          }
        }
        break;
      }
    }
  }
  result.input_grad = std::move(g);
  return result;
}

template <typename T>
T forward_loss(const ModelSpec& model, const std::vector<T>& params, const Tensor<T>& inputs,
               const Tensor<T>& targets, const PassConfig& config) {
  PassConfig c = config;
  c.update_running_stats = false;
  std::vector<T> local = params;
  return softmax_ce(run_forward<T>(model, local, inputs, c, nullptr), targets).loss;
}

template <typename T>
Tensor<T> forward_scores(const ModelSpec& model, const std::vector<T>& params, const Tensor<T>& inputs,
                         const PassConfig& config) {
  PassConfig c = config;
  c.update_running_stats = false;
  std::vector<T> local = params;
  return run_forward<T>(model, local, inputs, c, nullptr);
}

template LossAndGradient<float> softmax_ce(const Tensor<float>&, const Tensor<float>&);
template LossAndGradient<double> softmax_ce(const Tensor<double>&, const Tensor<double>&);
template GradientResult<float> backward(const ModelSpec&, std::vector<float>&, const Tensor<float>&,
                                        const Tensor<float>&, const PassConfig&);
template GradientResult<double> backward(const ModelSpec&, std::vector<double>&, const Tensor<double>&,
                                         const Tensor<double>&, const PassConfig&);
template float forward_loss(const ModelSpec&, const std::vector<float>&, const Tensor<float>&, const Tensor<float>&,
                            const PassConfig&);
template double forward_loss(const ModelSpec&, const std::vector<double>&, const Tensor<double>&,
                             const Tensor<double>&, const PassConfig&);
template Tensor<float> forward_scores(const ModelSpec&, const std::vector<float>&, const Tensor<float>&,
                                      const PassConfig&);
template Tensor<double> forward_scores(const ModelSpec&, const std::vector<double>&, const Tensor<double>&,
                                       const PassConfig&);

TrainState::TrainState(ModelSpec model_, std::uint64_t seed, Hyperparams hp)
    : model(std::move(model_)), velocity(model.weights.size(), 0.0f), rng_seed(seed), hyper(hp) {}

void sgd_update(std::span<float> weights, std::span<float> velocity, std::span<const float> grads,
                double learning_rate, double momentum) {
  if (weights.size() != velocity.size() || weights.size() != grads.size()) {
    fail(ErrorKind::ShapeMismatch, "optimizer buffers do not match the parameter count");
  }
  const auto mu = static_cast<float>(momentum);
  const auto eta = static_cast<float>(learning_rate);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = mu * velocity[i] - eta * grads[i];
    weights[i] += velocity[i];
  }
}

namespace {

PassConfig train_config(const TrainState& state) {
  PassConfig c;
  c.train = true;
  c.update_running_stats = true;
  c.bn_momentum = state.hyper.bn_momentum;
  c.dropout_override = state.hyper.dropout_p;
  c.dropout_seed = state.rng_seed + static_cast<std::uint64_t>(state.step);
  return c;
}

Volume3D stacked_labels(const Tensor<float>& t) {
  // argmax over channels, samples stacked along z
  const Extents e{t.extents.x, t.extents.y, t.extents.z * t.batch};
  Volume3D out(e, {1.0, 1.0, 1.0}, Affine::identity());
  const std::size_t vox = t.voxels();
  for (int b = 0; b < t.batch; ++b) {
    for (std::size_t i = 0; i < vox; ++i) {
      int best = 0;
      for (int c = 1; c < t.channels; ++c) {
        if (t.channel(b, c)[i] > t.channel(b, best)[i]) best = c;
      }
      out.data()[static_cast<std::size_t>(b) * vox + i] = static_cast<float>(best);
    }
  }
  return out;
}

}  // namespace

TrainState train_step(TrainState state, const Batch& batch) {
  if (state.velocity.size() != state.model.weights.size()) {
    fail(ErrorKind::ShapeMismatch, "velocity buffers do not match the model parameters");
  }
  const PassConfig config = train_config(state);
  const auto result = backward<float>(state.model, state.model.weights, batch.inputs, batch.targets_onehot, config);
  // relu maps NaN to 0, so a poisoned input can leave the loss finite while
  // the gradients carry the NaN
  double grad_norm = 0.0;
  for (float g : result.param_grads) grad_norm += static_cast<double>(g) * g;
  if (!std::isfinite(result.loss) || !std::isfinite(grad_norm)) {
    fail(ErrorKind::NonFiniteLoss, "loss became " + std::to_string(result.loss) + " (squared gradient norm " +
                                       std::to_string(grad_norm) + ") at step " +
                                       std::to_string(state.step) + " (learning rate " +
                                       std::to_string(state.hyper.learning_rate) + ")");
  }
  sgd_update(state.model.weights, state.velocity, result.param_grads, state.hyper.learning_rate,
             state.hyper.momentum);
  state.last_loss = result.loss;
  ++state.step;
  return state;
}

TrainState fit(TrainState state, std::span<const Batch> batches, std::int64_t steps, const FitOptions& options) {
  if (batches.empty()) fail(ErrorKind::InvalidArgument, "fit needs at least one batch");
  const std::int64_t interval = std::max<std::int64_t>(options.eval_interval, 1);
  for (std::int64_t s = 0; s < steps; ++s) {
    const Batch& batch = batches[static_cast<std::size_t>(state.step) % batches.size()];
    state = train_step(std::move(state), batch);
    if (state.step % interval == 0 || s + 1 == steps) {
      PassConfig eval;
      eval.train = false;
      const auto scores = forward_scores<float>(state.model, state.model.weights, batch.inputs, eval);
      FitLogEntry entry{state.step, state.last_loss,
                        macro_dice(stacked_labels(scores), stacked_labels(batch.targets_onehot),
                                   batch.targets_onehot.channels)};
      state.history.push_back(entry);
      if (options.on_log) options.on_log(entry);
    }
  }
  return state;
}

}  // namespace meshseg
