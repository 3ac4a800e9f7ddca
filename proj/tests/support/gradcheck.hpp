#pragma once

// Central finite differences over the double-precision training path.

#include <cstddef>
#include <vector>

#include "meshseg/training.hpp"
#include "oracles.hpp"

namespace oracle {

struct GradCheck {
  double worst_param = 0.0;  // max relative error over parameters
  double worst_input = 0.0;  // max relative error over input voxels
  std::size_t checked = 0;
};

/// Compares backward<double> against (L(w+h) - L(w-h)) / 2h for every
/// learnable parameter and every input voxel. Running-statistic slots are
/// skipped: they do not enter a training-mode forward pass.
inline GradCheck gradient_check(const meshseg::ModelSpec& model, std::vector<double> params,
                                meshseg::Tensor<double> inputs, const meshseg::Tensor<double>& targets,
                                meshseg::PassConfig config, double h = 1e-5, double floor = 1e-4) {
  using meshseg::LayerKind;
  config.update_running_stats = false;
  const auto analytic = meshseg::backward<double>(model, params, inputs, targets, config);
  auto loss = [&](const std::vector<double>& p, const meshseg::Tensor<double>& x) {
    return meshseg::forward_loss<double>(model, p, x, targets, config);
  };

  std::vector<std::size_t> slots;
  for (const auto& l : model.layers) {
    auto add = [&](std::size_t byte_offset, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) slots.push_back(byte_offset / sizeof(float) + i);
    };
    if (l.kind == LayerKind::Conv3d) {
      add(l.weight_offset, l.weight_count());
      add(l.bias_offset, static_cast<std::size_t>(l.out_channels));
    } else if (l.kind == LayerKind::BatchNorm3d) {
      add(l.scale_offset, static_cast<std::size_t>(l.out_channels));
      add(l.shift_offset, static_cast<std::size_t>(l.out_channels));
    }
  }

  GradCheck out;
  std::vector<double> a, n;
  for (std::size_t s : slots) {
    const double keep = params[s];
    params[s] = keep + h;
    const double up = loss(params, inputs);
    params[s] = keep - h;
    const double down = loss(params, inputs);
    params[s] = keep;
    a.push_back(analytic.param_grads[s]);
    n.push_back((up - down) / (2 * h));
  }
  out.worst_param = max_relative_error(a, n, floor);
  out.checked += a.size();

  a.clear();
  n.clear();
  for (std::size_t i = 0; i < inputs.data.size(); ++i) {
    const double keep = inputs.data[i];
    inputs.data[i] = keep + h;
    const double up = loss(params, inputs);
    inputs.data[i] = keep - h;
    const double down = loss(params, inputs);
    inputs.data[i] = keep;
    a.push_back(analytic.input_grad.data[i]);
    n.push_back((up - down) / (2 * h));
  }
  out.worst_input = max_relative_error(a, n, floor);
  out.checked += a.size();
  return out;
}

inline meshseg::Tensor<double> random_onehot(int batch, int classes, meshseg::Extents e, std::mt19937_64& rng) {
  meshseg::Tensor<double> t(batch, classes, e);
  for (int b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < t.voxels(); ++i) t.channel(b, static_cast<int>(rng() % static_cast<unsigned>(classes)))[i] = 1.0;
  return t;
}

inline meshseg::Tensor<double> random_tensor(int batch, int channels, meshseg::Extents e, std::mt19937_64& rng,
                                             double lo = 0.0, double hi = 1.0) {
  meshseg::Tensor<double> t(batch, channels, e);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline std::vector<double> params_of(const meshseg::ModelSpec& m) {
  return std::vector<double>(m.weights.begin(), m.weights.end());
}

}  // namespace oracle
