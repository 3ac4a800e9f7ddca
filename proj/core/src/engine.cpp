#include "meshseg/engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "conv_kernels.hpp"
#include "meshseg/error.hpp"

namespace meshseg {

FeatureMap to_feature_map(const Volume3D& vol) {
  FeatureMap fm;
  fm.channels = 1;
  fm.extents = vol.extents();
  fm.data.assign(vol.data().begin(), vol.data().end());
  return fm;
}

void MemoryBudget::Lease::release() noexcept {
  if (!owner_) return;
  owner_->live_bytes_ -= bytes_;
  if (activation_) --owner_->live_activations_;
  owner_ = nullptr;
  bytes_ = 0;
}

MemoryBudget::Lease MemoryBudget::reserve(std::size_t bytes, const std::string& what, bool activation) {
  if (bytes > peak_bytes_ || live_bytes_ > peak_bytes_ - bytes) {
    fail(ErrorKind::BudgetExceeded, what + ": reserving " + std::to_string(bytes) + " bytes with " +
                                        std::to_string(live_bytes_) + " live exceeds the " +
                                        std::to_string(peak_bytes_) + "-byte budget");
  }
  live_bytes_ += bytes;
  high_water_ = std::max(high_water_, live_bytes_);
  if (activation) {
    ++live_activations_;
    max_live_activations_ = std::max(max_live_activations_, live_activations_);
  }
  return Lease(this, bytes, activation);
}

void MemoryBudget::reset_statistics() noexcept {
  high_water_ = live_bytes_;
  max_live_activations_ = live_activations_;
}

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::ShapeMismatch, what);
}

detail::ConvGeometry geometry(const FeatureMap& input, const LayerSpec& layer) {
  require(layer.kind == LayerKind::Conv3d, "conv3d called with a " + std::string(to_string(layer.kind)) + " layer");
  require(input.channels == layer.in_channels,
          "conv3d expects " + std::to_string(layer.in_channels) + " input channels, got " +
              std::to_string(input.channels));
  require(input.data.size() == static_cast<std::size_t>(input.channels) * input.voxels(),
          "feature map data length does not match its shape");
  const Extents out = layer.output_extents(input.extents);
  require(out.x >= 1 && out.y >= 1 && out.z >= 1, "conv3d output extent would be empty");
  return {layer.in_channels, layer.out_channels, input.extents, out, layer.kernel, layer.dilation, layer.padding};
}

void check_blob(std::span<const float> blob, std::size_t byte_offset, std::size_t count) {
  if (byte_offset % sizeof(float) != 0 || byte_offset / sizeof(float) > blob.size() ||
      count > blob.size() - byte_offset / sizeof(float)) {
    fail(ErrorKind::OffsetOutOfRange, "layer parameters fall outside the weight blob");
  }
}

void batchnorm_in_place(FeatureMap& fm, const LayerSpec& layer, std::span<const float> blob) {
  require(layer.kind == LayerKind::BatchNorm3d, "batchnorm called with a " + std::string(to_string(layer.kind)) +
                                                    " layer");
  require(fm.channels == layer.in_channels, "batchnorm channel count mismatch");
  const auto c = static_cast<std::size_t>(layer.out_channels);
  for (std::size_t off : {layer.scale_offset, layer.shift_offset, layer.mean_offset, layer.var_offset}) {
    check_blob(blob, off, c);
  }
  const float* scale = blob.data() + layer.scale_offset / sizeof(float);
  const float* shift = blob.data() + layer.shift_offset / sizeof(float);
  const float* mean = blob.data() + layer.mean_offset / sizeof(float);
  const float* var = blob.data() + layer.var_offset / sizeof(float);
  for (int ch = 0; ch < fm.channels; ++ch) {
    if (var[ch] < 0.0f) fail(ErrorKind::NegativeVariance, "running variance of channel " + std::to_string(ch) + " < 0");
    const float gain = static_cast<float>(scale[ch] / std::sqrt(static_cast<double>(var[ch]) + layer.epsilon));
    const float m = mean[ch];
    const float s = shift[ch];
    for (float& v : fm.channel(ch)) v = gain * (v - m) + s;
  }
}

void relu_in_place(FeatureMap& fm) {
  for (float& v : fm.data) v = v > 0.0f ? v : 0.0f;
}

#ifndef NDEBUG
void check_finite(const FeatureMap& fm, std::size_t layer) {
  for (float v : fm.data) {
    if (!std::isfinite(v)) fail(ErrorKind::ShapeMismatch, "non-finite activation after layer " + std::to_string(layer));
  }
}
#endif

}  // namespace

FeatureMap conv3d_ref(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob) {
  const auto g = geometry(input, layer);
  check_blob(blob, layer.weight_offset, layer.weight_count());
  check_blob(blob, layer.bias_offset, static_cast<std::size_t>(layer.out_channels));
  const float* w = blob.data() + layer.weight_offset / sizeof(float);
  const float* b = blob.data() + layer.bias_offset / sizeof(float);

  FeatureMap out(layer.out_channels, g.out);
  for (int co = 0; co < g.out_channels; ++co) {
    for (int z = 0; z < g.out.z; ++z) {
      for (int y = 0; y < g.out.y; ++y) {
        for (int x = 0; x < g.out.x; ++x) {
          float acc = b[co];
          for (int ci = 0; ci < g.in_channels; ++ci) {
            for (int kz = 0; kz < g.kernel.z; ++kz) {
              const int zi = z - g.padding.z + g.dilation.z * kz;
              for (int ky = 0; ky < g.kernel.y; ++ky) {
                const int yi = y - g.padding.y + g.dilation.y * ky;
                for (int kx = 0; kx < g.kernel.x; ++kx) {
                  const int xi = x - g.padding.x + g.dilation.x * kx;
                  if (xi < 0 || yi < 0 || zi < 0 || xi >= g.in.x || yi >= g.in.y || zi >= g.in.z) continue;
                  const std::size_t widx =
                      ((static_cast<std::size_t>(co) * static_cast<std::size_t>(g.in_channels) +
                        static_cast<std::size_t>(ci)) * static_cast<std::size_t>(g.kernel.z) +
                       static_cast<std::size_t>(kz)) * static_cast<std::size_t>(g.kernel.y) * static_cast<std::size_t>(g.kernel.x) +
                      static_cast<std::size_t>(ky) * static_cast<std::size_t>(g.kernel.x) + static_cast<std::size_t>(kx);
                  acc += w[widx] * input.at(ci, xi, yi, zi);
                }
              }
            }
          }
          out.at(co, x, y, z) = acc;
        }
      }
    }
  }
  return out;
}

FeatureMap conv3d_fast(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob) {
  const auto g = geometry(input, layer);
  check_blob(blob, layer.weight_offset, layer.weight_count());
  check_blob(blob, layer.bias_offset, static_cast<std::size_t>(layer.out_channels));
  FeatureMap out(layer.out_channels, g.out);
  detail::conv_forward(input.data.data(), out.data.data(), blob.data() + layer.weight_offset / sizeof(float),
                       blob.data() + layer.bias_offset / sizeof(float), g);
  return out;
}

FeatureMap batchnorm_eval(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob) {
  FeatureMap out = input;
  batchnorm_in_place(out, layer, blob);
  return out;
}

FeatureMap relu(FeatureMap input) {
  relu_in_place(input);
  return input;
}

FeatureMap dropout_eval(FeatureMap input) { return input; }

FeatureMap run_model(const ModelSpec& model, FeatureMap input, MemoryBudget& budget) {
  if (input.channels != 1) fail(ErrorKind::ShapeMismatch, "model input must have exactly one channel");
  const std::span<const float> blob(model.weights);

  auto weights_lease = budget.reserve(model.weight_bytes(), "weights", /*activation=*/false);
  auto current_lease = budget.reserve(input.bytes(), "input");
  FeatureMap current = std::move(input);

  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& layer = model.layers[i];
    const std::string tag = "layer " + std::to_string(i + 1) + " (" + std::string(to_string(layer.kind)) + ")";
    switch (layer.kind) {
      case LayerKind::Conv3d: {
        const Extents out_ext = layer.output_extents(current.extents);
        const std::size_t out_bytes = static_cast<std::size_t>(layer.out_channels) *
                                      static_cast<std::size_t>(std::max<std::int64_t>(out_ext.product(), 0)) *
                                      sizeof(float);
        auto next_lease = budget.reserve(out_bytes, tag);
        FeatureMap next = conv3d_fast(current, layer, blob);
        // dispose of the consumed activation before the next layer allocates
        current = std::move(next);
        current_lease = std::move(next_lease);
        break;
      }
      case LayerKind::BatchNorm3d:
        batchnorm_in_place(current, layer, blob);
        break;
      case LayerKind::ReLU:
        relu_in_place(current);
        break;
      case LayerKind::Dropout3d:
        break;
    }
#ifndef NDEBUG
    check_finite(current, i + 1);
#endif
  }
  if (current.channels != static_cast<int>(model.labels.size())) {
    fail(ErrorKind::ShapeMismatch, "model produced " + std::to_string(current.channels) + " channels for " +
                                       std::to_string(model.labels.size()) + " labels");
  }
  return current;
}

Volume3D argmax_labels(const FeatureMap& scores) {
  if (scores.channels < 1) fail(ErrorKind::ShapeMismatch, "argmax needs at least one channel");
  Volume3D labels(scores.extents, {1.0, 1.0, 1.0}, Affine::identity());
  const std::size_t n = scores.voxels();
  auto out = labels.data();
  std::vector<float> best(scores.channel(0).begin(), scores.channel(0).end());
  for (int c = 1; c < scores.channels; ++c) {
    const auto ch = scores.channel(c);
    for (std::size_t i = 0; i < n; ++i) {
      if (ch[i] > best[i]) {
        best[i] = ch[i];
        out[i] = static_cast<float>(c);
      }
    }
  }
  return labels;
}

}  // namespace meshseg
