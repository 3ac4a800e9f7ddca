#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "meshseg/model.hpp"
#include "meshseg/volume.hpp"

namespace meshseg {

/// Multi-channel activation, layout [channel][z][y][x].
struct FeatureMap {
  int channels = 0;
  Extents extents{};
  std::vector<float> data;

  FeatureMap() = default;
  FeatureMap(int channels_, Extents extents_)
      : channels(channels_), extents(extents_),
        data(static_cast<std::size_t>(channels_) * static_cast<std::size_t>(extents_.product()), 0.0f) {}

  std::size_t voxels() const noexcept { return static_cast<std::size_t>(extents.product()); }
  std::size_t bytes() const noexcept { return data.size() * sizeof(float); }
  std::span<float> channel(int c) noexcept {
    return std::span<float>(data).subspan(static_cast<std::size_t>(c) * voxels(), voxels());
  }
  std::span<const float> channel(int c) const noexcept {
    return std::span<const float>(data).subspan(static_cast<std::size_t>(c) * voxels(), voxels());
  }
  float& at(int c, int x, int y, int z) noexcept {
    return data[static_cast<std::size_t>(c) * voxels() + index(x, y, z)];
  }
  float at(int c, int x, int y, int z) const noexcept {
    return data[static_cast<std::size_t>(c) * voxels() + index(x, y, z)];
  }
  std::size_t index(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(extents.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(extents.y) * static_cast<std::size_t>(z));
  }
};

/// Single-channel feature map holding the volume's intensities.
FeatureMap to_feature_map(const Volume3D& vol);

/// Byte accounting for one inference run. Stands in for the fixed texture
/// memory a GPU backend can hand out: reserving past `peak_bytes` throws
/// BudgetExceeded before anything is allocated.
class MemoryBudget {
 public:
  static constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

  class Lease {
   public:
    Lease() = default;
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    Lease(Lease&& other) noexcept { swap(other); }
    Lease& operator=(Lease&& other) noexcept {
      Lease tmp(std::move(other));
      swap(tmp);
      return *this;
    }
    ~Lease() { release(); }

    void release() noexcept;
    std::size_t bytes() const noexcept { return bytes_; }

   private:
    friend class MemoryBudget;
    Lease(MemoryBudget* owner, std::size_t bytes, bool activation) noexcept
        : owner_(owner), bytes_(bytes), activation_(activation) {}
    void swap(Lease& other) noexcept {
      std::swap(owner_, other.owner_);
      std::swap(bytes_, other.bytes_);
      std::swap(activation_, other.activation_);
    }

    MemoryBudget* owner_ = nullptr;
    std::size_t bytes_ = 0;
    bool activation_ = false;
  };

  explicit MemoryBudget(std::size_t peak_bytes = kUnlimited) : peak_bytes_(peak_bytes) {}
  MemoryBudget(const MemoryBudget&) = delete;
  MemoryBudget& operator=(const MemoryBudget&) = delete;

  /// `activation` marks buffers that count towards the live-activation tally.
  Lease reserve(std::size_t bytes, const std::string& what, bool activation = true);

  std::size_t peak_bytes() const noexcept { return peak_bytes_; }
  std::size_t live_bytes() const noexcept { return live_bytes_; }
  std::size_t high_water() const noexcept { return high_water_; }
  int live_activations() const noexcept { return live_activations_; }
  int max_live_activations() const noexcept { return max_live_activations_; }
  void reset_statistics() noexcept;

 private:
  std::size_t peak_bytes_;
  std::size_t live_bytes_ = 0;
  std::size_t high_water_ = 0;
  int live_activations_ = 0;
  int max_live_activations_ = 0;
};

/// Direct evaluation of the dilated convolution, one output voxel at a time,
/// zero padding, float accumulation in (ci, kz, ky, kx) order.
FeatureMap conv3d_ref(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob);

/// Same result as conv3d_ref within 1e-4; accumulates whole rows per kernel tap.
FeatureMap conv3d_fast(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob);

/// Inference-mode batch normalisation from running statistics.
FeatureMap batchnorm_eval(const FeatureMap& input, const LayerSpec& layer, std::span<const float> blob);
FeatureMap relu(FeatureMap input);
FeatureMap dropout_eval(FeatureMap input);

/// Layer-by-layer forward pass. Each conv output is reserved against `budget`
/// while its input is still live; the input is released as soon as the output
/// exists, so at most two activation buffers are ever live. The weights are
/// reserved for the duration of the run.
FeatureMap run_model(const ModelSpec& model, FeatureMap input, MemoryBudget& budget);

/// Per-voxel index of the largest channel; ties resolve to the lowest index.
Volume3D argmax_labels(const FeatureMap& scores);

}  // namespace meshseg
