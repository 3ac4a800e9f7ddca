#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace meshseg {

/// Integer voxel triple, used both for extents and for voxel indices.
struct Vec3i {
  int x = 0;
  int y = 0;
  int z = 0;

  std::int64_t product() const noexcept {
    return std::int64_t{x} * std::int64_t{y} * std::int64_t{z};
  }
  int& operator[](int axis) noexcept { return axis == 0 ? x : (axis == 1 ? y : z); }
  int operator[](int axis) const noexcept { return axis == 0 ? x : (axis == 1 ? y : z); }
  friend auto operator<=>(const Vec3i&, const Vec3i&) = default;
};

using Extents = Vec3i;

/// Row-major 4x4 matrix mapping voxel index (i,j,k,1) to world millimetres.
struct Affine {
  std::array<double, 16> m{};

  static Affine identity();
  static Affine diagonal(double sx, double sy, double sz);

  double operator()(int row, int col) const noexcept { return m[static_cast<std::size_t>(row * 4 + col)]; }
  double& operator()(int row, int col) noexcept { return m[static_cast<std::size_t>(row * 4 + col)]; }

  std::array<double, 3> apply(double i, double j, double k) const noexcept;
  Affine operator*(const Affine& rhs) const noexcept;
  /// Throws DegenerateAffine when the linear part is singular.
  Affine inverse() const;
  /// Affine composed with a voxel-index translation: voxel v maps to world(v + offset).
  Affine shifted(const Vec3i& offset) const noexcept;

  friend bool operator==(const Affine&, const Affine&) = default;
};

/// Dense scalar grid, x-fastest. Holds raw intensities and label maps alike.
class Volume3D {
 public:
  Volume3D() = default;
  Volume3D(Extents extents, std::array<double, 3> spacing, Affine affine);
  Volume3D(Extents extents, std::array<double, 3> spacing, Affine affine,
           std::vector<float> data);

  const Extents& extents() const noexcept { return extents_; }
  const std::array<double, 3>& spacing() const noexcept { return spacing_; }
  const Affine& affine() const noexcept { return affine_; }
  void set_affine(const Affine& affine) noexcept { affine_ = affine; }

  std::size_t size() const noexcept { return data_.size(); }
  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }

  std::size_t index(int x, int y, int z) const noexcept {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(extents_.x) *
               (static_cast<std::size_t>(y) + static_cast<std::size_t>(extents_.y) * static_cast<std::size_t>(z));
  }
  float& at(int x, int y, int z) noexcept { return data_[index(x, y, z)]; }
  float at(int x, int y, int z) const noexcept { return data_[index(x, y, z)]; }

 private:
  Extents extents_{};
  std::array<double, 3> spacing_{1.0, 1.0, 1.0};
  Affine affine_ = Affine::identity();
  std::vector<float> data_;
};

/// Inclusive voxel-index box.
struct BoundingBox {
  Vec3i min;
  Vec3i max;

  Extents extents() const noexcept { return {max.x - min.x + 1, max.y - min.y + 1, max.z - min.z + 1}; }
  bool contains(int x, int y, int z) const noexcept {
    return x >= min.x && x <= max.x && y >= min.y && y <= max.y && z >= min.z && z <= max.z;
  }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

enum class Interpolation { Trilinear, Nearest };

struct RescaleOptions {
  double lower_percentile = 0.0;
  double upper_percentile = 99.9;
};

inline constexpr Extents kConformExtents{256, 256, 256};

/// Trilinear sample at continuous voxel coordinates. Coordinates within half a
/// voxel of the lattice are clamped onto it; anything further out returns 0.
float sample_trilinear(const Volume3D& vol, double fx, double fy, double fz) noexcept;
float sample_nearest(const Volume3D& vol, double fx, double fy, double fz) noexcept;

/// Resample `vol` onto a new grid given by extents and voxel-to-world affine.
Volume3D resample(const Volume3D& vol, Extents extents, const Affine& target_affine,
                  Interpolation interp);

/// 1 mm isotropic, axis-aligned affine of `extents` centred on the world centre of `vol`.
Affine centred_grid_affine(const Volume3D& vol, Extents extents);

/// 256^3 @ 1 mm, trilinear, followed by robust_rescale.
Volume3D conform(const Volume3D& vol, const RescaleOptions& rescale = {});
/// Same grid as conform() but nearest-neighbour and no intensity change.
Volume3D conform_labels(const Volume3D& labels);

/// Lower order statistic at `percent` of the values: sorted[floor(p/100 * (n-1))].
/// Above 2^24 values the statistic is taken over a 1-in-8 strided sample.
double percentile(std::span<const float> values, double percent);

/// Map [p_lo, p_hi] onto integers [0, 255], clamping outside. Constant input maps to 0.
Volume3D robust_rescale(const Volume3D& vol, const RescaleOptions& options = {});

/// Tight box of nonzero voxels grown by `margin` and clamped. Throws EmptyMask.
BoundingBox mask_bbox(const Volume3D& mask, int margin);

/// Throws BoxOutOfRange when `box` is not inside the volume.
Volume3D crop(const Volume3D& vol, const BoundingBox& box);
/// Place a cropped volume at box.min inside a zero background of `target`.
Volume3D embed(const Volume3D& vol, const BoundingBox& box, Extents target);

}  // namespace meshseg
