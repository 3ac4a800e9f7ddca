#include "meshseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "meshseg/error.hpp"

namespace meshseg {

Affine Affine::identity() { return diagonal(1.0, 1.0, 1.0); }

Affine Affine::diagonal(double sx, double sy, double sz) {
  Affine a;
  a(0, 0) = sx;
  a(1, 1) = sy;
  a(2, 2) = sz;
  a(3, 3) = 1.0;
  return a;
}

std::array<double, 3> Affine::apply(double i, double j, double k) const noexcept {
  const auto& a = *this;
  return {a(0, 0) * i + a(0, 1) * j + a(0, 2) * k + a(0, 3),
          a(1, 0) * i + a(1, 1) * j + a(1, 2) * k + a(1, 3),
          a(2, 0) * i + a(2, 1) * j + a(2, 2) * k + a(2, 3)};
}

Affine Affine::operator*(const Affine& rhs) const noexcept {
  Affine out;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += (*this)(r, k) * rhs(k, c);
      out(r, c) = s;
    }
  }
  return out;
}

Affine Affine::inverse() const {
  const auto& a = *this;
  const double c00 = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  const double c01 = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  const double c02 = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  const double det = a(0, 0) * c00 + a(0, 1) * c01 + a(0, 2) * c02;
  double scale = 0.0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) scale = std::max(scale, std::abs(a(r, c)));
  if (!std::isfinite(det) || scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale * scale) {
    fail(ErrorKind::DegenerateAffine, "voxel-to-world matrix is singular");
  }
  Affine inv;
  inv(0, 0) = c00 / det;
  inv(0, 1) = (a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2)) / det;
  inv(0, 2) = (a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1)) / det;
  inv(1, 0) = c01 / det;
  inv(1, 1) = (a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0)) / det;
  inv(1, 2) = (a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2)) / det;
  inv(2, 0) = c02 / det;
  inv(2, 1) = (a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1)) / det;
  inv(2, 2) = (a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0)) / det;
  for (int r = 0; r < 3; ++r) {
    inv(r, 3) = -(inv(r, 0) * a(0, 3) + inv(r, 1) * a(1, 3) + inv(r, 2) * a(2, 3));
  }
  inv(3, 3) = 1.0;
  return inv;
}

Affine Affine::shifted(const Vec3i& offset) const noexcept {
  Affine out = *this;
  const auto origin = apply(offset.x, offset.y, offset.z);
  for (int r = 0; r < 3; ++r) out(r, 3) = origin[static_cast<std::size_t>(r)];
  return out;
}

Volume3D::Volume3D(Extents extents, std::array<double, 3> spacing, Affine affine)
    : Volume3D(extents, spacing, affine,
               std::vector<float>(static_cast<std::size_t>(std::max<std::int64_t>(extents.product(), 0)), 0.0f)) {}

Volume3D::Volume3D(Extents extents, std::array<double, 3> spacing, Affine affine,
                   std::vector<float> data)
    : extents_(extents), spacing_(spacing), affine_(affine), data_(std::move(data)) {
  if (extents.x < 1 || extents.y < 1 || extents.z < 1) {
    fail(ErrorKind::BadDims, "volume extents must be positive");
  }
  for (double s : spacing_) {
    if (!(s > 0.0)) fail(ErrorKind::BadDims, "voxel spacing must be positive");
  }
  if (affine_(3, 0) != 0.0 || affine_(3, 1) != 0.0 || affine_(3, 2) != 0.0 || affine_(3, 3) != 1.0) {
    fail(ErrorKind::DegenerateAffine, "affine last row must be (0,0,0,1)");
  }
  if (static_cast<std::int64_t>(data_.size()) != extents.product()) {
    fail(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                       " does not match extents product " +
                                       std::to_string(extents.product()));
  }
}

namespace {

// Clamp a coordinate lying within half a voxel of [0, n-1]; NaN signals out of field.
double clamp_to_field(double f, int n) noexcept {
  if (f < -0.5 || f > static_cast<double>(n) - 0.5) return std::nan("");
  return std::clamp(f, 0.0, static_cast<double>(n - 1));
}

std::array<double, 3> column_norms(const Affine& a) {
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    out[static_cast<std::size_t>(c)] =
        std::sqrt(a(0, c) * a(0, c) + a(1, c) * a(1, c) + a(2, c) * a(2, c));
  }
  return out;
}

}  // namespace

float sample_trilinear(const Volume3D& vol, double fx, double fy, double fz) noexcept {
  const Extents& e = vol.extents();
  fx = clamp_to_field(fx, e.x);
  fy = clamp_to_field(fy, e.y);
  fz = clamp_to_field(fz, e.z);
  if (std::isnan(fx) || std::isnan(fy) || std::isnan(fz)) return 0.0f;

  const int x0 = std::min(static_cast<int>(std::floor(fx)), e.x - 1);
  const int y0 = std::min(static_cast<int>(std::floor(fy)), e.y - 1);
  const int z0 = std::min(static_cast<int>(std::floor(fz)), e.z - 1);
  const int x1 = std::min(x0 + 1, e.x - 1);
  const int y1 = std::min(y0 + 1, e.y - 1);
  const int z1 = std::min(z0 + 1, e.z - 1);
  const double tx = fx - x0;
  const double ty = fy - y0;
  const double tz = fz - z0;

  const double c00 = vol.at(x0, y0, z0) * (1 - tx) + vol.at(x1, y0, z0) * tx;
  const double c10 = vol.at(x0, y1, z0) * (1 - tx) + vol.at(x1, y1, z0) * tx;
  const double c01 = vol.at(x0, y0, z1) * (1 - tx) + vol.at(x1, y0, z1) * tx;
  const double c11 = vol.at(x0, y1, z1) * (1 - tx) + vol.at(x1, y1, z1) * tx;
  const double c0 = c00 * (1 - ty) + c10 * ty;
  const double c1 = c01 * (1 - ty) + c11 * ty;
  return static_cast<float>(c0 * (1 - tz) + c1 * tz);
}

float sample_nearest(const Volume3D& vol, double fx, double fy, double fz) noexcept {
  const Extents& e = vol.extents();
  fx = clamp_to_field(fx, e.x);
  fy = clamp_to_field(fy, e.y);
  fz = clamp_to_field(fz, e.z);
  if (std::isnan(fx) || std::isnan(fy) || std::isnan(fz)) return 0.0f;
  return vol.at(static_cast<int>(std::lround(fx)), static_cast<int>(std::lround(fy)),
                static_cast<int>(std::lround(fz)));
}

Volume3D resample(const Volume3D& vol, Extents extents, const Affine& target_affine,
                  Interpolation interp) {
  // target voxel -> world -> source voxel
  const Affine to_source = vol.affine().inverse() * target_affine;
  Volume3D out(extents, column_norms(target_affine), target_affine);
  for (int z = 0; z < extents.z; ++z) {
    for (int y = 0; y < extents.y; ++y) {
      for (int x = 0; x < extents.x; ++x) {
        const auto p = to_source.apply(x, y, z);
        out.at(x, y, z) = interp == Interpolation::Trilinear
                              ? sample_trilinear(vol, p[0], p[1], p[2])
                              : sample_nearest(vol, p[0], p[1], p[2]);
      }
    }
  }
  return out;
}

Affine centred_grid_affine(const Volume3D& vol, Extents extents) {
  const Extents& e = vol.extents();
  const auto centre = vol.affine().apply((e.x - 1) / 2.0, (e.y - 1) / 2.0, (e.z - 1) / 2.0);
  Affine a = Affine::identity();
  a(0, 3) = centre[0] - (extents.x - 1) / 2.0;
  a(1, 3) = centre[1] - (extents.y - 1) / 2.0;
  a(2, 3) = centre[2] - (extents.z - 1) / 2.0;
  return a;
}

Volume3D conform(const Volume3D& vol, const RescaleOptions& rescale) {
  return robust_rescale(
      resample(vol, kConformExtents, centred_grid_affine(vol, kConformExtents), Interpolation::Trilinear),
      rescale);
}

Volume3D conform_labels(const Volume3D& labels) {
  return resample(labels, kConformExtents, centred_grid_affine(labels, kConformExtents),
                  Interpolation::Nearest);
}

double percentile(std::span<const float> values, double percent) {
  if (values.empty()) fail(ErrorKind::InvalidArgument, "percentile of an empty set");
  constexpr std::size_t kStrideThreshold = std::size_t{1} << 24;
  std::vector<float> sample;
  if (values.size() > kStrideThreshold) {
    sample.reserve(values.size() / 8 + 1);
    for (std::size_t i = 0; i < values.size(); i += 8) sample.push_back(values[i]);
  } else {
    sample.assign(values.begin(), values.end());
  }
  const double q = std::clamp(percent, 0.0, 100.0) / 100.0;
  const auto rank = static_cast<std::size_t>(std::floor(q * static_cast<double>(sample.size() - 1)));
  std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank), sample.end());
  return sample[rank];
}

Volume3D robust_rescale(const Volume3D& vol, const RescaleOptions& options) {
  const double lo = percentile(vol.data(), options.lower_percentile);
  const double hi = percentile(vol.data(), options.upper_percentile);
  Volume3D out(vol.extents(), vol.spacing(), vol.affine());
  if (!(hi > lo)) return out;
  const double range = hi - lo;
  auto src = vol.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double t = std::clamp((static_cast<double>(src[i]) - lo) / range, 0.0, 1.0);
    dst[i] = static_cast<float>(std::round(t * 255.0));
  }
  return out;
}

BoundingBox mask_bbox(const Volume3D& mask, int margin) {
  if (margin < 0) fail(ErrorKind::InvalidArgument, "margin must be non-negative");
  const Extents& e = mask.extents();
  BoundingBox box{{e.x, e.y, e.z}, {-1, -1, -1}};
  for (int z = 0; z < e.z; ++z) {
    for (int y = 0; y < e.y; ++y) {
      for (int x = 0; x < e.x; ++x) {
        if (mask.at(x, y, z) == 0.0f) continue;
        box.min = {std::min(box.min.x, x), std::min(box.min.y, y), std::min(box.min.z, z)};
        box.max = {std::max(box.max.x, x), std::max(box.max.y, y), std::max(box.max.z, z)};
      }
    }
  }
  if (box.max.x < 0) fail(ErrorKind::EmptyMask, "mask has no nonzero voxel");
  for (int a = 0; a < 3; ++a) {
    box.min[a] = std::max(box.min[a] - margin, 0);
    box.max[a] = std::min(box.max[a] + margin, e[a] - 1);
  }
  return box;
}

namespace {

void check_box(const BoundingBox& box, const Extents& e, const char* what) {
  for (int a = 0; a < 3; ++a) {
    if (box.min[a] < 0 || box.max[a] >= e[a] || box.min[a] > box.max[a]) {
      fail(ErrorKind::BoxOutOfRange, std::string(what) + ": box does not fit extents");
    }
  }
}

}  // namespace

Volume3D crop(const Volume3D& vol, const BoundingBox& box) {
  check_box(box, vol.extents(), "crop");
  const Extents ce = box.extents();
  Volume3D out(ce, vol.spacing(), vol.affine().shifted(box.min));
  for (int z = 0; z < ce.z; ++z) {
    for (int y = 0; y < ce.y; ++y) {
      const float* src = &vol.data()[vol.index(box.min.x, box.min.y + y, box.min.z + z)];
      std::copy(src, src + ce.x, &out.data()[out.index(0, y, z)]);
    }
  }
  return out;
}

Volume3D embed(const Volume3D& vol, const BoundingBox& box, Extents target) {
  check_box(box, target, "embed");
  if (box.extents() != vol.extents()) {
    fail(ErrorKind::BoxOutOfRange, "embed: box extents differ from the cropped volume");
  }
  const Vec3i back{-box.min.x, -box.min.y, -box.min.z};
  Volume3D out(target, vol.spacing(), vol.affine().shifted(back));
  const Extents ce = vol.extents();
  for (int z = 0; z < ce.z; ++z) {
    for (int y = 0; y < ce.y; ++y) {
      const float* src = &vol.data()[vol.index(0, y, z)];
      std::copy(src, src + ce.x, &out.data()[out.index(box.min.x, box.min.y + y, box.min.z + z)]);
    }
  }
  return out;
}

}  // namespace meshseg
