#pragma once

// Row-shifted dilated convolution kernels shared by inference (float) and
// training (float and double). Layout everywhere is [channel][z][y][x].

#include <algorithm>
#include <cstddef>

#include "meshseg/volume.hpp"

namespace meshseg::detail {

struct ConvGeometry {
  int in_channels = 1;
  int out_channels = 1;
  Extents in{};
  Extents out{};
  Vec3i kernel{1, 1, 1};
  Vec3i dilation{1, 1, 1};
  Vec3i padding{0, 0, 0};

  std::size_t in_voxels() const noexcept { return static_cast<std::size_t>(in.product()); }
  std::size_t out_voxels() const noexcept { return static_cast<std::size_t>(out.product()); }
  std::size_t taps() const noexcept { return static_cast<std::size_t>(kernel.product()); }
};

/// Output index range [lo, hi) for which out + shift lands inside [0, n_in).
struct Span1 {
  int lo;
  int hi;
};

inline Span1 valid_range(int shift, int n_in, int n_out) noexcept {
  return {std::max(0, -shift), std::min(n_out, n_in - shift)};
}

/// out[co] = bias[co] + sum_ci sum_tap w * in(pos - padding + dilation * tap).
/// Per output voxel the summation order is bias, then (ci, kz, ky, kx) ascending.
template <typename T>
void conv_forward(const T* in, T* out, const T* weights, const T* bias, const ConvGeometry& g) {
  const std::size_t in_plane = static_cast<std::size_t>(g.in.x) * static_cast<std::size_t>(g.in.y);
  const std::size_t out_plane = static_cast<std::size_t>(g.out.x) * static_cast<std::size_t>(g.out.y);
  for (int co = 0; co < g.out_channels; ++co) {
    T* oc = out + static_cast<std::size_t>(co) * g.out_voxels();
    for (int z = 0; z < g.out.z; ++z) {
      T* oplane = oc + static_cast<std::size_t>(z) * out_plane;
      std::fill(oplane, oplane + out_plane, bias[co]);
      for (int ci = 0; ci < g.in_channels; ++ci) {
        const T* ic = in + static_cast<std::size_t>(ci) * g.in_voxels();
        const T* w = weights + (static_cast<std::size_t>(co) * static_cast<std::size_t>(g.in_channels) +
                                static_cast<std::size_t>(ci)) * g.taps();
        for (int kz = 0; kz < g.kernel.z; ++kz) {
          const int zi = z - g.padding.z + g.dilation.z * kz;
          if (zi < 0 || zi >= g.in.z) continue;
          const T* iplane = ic + static_cast<std::size_t>(zi) * in_plane;
          for (int ky = 0; ky < g.kernel.y; ++ky) {
            const int sy = -g.padding.y + g.dilation.y * ky;
            const Span1 ry = valid_range(sy, g.in.y, g.out.y);
            for (int kx = 0; kx < g.kernel.x; ++kx) {
              const int sx = -g.padding.x + g.dilation.x * kx;
              const Span1 rx = valid_range(sx, g.in.x, g.out.x);
              const T wv = w[(static_cast<std::size_t>(kz) * static_cast<std::size_t>(g.kernel.y) +
                              static_cast<std::size_t>(ky)) * static_cast<std::size_t>(g.kernel.x) +
                             static_cast<std::size_t>(kx)];
              if (rx.lo >= rx.hi) continue;
              for (int y = ry.lo; y < ry.hi; ++y) {
                T* orow = oplane + static_cast<std::size_t>(y) * static_cast<std::size_t>(g.out.x);
                const T* irow = iplane + static_cast<std::size_t>(y + sy) * static_cast<std::size_t>(g.in.x);
                for (int x = rx.lo; x < rx.hi; ++x) orow[x] += wv * irow[x + sx];
              }
            }
          }
        }
      }
    }
  }
}

/// Accumulates input, weight and bias gradients of conv_forward. `grad_in`
/// may be null when the input gradient is not needed.
template <typename T>
void conv_backward(const T* in, const T* grad_out, const T* weights, T* grad_in, T* grad_w, T* grad_b,
                   const ConvGeometry& g) {
  const std::size_t in_plane = static_cast<std::size_t>(g.in.x) * static_cast<std::size_t>(g.in.y);
  const std::size_t out_plane = static_cast<std::size_t>(g.out.x) * static_cast<std::size_t>(g.out.y);
  for (int co = 0; co < g.out_channels; ++co) {
    const T* go = grad_out + static_cast<std::size_t>(co) * g.out_voxels();
    T bsum = 0;
    for (std::size_t i = 0; i < g.out_voxels(); ++i) bsum += go[i];
    grad_b[co] += bsum;

    for (int ci = 0; ci < g.in_channels; ++ci) {
      const T* ic = in + static_cast<std::size_t>(ci) * g.in_voxels();
      T* gic = grad_in ? grad_in + static_cast<std::size_t>(ci) * g.in_voxels() : nullptr;
      const std::size_t wbase =
          (static_cast<std::size_t>(co) * static_cast<std::size_t>(g.in_channels) + static_cast<std::size_t>(ci)) *
          g.taps();
      for (int kz = 0; kz < g.kernel.z; ++kz) {
        const int sz = -g.padding.z + g.dilation.z * kz;
        const Span1 rz = valid_range(sz, g.in.z, g.out.z);
        for (int ky = 0; ky < g.kernel.y; ++ky) {
          const int sy = -g.padding.y + g.dilation.y * ky;
          const Span1 ry = valid_range(sy, g.in.y, g.out.y);
          for (int kx = 0; kx < g.kernel.x; ++kx) {
            const int sx = -g.padding.x + g.dilation.x * kx;
            const Span1 rx = valid_range(sx, g.in.x, g.out.x);
            const std::size_t widx = wbase + (static_cast<std::size_t>(kz) * static_cast<std::size_t>(g.kernel.y) +
                                              static_cast<std::size_t>(ky)) * static_cast<std::size_t>(g.kernel.x) +
                                     static_cast<std::size_t>(kx);
            const T wv = weights[widx];
            T dot = 0;
            for (int z = rz.lo; z < rz.hi; ++z) {
              for (int y = ry.lo; y < ry.hi; ++y) {
                const std::size_t orow = static_cast<std::size_t>(z) * out_plane +
                                         static_cast<std::size_t>(y) * static_cast<std::size_t>(g.out.x);
                const std::size_t irow = static_cast<std::size_t>(z + sz) * in_plane +
                                         static_cast<std::size_t>(y + sy) * static_cast<std::size_t>(g.in.x);
                const T* gorow = go + orow;
                const T* inrow = ic + irow;
                T row = 0;
                for (int x = rx.lo; x < rx.hi; ++x) row += gorow[x] * inrow[x + sx];
                dot += row;
                if (gic) {
                  T* girow = gic + irow;
                  for (int x = rx.lo; x < rx.hi; ++x) girow[x + sx] += wv * gorow[x];
                }
              }
            }
            grad_w[widx] += dot;
          }
        }
      }
    }
  }
}

}  // namespace meshseg::detail
