#include "meshseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace meshseg {

namespace {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() {
    // Box-Muller; avoids implementation-defined std::normal_distribution
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace

LabelledVolume make_phantom(const PhantomOptions& o, std::uint64_t seed) {
  Rng rng(seed);
  const Extents e = o.extents;
  const Affine affine = Affine::diagonal(o.spacing[0], o.spacing[1], o.spacing[2]);
  LabelledVolume out{Volume3D(e, o.spacing, affine), Volume3D(e, o.spacing, affine)};

  double centre[3];
  double core_axes[3];
  double shell_axes[3];
  for (int a = 0; a < 3; ++a) {
    const double half = e[a] / 2.0;
    centre[a] = (e[a] - 1) / 2.0 + rng.uniform(-0.1, 0.1) * half;
    core_axes[a] = rng.uniform(0.30, 0.45) * half;
    shell_axes[a] = core_axes[a] + rng.uniform(0.15, 0.22) * half;
  }

  for (int z = 0; z < e.z; ++z) {
    for (int y = 0; y < e.y; ++y) {
      for (int x = 0; x < e.x; ++x) {
        const double p[3] = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        double rc = 0.0;
        double rs = 0.0;
        for (int a = 0; a < 3; ++a) {
          const double d = p[a] - centre[a];
          rc += d * d / (core_axes[a] * core_axes[a]);
          rs += d * d / (shell_axes[a] * shell_axes[a]);
        }
        const int label = rc <= 1.0 ? 2 : (rs <= 1.0 ? 1 : 0);
        const double base = label == 2 ? o.white : (label == 1 ? o.gray : o.background);
        const double v = std::max(0.0, base + o.noise_sigma * rng.normal());
        out.image.at(x, y, z) = static_cast<float>(v * o.intensity_scale);
        out.labels.at(x, y, z) = static_cast<float>(label);
      }
    }
  }
  return out;
}

std::vector<LabelledVolume> make_phantom_suite(const PhantomOptions& options, int count, std::uint64_t seed) {
  std::vector<LabelledVolume> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out.push_back(make_phantom(options, seed + static_cast<std::uint64_t>(i)));
  return out;
}

}  // namespace meshseg
