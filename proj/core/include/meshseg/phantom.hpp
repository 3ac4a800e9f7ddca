#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "meshseg/training.hpp"
#include "meshseg/volume.hpp"

namespace meshseg {

/// Synthetic three-class head phantom: background, an ellipsoidal shell
/// (label 1, "gray") around an ellipsoidal core (label 2, "white").
struct PhantomOptions {
  Extents extents{32, 32, 32};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  double background = 0.1;
  double gray = 0.5;
  double white = 0.9;
  double noise_sigma = 0.04;
  double intensity_scale = 1.0;
};

LabelledVolume make_phantom(const PhantomOptions& options, std::uint64_t seed);

/// `count` phantoms seeded seed, seed+1, ...
std::vector<LabelledVolume> make_phantom_suite(const PhantomOptions& options, int count, std::uint64_t seed);

}  // namespace meshseg
