#pragma once

#include <cstdint>
#include <vector>

#include "meshseg/volume.hpp"

namespace meshseg {

enum class Connectivity { Six = 6, TwentySix = 26 };

/// Throws InvalidArgument for anything other than 6 or 26.
Connectivity connectivity_from_int(int n);

struct ComponentLabeling {
  Extents extents{};
  std::vector<std::int32_t> component_id;  // 0 = background, x fastest
  std::vector<std::int64_t> sizes;         // sizes[id], sizes[0] unused
  int count = 0;
};

/// Components of the nonzero voxels. Ids are 1..count in order of each
/// component's first voxel in x-fastest scan order.
ComponentLabeling label_components(const Volume3D& binary, Connectivity connectivity = Connectivity::TwentySix);

/// Zero every foreground voxel outside the largest connected component of the
/// nonzero mask; surviving voxels keep their class. Ties go to the lowest id.
/// Throws EmptyMask when there is no foreground.
Volume3D keep_largest(const Volume3D& labels, Connectivity connectivity = Connectivity::TwentySix);

/// keep_largest applied separately to each nonzero class value.
Volume3D keep_largest_per_class(const Volume3D& labels, Connectivity connectivity = Connectivity::TwentySix);

}  // namespace meshseg
