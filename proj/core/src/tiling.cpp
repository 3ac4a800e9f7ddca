#include "meshseg/tiling.hpp"

#include <algorithm>
#include <cstdint>
#include <string>

#include "meshseg/error.hpp"

namespace meshseg {

SubvolumeGrid divide(Extents extents, int cube, int halo) {
  if (cube < 1) fail(ErrorKind::BadCubeSize, "cube edge must be at least 1, got " + std::to_string(cube));
  if (halo < 0) fail(ErrorKind::InvalidArgument, "halo must be non-negative");
  if (extents.x < 1 || extents.y < 1 || extents.z < 1) fail(ErrorKind::BadDims, "cannot divide empty extents");

  SubvolumeGrid grid{extents, cube, halo, {}};
  for (int z = 0; z < extents.z; z += cube) {
    for (int y = 0; y < extents.y; y += cube) {
      for (int x = 0; x < extents.x; x += cube) {
        Tile t;
        t.core_origin = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          t.core_extents[a] = std::min(cube, extents[a] - t.core_origin[a]);
          const int lo = std::max(0, t.core_origin[a] - halo);
          const int hi = std::min(extents[a], t.core_origin[a] + t.core_extents[a] + halo);
          t.padded_origin[a] = lo;
          t.padded_extents[a] = hi - lo;
        }
        grid.tiles.push_back(t);
      }
    }
  }
  return grid;
}

FeatureMap extract_region(const FeatureMap& source, const BoundingBox& box) {
  const Extents e = box.extents();
  FeatureMap out(source.channels, e);
  for (int c = 0; c < source.channels; ++c) {
    for (int z = 0; z < e.z; ++z) {
      for (int y = 0; y < e.y; ++y) {
        const float* src = &source.data[static_cast<std::size_t>(c) * source.voxels() +
                                        source.index(box.min.x, box.min.y + y, box.min.z + z)];
        std::copy(src, src + e.x, &out.data[static_cast<std::size_t>(c) * out.voxels() + out.index(0, y, z)]);
      }
    }
  }
  return out;
}

FeatureMap infer_tiled(const ModelSpec& model, const FeatureMap& volume, const SubvolumeGrid& grid,
                       MemoryBudget& budget) {
  if (volume.extents != grid.source_extents) {
    fail(ErrorKind::ShapeMismatch, "subvolume grid was planned for different extents");
  }
  const int classes = static_cast<int>(model.labels.size());
  FeatureMap assembled(classes, volume.extents);
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
    const Tile& tile = grid.tiles[i];
    FeatureMap scores;
    try {
      scores = run_model(model, extract_region(volume, tile.padded_box()), budget);
    } catch (const Error& e) {
      throw Error(e.kind(), "tile " + std::to_string(i) + ": " + e.what());
    }
    const Vec3i rel{tile.core_origin.x - tile.padded_origin.x, tile.core_origin.y - tile.padded_origin.y,
                    tile.core_origin.z - tile.padded_origin.z};
    for (int c = 0; c < classes; ++c) {
      for (int z = 0; z < tile.core_extents.z; ++z) {
        for (int y = 0; y < tile.core_extents.y; ++y) {
          const float* src =
              &scores.data[static_cast<std::size_t>(c) * scores.voxels() + scores.index(rel.x, rel.y + y, rel.z + z)];
          float* dst = &assembled.data[static_cast<std::size_t>(c) * assembled.voxels() +
                                       assembled.index(tile.core_origin.x, tile.core_origin.y + y,
                                                       tile.core_origin.z + z)];
          std::copy(src, src + tile.core_extents.x, dst);
        }
      }
    }
  }
  return assembled;
}

Volume3D merge_labels(const std::vector<std::pair<BoundingBox, Volume3D>>& tiles, Extents extents) {
  Volume3D out(extents, {1.0, 1.0, 1.0}, Affine::identity());
  std::vector<std::uint8_t> covered(static_cast<std::size_t>(extents.product()), 0);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const auto& [box, labels] = tiles[i];
    for (int a = 0; a < 3; ++a) {
      if (box.min[a] < 0 || box.max[a] >= extents[a] || box.min[a] > box.max[a]) {
        fail(ErrorKind::BoxOutOfRange, "tile " + std::to_string(i) + " lies outside the target extents");
      }
    }
    if (labels.extents() != box.extents()) {
      fail(ErrorKind::ShapeMismatch, "tile " + std::to_string(i) + " label volume does not match its core");
    }
    for (int z = box.min.z; z <= box.max.z; ++z) {
      for (int y = box.min.y; y <= box.max.y; ++y) {
        for (int x = box.min.x; x <= box.max.x; ++x) {
          const std::size_t idx = out.index(x, y, z);
          if (covered[idx]) {
            fail(ErrorKind::OverlapDetected, "tile " + std::to_string(i) + " overlaps an earlier tile at (" +
                                                 std::to_string(x) + "," + std::to_string(y) + "," +
                                                 std::to_string(z) + ")");
          }
          covered[idx] = 1;
          out.data()[idx] = labels.at(x - box.min.x, y - box.min.y, z - box.min.z);
        }
      }
    }
  }
  const auto gap = std::find(covered.begin(), covered.end(), std::uint8_t{0});
  if (gap != covered.end()) {
    fail(ErrorKind::GapDetected, "voxel " + std::to_string(gap - covered.begin()) + " is not covered by any tile");
  }
  return out;
}

}  // namespace meshseg
