#pragma once

#include <utility>
#include <vector>

#include "meshseg/engine.hpp"
#include "meshseg/model.hpp"
#include "meshseg/volume.hpp"

namespace meshseg {

/// One sub-cube: the core it owns in the output and the padded region read as context.
struct Tile {
  Vec3i core_origin;
  Extents core_extents;
  Vec3i padded_origin;
  Extents padded_extents;

  BoundingBox core_box() const noexcept {
    return {core_origin, {core_origin.x + core_extents.x - 1, core_origin.y + core_extents.y - 1,
                          core_origin.z + core_extents.z - 1}};
  }
  BoundingBox padded_box() const noexcept {
    return {padded_origin, {padded_origin.x + padded_extents.x - 1, padded_origin.y + padded_extents.y - 1,
                            padded_origin.z + padded_extents.z - 1}};
  }
};

struct SubvolumeGrid {
  Extents source_extents;
  int cube = 0;
  int halo = 0;
  std::vector<Tile> tiles;  // x fastest, then y, then z
};

/// ceil(n / cube) cores per axis; trailing cores may be short. Each padded
/// region is the core grown by `halo` and clamped to the source.
SubvolumeGrid divide(Extents extents, int cube, int halo);

/// Run the model on each padded tile and keep only core scores. With
/// halo >= exactness_halo(model) the result equals a full-volume run.
FeatureMap infer_tiled(const ModelSpec& model, const FeatureMap& volume, const SubvolumeGrid& grid,
                       MemoryBudget& budget);

/// Copy of a sub-box of every channel.
FeatureMap extract_region(const FeatureMap& source, const BoundingBox& box);

/// Assemble per-tile label volumes by direct placement. The cores must cover
/// `extents` exactly once; otherwise GapDetected or OverlapDetected.
Volume3D merge_labels(const std::vector<std::pair<BoundingBox, Volume3D>>& tiles, Extents extents);

}  // namespace meshseg
