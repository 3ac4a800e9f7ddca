#include "meshseg/postprocess.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>
#include <string>

#include "meshseg/error.hpp"

namespace meshseg {

Connectivity connectivity_from_int(int n) {
  if (n == 6) return Connectivity::Six;
  if (n == 26) return Connectivity::TwentySix;
  fail(ErrorKind::InvalidArgument, "connectivity must be 6 or 26, got " + std::to_string(n));
}

namespace {

class DisjointSets {
 public:
  std::int32_t make() {
    parent_.push_back(static_cast<std::int32_t>(parent_.size()));
    return parent_.back();
  }
  std::int32_t find(std::int32_t a) {
    while (parent_[static_cast<std::size_t>(a)] != a) {
      auto& p = parent_[static_cast<std::size_t>(a)];
      p = parent_[static_cast<std::size_t>(p)];
      a = p;
    }
    return a;
  }
  void unite(std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // smaller provisional label becomes root, so roots keep scan order
    if (b < a) std::swap(a, b);
    parent_[static_cast<std::size_t>(b)] = a;
  }

 private:
  std::vector<std::int32_t> parent_;
};

struct Offset {
  int dx, dy, dz;
};

// Neighbours already visited by an x-fastest raster scan.
std::vector<Offset> backward_neighbours(Connectivity c) {
  if (c == Connectivity::Six) return {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

template <typename Pred>
ComponentLabeling label_where(const Volume3D& vol, Connectivity connectivity, Pred foreground) {
  const Extents e = vol.extents();
  ComponentLabeling out;
  out.extents = e;
  out.component_id.assign(vol.size(), 0);

  DisjointSets sets;
  sets.make();  // slot 0 is background
  const auto neighbours = backward_neighbours(connectivity);
  for (int z = 0; z < e.z; ++z) {
    for (int y = 0; y < e.y; ++y) {
      for (int x = 0; x < e.x; ++x) {
        const std::size_t idx = vol.index(x, y, z);
        if (!foreground(vol.data()[idx])) continue;
        std::int32_t label = 0;
        for (const auto& n : neighbours) {
          const int nx = x + n.dx, ny = y + n.dy, nz = z + n.dz;
          if (nx < 0 || ny < 0 || nz < 0 || nx >= e.x || ny >= e.y) continue;
          const std::int32_t nl = out.component_id[vol.index(nx, ny, nz)];
          if (nl == 0) continue;
          if (label == 0) {
            label = nl;
          } else if (nl != label) {
            sets.unite(label, nl);
          }
        }
        out.component_id[idx] = label != 0 ? label : sets.make();
      }
    }
  }

  // Provisional labels are created in scan order and roots are the minimum
  // provisional label, so numbering roots by first appearance is deterministic.
  std::vector<std::int32_t> final_id;
  out.sizes.assign(1, 0);
  for (auto& id : out.component_id) {
    if (id == 0) continue;
    const auto root = static_cast<std::size_t>(sets.find(id));
    if (root >= final_id.size()) final_id.resize(root + 1, 0);
    if (final_id[root] == 0) {
      final_id[root] = ++out.count;
      out.sizes.push_back(0);
    }
    id = final_id[root];
    ++out.sizes[static_cast<std::size_t>(id)];
  }
  return out;
}

}  // namespace

ComponentLabeling label_components(const Volume3D& binary, Connectivity connectivity) {
  return label_where(binary, connectivity, [](float v) { return v != 0.0f; });
}

Volume3D keep_largest(const Volume3D& labels, Connectivity connectivity) {
  const ComponentLabeling comps = label_components(labels, connectivity);
  if (comps.count == 0) fail(ErrorKind::EmptyMask, "label map has no foreground voxel");
  const auto best = std::max_element(comps.sizes.begin() + 1, comps.sizes.end()) - comps.sizes.begin();
  Volume3D out = labels;
  auto data = out.data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (comps.component_id[i] != best) data[i] = 0.0f;
  }
  return out;
}

Volume3D keep_largest_per_class(const Volume3D& labels, Connectivity connectivity) {
  std::vector<float> classes;
  for (float v : labels.data()) {
    if (v != 0.0f) classes.push_back(v);
  }
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.empty()) fail(ErrorKind::EmptyMask, "label map has no foreground voxel");

  Volume3D out(labels.extents(), labels.spacing(), labels.affine());
  for (float cls : classes) {
    const ComponentLabeling comps = label_where(labels, connectivity, [cls](float v) { return v == cls; });
    const auto best = std::max_element(comps.sizes.begin() + 1, comps.sizes.end()) - comps.sizes.begin();
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (comps.component_id[i] == best) out.data()[i] = cls;
    }
  }
  return out;
}

}  // namespace meshseg
