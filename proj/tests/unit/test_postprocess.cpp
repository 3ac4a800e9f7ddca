#include <gtest/gtest.h>

#include <random>

#include "meshseg/error.hpp"
#include "meshseg/postprocess.hpp"
#include "oracles.hpp"

using namespace meshseg;

namespace {

Volume3D zeros(Extents e) { return Volume3D(e, {1, 1, 1}, Affine::identity()); }

void fill_box(Volume3D& v, Vec3i lo, Vec3i hi, float value) {
  for (int z = lo.z; z <= hi.z; ++z)
    for (int y = lo.y; y <= hi.y; ++y)
      for (int x = lo.x; x <= hi.x; ++x) v.at(x, y, z) = value;
}

}  // namespace

TEST(Components, CornerTouchingBlocks) {
  Volume3D v = zeros({4, 4, 4});
  fill_box(v, {0, 0, 0}, {1, 1, 1}, 1);
  fill_box(v, {2, 2, 2}, {3, 3, 3}, 1);
  EXPECT_EQ(label_components(v, Connectivity::TwentySix).count, 1);
  EXPECT_EQ(label_components(v, Connectivity::Six).count, 2);
}

TEST(Components, EmptyVolume) {
  const auto c = label_components(zeros({5, 5, 5}));
  EXPECT_EQ(c.count, 0);
}

TEST(Components, IdsFollowScanOrderAndSizesSum) {
  Volume3D v = zeros({6, 6, 6});
  fill_box(v, {4, 0, 0}, {5, 1, 0}, 1);  // first in scan order
  fill_box(v, {0, 3, 3}, {2, 5, 5}, 1);
  const auto c = label_components(v, Connectivity::Six);
  ASSERT_EQ(c.count, 2);
  EXPECT_EQ(c.component_id[v.index(4, 0, 0)], 1);
  EXPECT_EQ(c.component_id[v.index(0, 3, 3)], 2);
  EXPECT_EQ(c.sizes[1], 4);
  EXPECT_EQ(c.sizes[2], 27);
}

TEST(Components, RandomVolumesMatchFloodFill) {
  std::mt19937_64 rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const Volume3D v = oracle::random_binary({16, 16, 16}, 0.15 + 0.05 * (trial % 6), rng);
    for (int conn : {6, 26}) {
      const auto got = label_components(v, connectivity_from_int(conn));
      const auto expected = oracle::flood_fill(v, conn);
      ASSERT_TRUE(oracle::same_partition(got.component_id, expected)) << trial << " conn " << conn;
      // both number components in first-voxel scan order, so ids agree outright
      ASSERT_EQ(std::vector<int>(got.component_id.begin(), got.component_id.end()), expected);
      std::int64_t total = 0;
      for (int id = 1; id <= got.count; ++id) total += got.sizes[static_cast<std::size_t>(id)];
      std::int64_t fg = 0;
      for (float x : v.data()) fg += x != 0.0f;
      ASSERT_EQ(total, fg);
    }
  }
}

TEST(Components, ConnectivityFromInt) {
  EXPECT_EQ(connectivity_from_int(6), Connectivity::Six);
  EXPECT_EQ(connectivity_from_int(26), Connectivity::TwentySix);
  EXPECT_THROW(connectivity_from_int(18), Error);
}

TEST(KeepLargest, RemovesIsolatedVoxelKeepsClasses) {
  Volume3D v = zeros({8, 8, 8});
  fill_box(v, {1, 1, 1}, {2, 2, 1}, 1);  // 4 voxels class 1
  fill_box(v, {1, 1, 2}, {2, 2, 2}, 2);  // 4 voxels class 2
  fill_box(v, {3, 1, 1}, {3, 2, 1}, 2);  // 2 more, total blob 10
  v.at(6, 6, 6) = 1;
  const Volume3D out = keep_largest(v);
  EXPECT_EQ(out.at(6, 6, 6), 0.0f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i == v.index(6, 6, 6)) continue;
    ASSERT_EQ(out.data()[i], v.data()[i]);
  }
}

TEST(KeepLargest, TieGoesToLowestScanOrder) {
  Volume3D v = zeros({10, 4, 4});
  fill_box(v, {6, 0, 0}, {7, 1, 1}, 2);  // scanned first (z=0, y=0)
  fill_box(v, {0, 2, 2}, {1, 3, 3}, 1);
  const Volume3D out = keep_largest(v);
  EXPECT_EQ(out.at(6, 0, 0), 2.0f);
  EXPECT_EQ(out.at(0, 2, 2), 0.0f);
}

TEST(KeepLargest, SpuriousIslandsAroundBrain) {
  Volume3D v = zeros({40, 40, 40});
  // ellipsoidal "brain" with a white core
  for (int z = 0; z < 40; ++z)
    for (int y = 0; y < 40; ++y)
      for (int x = 0; x < 40; ++x) {
        const double r = std::pow((x - 20) / 12.0, 2) + std::pow((y - 20) / 14.0, 2) + std::pow((z - 20) / 10.0, 2);
        if (r <= 1.0) v.at(x, y, z) = r < 0.4 ? 2.0f : 1.0f;
      }
  Volume3D noisy = v;
  noisy.at(1, 1, 1) = 1;
  noisy.at(38, 2, 37) = 2;
  noisy.at(38, 3, 37) = 2;
  noisy.at(2, 37, 2) = 1;
  const Volume3D out = keep_largest(noisy);
  EXPECT_TRUE(std::equal(out.data().begin(), out.data().end(), v.data().begin()));
  const auto ids = oracle::flood_fill(out, 26);
  EXPECT_EQ(*std::max_element(ids.begin(), ids.end()), 1);
}

TEST(KeepLargest, EmptyMaskAndProperties) {
  try {
    keep_largest(zeros({3, 3, 3}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyMask);
  }
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    Volume3D v = oracle::random_binary({16, 16, 16}, 0.3, rng);
    for (float& x : v.data())
      if (x != 0.0f) x = static_cast<float>(1 + rng() % 3);
    for (auto conn : {Connectivity::Six, Connectivity::TwentySix}) {
      const Volume3D once = keep_largest(v, conn);
      const Volume3D twice = keep_largest(once, conn);
      ASSERT_TRUE(std::equal(once.data().begin(), once.data().end(), twice.data().begin()));
      for (std::size_t i = 0; i < v.size(); ++i) ASSERT_TRUE(once.data()[i] == 0.0f || once.data()[i] == v.data()[i]);
    }
  }
}

TEST(KeepLargest, PerClassMode) {
  Volume3D v = zeros({12, 4, 4});
  fill_box(v, {0, 0, 0}, {2, 2, 2}, 1);
  fill_box(v, {3, 0, 0}, {4, 0, 0}, 2);  // touches class 1, small
  fill_box(v, {8, 0, 0}, {10, 2, 2}, 2);  // separate, larger class-2 blob
  const Volume3D global = keep_largest(v);
  EXPECT_EQ(global.at(9, 1, 1), 0.0f);  // united foreground of 29 beats 27
  const Volume3D per = keep_largest_per_class(v);
  EXPECT_EQ(per.at(9, 1, 1), 2.0f);
  EXPECT_EQ(per.at(3, 0, 0), 0.0f);
  EXPECT_EQ(per.at(1, 1, 1), 1.0f);
}
