#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "meshseg/error.hpp"
#include "meshseg/volume.hpp"
#include "oracles.hpp"

using namespace meshseg;

namespace {

Volume3D filled(Extents e, std::array<double, 3> spacing, Affine a, float value) {
  Volume3D v(e, spacing, a);
  std::fill(v.data().begin(), v.data().end(), value);
  return v;
}

template <typename Fn>
ErrorKind kind_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(Volume, ConstructorValidates) {
  EXPECT_EQ(kind_of([] { Volume3D({0, 1, 1}, {1, 1, 1}, Affine::identity()); }), ErrorKind::BadDims);
  EXPECT_EQ(kind_of([] { Volume3D({2, 2, 2}, {1, 1, 1}, Affine::identity(), std::vector<float>(7)); }),
            ErrorKind::ShapeMismatch);
  Affine bad = Affine::identity();
  bad(3, 0) = 1.0;
  EXPECT_EQ(kind_of([&] { Volume3D({2, 2, 2}, {1, 1, 1}, bad); }), ErrorKind::DegenerateAffine);
}

TEST(Affine, InverseAndSingular) {
  Affine a = Affine::diagonal(2, 3, 4);
  a(0, 3) = 5;
  a(1, 2) = 0.5;
  const Affine id = a * a.inverse();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(id(r, c), r == c ? 1.0 : 0.0, 1e-12);
  EXPECT_EQ(kind_of([] { Affine::diagonal(1, 0, 1).inverse(); }), ErrorKind::DegenerateAffine);
}

TEST(Trilinear, ExactAtLatticePoints) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(-50, 50);
  Volume3D v({7, 6, 5}, {1, 1, 1}, Affine::identity());
  for (float& x : v.data()) x = u(rng);
  for (int z = 0; z < 5; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 7; ++x) EXPECT_EQ(sample_trilinear(v, x, y, z), v.at(x, y, z));
}

TEST(Trilinear, MatchesExpandedFormulaAndStaysInCell) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<float> u(0, 255);
  Volume3D v({9, 8, 7}, {1, 1, 1}, Affine::identity());
  for (float& x : v.data()) x = u(rng);
  std::uniform_real_distribution<double> px(0, 7.999), py(0, 6.999), pz(0, 5.999);
  for (int n = 0; n < 500; ++n) {
    const double x = px(rng), y = py(rng), z = pz(rng);
    const float got = sample_trilinear(v, x, y, z);
    EXPECT_NEAR(got, oracle::trilinear_expanded(v, x, y, z), 1e-3);
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y), z0 = static_cast<int>(z);
    float lo = 1e9f, hi = -1e9f;
    for (int c = 0; c < 8; ++c) {
      const float corner = v.at(x0 + (c & 1), y0 + ((c >> 1) & 1), z0 + ((c >> 2) & 1));
      lo = std::min(lo, corner);
      hi = std::max(hi, corner);
    }
    EXPECT_GE(got, lo - 1e-3f);
    EXPECT_LE(got, hi + 1e-3f);
  }
}

TEST(Trilinear, OutOfFieldIsZero) {
  const Volume3D v = filled({4, 4, 4}, {1, 1, 1}, Affine::identity(), 9.0f);
  EXPECT_EQ(sample_trilinear(v, -0.4, 1, 1), 9.0f);
  EXPECT_EQ(sample_trilinear(v, 3.4, 1, 1), 9.0f);
  EXPECT_EQ(sample_trilinear(v, -0.6, 1, 1), 0.0f);
  EXPECT_EQ(sample_trilinear(v, 1, 1, 3.7), 0.0f);
}

TEST(Percentile, LowerOrderStatistic) {
  std::vector<float> v(1000);
  for (int i = 0; i < 999; ++i) v[static_cast<std::size_t>(i)] = 100.0f * static_cast<float>(i) / 998.0f;
  v[999] = 1e6f;
  std::vector<float> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  // floor(0.999 * 999) = 998
  EXPECT_EQ(percentile(v, 99.9), sorted[998]);
  EXPECT_EQ(percentile(v, 0.0), sorted[0]);
  EXPECT_EQ(percentile(v, 50.0), sorted[499]);
}

TEST(RobustRescale, OutlierDoesNotStretchTheMap) {
  Volume3D v({10, 10, 10}, {1, 1, 1}, Affine::identity());
  for (int i = 0; i < 999; ++i) v.data()[static_cast<std::size_t>(i)] = 100.0f * static_cast<float>(i) / 998.0f;
  v.data()[999] = 1e6f;
  std::vector<float> sorted(v.data().begin(), v.data().end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted[0];
  const double hi = sorted[static_cast<std::size_t>(std::floor(0.999 * 999))];
  EXPECT_NEAR(hi, 100.0, 1e-4);
  const Volume3D r = robust_rescale(v);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double t = std::clamp((v.data()[i] - lo) / (hi - lo), 0.0, 1.0);
    EXPECT_EQ(r.data()[i], static_cast<float>(std::round(t * 255.0))) << i;
  }
  EXPECT_EQ(r.data()[999], 255.0f);
}

TEST(RobustRescale, ConstantMapsToZeroAndIdempotentWithinOne) {
  const Volume3D c = robust_rescale(filled({5, 5, 5}, {1, 1, 1}, Affine::identity(), 42.0f));
  EXPECT_TRUE(std::all_of(c.data().begin(), c.data().end(), [](float x) { return x == 0.0f; }));

  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0, 1000);
  Volume3D v({20, 20, 20}, {1, 1, 1}, Affine::identity());
  for (float& x : v.data()) x = u(rng);
  const Volume3D once = robust_rescale(v);
  const Volume3D twice = robust_rescale(once);
  for (std::size_t i = 0; i < once.size(); ++i) {
    EXPECT_LE(std::abs(once.data()[i] - twice.data()[i]), 1.0f);
    EXPECT_EQ(once.data()[i], std::round(once.data()[i]));
  }
}

TEST(Conform, IdentityGridKeepsValues) {
  // 256^3 @ 1 mm centred the way conform centres its own output.
  Volume3D v(kConformExtents, {1, 1, 1}, Affine::identity());
  for (int z = 0; z < 256; ++z)
    for (int y = 0; y < 256; ++y)
      for (int x = 0; x < 256; ++x) v.at(x, y, z) = static_cast<float>((x + 2 * y + 3 * z) % 256);
  const Volume3D c = conform(v);
  EXPECT_EQ(c.extents(), kConformExtents);
  const Volume3D expected = robust_rescale(v);
  EXPECT_TRUE(std::equal(c.data().begin(), c.data().end(), expected.data().begin()));
}

TEST(Conform, TwoMillimetreInputKeepsFieldOfView) {
  Volume3D v({128, 128, 128}, {2, 2, 2}, Affine::diagonal(2, 2, 2));
  for (int z = 0; z < 128; ++z)
    for (int y = 0; y < 128; ++y)
      for (int x = 0; x < 128; ++x) v.at(x, y, z) = (x > 32 && x < 96 && y > 40 && z < 100) ? 200.0f : 10.0f;
  const Volume3D c = conform(v);
  EXPECT_EQ(c.extents(), kConformExtents);
  EXPECT_EQ(c.spacing(), (std::array<double, 3>{1, 1, 1}));
  // World centre of the input is voxel 63.5 * 2 = 127; output centre is voxel 127.5.
  const auto in_centre = v.affine().apply(63.5, 63.5, 63.5);
  const auto out_centre = c.affine().apply(127.5, 127.5, 127.5);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(in_centre[static_cast<std::size_t>(a)], out_centre[static_cast<std::size_t>(a)], 1e-9);
  for (float x : c.data()) {
    EXPECT_GE(x, 0.0f);
    EXPECT_LE(x, 255.0f);
    ASSERT_EQ(x, std::round(x));
  }
}

TEST(Conform, ConstantInputResamplesToConstant) {
  // 260 x 256 x 270 mm, so every output sample falls inside the input field.
  const Volume3D v = filled({130, 128, 90}, {2.0, 2.0, 3.0}, Affine::diagonal(2.0, 2.0, 3.0), 100.0f);
  const Affine target = centred_grid_affine(v, kConformExtents);
  const Volume3D r = resample(v, kConformExtents, target, Interpolation::Trilinear);
  // Ten lattice points of the output grid, mapped back to input voxels and
  // checked against the hand-expanded interpolation formula.
  const Affine to_input = v.affine().inverse() * target;
  std::mt19937_64 rng(5);
  int inside = 0;
  while (inside < 10) {
    const int x = static_cast<int>(rng() % 256), y = static_cast<int>(rng() % 256), z = static_cast<int>(rng() % 256);
    const auto p = to_input.apply(x, y, z);
    if (p[0] < 0 || p[1] < 0 || p[2] < 0 || p[0] > 129 || p[1] > 127 || p[2] > 89) continue;
    ++inside;
    EXPECT_NEAR(r.at(x, y, z), oracle::trilinear_expanded(v, p[0], p[1], p[2]), 1e-4);
    EXPECT_NEAR(r.at(x, y, z), 100.0f, 1e-4);
  }
  EXPECT_TRUE(std::all_of(r.data().begin(), r.data().end(), [](float x) { return x == 100.0f; }));
  const Volume3D c = conform(v);
  EXPECT_TRUE(std::all_of(c.data().begin(), c.data().end(), [](float x) { return x == 0.0f; }));
}

TEST(Conform, LabelsUseNearestNeighbour) {
  Volume3D labels({64, 64, 64}, {4, 4, 4}, Affine::diagonal(4, 4, 4));
  for (int z = 0; z < 64; ++z)
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) labels.at(x, y, z) = static_cast<float>((x / 8 + y / 8 + z / 8) % 3);
  const Volume3D c = conform_labels(labels);
  for (float x : c.data()) ASSERT_TRUE(x == 0.0f || x == 1.0f || x == 2.0f);
}

TEST(MaskBbox, SpecExamples) {
  Volume3D m({64, 64, 64}, {1, 1, 1}, Affine::identity());
  for (int z = 10; z <= 20; ++z)
    for (int y = 10; y <= 20; ++y)
      for (int x = 10; x <= 20; ++x) m.at(x, y, z) = 1.0f;
  const BoundingBox b = mask_bbox(m, 4);
  EXPECT_EQ(b.min, (Vec3i{6, 6, 6}));
  EXPECT_EQ(b.max, (Vec3i{24, 24, 24}));

  Volume3D single({64, 64, 64}, {1, 1, 1}, Affine::identity());
  single.at(0, 0, 0) = 1.0f;
  const BoundingBox s = mask_bbox(single, 8);
  EXPECT_EQ(s.min, (Vec3i{0, 0, 0}));
  EXPECT_EQ(s.max, (Vec3i{8, 8, 8}));

  EXPECT_EQ(kind_of([] { mask_bbox(Volume3D({4, 4, 4}, {1, 1, 1}, Affine::identity()), 1); }), ErrorKind::EmptyMask);
}

TEST(MaskBbox, MatchesExhaustiveScan) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    const Extents e{1 + static_cast<int>(rng() % 30), 1 + static_cast<int>(rng() % 30), 1 + static_cast<int>(rng() % 30)};
    const Volume3D m = oracle::random_binary(e, 0.002 + 0.01 * static_cast<double>(trial % 3), rng);
    Vec3i lo, hi;
    if (!oracle::scan_bbox(m, lo, hi)) continue;
    const int margin = static_cast<int>(rng() % 5);
    const BoundingBox b = mask_bbox(m, margin);
    EXPECT_EQ(b.min, (Vec3i{std::max(0, lo.x - margin), std::max(0, lo.y - margin), std::max(0, lo.z - margin)}));
    EXPECT_EQ(b.max, (Vec3i{std::min(e.x - 1, hi.x + margin), std::min(e.y - 1, hi.y + margin),
                            std::min(e.z - 1, hi.z + margin)}));
  }
}

TEST(CropEmbed, RoundTripAndZeroFill) {
  std::mt19937_64 rng(8);
  Volume3D v({64, 70, 60}, {1, 1, 1}, Affine::diagonal(1, 1, 1));
  for (float& x : v.data()) x = static_cast<float>(1 + rng() % 200);
  const BoundingBox box{{5, 9, 11}, {42, 60, 54}};
  const Volume3D c = crop(v, box);
  EXPECT_EQ(c.extents(), (Extents{38, 52, 44}));
  EXPECT_EQ(c.at(0, 0, 0), v.at(5, 9, 11));
  // world position of voxel (0,0,0) in the crop is that of box.min
  EXPECT_EQ(c.affine().apply(0, 0, 0), v.affine().apply(5, 9, 11));
  const Volume3D back = embed(c, box, v.extents());
  for (int z = 0; z < 60; ++z)
    for (int y = 0; y < 70; ++y)
      for (int x = 0; x < 64; ++x) ASSERT_EQ(back.at(x, y, z), box.contains(x, y, z) ? v.at(x, y, z) : 0.0f);

  EXPECT_EQ(kind_of([&] { crop(v, BoundingBox{{0, 0, 0}, {64, 1, 1}}); }), ErrorKind::BoxOutOfRange);
  EXPECT_EQ(kind_of([&] { embed(c, BoundingBox{{30, 9, 11}, {67, 60, 54}}, v.extents()); }), ErrorKind::BoxOutOfRange);
}
