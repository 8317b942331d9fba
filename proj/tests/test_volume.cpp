#include <doctest.h>

#include <cmath>

#include "bayeseg/labels.hpp"
#include "bayeseg/rng.hpp"
#include "bayeseg/volume.hpp"

using namespace bayeseg;

namespace {

MultiChannelImage raw_image(const GridShape& shape, double fill) {
  MultiChannelImage img(shape);
  Channel c;
  c.tag = "FLAIR";
  c.modality = Modality::Flair;
  c.values = Volume<double>(shape, fill);
  img.add_channel(std::move(c));
  return img;
}

}  // namespace

TEST_CASE("log_transform basic values") {
  const GridShape shape(2, 2, 2);
  auto img = raw_image(shape, 1.0);
  auto out = log_transform(img, 1e-4);
  CHECK(out.channel(0).values[0] == doctest::Approx(0.0));

  img.channel(0).values[3] = std::exp(1.0);
  out = log_transform(img, 1e-4);
  CHECK(out.channel(0).values[3] == doctest::Approx(1.0));

  img.channel(0).values[5] = 0.0;
  out = log_transform(img, 1e-4);
  CHECK(out.channel(0).values[5] ==
        doctest::Approx(-9.210340371976182).epsilon(1e-12));
  CHECK(out.channel(0).tag == "FLAIR");
}

TEST_CASE("log_transform rejects bad input") {
  const GridShape shape(2, 1, 1);
  MultiChannelImage img(shape);
  Channel c;
  c.tag = "T2";
  c.values = Volume<double>(shape, 1.0);
  c.values[1] = std::nan("");
  CHECK_THROWS_WITH_AS(img.add_channel(std::move(c)),
                       doctest::Contains("voxel 1"), std::invalid_argument);
  CHECK_THROWS_AS(log_transform(raw_image(shape, 1.0), 0.0),
                  std::invalid_argument);
}

TEST_CASE("log_transform monotone and invertible above the floor") {
  const GridShape shape(4, 1, 1);
  MultiChannelImage img(shape);
  Channel c;
  c.tag = "T2";
  c.values = Volume<double>(shape);
  c.values[0] = 0.5;
  c.values[1] = 1.5;
  c.values[2] = 2.5;
  c.values[3] = 9.5;
  img.add_channel(std::move(c));
  const auto out = log_transform(img, 1e-4);
  for (int i = 1; i < 4; ++i) {
    CHECK(out.channel(0).values[i] > out.channel(0).values[i - 1]);
  }
  for (int i = 0; i < 4; ++i) {
    CHECK(std::exp(out.channel(0).values[i]) ==
          doctest::Approx(img.channel(0).values[i]).epsilon(1e-12));
  }
}

TEST_CASE("flip_augment single corner voxel covers all corners") {
  const GridShape shape(2, 2, 2);
  BinaryMap m(shape);
  m.set(0, 0, 0, true);
  const auto flips = flip_augment(m);
  REQUIRE(flips.size() == 8);
  std::size_t corners_hit = 0;
  for (int z = 0; z < 2; ++z) {
    for (int y = 0; y < 2; ++y) {
      for (int x = 0; x < 2; ++x) {
        bool hit = false;
        for (const auto& f : flips) {
          if (f.at(x, y, z)) hit = true;
        }
        if (hit) ++corners_hit;
      }
    }
  }
  CHECK(corners_hit == 8);
}

TEST_CASE("flip_augment symmetric map gives identical outputs") {
  const GridShape shape(3, 3, 3);
  BinaryMap m(shape);
  m.set(1, 1, 1, true);
  const auto flips = flip_augment(m);
  for (const auto& f : flips) CHECK(f == m);
}

TEST_CASE("flip_augment conserves counts and is closed under composition") {
  const GridShape shape(3, 3, 3);
  BinaryMap m(shape);
  Rng rng(7, RngPurpose::Generic, 0, 0);
  for (std::size_t i = 0; i < m.size(); ++i) m.set(i, rng.uniform() < 0.4);
  const auto flips = flip_augment(m);
  for (const auto& f : flips) CHECK(f.count() == m.count());

  // flipping any output again yields another member of the original set
  for (const auto& f : flips) {
    const auto second = flip_augment(f);
    for (const auto& g : second) {
      bool found = false;
      for (const auto& h : flips) {
        if (g == h) found = true;
      }
      CHECK(found);
    }
  }
}

TEST_CASE("count_label on crafted states") {
  const GridShape shape(4, 4, 4);
  const std::uint32_t brain = default_label_table().brain_mask;

  Volume<std::uint8_t> l(shape, kBackground);
  BinaryMap z(shape), y(shape);
  JointLabelState all_bg(l, z, y, brain);
  CHECK(count_label(all_bg, [](int lab, bool, bool) {
          return lab == kBackground;
        }) == shape.voxels());
  CHECK(count_label(all_bg, [](int, bool zz, bool) { return zz; }) == 0);

  Volume<std::uint8_t> l2(shape, kWhiteMatter);
  BinaryMap z2(shape), y2(shape);
  for (std::size_t i = 0; i < 5; ++i) {
    z2.set(i, true);
    y2.set(i, true);
  }
  z2.set(10, true);
  JointLabelState crafted(l2, z2, y2, brain);
  CHECK(count_label(crafted, [](int, bool zz, bool yy) {
          return zz && yy;
        }) == 5);
}

TEST_CASE("JointLabelState rejects exactly the forbidden combinations") {
  const GridShape shape(1, 1, 1);
  const std::uint32_t brain = default_label_table().brain_mask;
  for (int lab = 0; lab < kNumLabels; ++lab) {
    for (int zi = 0; zi < 2; ++zi) {
      for (int yi = 0; yi < 2; ++yi) {
        Volume<std::uint8_t> l(shape, static_cast<std::uint8_t>(lab));
        BinaryMap z(shape), y(shape);
        z.set(std::size_t{0}, zi != 0);
        y.set(std::size_t{0}, yi != 0);
        const bool forbidden =
            std::isinf(restriction(lab, zi != 0, yi != 0, brain));
        if (forbidden) {
          CHECK_THROWS_AS(JointLabelState(l, z, y, brain),
                          ForbiddenCombination);
        } else {
          CHECK_NOTHROW(JointLabelState(l, z, y, brain));
        }
      }
    }
  }
}

TEST_CASE("duplicate channel tags rejected") {
  const GridShape shape(2, 1, 1);
  MultiChannelImage img(shape);
  Channel a;
  a.tag = "T2";
  a.values = Volume<double>(shape, 1.0);
  img.add_channel(std::move(a));
  Channel b;
  b.tag = "T2";
  b.values = Volume<double>(shape, 2.0);
  CHECK_THROWS_AS(img.add_channel(std::move(b)), std::invalid_argument);
}

TEST_CASE("modality aliases") {
  CHECK(resolve_modality("FLAIR2") == Modality::Flair);
  CHECK(resolve_modality("DIR") == Modality::Flair);
  CHECK(resolve_modality("t1c") == Modality::T1c);
  CHECK(resolve_modality("CT") == Modality::Ct);
  CHECK(resolve_modality("SWI") == Modality::Other);
}
