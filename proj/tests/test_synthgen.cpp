#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "xcorner/synthgen.hpp"

using namespace xcorner;

TEST(Seeds, DeriveSeedIsStableAndSpreads) {
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
  EXPECT_NE(derive_seed(5, 3), derive_seed(5, 4));
  EXPECT_NE(derive_seed(5, 3), derive_seed(6, 3));
}

TEST(RenderCorner, LevelsAroundCenteredCorner) {
  CornerSceneSpec spec;
  spec.apply_blur = false;
  const SceneRender r = render_corner(spec);
  ASSERT_EQ(r.image.height(), 41);
  ASSERT_EQ(r.truth.corners.size(), 1u);
  EXPECT_EQ(r.truth.corners[0], (Point2{20.0, 20.0}));
  EXPECT_EQ(r.truth.mask.positives(), (std::vector<Pixel>{{20, 20}}));
  EXPECT_DOUBLE_EQ(r.image.at(20, 20), 128.0 / 255.0);
  EXPECT_DOUBLE_EQ(r.image.at(15, 15), 64.0 / 255.0);
  EXPECT_DOUBLE_EQ(r.image.at(25, 25), 64.0 / 255.0);
  EXPECT_DOUBLE_EQ(r.image.at(15, 25), 191.0 / 255.0);
  EXPECT_DOUBLE_EQ(r.image.at(25, 15), 191.0 / 255.0);

  spec.transition_band = false;
  const SceneRender nb = render_corner(spec);
  EXPECT_NEAR(nb.image.at(20, 20), (64.0 + 191.0) / 2.0 / 255.0, 1e-12);
}

TEST(RenderCorner, SubpixelShiftMovesTruth) {
  CornerSceneSpec spec;
  spec.subpixel_shift = {0.3, -0.4};
  const SceneRender r = render_corner(spec);
  EXPECT_NEAR(r.truth.corners[0].x, 20.3, 1e-12);
  EXPECT_NEAR(r.truth.corners[0].y, 19.6, 1e-12);
  EXPECT_EQ(r.truth.mask.positives(), (std::vector<Pixel>{{20, 20}}));
}

TEST(RenderCorner, QuarterTurnRotatesImage) {
  CornerSceneSpec a;
  a.skew_deg = 0.0;
  CornerSceneSpec b = a;
  b.rotation_deg = 90.0;
  const ValueGrid i0 = render_corner(a).image;
  const ValueGrid i90 = render_corner(b).image;
  const int c = 20;
  for (int y = 0; y < 41; ++y) {
    for (int x = 0; x < 41; ++x) {
      const int qx = c + (y - c);
      const int qy = c - (x - c);
      EXPECT_NEAR(i90.at(y, x), i0.at(qy, qx), 1e-9) << x << "," << y;
    }
  }
}

TEST(RenderCorner, NoiseStatistics) {
  CornerSceneSpec spec;
  spec.image_size = 101;
  const ValueGrid clean = render_corner(spec).image;
  spec.noise_std = 10.0;
  spec.seed = 99;
  const ValueGrid noisy = render_corner(spec).image;
  double sum = 0.0, sq = 0.0;
  const auto n = static_cast<double>(clean.size());
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const double d = noisy.values()[i] - clean.values()[i];
    sum += d;
    sq += d * d;
  }
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_LE(std::abs(mean), 0.005);
  EXPECT_NEAR(sd, 10.0 / 255.0, 0.05 * 10.0 / 255.0);
}

TEST(RenderCorner, Deterministic) {
  CornerSceneSpec spec;
  spec.noise_std = 20.0;
  spec.rotation_deg = 33.0;
  spec.skew_deg = 12.0;
  spec.seed = 4;
  EXPECT_EQ(render_corner(spec).image, render_corner(spec).image);
}

TEST(RenderCorner, RejectsBadParameters) {
  CornerSceneSpec spec;
  spec.rotation_deg = 91.0;
  EXPECT_THROW(render_corner(spec), ParameterError);
  spec = {};
  spec.skew_deg = 71.0;
  EXPECT_THROW(render_corner(spec), ParameterError);
  spec = {};
  spec.subpixel_shift = {0.5, 0.0};
  EXPECT_THROW(render_corner(spec), ParameterError);
  spec = {};
  spec.noise_std = -1.0;
  EXPECT_THROW(render_corner(spec), ParameterError);
}

TEST(RenderBoard, CornerCountAndLattice) {
  BoardSceneSpec spec;
  spec.width = spec.height = 160;
  spec.rows = 7;
  spec.cols = 9;
  spec.square_px = 10.0;
  const SceneRender r = render_board(spec);
  ASSERT_EQ(r.truth.corners.size(), 63u);
  EXPECT_EQ(r.truth.mask.positive_count(), 63u);
  double cx = 0.0, cy = 0.0;
  for (const auto& p : r.truth.corners) {
    cx += p.x / 63.0;
    cy += p.y / 63.0;
  }
  EXPECT_NEAR(cx, 79.5, 1e-9);
  EXPECT_NEAR(cy, 79.5, 1e-9);
  EXPECT_NEAR(r.truth.corners[1].x - r.truth.corners[0].x, 10.0, 1e-9);
  EXPECT_NEAR(r.truth.corners[9].y - r.truth.corners[0].y, 10.0, 1e-9);
  EXPECT_EQ(board_corner_positions(spec), r.truth.corners);
}

TEST(RenderBoard, InvertIsComplement) {
  BoardSceneSpec spec;
  spec.rotation_deg = 20.0;
  spec.blur_variance = 0.6;
  const ValueGrid a = render_board(spec).image;
  spec.invert = true;
  const ValueGrid b = render_board(spec).image;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b.values()[i], 1.0 - a.values()[i], 1e-12);
}

TEST(RenderBoard, OcclusionHidesCorners) {
  BoardSceneSpec spec;
  spec.width = spec.height = 100;
  spec.rows = spec.cols = 4;
  spec.square_px = 12.0;
  const auto corners = board_corner_positions(spec);
  const Point2 c0 = corners[0];
  spec.occlusion = PixelRect{static_cast<int>(c0.x) - 3, static_cast<int>(c0.y) - 3, 6, 6};
  const SceneRender r = render_board(spec);
  EXPECT_TRUE(r.truth.occluded[0]);
  EXPECT_FALSE(r.truth.occluded[15]);
  EXPECT_EQ(r.truth.mask.positive_count(), 15u);
  EXPECT_EQ(r.truth.visible_corners().size(), 15u);
}

TEST(RenderBoard, RejectsCornersOutsideMargin) {
  BoardSceneSpec spec;
  spec.rows = spec.cols = 9;
  spec.square_px = 10.0;
  EXPECT_THROW(render_board(spec), ParameterError);
  spec.rows = 1;
  EXPECT_THROW(render_board(spec), ParameterError);
}

TEST(Distortion, IdentityCenterAndRadialScale) {
  const Point2 c{50.0, 40.0};
  const Distortion none;
  const Point2 p{71.0, 13.0};
  EXPECT_EQ(apply_distortion(p, c, 100.0, none), p);
  Distortion d;
  d.k1 = 0.1;
  d.p1 = 0.01;
  EXPECT_EQ(apply_distortion(c, c, 100.0, d), c);
  Distortion radial;
  radial.k1 = 0.1;
  const Point2 q = apply_distortion({150.0, 40.0}, c, 100.0, radial);
  EXPECT_NEAR(q.x, 50.0 + 110.0, 1e-12);
  EXPECT_NEAR(q.y, 40.0, 1e-12);
  const Point2 back = remove_distortion(apply_distortion(p, c, 100.0, d), c, 100.0, d);
  EXPECT_NEAR(back.x, p.x, 1e-8);
  EXPECT_NEAR(back.y, p.y, 1e-8);
}

TEST(GenerateBoard, DeterministicAndInsideMargin) {
  BoardDistribution dist;
  for (int i = 0; i < 40; ++i) {
    const GeneratedBoard a = generate_board(dist, 11, i);
    const GeneratedBoard b = generate_board(dist, 11, i);
    EXPECT_EQ(a.render.image, b.render.image);
    for (const auto& p : a.render.truth.corners) {
      EXPECT_GE(p.x, 13.0);
      EXPECT_GE(p.y, 13.0);
      EXPECT_LE(p.x, 50.0);
      EXPECT_LE(p.y, 50.0);
    }
    EXPECT_GE(a.spec.rows, 2);
    EXPECT_LE(a.spec.rows, 4);
  }
}

TEST(Dataset, EmptyAndFullBuilds) {
  const auto dir = testutil::temp_dir("ds0");
  EXPECT_TRUE(build_dataset(0, {}, 1, dir).empty());
  EXPECT_TRUE(read_manifest(dir / kManifestName).empty());
  EXPECT_THROW(build_dataset(-1, {}, 1, dir), ParameterError);

  const auto d1 = testutil::temp_dir("ds1");
  const auto d2 = testutil::temp_dir("ds2");
  const auto rows = build_dataset(100, {}, 7, d1);
  build_dataset(100, {}, 7, d2);
  ASSERT_EQ(rows.size(), 100u);
  EXPECT_EQ(rows[0].filename, "img_00000.pgm");
  EXPECT_EQ(testutil::slurp(d1 / kManifestName), testutil::slurp(d2 / kManifestName));
  EXPECT_EQ(testutil::slurp(d1 / "img_00042.pgm"), testutil::slurp(d2 / "img_00042.pgm"));
  EXPECT_EQ(read_manifest(d1 / kManifestName).size(), 100u);
  const auto samples = load_dataset(d1);
  ASSERT_EQ(samples.size(), 100u);
  EXPECT_EQ(samples[0].image.height(), 64);
}

TEST(Dataset, ManifestRoundTrip) {
  const auto dir = testutil::temp_dir("manifest");
  ManifestRow r;
  r.filename = "img_00003.pgm";
  r.rows = 3;
  r.cols = 4;
  r.square_px = 9.25;
  r.rotation_deg = 123.5;
  r.skew_deg = 7.125;
  r.noise_std = 3.5;
  r.invert = true;
  r.distortion = {0.125, -0.03125, 0.0, 0.0075};
  r.occluded = true;
  write_manifest(dir / "m.csv", {r});
  EXPECT_EQ(testutil::slurp(dir / "m.csv").rfind(
                "filename,rows,cols,square_px,rotation_deg,skew_deg,noise_std,invert,k1,k2,p1,p2,"
            "occluded\n", 0),
            0u);
  const auto back = read_manifest(dir / "m.csv");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].filename, r.filename);
  EXPECT_EQ(back[0].cols, 4);
  EXPECT_DOUBLE_EQ(back[0].square_px, 9.25);
  EXPECT_DOUBLE_EQ(back[0].distortion.p2, 0.0075);
  EXPECT_TRUE(back[0].invert);
  EXPECT_TRUE(back[0].occluded);

  std::ofstream(dir / "bad.csv") << "filename,rows\nx,1\n";
  EXPECT_THROW(read_manifest(dir / "bad.csv"), FormatError);
}

TEST(Dataset, LabelCsvRoundTrip) {
  const auto dir = testutil::temp_dir("labels");
  const LabelMask mask(10, 10, {{3, 4}, {9, 0}});
  write_label_csv(dir / "l.csv", mask);
  EXPECT_EQ(testutil::slurp(dir / "l.csv").rfind("x,y\n", 0), 0u);
  auto px = read_label_csv(dir / "l.csv");
  std::sort(px.begin(), px.end());
  auto want = mask.positives();
  std::sort(want.begin(), want.end());
  EXPECT_EQ(px, want);
  std::ofstream(dir / "bad.csv") << "x,y\n1;2\n";
  EXPECT_THROW(read_label_csv(dir / "bad.csv"), FormatError);
}
