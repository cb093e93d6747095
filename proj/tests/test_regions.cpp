#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "planar_fixture.hpp"
#include "region_gain/certify.hpp"
#include "region_gain/regions.hpp"

using namespace region_gain;

namespace {

StorageFunction abs1() { return {1, [](const VectorXd& v) { return std::fabs(v[0]); }, {}}; }

VectorXd vec(double a, double b) { return (VectorXd(2) << a, b).finished(); }

Thresholds thr(double Ml, double Mh, double Nl, double Nh) {
  Thresholds t;
  t.M_lo = Ml;
  t.M_hi = Mh;
  t.N_lo = Nl;
  t.N_hi = Nh;
  return t;
}

ScalarField maxnorm = [](const VectorXd& y) { return y.cwiseAbs().maxCoeff(); };

}  // namespace

TEST(Region, SSetBranches) {
  const Region S = Region::S_set(thr(1, 3, 1, 3), abs1(), abs1(), Box::cube(2, 10));
  EXPECT_TRUE(S.contains(vec(2, 0.5)));
  EXPECT_FALSE(S.contains(vec(0.5, 0.5)));
  EXPECT_TRUE(S.contains(vec(0.5, 2)));
  EXPECT_FALSE(S.contains(vec(4, 0.5)));
}

TEST(Region, GapAnnulus) {
  const Region R = Region::gap(maxnorm, 3, maxnorm, 1, Box::cube(2, 4));
  EXPECT_TRUE(R.contains(vec(2, 0)));
  EXPECT_TRUE(R.contains(vec(-1.5, 2.5)));
  EXPECT_FALSE(R.contains(vec(0.5, 0.5)));
  EXPECT_FALSE(R.contains(vec(3.5, 0)));
}

TEST(Sample, ReproducibleBySeed) {
  const Region all(RegionKind::box, [](const VectorXd&) { return true; }, Box::cube(2, 1));
  const auto a = sample(all, 100, 11), b = sample(all, 100, 11), c = sample(all, 100, 12);
  ASSERT_EQ(a.size(), 100u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_LE(a[i].cwiseAbs().maxCoeff(), 1.0);
  }
  EXPECT_NE(a[0], c[0]);
}

TEST(Sample, DegenerateShellThrows) {
  const Region s = Region::shell(maxnorm, 1.0, 1.0, Box::cube(2, 2));
  EXPECT_TRUE(s.degenerate());
  EXPECT_THROW(sample(s, 10, 1), EmptyRegionError);
}

TEST(Sample, ThinRegionFallsBackToSweep) {
  const Region thin(RegionKind::box, [](const VectorXd& y) { return std::fabs(y[0]) < 1e-5; }, Box::cube(2, 1));
  SamplingOptions o;
  o.probe_proposals = 20000;
  const auto pts = sample(thin, 5, 3, o);
  ASSERT_EQ(pts.size(), 5u);
  for (const auto& p : pts) EXPECT_TRUE(thin.contains(p));
}

TEST(Sample, PlanarGapPointsSatisfyPredicate) {
  const auto spec = test::builtin("planar-example-corrected");
  const auto cert = certify(spec, Mode::planar, {});
  const auto& L = cert.regimes[0];
  const auto& G = cert.regimes[1];
  const ScalarField Ug = G.merged->as_field(), Ul = L.merged->as_field();
  const Region R = Region::gap(Ug, G.thresholds.M_tilde, Ul, L.thresholds.M_hat,
                               sublevel_bounding_box(Ug, G.thresholds.M_tilde, 2));
  const auto pts = sample(R, 1000, 5);
  ASSERT_EQ(pts.size(), 1000u);
  for (const auto& p : pts) {
    EXPECT_LE(Ug(p), G.thresholds.M_tilde);
    EXPECT_GE(Ul(p), L.thresholds.M_hat);
  }
}

TEST(BoundingBox, EnclosesSublevel) {
  const ScalarField sq = [](const VectorXd& y) { return y.squaredNorm(); };
  const Box b = sublevel_bounding_box(sq, 9.0, 2);
  EXPECT_GT(b.hi[0], 3.0);
  EXPECT_LE(b.hi[0], 4.0);
}

TEST(Inclusion, LinearChainPasses) {
  const auto t = compute_thresholds(ScalarGain::linear(2.0), ScalarGain::linear(0.25), 0, 8, 0, 4);
  const MergedLyapunov U(ScalarGain::linear(3.0 / 8.0), abs1(), abs1());
  const auto r = check_inclusion_chain(t, abs1(), abs1(), U, 10000, 1, Box::cube(2, 20));
  EXPECT_TRUE(r.passed());
  // Independent recheck of the outer inclusion on a grid of the sublevel set.
  for (double x = -20; x <= 20; x += 0.1)
    for (double z = -20; z <= 20; z += 0.1)
      if (std::max(3.0 / 8.0 * std::fabs(x), std::fabs(z)) <= t.M_hat) {
        ASSERT_LE(std::fabs(x), 8.0);
        ASSERT_LE(std::fabs(z), 4.0);
      }
}

TEST(Inclusion, DegenerateZeroU) {
  Thresholds t = thr(0, 1, 0, 1);
  t.M_tilde = 0.5;
  t.M_hat = 1.0;
  t.valid = true;
  const StorageFunction zero{1, [](const VectorXd&) { return 0.0; }, {}};
  const MergedLyapunov U(ScalarGain::linear(1.0), zero, zero);
  const auto r = check_inclusion_chain(t, abs1(), abs1(), U, 500, 2, Box::cube(2, 5));
  EXPECT_TRUE(r.middle.passed());
  EXPECT_FALSE(r.outer.passed());
}

TEST(Inclusion, PlanarLocalCertificate) {
  const auto spec = test::builtin("planar-example-corrected");
  const auto rc = certify_regime(spec, true, {});
  const auto r = check_inclusion_chain(rc.thresholds, spec.V, spec.W, *rc.merged, 4000, 9, spec.sampling.box);
  EXPECT_TRUE(r.passed());
}

TEST(Contour, UnitCircle) {
  const ScalarField sq = [](const VectorXd& y) { return y.squaredNorm(); };
  const int cells = 256;
  const Polyline c = trace_level_curve(sq, 1.0, Box::cube(2, 2), cells, cells);
  const double step = 4.0 / cells;
  double dev = 0.0;
  for (const auto& v : c.vertices) dev = std::max(dev, std::fabs(v.norm() - 1.0));
  EXPECT_LE(dev, 2.0 * step);
  EXPECT_NEAR(c.signed_area(), std::numbers::pi, 0.01);
  for (std::size_t i = 0; i < c.vertices.size(); ++i) EXPECT_GT(c.normals[i].dot(c.vertices[i]), 0.99);
}

TEST(Contour, MaxNormSquare) {
  const int cells = 300;
  const double h = 3.0 / cells;
  const Polyline c = trace_level_curve(maxnorm, 1.0, Box::cube(2, 1.5), cells, cells);
  // Vertices sit on the square; only the corner cells are cut.
  for (const auto& v : c.vertices) EXPECT_NEAR(v.cwiseAbs().maxCoeff(), 1.0, 1e-9);
  EXPECT_NEAR(c.signed_area(), 4.0, 4.0 * h * h);
  EXPECT_NEAR(c.perimeter(), 8.0, 4.0 * h);
  // Kinks: the normal turns by about 90 degrees within one cell of each corner.
  for (const Eigen::Vector2d corner : {Eigen::Vector2d(1, 1), Eigen::Vector2d(-1, 1), Eigen::Vector2d(-1, -1),
                                       Eigen::Vector2d(1, -1)}) {
    double min_dot = 1.0;
    for (std::size_t i = 0; i < c.vertices.size(); ++i)
      for (std::size_t j = 0; j < c.vertices.size(); ++j)
        if ((c.vertices[i] - corner).norm() < 2 * h && (c.vertices[j] - corner).norm() < 2 * h)
          min_dot = std::min(min_dot, c.normals[i].dot(c.normals[j]));
    EXPECT_LT(min_dot, 0.5);
  }
}

TEST(Contour, OpenAndMissing) {
  const ScalarField sq = [](const VectorXd& y) { return y.squaredNorm(); };
  try {
    trace_level_curves(sq, 5.0, Box::cube(2, 2), 64, 64);
    FAIL();
  } catch (const ContourError& e) {
    EXPECT_EQ(e.kind(), ContourError::Kind::open);
  }
  try {
    trace_level_curves(sq, -1.0, Box::cube(2, 2), 64, 64);
    FAIL();
  } catch (const ContourError& e) {
    EXPECT_EQ(e.kind(), ContourError::Kind::none);
  }
}

TEST(Contour, PlanarGlobalLevelEnclosesOrigin) {
  const auto spec = test::builtin("planar-example-corrected");
  const auto rc = certify_regime(spec, false, {});
  const ScalarField Ug = rc.merged->as_field();
  const double M = rc.thresholds.M_tilde;
  const Box b = sublevel_bounding_box(Ug, M, 2);
  const auto curves = trace_level_curves(Ug, M, Box{b.lo * 1.05, b.hi * 1.05});
  ASSERT_EQ(curves.size(), 1u);
  const Polyline& c = curves[0];
  EXPECT_TRUE(polygon_contains(c, Eigen::Vector2d::Zero()));
  // Oracle: stepping across each vertex along its normal flips membership.
  for (std::size_t i = 0; i < c.vertices.size(); i += 37) {
    const Eigen::Vector2d in = c.vertices[i] - 0.02 * c.normals[i];
    const Eigen::Vector2d out = c.vertices[i] + 0.02 * c.normals[i];
    EXPECT_LE(Ug(VectorXd(in)), M);
    EXPECT_GT(Ug(VectorXd(out)), M);
  }
}

TEST(Contour, CsvHeader) {
  const Polyline c = trace_level_curve(maxnorm, 1.0, Box::cube(2, 1.5), 30, 30);
  std::ostringstream o;
  write_polyline_csv(o, c);
  EXPECT_EQ(o.str().substr(0, o.str().find('\n')), "s_index,y1,y2,n1,n2");
}
