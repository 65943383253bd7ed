#include <doctest.h>

#include "epifusion/metrics.hpp"
#include "epifusion/synthetic.hpp"
#include "test_support.hpp"

using namespace epifusion;

TEST_SUITE_BEGIN("metrics");

TEST_CASE("decode: single peak with flat surroundings hits the exact cell center") {
  Heatmap hm(1, 16, 16);
  hm.at(0, 5, 7) = 1.0;
  const auto out = decode_heatmap(hm);
  REQUIRE(out.size() == 1);
  // equal (zero) axis neighbors: no quarter shift
  CHECK(out[0].px.u == doctest::Approx(heatmap_to_image(7.0)));
  CHECK(out[0].px.v == doctest::Approx(heatmap_to_image(5.0)));
  CHECK(out[0].confidence == doctest::Approx(1.0));
}

TEST_CASE("decode: ties resolve to the first cell in row-major order") {
  Heatmap hm(1, 8, 8);
  hm.at(0, 2, 3) = 1.0;
  hm.at(0, 6, 1) = 1.0;
  const auto out = decode_heatmap(hm);
  CHECK(out[0].px.u == doctest::Approx(heatmap_to_image(3.0)));
  CHECK(out[0].px.v == doctest::Approx(heatmap_to_image(2.0)));
}

TEST_CASE("decode: rendered gaussians at random sub-pixel spots come back within 2 px") {
  Rng rng(53);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Pixel> joints(1);
    joints[0] = Pixel{rng.uniform(20.0, 100.0), rng.uniform(20.0, 100.0)};
    const Heatmap hm = render_gt_heatmap(joints, 128, 2.0);
    const auto out = decode_heatmap(hm);
    CHECK(std::abs(out[0].px.u - joints[0].u) < 2.0);
    CHECK(std::abs(out[0].px.v - joints[0].v) < 2.0);
  }
}

TEST_CASE("jdr endpoints and constructed 50% split") {
  std::vector<Pixel> gt;
  for (int i = 0; i < 8; ++i) gt.push_back(Pixel{10.0 * i, 5.0 * i});

  CHECK(jdr(gt, gt, 4.0) == doctest::Approx(100.0));

  std::vector<Pixel> off = gt;
  for (Pixel& p : off) p.u += 4.0 + 1e-9;
  CHECK(jdr(off, gt, 4.0) == doctest::Approx(0.0));

  std::vector<Pixel> half = gt;
  for (size_t i = 0; i < half.size(); ++i) half[i].u += (i % 2 == 0) ? 2.0 : 8.0;
  CHECK(jdr(half, gt, 4.0) == doctest::Approx(50.0));

  // monotonicity: shrinking the threshold can only lower the rate
  Rng rng(59);
  std::vector<Pixel> noisy = gt;
  for (Pixel& p : noisy) {
    p.u += rng.normal();
    p.v += rng.normal();
  }
  double prev = 100.0;
  for (double thr : {8.0, 4.0, 2.0, 1.0, 0.5}) {
    const double rate = jdr(noisy, gt, thr);
    CHECK(rate <= prev + 1e-12);
    prev = rate;
  }

  CHECK_THROWS_AS(jdr(gt, gt, 0.0), NumericError);
}

TEST_CASE("mpjpe: trivial values, loop oracle, permutation invariance") {
  Rng rng(61);
  std::vector<Eigen::MatrixXd> gt, pred;
  for (int f = 0; f < 6; ++f) {
    Eigen::MatrixXd g(8, 3), p(8, 3);
    for (int j = 0; j < 8; ++j)
      for (int c = 0; c < 3; ++c) {
        g(j, c) = rng.normal(0.0, 100.0);
        p(j, c) = g(j, c) + rng.normal(0.0, 10.0);
      }
    gt.push_back(g);
    pred.push_back(p);
  }

  CHECK(mpjpe(gt, gt) == doctest::Approx(0.0));

  std::vector<Eigen::MatrixXd> shifted = gt;
  for (auto& m : shifted) m.col(2).array() += 10.0;
  CHECK(mpjpe(shifted, gt) == doctest::Approx(10.0).epsilon(1e-12));

  double acc = 0.0;
  for (int f = 0; f < 6; ++f)
    for (int j = 0; j < 8; ++j) acc += (pred[static_cast<size_t>(f)].row(j) - gt[static_cast<size_t>(f)].row(j)).norm();
  CHECK(mpjpe(pred, gt) == doctest::Approx(acc / 48.0).epsilon(1e-9));

  // permutation applied consistently to pred and gt leaves the value alone
  std::vector<int> perm = {4, 2, 7, 0, 5, 1, 6, 3};
  std::vector<Eigen::MatrixXd> gp = gt, pp = pred;
  for (int f = 0; f < 6; ++f)
    for (int j = 0; j < 8; ++j) {
      gp[static_cast<size_t>(f)].row(j) = gt[static_cast<size_t>(f)].row(perm[static_cast<size_t>(j)]);
      pp[static_cast<size_t>(f)].row(j) = pred[static_cast<size_t>(f)].row(perm[static_cast<size_t>(j)]);
    }
  CHECK(mpjpe(pp, gp) == doctest::Approx(mpjpe(pred, gt)).epsilon(1e-12));
}

TEST_SUITE_END();
