#include <cmath>

#include "doctest.h"
#include "hotcalib/error.hpp"
#include "hotcalib/synthetic.hpp"

using namespace hotcalib;

TEST_CASE("toy instance shape and simplex rows") {
  Rng rng = make_rng(1);
  const auto t = make_toy(20, 16, 5, rng);
  CHECK(t.u.rows() == 20);
  CHECK(t.u.cols() == 16);
  CHECK(t.x.rows() == 5);
  CHECK(t.x.cols() == 16);
  for (Index n = 0; n < 5; ++n) {
    CHECK(t.w.row(n).minCoeff() >= 0.0);
    CHECK(std::abs(t.w.row(n).sum() - 1.0) <= 1e-9);
  }
  RowMatrix row0 = RowMatrix::Zero(1, 16);
  for (Index b = 0; b < 20; ++b)
    for (Index k = 0; k < 16; ++k) row0(0, k) += t.w(0, b) * t.u(b, k);
  CHECK(t.x.row(0) == row0.row(0));

  Rng again = make_rng(1);
  const auto t2 = make_toy(20, 16, 5, again);
  CHECK(t2.u == t.u);
  CHECK(t2.w == t.w);
  CHECK(t2.x == t.x);
  CHECK_THROWS_AS(make_toy(1, 4, 2, rng), Error);
}

TEST_CASE("one-hot mixing reproduces a base mean") {
  Rng rng = make_rng(2);
  auto t = make_toy(2, 3, 1, rng);
  t.w << 1.0, 0.0;
  CHECK(mix_rows(t.w, t.u).row(0) == t.u.row(0));
}

TEST_CASE("toy means can come from a stats file") {
  StatsSet stats;
  stats.dim = 3;
  for (int c = 0; c < 6; ++c) stats.classes.push_back({c, "c", Vector::Constant(3, c), Matrix::Identity(3, 3), 5});
  Rng rng = make_rng(3);
  const auto t = make_toy(4, 99, 2, rng, &stats);
  CHECK(t.u.cols() == 3);
  std::vector<double> firsts;
  for (Index b = 0; b < 4; ++b) firsts.push_back(t.u(b, 0));
  std::sort(firsts.begin(), firsts.end());
  CHECK(std::adjacent_find(firsts.begin(), firsts.end()) == firsts.end());
  CHECK_THROWS_AS(make_toy(7, 3, 2, rng, &stats), Error);
}

TEST_CASE("recovery score closed forms") {
  Rng rng = make_rng(4);
  const Matrix truth = gamma_simplex_rows(6, 10, 0.8, rng);
  const auto same = recovery_score(truth, truth);
  for (Index n = 0; n < 6; ++n) CHECK(same.cosine[n] == 1.0);
  CHECK(same.hit_rate == 1.0);

  Matrix onehot = Matrix::Zero(1, 10);
  onehot(0, 3) = 1.0;
  const auto uni = recovery_score(Matrix::Constant(1, 10, 0.1), onehot);
  CHECK(uni.cosine[0] == doctest::Approx(1.0 / std::sqrt(10.0)).epsilon(1e-15));

  Matrix learned(1, 4), want(1, 4);
  learned << 0.1, 0.5, 0.0, 0.4;
  want << 0.0, 0.3, 0.1, 0.6;
  CHECK(recovery_score(learned, want).top2_hit[0]);
  want << 0.6, 0.3, 0.1, 0.0;
  CHECK_FALSE(recovery_score(learned, want).top2_hit[0]);
  CHECK_THROWS_AS(recovery_score(learned, Matrix::Zero(2, 4)), Error);
  CHECK_THROWS_AS(recovery_score(-learned, want), Error);
}

TEST_CASE("high-level weights beat uniform on fresh toys") {
  ToyConfig cfg;
  double hl = 0.0;
  double uniform = 0.0;
  const int seeds = 10;
  for (int s = 0; s < seeds; ++s) {
    Rng rng = make_rng(1000 + static_cast<std::uint64_t>(s));
    const auto run = run_toy(cfg, rng);
    REQUIRE(run.methods.size() == 4);
    for (const auto& m : run.methods) {
      CHECK(m.learned.rows() == 5);
      CHECK(m.learned.cols() == 20);
      if (m.name == "uniform") uniform += m.score.mean_cosine / seeds;
      if (m.name == "high_level_euclid") hl += m.score.mean_cosine / seeds;
    }
  }
  MESSAGE("mean cosine: high-level " << hl << ", uniform " << uniform);
  CHECK(hl > uniform);
}

TEST_CASE("gaussian world construction") {
  Rng rng = make_rng(5);
  const auto w = make_gaussian_world(6, 4, 8, 30, 4.0, std::nullopt, rng);
  CHECK(w.base.num_classes() == 6);
  CHECK(w.novel.num_classes() == 4);
  for (const auto& rows : w.base.rows_by_class()) CHECK(rows.size() == 30);
  for (const auto& rows : w.novel.rows_by_class()) CHECK(rows.size() == 30);
  CHECK(w.base.min_entry() >= 0.0);
  CHECK(w.novel.min_entry() >= 0.0);
  for (Index a = 0; a < 6; ++a)
    for (Index b = a + 1; b < 6; ++b)
      CHECK((w.base_means.row(a) - w.base_means.row(b)).norm() == doctest::Approx(4.0).epsilon(1e-12));

  const Matrix mix = sparse_mixing(4, 6, 2, rng);
  for (Index n = 0; n < 4; ++n) {
    CHECK(std::abs(mix.row(n).sum() - 1.0) <= 1e-12);
    CHECK((mix.row(n).array() > 0.0).count() <= 2);
  }
  const auto mixed = make_gaussian_world(6, 4, 8, 10, 4.0, mix, rng);
  CHECK((mixed.novel_means - mix_rows(mix, mixed.base_means)).cwiseAbs().maxCoeff() == 0.0);
  const auto wide = make_gaussian_world(12, 3, 4, 5, 2.0, std::nullopt, rng);
  CHECK(wide.base.min_entry() >= 0.0);
  CHECK_THROWS_AS(make_gaussian_world(3, 2, 4, 5, 2.0, Matrix::Zero(3, 3), rng), Error);
}
