#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "hotcalib/error.hpp"
#include "hotcalib/features.hpp"
#include "test_util.hpp"

using namespace hotcalib;
namespace fs = std::filesystem;

TEST_CASE("load a small CSV") {
  TempDir dir("features");
  const auto path = dir.write("a.csv", "label,f0,f1\na,1,2\na,3,4\nb,5,6.5\n");
  const auto table = load_features(path);
  CHECK(table.dim() == 2);
  CHECK(table.rows() == 3);
  CHECK(table.label_index().size() == 2);
  CHECK(table.class_of(0) == 0);
  CHECK(table.class_of(2) == 1);
  CHECK(table.data()(2, 1) == 6.5);
  CHECK(table.row_label(2) == "b");
  CHECK(table.min_entry() == 1.0);
}

TEST_CASE("short row is a parse error naming its line") {
  TempDir dir("features");
  const auto path = dir.write("bad.csv", "label,f0,f1\na,1,2\na,3\n");
  try {
    load_features(path);
    FAIL("expected ParseError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ParseError);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
}

TEST_CASE("malformed inputs") {
  TempDir dir("features");
  auto kind_of = [](const fs::path& p) {
    try {
      load_features(p);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  CHECK(kind_of(dir.write("empty.csv", "")) == ErrorKind::EmptyFile);
  CHECK(kind_of(dir.write("header.csv", "label,f0\n")) == ErrorKind::EmptyFile);
  CHECK(kind_of(dir.write("nan.csv", "label,f0\na,nan\n")) == ErrorKind::ParseError);
  CHECK(kind_of(dir.write("word.csv", "label,f0\na,1x\n")) == ErrorKind::ParseError);
  CHECK(kind_of(dir.write("hdr.csv", "name,f0\na,1\n")) == ErrorKind::ParseError);
  CHECK(kind_of(dir.path() / "missing.csv") == ErrorKind::IoError);
}

TEST_CASE("CSV round trip, plain and gzip") {
  TempDir dir("features");
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  RowMatrix data(7, 3);
  for (Index i = 0; i < data.size(); ++i) data.data()[i] = n01(rng);
  const FeatureTable table({"x", "y", "x", "z", "y", "x", "z"}, data);
  for (const char* name : {"t.csv", "t.csv.gz"}) {
    save_features(table, dir.path() / name);
    const auto back = load_features(dir.path() / name);
    CHECK(back.data() == table.data());
    CHECK(back.class_labels() == table.class_labels());
    CHECK(back.row_classes() == table.row_classes());
  }
}

TEST_CASE("base statistics arithmetic") {
  RowMatrix data(8, 2);
  data << 1, 1, 3, 3, 5, 5, 5, 5, 5, 5, 5, 5, 5, 5, 0, 2;
  const FeatureTable table({"a", "a", "b", "b", "b", "b", "b", "c"}, data);
  CHECK_THROWS_AS(base_statistics(table), Error);

  const FeatureTable two({"a", "a", "b", "b", "b", "b", "b"}, data.topRows(7));
  const auto stats = base_statistics(two);
  REQUIRE(stats.classes.size() == 2);
  CHECK(stats.classes[0].mean == Vector::Constant(2, 2.0));
  CHECK(stats.classes[0].cov == Matrix::Constant(2, 2, 2.0));
  CHECK(stats.classes[0].count == 2);
  CHECK(stats.classes[1].cov.isZero(0.0));
  CHECK(stats.classes[1].count == 5);

  try {
    base_statistics(table);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CovarianceUndefined);
    CHECK(std::string(e.what()).find("'c'") != std::string::npos);
  }
}

TEST_CASE("base statistics are invariant to row order within a class") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const Index rows = 30;
    RowMatrix data(rows, 4);
    std::vector<std::string> labels;
    for (Index i = 0; i < rows; ++i) {
      labels.push_back(std::string(1, static_cast<char>('a' + i % 3)));
      for (Index k = 0; k < 4; ++k) data(i, k) = 5.0 * n01(rng);
    }
    std::vector<Index> perm(rows);
    std::iota(perm.begin(), perm.end(), 0);
    // Keep first appearances in place so class ids stay identical.
    std::shuffle(perm.begin() + 3, perm.end(), rng);
    RowMatrix shuffled(rows, 4);
    std::vector<std::string> shuffled_labels;
    for (Index i = 0; i < rows; ++i) {
      shuffled.row(i) = data.row(perm[static_cast<std::size_t>(i)]);
      shuffled_labels.push_back(labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
    }
    const auto a = base_statistics(FeatureTable(labels, data));
    const auto b = base_statistics(FeatureTable(shuffled_labels, shuffled));
    for (std::size_t c = 0; c < a.classes.size(); ++c) {
      CHECK((a.classes[c].mean - b.classes[c].mean).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((a.classes[c].cov - b.classes[c].cov).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((a.classes[c].cov - a.classes[c].cov.transpose()).cwiseAbs().maxCoeff() <= 1e-9);
    }
  }
}

TEST_CASE("stats JSON round trip") {
  TempDir dir("features");
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  RowMatrix data(12, 3);
  for (Index i = 0; i < data.size(); ++i) data.data()[i] = n01(rng);
  const FeatureTable table({"p", "q", "r", "p", "q", "r", "p", "q", "r", "p", "q", "r"}, data);
  const auto stats = base_statistics(table);
  save_stats(stats, dir.path() / "s.json");
  const auto back = load_stats(dir.path() / "s.json");
  REQUIRE(back.classes.size() == 3);
  CHECK(back.dim == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(back.classes[c].mean == stats.classes[c].mean);
    CHECK((back.classes[c].cov - stats.classes[c].cov).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(back.classes[c].label == stats.classes[c].label);
    CHECK(back.classes[c].count == 4);
  }
  CHECK_NOTHROW(check_stats_compatible(back, table));

  save_stats(stats, dir.path() / "f.json.gz", true);
  const auto f32 = load_stats(dir.path() / "f.json.gz");
  CHECK((f32.classes[0].mean - stats.classes[0].mean).cwiseAbs().maxCoeff() <= 1e-6);

  const FeatureTable narrow({"p", "q", "r"}, RowMatrix::Ones(3, 2));
  try {
    check_stats_compatible(back, narrow);
    FAIL("expected SchemaMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SchemaMismatch);
  }
}

TEST_CASE("empty stats list and corrupt stats files") {
  TempDir dir("features");
  save_stats(StatsSet{4, {}}, dir.path() / "e.json");
  const auto empty = load_stats(dir.path() / "e.json");
  CHECK(empty.dim == 4);
  CHECK(empty.classes.empty());

  auto kind_of = [](const fs::path& p) {
    try {
      load_stats(p);
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::InvalidArgument;
  };
  CHECK(kind_of(dir.write("x.json", "{not json")) == ErrorKind::SchemaMismatch);
  CHECK(kind_of(dir.write("y.json", R"({"dim":2,"classes":[{"label":"a","count":2,"mean":[1],"cov_rows":[[1]]}]})")) ==
        ErrorKind::SchemaMismatch);
  CHECK(kind_of(dir.write("z.json", R"({"classes":[]})")) == ErrorKind::SchemaMismatch);
}

TEST_CASE("tukey transform examples") {
  Vector x(2);
  x << 4.0, 9.0;
  const Vector half = tukey_transform(x, 0.5);
  CHECK(half[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(half[1] == doctest::Approx(3.0).epsilon(1e-15));

  Vector y(2);
  y << 1.0, std::exp(1.0);
  const Vector logs = tukey_transform(y, 0.0);
  CHECK(logs[0] == 0.0);
  CHECK(logs[1] == doctest::Approx(1.0).epsilon(1e-15));

  Vector neg(2);
  neg << 1.0, -0.5;
  try {
    tukey_transform(neg, 0.5);
    FAIL("expected NegativeInput");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NegativeInput);
  }
  Vector zero(2);
  zero << 0.0, 1.0;
  try {
    tukey_transform(zero, 0.0);
    FAIL("expected LogOfNonPositive");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::LogOfNonPositive);
  }
  CHECK(tukey_transform(zero, 0.5)[0] == 0.0);
}

TEST_CASE("tukey identity is bit exact and powers are monotone") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 7.0);
  RowMatrix rows(50, 6);
  for (Index i = 0; i < rows.size(); ++i) rows.data()[i] = u(rng);
  CHECK(tukey_transform(rows, 1.0) == rows);
  for (double lambda : {0.1, 0.5, 0.8, 1.0}) {
    for (int t = 0; t < 200; ++t) {
      Vector a(2);
      a << u(rng), u(rng);
      Vector b = a;
      b[0] += u(rng);
      const Vector ta = tukey_transform(a, lambda);
      const Vector tb = tukey_transform(b, lambda);
      CHECK(tb[0] >= ta[0]);
      CHECK(tb[1] == ta[1]);
    }
  }
}
