#include "hotcalib/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hotcalib/error.hpp"

namespace hotcalib {

namespace {

std::vector<int> choose_distinct(int pool, int count, Rng& rng) {
  std::vector<int> ids(static_cast<std::size_t>(pool));
  std::iota(ids.begin(), ids.end(), 0);
  for (int i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(i) + uniform_index(rng, static_cast<std::uint64_t>(pool - i));
    std::swap(ids[static_cast<std::size_t>(i)], ids[j]);
  }
  ids.resize(static_cast<std::size_t>(count));
  return ids;
}

// dot / sqrt(|a|^2 |b|^2) returns exactly 1 for identical inputs.
double cosine(const Vector& a, const Vector& b) {
  const double na = a.squaredNorm();
  const double nb = b.squaredNorm();
  return na == 0.0 || nb == 0.0 ? 0.0 : a.dot(b) / std::sqrt(na * nb);
}

std::pair<Index, Index> top2(const Vector& x) {
  Index first = 0;
  for (Index i = 1; i < x.size(); ++i)
    if (x[i] > x[first]) first = i;
  Index second = first == 0 ? 1 : 0;
  for (Index i = 0; i < x.size(); ++i)
    if (i != first && x[i] > x[second]) second = i;
  return {first, second};
}

// Unit directions: orthonormal when count <= dim, otherwise random.
RowMatrix directions(int count, Index dim, Rng& rng) {
  std::normal_distribution<double> n01;
  Matrix g(dim, std::max<Index>(count, 1));
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
  RowMatrix out(count, dim);
  if (count <= dim) {
    const Matrix q = Eigen::HouseholderQR<Matrix>(g).householderQ() * Matrix::Identity(dim, count);
    out = q.transpose();
  } else {
    out = g.transpose();
    for (Index r = 0; r < out.rows(); ++r) out.row(r).normalize();
  }
  return out;
}

}  // namespace

Matrix gamma_simplex_rows(Index rows, Index cols, double shape, Rng& rng) {
  std::gamma_distribution<double> gamma(shape, 1.0);
  Matrix w(rows, cols);
  for (Index r = 0; r < rows; ++r) {
    double sum = 0.0;
    while (!(sum > 0.0)) {
      for (Index c = 0; c < cols; ++c) w(r, c) = gamma(rng);
      sum = w.row(r).sum();
    }
    w.row(r) /= sum;
  }
  return w;
}

ToyInstance make_toy(int b, Index v, int n, Rng& rng, const StatsSet* stats) {
  if (b < 2 || v < 1 || n < 1) throw Error(ErrorKind::InvalidArgument, "toy needs B >= 2, V >= 1, N >= 1");
  ToyInstance t;
  if (stats != nullptr) {
    if (static_cast<int>(stats->classes.size()) < b) {
      throw Error(ErrorKind::InvalidArgument, "stats file has fewer than B classes");
    }
    t.u.resize(b, stats->dim);
    const auto picked = choose_distinct(static_cast<int>(stats->classes.size()), b, rng);
    for (int i = 0; i < b; ++i) t.u.row(i) = stats->classes[static_cast<std::size_t>(picked[static_cast<std::size_t>(i)])].mean.transpose();
  } else {
    std::normal_distribution<double> n01;
    t.u.resize(b, v);
    for (Index i = 0; i < t.u.size(); ++i) t.u.data()[i] = n01(rng);
  }
  t.w = gamma_simplex_rows(n, b, 0.8, rng);
  t.x = mix_rows(t.w, t.u);
  return t;
}

RowMatrix mix_rows(const Matrix& w, const RowMatrix& u) {
  if (w.cols() != u.rows()) throw Error(ErrorKind::DimensionMismatch, "mixing weights and means disagree");
  RowMatrix x = RowMatrix::Zero(w.rows(), u.cols());
  for (Index n = 0; n < w.rows(); ++n)
    for (Index b = 0; b < w.cols(); ++b)
      for (Index k = 0; k < u.cols(); ++k) x(n, k) += w(n, b) * u(b, k);
  return x;
}

RecoveryScore recovery_score(const Matrix& learned, const Matrix& truth) {
  if (learned.rows() != truth.rows() || learned.cols() != truth.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "learned and true weights differ in shape");
  }
  if (learned.size() > 0 && learned.minCoeff() < 0.0) {
    throw Error(ErrorKind::InvalidArgument, "learned weights must be nonnegative");
  }
  RecoveryScore s;
  s.cosine.resize(learned.rows());
  for (Index r = 0; r < learned.rows(); ++r) {
    const Vector l = learned.row(r).transpose();
    const Vector t = truth.row(r).transpose();
    s.cosine[r] = cosine(l, t);
    if (learned.cols() < 2) {
      s.top2_hit.push_back(true);
      continue;
    }
    const auto [l1, l2] = top2(l);
    const auto [t1, t2] = top2(t);
    s.top2_hit.push_back((l1 == t1 && l2 == t2) || (l1 == t2 && l2 == t1));
  }
  if (learned.rows() > 0) {
    s.mean_cosine = s.cosine.mean();
    s.hit_rate = static_cast<double>(std::count(s.top2_hit.begin(), s.top2_hit.end(), true)) /
                 static_cast<double>(learned.rows());
  }
  return s;
}

ToyRun run_toy(const ToyConfig& cfg, Rng& rng, const StatsSet* stats) {
  ToyRun run;
  run.instance = make_toy(cfg.b, cfg.v, cfg.n, rng, stats);
  const auto& inst = run.instance;
  const Index v = inst.u.cols();

  StatsSet base_stats;
  base_stats.dim = v;
  for (int b = 0; b < cfg.b; ++b) {
    ClassStats c;
    c.class_id = b;
    c.label = "b" + std::to_string(b);
    c.mean = inst.u.row(b).transpose();
    c.cov = Matrix::Identity(v, v) * cfg.base_noise * cfg.base_noise;
    c.count = cfg.base_samples;
    base_stats.classes.push_back(std::move(c));
  }
  // Toy features may be negative, so the support skips the power transform.
  EpisodeSupport support;
  support.n_way = cfg.n;
  support.k_shot = 1;
  support.transformed = inst.x;
  for (int i = 0; i < cfg.n; ++i) support.labels.push_back(i);

  const ot::SinkhornOptions opts{cfg.epsilon, cfg.sinkhorn_max_iter, cfg.sinkhorn_tol};
  auto add = [&](std::string name, Matrix learned) {
    ToyMethod m{std::move(name), std::move(learned), {}};
    m.score = recovery_score(m.learned, inst.w);
    run.methods.push_back(std::move(m));
  };
  add("uniform", Matrix::Constant(cfg.n, cfg.b, 1.0 / cfg.b));
  add("free_lunch", free_lunch_weights(support, base_stats, cfg.free_lunch_k));

  const auto euclid = variant_cost(support, base_stats, nullptr, VariantKind::EuclidMean);
  const auto plan = high_level_plan(euclid, opts, cfg.rescale_cost);
  add("high_level_euclid", static_cast<double>(cfg.n) * plan.values.transpose());

  // Full pipeline: noisy samples around each mean stand in for base data.
  std::normal_distribution<double> n01;
  RowMatrix rows(static_cast<Index>(cfg.b) * cfg.base_samples, v);
  std::vector<int> ids;
  std::vector<std::string> names;
  for (int b = 0; b < cfg.b; ++b) {
    names.push_back(base_stats.classes[static_cast<std::size_t>(b)].label);
    for (int s = 0; s < cfg.base_samples; ++s) {
      const Index r = static_cast<Index>(b) * cfg.base_samples + s;
      for (Index k = 0; k < v; ++k) rows(r, k) = inst.u(b, k) + cfg.base_noise * n01(rng);
      ids.push_back(b);
    }
  }
  const FeatureTable base(names, ids, rows);
  const auto phi = train_phi(base, cfg.phi);
  const auto weights = compute_sample_weights(phi, base);
  const auto cost = low_level_cost(base, weights, support, opts);
  const auto hot = high_level_plan(cost, opts, cfg.rescale_cost);
  add("hot", static_cast<double>(cfg.n) * hot.values.transpose());
  return run;
}

Matrix sparse_mixing(int n_novel, int b, int active, Rng& rng) {
  if (active < 1 || active > b) throw Error(ErrorKind::InvalidArgument, "active count must lie in [1, B]");
  Matrix m = Matrix::Zero(n_novel, b);
  for (int r = 0; r < n_novel; ++r) {
    const auto picked = choose_distinct(b, active, rng);
    const Matrix w = gamma_simplex_rows(1, active, 0.8, rng);
    for (int i = 0; i < active; ++i) m(r, picked[static_cast<std::size_t>(i)]) = w(0, i);
  }
  return m;
}

GaussianWorld make_gaussian_world(int b, int n_novel, Index v, int samples_per_class, double separation,
                                  const std::optional<Matrix>& mixing, Rng& rng) {
  if (b < 1 || n_novel < 1 || v < 1 || samples_per_class < 1 || separation < 0.0) {
    throw Error(ErrorKind::InvalidArgument, "world sizes must be positive and separation nonnegative");
  }
  if (mixing && (mixing->rows() != n_novel || mixing->cols() != b)) {
    throw Error(ErrorKind::DimensionMismatch, "mixing must be N_novel x B");
  }
  const double radius = separation / std::sqrt(2.0);
  const double offset = radius + 3.0;
  GaussianWorld world;
  const int fresh = mixing ? 0 : n_novel;
  // Fresh novel directions share the orthonormal frame only when it has room.
  const bool joint = b + fresh <= v;
  const RowMatrix dirs = directions(joint ? b + fresh : b, v, rng);
  world.base_means = (radius * dirs.topRows(b)).array() + offset;
  if (mixing) {
    world.novel_means = mix_rows(*mixing, world.base_means);
  } else {
    const RowMatrix novel_dirs = joint ? RowMatrix(dirs.bottomRows(n_novel)) : directions(n_novel, v, rng);
    world.novel_means = (radius * novel_dirs).array() + offset;
  }

  std::normal_distribution<double> n01;
  auto draw = [&](const RowMatrix& means, const std::string& prefix) {
    const Index classes = means.rows();
    RowMatrix data(classes * samples_per_class, v);
    std::vector<int> ids;
    std::vector<std::string> names;
    for (Index c = 0; c < classes; ++c) {
      names.push_back(prefix + std::to_string(c));
      for (int s = 0; s < samples_per_class; ++s) {
        const Index r = c * samples_per_class + s;
        for (Index k = 0; k < v; ++k) data(r, k) = std::max(0.0, means(c, k) + n01(rng));
        ids.push_back(static_cast<int>(c));
      }
    }
    return FeatureTable(names, ids, data);
  };
  world.base = draw(world.base_means, "b");
  world.novel = draw(world.novel_means, "n");
  return world;
}

}  // namespace hotcalib
