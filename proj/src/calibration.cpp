#include "hotcalib/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "hotcalib/error.hpp"

namespace hotcalib {

namespace {

// Rows scaled to unit length; zero rows stay zero so their cosine is 0.
RowMatrix unit_rows(const RowMatrix& rows, Index& zero_count) {
  RowMatrix out = rows;
  for (Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (norm > 0.0) {
      out.row(i) /= norm;
    } else {
      ++zero_count;
    }
  }
  return out;
}

void require_dims(Index got, Index want, const char* what) {
  if (got != want) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + ": expected " + std::to_string(want) + ", got " +
                                                  std::to_string(got));
  }
}

}  // namespace

EpisodeSupport build_support(const RowMatrix& raw, std::vector<int> labels, int n_way, int k_shot, double lambda) {
  if (n_way < 1 || k_shot < 1) throw Error(ErrorKind::InvalidArgument, "n_way and k_shot must be positive");
  const Index rows = static_cast<Index>(n_way) * k_shot;
  require_dims(raw.rows(), rows, "support rows");
  require_dims(static_cast<Index>(labels.size()), rows, "support labels");
  std::set<int> seen;
  for (int c = 0; c < n_way; ++c) {
    const int label = labels[static_cast<std::size_t>(c * k_shot)];
    for (int s = 1; s < k_shot; ++s) {
      if (labels[static_cast<std::size_t>(c * k_shot + s)] != label) {
        throw Error(ErrorKind::InvalidArgument, "support rows must be class-major with k_shot rows per class");
      }
    }
    if (!seen.insert(label).second) throw Error(ErrorKind::InvalidArgument, "support repeats a class block");
  }
  EpisodeSupport s;
  s.n_way = n_way;
  s.k_shot = k_shot;
  s.transformed = tukey_transform(raw, lambda);
  s.labels = std::move(labels);
  return s;
}

BaseDistributions prepare_base(const FeatureTable& base, const SampleWeights& weights) {
  if (weights.num_classes() != base.num_classes()) {
    throw Error(ErrorKind::DimensionMismatch, "sample weights cover " + std::to_string(weights.num_classes()) +
                                                  " classes, base has " + std::to_string(base.num_classes()));
  }
  BaseDistributions out;
  out.dim = base.dim();
  for (int c = 0; c < base.num_classes(); ++c) {
    const auto& idx = weights.indices[static_cast<std::size_t>(c)];
    const auto& p = weights.weights[static_cast<std::size_t>(c)];
    require_dims(p.size(), static_cast<Index>(idx.size()), "sample weight length");
    // Zero-mass atoms carry no transport; the solver needs strictly positive marginals.
    std::vector<Index> kept;
    for (std::size_t k = 0; k < idx.size(); ++k)
      if (p[static_cast<Index>(k)] > 0.0) kept.push_back(static_cast<Index>(k));
    if (kept.empty()) throw Error(ErrorKind::InvalidArgument, "class " + std::to_string(c) + " has no positive weight");
    RowMatrix rows(static_cast<Index>(kept.size()), base.dim());
    Vector w(static_cast<Index>(kept.size()));
    std::vector<Index> sources;
    for (std::size_t r = 0; r < kept.size(); ++r) {
      const Index src = idx[static_cast<std::size_t>(kept[r])];
      if (src < 0 || src >= base.rows()) throw Error(ErrorKind::DimensionMismatch, "sample weight index out of range");
      rows.row(static_cast<Index>(r)) = base.row(src);
      sources.push_back(src);
      w[static_cast<Index>(r)] = p[kept[r]];
    }
    out.unit_rows.push_back(unit_rows(rows, out.zero_norm_rows));
    out.weights.push_back(w / w.sum());
    out.source_rows.push_back(std::move(sources));
  }
  return out;
}

AdaptiveCost low_level_cost(const BaseDistributions& base, const EpisodeSupport& support,
                            const ot::SinkhornOptions& options, bool keep_plans) {
  require_dims(support.dim(), base.dim, "support feature dim");
  AdaptiveCost out;
  const RowMatrix s_unit = unit_rows(support.transformed, out.zero_norm_count);
  out.zero_norm_count += base.zero_norm_rows;
  const Index nk = support.size();
  const auto q = ot::DiscreteDistribution::uniform(nk);
  out.values.resize(base.num_classes(), nk);
  for (int b = 0; b < base.num_classes(); ++b) {
    const auto& rows = base.unit_rows[static_cast<std::size_t>(b)];
    Matrix d = (1.0 - (rows * s_unit.transpose()).array()).matrix();
    d = d.cwiseMax(0.0).cwiseMin(2.0);
    const auto plan = ot::sinkhorn(ot::DiscreteDistribution(base.weights[static_cast<std::size_t>(b)]), q, d, options);
    out.values.row(b) = d.cwiseProduct(plan.values).colwise().sum();
    out.all_converged = out.all_converged && plan.converged;
    out.max_iterations = std::max(out.max_iterations, plan.iterations);
    if (keep_plans) out.per_class_plans.push_back(plan.values);
  }
  return out;
}

AdaptiveCost low_level_cost(const FeatureTable& base, const SampleWeights& weights, const EpisodeSupport& support,
                            const ot::SinkhornOptions& options, bool keep_plans) {
  return low_level_cost(prepare_base(base, weights), support, options, keep_plans);
}

ot::TransportPlan high_level_plan(const AdaptiveCost& cost, const ot::SinkhornOptions& options, bool rescale) {
  Matrix c = cost.values;
  if (rescale) {
    const double top = c.maxCoeff();
    if (top > 0.0) c /= top;
  }
  return ot::sinkhorn(ot::DiscreteDistribution::uniform(c.rows()), ot::DiscreteDistribution::uniform(c.cols()), c,
                      options);
}

std::string_view to_string(CalibrationMode mode) { return mode == CalibrationMode::Paper ? "paper" : "convex"; }

CalibrationMode parse_calibration_mode(std::string_view text) {
  if (text == "paper") return CalibrationMode::Paper;
  if (text == "convex") return CalibrationMode::Convex;
  throw Error(ErrorKind::InvalidArgument, "calibration mode must be 'paper' or 'convex', got '" + std::string(text) + "'");
}

std::vector<CalibratedGaussian> calibrate(const EpisodeSupport& support, const Matrix& plan, const StatsSet& stats,
                                          double alpha, CalibrationMode mode) {
  const Index b_count = static_cast<Index>(stats.classes.size());
  require_dims(plan.rows(), b_count, "plan rows (base classes)");
  require_dims(plan.cols(), support.size(), "plan columns (support rows)");
  require_dims(support.dim(), stats.dim, "support feature dim");
  const double nk = static_cast<double>(support.size());
  const double bd = static_cast<double>(b_count);
  std::vector<CalibratedGaussian> out;
  out.reserve(static_cast<std::size_t>(support.size()));
  for (Index n = 0; n < support.size(); ++n) {
    Vector m = Vector::Zero(stats.dim);
    Matrix s = Matrix::Zero(stats.dim, stats.dim);
    for (Index b = 0; b < b_count; ++b) {
      const double w = nk * plan(b, n);
      m.noalias() += w * stats.classes[static_cast<std::size_t>(b)].mean;
      s.noalias() += w * stats.classes[static_cast<std::size_t>(b)].cov;
    }
    CalibratedGaussian g;
    g.source_support_index = n;
    g.label = support.labels[static_cast<std::size_t>(n)];
    const Vector x = support.transformed.row(n).transpose();
    if (mode == CalibrationMode::Paper) {
      g.mean = (m + x) / (bd + 1.0);
      g.cov = (s / bd).array() + alpha;
    } else {
      g.mean = (m + x) / 2.0;
      g.cov = s.array() + alpha;
    }
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<int> free_lunch_select(const StatsSet& stats, const Vector& x, int k) {
  const int b_count = static_cast<int>(stats.classes.size());
  if (k < 1 || k > b_count) {
    throw Error(ErrorKind::InvalidArgument, "free-lunch k must lie in [1, " + std::to_string(b_count) + "], got " +
                                                std::to_string(k));
  }
  require_dims(x.size(), stats.dim, "support feature dim");
  std::vector<double> dist(static_cast<std::size_t>(b_count));
  for (int b = 0; b < b_count; ++b) dist[static_cast<std::size_t>(b)] = (stats.classes[static_cast<std::size_t>(b)].mean - x).squaredNorm();
  std::vector<int> ids(static_cast<std::size_t>(b_count));
  std::iota(ids.begin(), ids.end(), 0);
  std::partial_sort(ids.begin(), ids.begin() + k, ids.end(), [&](int l, int r) {
    const double dl = dist[static_cast<std::size_t>(l)];
    const double dr = dist[static_cast<std::size_t>(r)];
    return dl < dr || (dl == dr && l < r);
  });
  ids.resize(static_cast<std::size_t>(k));
  return ids;
}

std::vector<CalibratedGaussian> free_lunch_calibrate(const EpisodeSupport& support, const StatsSet& stats, int k,
                                                     double alpha) {
  std::vector<CalibratedGaussian> out;
  for (Index n = 0; n < support.size(); ++n) {
    const Vector x = support.transformed.row(n).transpose();
    Vector m = x;
    Matrix s = Matrix::Zero(stats.dim, stats.dim);
    for (int b : free_lunch_select(stats, x, k)) {
      m += stats.classes[static_cast<std::size_t>(b)].mean;
      s += stats.classes[static_cast<std::size_t>(b)].cov;
    }
    CalibratedGaussian g;
    g.source_support_index = n;
    g.label = support.labels[static_cast<std::size_t>(n)];
    g.mean = m / static_cast<double>(k + 1);
    g.cov = (s / static_cast<double>(k)).array() + alpha;
    out.push_back(std::move(g));
  }
  return out;
}

Matrix free_lunch_weights(const EpisodeSupport& support, const StatsSet& stats, int k) {
  Matrix w = Matrix::Zero(support.size(), static_cast<Index>(stats.classes.size()));
  for (Index n = 0; n < support.size(); ++n)
    for (int b : free_lunch_select(stats, support.transformed.row(n).transpose(), k)) w(n, b) = 1.0 / k;
  return w;
}

CalibratedSets build_calibrated_sets(const std::vector<CalibratedGaussian>& calibrated, const std::vector<int>& labels) {
  require_dims(static_cast<Index>(labels.size()), static_cast<Index>(calibrated.size()), "label count");
  CalibratedSets sets;
  for (std::size_t i = 0; i < calibrated.size(); ++i) sets[labels[i]].push_back(calibrated[i]);
  return sets;
}

GeneratedFeatures sample_features(const CalibratedSets& sets, int total_per_class, Rng& rng) {
  if (total_per_class < 0) throw Error(ErrorKind::InvalidArgument, "generated count must be nonnegative");
  GeneratedFeatures out;
  std::normal_distribution<double> n01;
  for (const auto& [label, tuples] : sets) {
    if (tuples.empty()) continue;
    const Index dim = tuples.front().mean.size();
    RowMatrix samples(total_per_class, dim);
    const int k = static_cast<int>(tuples.size());
    Index row = 0;
    for (int t = 0; t < k; ++t) {
      const Index count = total_per_class / k + (t < total_per_class % k ? 1 : 0);
      if (count == 0) continue;
      const auto& g = tuples[static_cast<std::size_t>(t)];
      require_dims(g.cov.rows(), dim, "calibrated covariance");
      if (g.cov.isZero(0.0)) {
        samples.middleRows(row, count).rowwise() = g.mean.transpose();
        row += count;
        continue;
      }
      Eigen::LLT<Matrix> llt(g.cov);
      if (llt.info() != Eigen::Success) {
        const double trace = g.cov.trace();
        double eta = trace > 0.0 ? 1e-6 * trace / static_cast<double>(dim) : 1e-6;
        bool ok = false;
        for (int attempt = 0; attempt < 3 && !ok; ++attempt, eta *= 10.0) {
          llt.compute(g.cov + eta * Matrix::Identity(dim, dim));
          ok = llt.info() == Eigen::Success;
        }
        if (!ok) {
          throw Error(ErrorKind::CovarianceNotPD, "calibrated covariance for class " + std::to_string(label) +
                                                      " is not positive definite after jitter");
        }
        ++out.jitter_used;
      }
      RowMatrix z(count, dim);
      for (Index i = 0; i < z.size(); ++i) z.data()[i] = n01(rng);
      const Matrix l = llt.matrixL();
      samples.middleRows(row, count) = z * l.transpose();
      samples.middleRows(row, count).rowwise() += g.mean.transpose();
      row += count;
    }
    if (!samples.allFinite()) throw Error(ErrorKind::NonFiniteInput, "generated features are not finite");
    out.per_class.emplace(label, std::move(samples));
  }
  return out;
}

std::string_view to_string(VariantKind kind) {
  switch (kind) {
    case VariantKind::EuclidMean: return "euclid_mean";
    case VariantKind::CosineMean: return "cosine_mean";
    case VariantKind::EuclidWeighted: return "euclid_weighted";
    case VariantKind::CosineWeighted: return "cosine_weighted";
  }
  return "unknown";
}

std::optional<VariantKind> parse_variant_kind(std::string_view text) {
  for (auto kind : {VariantKind::EuclidMean, VariantKind::CosineMean, VariantKind::EuclidWeighted,
                    VariantKind::CosineWeighted}) {
    if (text == to_string(kind)) return kind;
  }
  return std::nullopt;
}

std::vector<Vector> weighted_means(const FeatureTable& base, const SampleWeights& weights) {
  require_dims(weights.num_classes(), base.num_classes(), "sample weight classes");
  std::vector<Vector> out;
  for (int c = 0; c < weights.num_classes(); ++c) {
    const auto& idx = weights.indices[static_cast<std::size_t>(c)];
    const auto& p = weights.weights[static_cast<std::size_t>(c)];
    Vector m = Vector::Zero(base.dim());
    for (std::size_t k = 0; k < idx.size(); ++k) m += p[static_cast<Index>(k)] * base.row(idx[k]).transpose();
    out.push_back(std::move(m));
  }
  return out;
}

AdaptiveCost variant_cost(const EpisodeSupport& support, const StatsSet& stats, const std::vector<Vector>* weighted,
                          VariantKind kind) {
  const bool use_weighted = kind == VariantKind::EuclidWeighted || kind == VariantKind::CosineWeighted;
  const bool cosine = kind == VariantKind::CosineMean || kind == VariantKind::CosineWeighted;
  if (use_weighted && weighted == nullptr) {
    throw Error(ErrorKind::InvalidArgument, "weighted cost variants need base sample weights");
  }
  const Index b_count = static_cast<Index>(stats.classes.size());
  if (use_weighted) require_dims(static_cast<Index>(weighted->size()), b_count, "weighted means");
  require_dims(support.dim(), stats.dim, "support feature dim");
  AdaptiveCost out;
  out.values.resize(b_count, support.size());
  const RowMatrix s_unit = cosine ? unit_rows(support.transformed, out.zero_norm_count) : RowMatrix();
  for (Index b = 0; b < b_count; ++b) {
    const Vector& m = use_weighted ? (*weighted)[static_cast<std::size_t>(b)] : stats.classes[static_cast<std::size_t>(b)].mean;
    require_dims(m.size(), stats.dim, "base mean dim");
    if (cosine) {
      const double norm = m.norm();
      if (norm == 0.0) throw Error(ErrorKind::ZeroVector, "base class " + std::to_string(b) + " has a zero-norm mean");
      out.values.row(b) = (1.0 - (s_unit * (m / norm)).array()).cwiseMax(0.0).cwiseMin(2.0).transpose();
    } else {
      out.values.row(b) = (support.transformed.rowwise() - m.transpose()).rowwise().squaredNorm().transpose();
    }
  }
  return out;
}

AdaptiveCost top_k_mask(const AdaptiveCost& cost, int k) {
  const Index b_count = cost.values.rows();
  if (k < 1 || k > b_count) {
    throw Error(ErrorKind::InvalidArgument, "top-k must lie in [1, " + std::to_string(b_count) + "], got " +
                                                std::to_string(k));
  }
  AdaptiveCost out = cost;
  if (k == b_count) return out;
  const double hi = cost.values.maxCoeff();
  const double range = hi - cost.values.minCoeff();
  const double sentinel = hi + 10.0 * (range > 0.0 ? range : std::max(std::abs(hi), 1.0));
  std::vector<Index> order(static_cast<std::size_t>(b_count));
  for (Index n = 0; n < cost.values.cols(); ++n) {
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index l, Index r) { return cost.values(l, n) < cost.values(r, n); });
    for (std::size_t r = static_cast<std::size_t>(k); r < order.size(); ++r) out.values(order[r], n) = sentinel;
  }
  return out;
}

}  // namespace hotcalib
