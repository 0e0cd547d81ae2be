#pragma once

#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "hotcalib/base_weights.hpp"
#include "hotcalib/features.hpp"
#include "hotcalib/ot.hpp"
#include "hotcalib/rng.hpp"
#include "hotcalib/types.hpp"

namespace hotcalib {

/// Support set of one episode after the Tukey transform. Rows are
/// class-major: K consecutive rows per class.
struct EpisodeSupport {
  int n_way = 0;
  int k_shot = 0;
  RowMatrix transformed;
  std::vector<int> labels;

  Index size() const noexcept { return transformed.rows(); }
  Index dim() const noexcept { return transformed.cols(); }
};

EpisodeSupport build_support(const RowMatrix& raw, std::vector<int> labels, int n_way, int k_shot, double lambda);

/// Base classes prepared for the low-level problems: unit-norm rows and
/// the positive part of p^b, computed once and shared by every episode.
struct BaseDistributions {
  std::vector<RowMatrix> unit_rows;
  std::vector<Vector> weights;
  std::vector<std::vector<Index>> source_rows;  // base table row behind each kept atom
  Index zero_norm_rows = 0;
  Index dim = 0;

  int num_classes() const noexcept { return static_cast<int>(weights.size()); }
};

BaseDistributions prepare_base(const FeatureTable& base, const SampleWeights& weights);

/// B x NK cost between base classes and support rows.
struct AdaptiveCost {
  Matrix values;
  std::vector<Matrix> per_class_plans;  // filled only on request
  Index zero_norm_count = 0;
  bool all_converged = true;
  int max_iterations = 0;
};

/// D^b_jn = 1 - cos(x_n, x_j^b); M^b couples (p^b, uniform NK); C_bn = sum_j D M.
AdaptiveCost low_level_cost(const BaseDistributions& base, const EpisodeSupport& support,
                            const ot::SinkhornOptions& options, bool keep_plans = false);
AdaptiveCost low_level_cost(const FeatureTable& base, const SampleWeights& weights, const EpisodeSupport& support,
                            const ot::SinkhornOptions& options, bool keep_plans = false);

/// Couples uniform(B) with uniform(NK) under `cost`; `rescale` divides the
/// cost by its maximum first.
ot::TransportPlan high_level_plan(const AdaptiveCost& cost, const ot::SinkhornOptions& options, bool rescale = false);

enum class CalibrationMode { Paper, Convex };
std::string_view to_string(CalibrationMode mode);
CalibrationMode parse_calibration_mode(std::string_view text);

struct CalibratedGaussian {
  Vector mean;
  Matrix cov;
  Index source_support_index = 0;
  int label = 0;
};

/// With m = NK sum_b T_bn mu_b and S = NK sum_b T_bn Sigma_b:
///   paper:  mean (m + x)/(B+1), cov S/B + alpha
///   convex: mean (m + x)/2,     cov S + alpha
/// alpha is added to every covariance entry.
std::vector<CalibratedGaussian> calibrate(const EpisodeSupport& support, const Matrix& plan, const StatsSet& stats,
                                          double alpha, CalibrationMode mode);

/// Indices of the k base means nearest to x (squared Euclidean), nearest
/// first, lower class id on ties.
std::vector<int> free_lunch_select(const StatsSet& stats, const Vector& x, int k);

/// Hard top-k selection: mean (sum mu + x)/(k+1), cov sum Sigma / k + alpha.
std::vector<CalibratedGaussian> free_lunch_calibrate(const EpisodeSupport& support, const StatsSet& stats, int k,
                                                     double alpha);

/// NK x B matrix with 1/k on each support row's selected classes.
Matrix free_lunch_weights(const EpisodeSupport& support, const StatsSet& stats, int k);

using CalibratedSets = std::map<int, std::vector<CalibratedGaussian>>;

CalibratedSets build_calibrated_sets(const std::vector<CalibratedGaussian>& calibrated, const std::vector<int>& labels);

struct GeneratedFeatures {
  std::map<int, RowMatrix> per_class;
  int jitter_used = 0;  // factorizations that needed a diagonal boost
};

/// Draws `total_per_class` samples per class, split as evenly as possible
/// over its Gaussians (earlier ones take the remainder).
GeneratedFeatures sample_features(const CalibratedSets& sets, int total_per_class, Rng& rng);

enum class VariantKind { EuclidMean, CosineMean, EuclidWeighted, CosineWeighted };
std::string_view to_string(VariantKind kind);
std::optional<VariantKind> parse_variant_kind(std::string_view text);

/// Means of each base class under p^b: sum_j p_j^b x_j^b.
std::vector<Vector> weighted_means(const FeatureTable& base, const SampleWeights& weights);

/// Closed-form costs: euclid ||x_n - m_b||^2, cosine 1 - cos(x_n, m_b), with
/// m_b the plain mean or the weighted mean (needs `weighted`).
AdaptiveCost variant_cost(const EpisodeSupport& support, const StatsSet& stats,
                          const std::vector<Vector>* weighted, VariantKind kind);

/// Keeps the k cheapest rows per column; the rest get max + 10 * range.
AdaptiveCost top_k_mask(const AdaptiveCost& cost, int k);

}  // namespace hotcalib
