#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "hotcalib/base_weights.hpp"
#include "hotcalib/calibration.hpp"
#include "hotcalib/features.hpp"
#include "hotcalib/linear_classifier.hpp"
#include "hotcalib/rng.hpp"

namespace hotcalib {

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int n_query = 15;
  std::uint64_t seed = 0;
  std::uint64_t task_index = 0;
};

/// One sampled task. Labels are local (0..N-1, in order of selection);
/// `classes[i]` is the novel class id behind local label i.
struct Episode {
  std::vector<int> classes;
  RowMatrix support;  // class-major, K rows per class
  std::vector<int> support_labels;
  RowMatrix query;
  std::vector<int> query_labels;
  std::vector<Index> support_rows;  // row indices into the novel table
  std::vector<Index> query_rows;
};

Episode sample_episode(const FeatureTable& novel, const EpisodeSpec& spec, Rng& rng);
/// Uses the task stream derived from (spec.seed, spec.task_index).
Episode sample_episode(const FeatureTable& novel, const EpisodeSpec& spec);

enum class Method { Hot, FreeLunch, SupportOnly, Variant };

struct MethodSpec {
  Method method = Method::Hot;
  VariantKind variant = VariantKind::EuclidMean;

  std::string name() const;
  /// hot | free_lunch | support_only | euclid_mean | cosine_mean | euclid_weighted | cosine_weighted
  static MethodSpec parse(std::string_view text);
};

struct HyperParams {
  double lambda = 1.0;
  double alpha = 0.21;
  double epsilon = 0.01;
  int generated = 750;
  int sinkhorn_max_iter = 200;
  double sinkhorn_tol = 1e-6;
  CalibrationMode mode = CalibrationMode::Convex;
  bool rescale_cost = false;
  int top_k = 0;  // 0 keeps every base class
  int free_lunch_k = 2;
  LRConfig classifier;

  ot::SinkhornOptions sinkhorn() const { return {epsilon, sinkhorn_max_iter, sinkhorn_tol}; }
};

/// Base-side inputs shared read-only by all episodes.
struct BaseKnowledge {
  StatsSet stats;
  BaseDistributions distributions;     // needed by hot
  std::vector<Vector> weighted_means;  // needed by the weighted variants
};

/// `base` and `weights` may be null when the chosen method only needs stats.
BaseKnowledge prepare_knowledge(StatsSet stats, const FeatureTable* base, const SampleWeights* weights);

struct EpisodeResult {
  std::uint64_t task_index = 0;
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
  bool sinkhorn_converged_all = true;
  Index zero_norm_count = 0;
  int jitter_used = 0;
  bool failed = false;
  std::string error;
};

/// Adaptive weights of one episode: NK x B (rows sum to one), together with
/// the calibrated Gaussians. Not used by support_only.
struct EpisodeCalibration {
  Matrix weights;
  std::vector<CalibratedGaussian> gaussians;
  ot::TransportPlan plan;
  AdaptiveCost cost;
};

EpisodeCalibration calibrate_episode(const EpisodeSupport& support, const BaseKnowledge& base,
                                     const HyperParams& hyper, const MethodSpec& method);

/// Algorithm body for one task: calibrate, generate, train the episode
/// classifier on support plus generated rows, score the query rows.
EpisodeResult run_episode(const Episode& episode, const BaseKnowledge& base, const HyperParams& hyper,
                          const MethodSpec& method, Rng& rng);

struct EvalReport {
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  int num_tasks = 0;
  int num_failed = 0;
  int num_nonconverged = 0;
  std::vector<EpisodeResult> per_task;
};

/// Mean and 1.96 sd / sqrt(T) with the unbiased sd; zero width when T = 1.
std::pair<double, double> summarize(const std::vector<double>& accuracies);

struct EvalOptions {
  EpisodeSpec spec;  // task_index ignored
  int num_tasks = 1;
  int threads = 1;
  std::function<void(int done, int total)> progress;
};

EvalReport evaluate(const BaseKnowledge& base, const FeatureTable& novel, const EvalOptions& options,
                    const HyperParams& hyper, const MethodSpec& method);

void write_per_task_csv(const EvalReport& report, const std::filesystem::path& path);

}  // namespace hotcalib
