#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hotcalib/base_weights.hpp"
#include "hotcalib/calibration.hpp"
#include "hotcalib/features.hpp"
#include "hotcalib/linear_classifier.hpp"
#include "hotcalib/rng.hpp"

namespace hotcalib {

/// Toy weight-recovery instance: novel samples X = W U mix base means U
/// with simplex rows W.
struct ToyInstance {
  RowMatrix u;  // B x V
  Matrix w;     // N x B
  RowMatrix x;  // N x V
};

/// U ~ N(0, 1) entrywise, or B distinct means drawn from `stats` when given.
/// W entries ~ Gamma(0.8, 1), rows L1-normalised.
ToyInstance make_toy(int b, Index v, int n, Rng& rng, const StatsSet* stats = nullptr);

/// X = W U with a fixed summation order (base classes in index order).
RowMatrix mix_rows(const Matrix& w, const RowMatrix& u);

/// Rows of Gamma(shape, 1) draws normalised to the simplex.
Matrix gamma_simplex_rows(Index rows, Index cols, double shape, Rng& rng);

struct RecoveryScore {
  Vector cosine;
  std::vector<bool> top2_hit;
  double mean_cosine = 0.0;
  double hit_rate = 0.0;
};

/// Per row: cosine(learned, truth) and whether truth's two largest entries
/// are learned's two largest (lower index wins ties).
RecoveryScore recovery_score(const Matrix& learned, const Matrix& truth);

struct ToyConfig {
  int b = 20;
  Index v = 16;
  int n = 5;
  int base_samples = 50;     // per class, for the full pipeline's low-level step
  double base_noise = 0.5;   // sd around each base mean
  double epsilon = 0.1;
  bool rescale_cost = true;
  int sinkhorn_max_iter = 200;
  double sinkhorn_tol = 1e-6;
  int free_lunch_k = 2;
  LRConfig phi;
};

struct ToyMethod {
  std::string name;
  Matrix learned;  // N x B
  RecoveryScore score;
};

struct ToyRun {
  ToyInstance instance;
  std::vector<ToyMethod> methods;  // uniform, free_lunch, high_level_euclid, hot
};

ToyRun run_toy(const ToyConfig& cfg, Rng& rng, const StatsSet* stats = nullptr);

struct GaussianWorld {
  FeatureTable base;
  FeatureTable novel;
  RowMatrix base_means;
  RowMatrix novel_means;
};

/// Isotropic unit-variance classes. Base means sit `separation` apart
/// (exactly, when B <= V) around a positive offset; novel means are the rows
/// of `mixing` (N x B, simplex rows) applied to base means, or fresh means.
/// Every feature is clamped at zero.
GaussianWorld make_gaussian_world(int b, int n_novel, Index v, int samples_per_class, double separation,
                                  const std::optional<Matrix>& mixing, Rng& rng);

/// N x B mixing with `active` randomly chosen base classes per row and
/// Gamma(0.8, 1) weights over them.
Matrix sparse_mixing(int n_novel, int b, int active, Rng& rng);

}  // namespace hotcalib
