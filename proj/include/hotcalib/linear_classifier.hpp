#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hotcalib/types.hpp"

namespace hotcalib {

struct LRConfig {
  double l2_weight = 1.0;
  double grad_tol = 1e-4;
  int max_iter = 1000;
  std::uint64_t seed = 0;  // kept for provenance; training starts from zero weights
};

/// Multinomial logistic regression. `weights` is (V+1) x C with the bias in
/// the last row; the column of the last class is pinned at zero.
struct LinearModel {
  Matrix weights;
  std::vector<int> class_ids;  // ascending
  double train_loss = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;  // infinity norm at the returned iterate
  std::vector<double> loss_history;

  Index dim() const noexcept { return weights.rows() - 1; }
  int num_classes() const noexcept { return static_cast<int>(class_ids.size()); }
};

struct Prediction {
  int label = 0;
  Vector proba;
};

/// Mean cross-entropy plus (l2/2)||W||^2 over the non-bias rows. `targets`
/// are column indices into `weights`. Writes the gradient when `grad` is set.
double lr_objective(const RowMatrix& features, std::span<const int> targets, const Matrix& weights,
                    double l2_weight, Matrix* grad = nullptr);

LinearModel train_lr(const RowMatrix& features, std::span<const int> labels, const LRConfig& cfg);

Prediction predict(const LinearModel& model, const Vector& x);
/// Row-wise class probabilities, n x C in `class_ids` order.
Matrix predict_proba(const LinearModel& model, const RowMatrix& features);
std::vector<int> predict_labels(const LinearModel& model, const RowMatrix& features);

void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace hotcalib
