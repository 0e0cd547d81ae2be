#pragma once

#include <filesystem>
#include <vector>

#include "hotcalib/features.hpp"
#include "hotcalib/linear_classifier.hpp"

namespace hotcalib {

/// Per base class: row indices into the base table and the weight p^b over
/// those rows (a simplex vector).
struct SampleWeights {
  std::vector<std::string> labels;
  std::vector<std::vector<Index>> indices;
  std::vector<Vector> weights;

  int num_classes() const noexcept { return static_cast<int>(weights.size()); }
};

/// Classifier phi over raw base features; labels are base class ids.
LinearModel train_phi(const FeatureTable& base, const LRConfig& cfg);

/// Softmax over one class's scores.
Vector softmax_scores(const Vector& scores);

/// s_j = phi's probability of sample j's own class, then p^b = softmax of
/// those scores across the samples of class b.
SampleWeights compute_sample_weights(const LinearModel& phi, const FeatureTable& base);

/// p^b uniform over each class's samples.
SampleWeights uniform_sample_weights(const FeatureTable& base);

void save_sample_weights(const SampleWeights& weights, const std::filesystem::path& path);
SampleWeights load_sample_weights(const std::filesystem::path& path);

/// Raises SchemaMismatch when `weights` does not describe the rows of `base`.
void check_weights_compatible(const SampleWeights& weights, const FeatureTable& base);

}  // namespace hotcalib
