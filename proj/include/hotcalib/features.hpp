#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hotcalib/types.hpp"

namespace hotcalib {

/// Labeled feature vectors, one row per sample. Class ids are assigned in
/// order of first appearance and are contiguous from zero.
class FeatureTable {
 public:
  FeatureTable() = default;
  FeatureTable(std::vector<std::string> row_labels, RowMatrix data);
  // Rows given by class id; `class_labels[id]` names each class.
  FeatureTable(std::vector<std::string> class_labels, std::vector<int> row_classes, RowMatrix data);

  Index dim() const noexcept { return data_.cols(); }
  Index rows() const noexcept { return data_.rows(); }
  int num_classes() const noexcept { return static_cast<int>(class_labels_.size()); }

  const RowMatrix& data() const noexcept { return data_; }
  auto row(Index i) const { return data_.row(i); }
  int class_of(Index i) const { return row_classes_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& row_classes() const noexcept { return row_classes_; }
  const std::string& row_label(Index i) const { return class_labels_[static_cast<std::size_t>(class_of(i))]; }

  const std::vector<std::string>& class_labels() const noexcept { return class_labels_; }
  const std::map<std::string, int>& label_index() const noexcept { return label_index_; }
  const std::vector<std::vector<Index>>& rows_by_class() const noexcept { return rows_by_class_; }

  /// Smallest feature value in the table (+inf when empty).
  double min_entry() const noexcept { return min_entry_; }

  /// Gathers the rows of one class into a contiguous matrix.
  RowMatrix class_rows(int class_id) const;

 private:
  void index_rows();

  std::vector<std::string> class_labels_;
  std::vector<int> row_classes_;
  RowMatrix data_;
  std::map<std::string, int> label_index_;
  std::vector<std::vector<Index>> rows_by_class_;
  double min_entry_ = 0.0;
};

/// Reads `label,f0,...,f{V-1}` CSV (optionally gzip-compressed, by `.gz`
/// suffix). Row order is preserved.
FeatureTable load_features(const std::filesystem::path& path);
void save_features(const FeatureTable& table, const std::filesystem::path& path);

struct ClassStats {
  int class_id = 0;
  std::string label;
  Vector mean;
  Matrix cov;  // unbiased, divides by count - 1
  Index count = 0;
};

struct StatsSet {
  Index dim = 0;
  std::vector<ClassStats> classes;
};

/// Per-class sample mean and unbiased covariance, in class-id order.
StatsSet base_statistics(const FeatureTable& table);

void save_stats(const StatsSet& stats, const std::filesystem::path& path, bool f32 = false);
StatsSet load_stats(const std::filesystem::path& path);

/// Raises SchemaMismatch when the stats were computed for another dimension
/// or another number of classes than `table`.
void check_stats_compatible(const StatsSet& stats, const FeatureTable& table);

/// Tukey's ladder of powers: x^lambda elementwise, or ln x when lambda == 0.
Vector tukey_transform(const Vector& x, double lambda);
RowMatrix tukey_transform(const RowMatrix& rows, double lambda);

}  // namespace hotcalib
