#include "hotcalib/base_weights.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "hotcalib/error.hpp"

namespace hotcalib {

LinearModel train_phi(const FeatureTable& base, const LRConfig& cfg) {
  if (base.num_classes() < 2) {
    throw Error(ErrorKind::InsufficientClasses,
                "phi needs at least 2 base classes, got " + std::to_string(base.num_classes()));
  }
  return train_lr(base.data(), base.row_classes(), cfg);
}

Vector softmax_scores(const Vector& scores) {
  const double top = scores.maxCoeff();
  Vector e = (scores.array() - top).exp();
  return e / e.sum();
}

SampleWeights compute_sample_weights(const LinearModel& phi, const FeatureTable& base) {
  if (phi.dim() != base.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "phi has dim " + std::to_string(phi.dim()) + " but base features have " +
                                                  std::to_string(base.dim()));
  }
  if (phi.num_classes() != base.num_classes()) {
    throw Error(ErrorKind::DimensionMismatch, "phi knows " + std::to_string(phi.num_classes()) +
                                                  " classes but base features have " +
                                                  std::to_string(base.num_classes()));
  }
  for (int c = 0; c < phi.num_classes(); ++c) {
    if (phi.class_ids[static_cast<std::size_t>(c)] != c) {
      throw Error(ErrorKind::DimensionMismatch, "phi class ids are not 0..B-1");
    }
  }
  const Matrix proba = predict_proba(phi, base.data());
  SampleWeights out;
  out.labels = base.class_labels();
  out.indices = base.rows_by_class();
  for (int c = 0; c < base.num_classes(); ++c) {
    const auto& rows = out.indices[static_cast<std::size_t>(c)];
    Vector s(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) s[static_cast<Index>(k)] = proba(rows[k], c);
    out.weights.push_back(softmax_scores(s));
  }
  return out;
}

SampleWeights uniform_sample_weights(const FeatureTable& base) {
  SampleWeights out;
  out.labels = base.class_labels();
  out.indices = base.rows_by_class();
  for (const auto& rows : out.indices) {
    const auto n = static_cast<Index>(rows.size());
    out.weights.push_back(Vector::Constant(n, 1.0 / static_cast<double>(n)));
  }
  return out;
}

void save_sample_weights(const SampleWeights& weights, const std::filesystem::path& path) {
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < weights.weights.size(); ++c) {
    const auto& w = weights.weights[c];
    classes.push_back({{"label", weights.labels[c]},
                       {"indices", weights.indices[c]},
                       {"weights", std::vector<double>(w.data(), w.data() + w.size())}});
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << nlohmann::json{{"classes", classes}}.dump() << '\n';
}

SampleWeights load_sample_weights(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  SampleWeights out;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& entry : j.at("classes")) {
      out.labels.push_back(entry.at("label").get<std::string>());
      out.indices.push_back(entry.at("indices").get<std::vector<Index>>());
      const auto w = entry.at("weights").get<std::vector<double>>();
      if (w.size() != out.indices.back().size() || w.empty()) {
        throw Error(ErrorKind::SchemaMismatch, path.string() + ": class '" + out.labels.back() +
                                                   "' has mismatched indices and weights");
      }
      out.weights.emplace_back(Eigen::Map<const Vector>(w.data(), static_cast<Index>(w.size())));
      const auto& p = out.weights.back();
      if (!p.allFinite() || p.minCoeff() < 0.0 || std::abs(p.sum() - 1.0) > 1e-9) {
        throw Error(ErrorKind::SchemaMismatch, path.string() + ": class '" + out.labels.back() +
                                                   "' weights are not a probability vector");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, path.string() + ": malformed sample weights (" + e.what() + ")");
  }
  return out;
}

void check_weights_compatible(const SampleWeights& weights, const FeatureTable& base) {
  if (weights.num_classes() != base.num_classes() || weights.labels != base.class_labels() ||
      weights.indices != base.rows_by_class()) {
    throw Error(ErrorKind::SchemaMismatch, "sample weights were computed for a different base feature file");
  }
}

}  // namespace hotcalib
