#include "hotcalib/features.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "hotcalib/error.hpp"

namespace hotcalib {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_gzip(const fs::path& path) { return path.extension() == ".gz"; }

std::string read_all(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::IoError, "no such file: " + path.string());
  if (is_gzip(path)) {
    gzFile file = gzopen(path.c_str(), "rb");
    if (file == nullptr) throw Error(ErrorKind::IoError, "cannot open " + path.string());
    std::string out;
    char buf[1 << 16];
    int got = 0;
    while ((got = gzread(file, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(got));
    const bool failed = got < 0;
    gzclose(file);
    if (failed) throw Error(ErrorKind::IoError, "gzip read failed for " + path.string());
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_all(const fs::path& path, const std::string& content) {
  if (is_gzip(path)) {
    gzFile file = gzopen(path.c_str(), "wb");
    if (file == nullptr) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    const int wrote = gzwrite(file, content.data(), static_cast<unsigned>(content.size()));
    gzclose(file);
    if (wrote != static_cast<int>(content.size())) throw Error(ErrorKind::IoError, "gzip write failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

}  // namespace

FeatureTable::FeatureTable(std::vector<std::string> row_labels, RowMatrix data) : data_(std::move(data)) {
  if (static_cast<Index>(row_labels.size()) != data_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "label count does not match row count");
  }
  row_classes_.reserve(row_labels.size());
  for (auto& label : row_labels) {
    auto [it, inserted] = label_index_.try_emplace(label, static_cast<int>(class_labels_.size()));
    if (inserted) class_labels_.push_back(label);
    row_classes_.push_back(it->second);
  }
  index_rows();
}

FeatureTable::FeatureTable(std::vector<std::string> class_labels, std::vector<int> row_classes, RowMatrix data)
    : class_labels_(std::move(class_labels)), row_classes_(std::move(row_classes)), data_(std::move(data)) {
  if (static_cast<Index>(row_classes_.size()) != data_.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "class id count does not match row count");
  }
  for (std::size_t c = 0; c < class_labels_.size(); ++c) {
    if (!label_index_.try_emplace(class_labels_[c], static_cast<int>(c)).second) {
      throw Error(ErrorKind::InvalidArgument, "duplicate class label '" + class_labels_[c] + "'");
    }
  }
  for (int c : row_classes_) {
    if (c < 0 || c >= num_classes()) throw Error(ErrorKind::InvalidArgument, "class id out of range");
  }
  index_rows();
}

void FeatureTable::index_rows() {
  if (!data_.allFinite()) throw Error(ErrorKind::NonFiniteInput, "feature table has non-finite entries");
  rows_by_class_.assign(class_labels_.size(), {});
  for (Index i = 0; i < rows(); ++i) rows_by_class_[static_cast<std::size_t>(class_of(i))].push_back(i);
  min_entry_ = data_.size() > 0 ? data_.minCoeff() : std::numeric_limits<double>::infinity();
}

RowMatrix FeatureTable::class_rows(int class_id) const {
  const auto& idx = rows_by_class_.at(static_cast<std::size_t>(class_id));
  RowMatrix out(static_cast<Index>(idx.size()), dim());
  for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Index>(k)) = data_.row(idx[k]);
  return out;
}

FeatureTable load_features(const fs::path& path) {
  const std::string text = read_all(path);
  std::string_view rest(text);
  std::size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (rest.empty()) return false;
    const std::size_t nl = rest.find('\n');
    line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    return true;
  };

  std::string_view line;
  while (next_line(line) && trim(line).empty()) {}
  if (trim(line).empty()) throw Error(ErrorKind::EmptyFile, path.string() + " has no header");
  const auto header = split_commas(trim(line));
  if (trim(header.front()) != "label" || header.size() < 2) {
    throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) +
                                           ": header must be 'label,f0,...'");
  }
  const Index dim = static_cast<Index>(header.size()) - 1;

  std::vector<std::string> labels;
  std::vector<double> values;
  while (next_line(line)) {
    line = trim(line);
    if (line.empty()) continue;
    const auto fields = split_commas(line);
    if (static_cast<Index>(fields.size()) != dim + 1) {
      throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected " +
                                             std::to_string(dim + 1) + " fields, got " +
                                             std::to_string(fields.size()));
    }
    const auto label = trim(fields[0]);
    if (label.empty()) throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) + ": empty label");
    labels.emplace_back(label);
    for (std::size_t k = 1; k < fields.size(); ++k) {
      const auto field = trim(fields[k]);
      double v = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (res.ec != std::errc{} || res.ptr != field.data() + field.size() || !std::isfinite(v)) {
        throw Error(ErrorKind::ParseError, path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                                               std::string(field) + "' in column " + std::to_string(k));
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyFile, path.string() + " has no data rows");

  RowMatrix data = Eigen::Map<RowMatrix>(values.data(), static_cast<Index>(labels.size()), dim);
  return FeatureTable(std::move(labels), std::move(data));
}

void save_features(const FeatureTable& table, const fs::path& path) {
  std::string out = "label";
  for (Index k = 0; k < table.dim(); ++k) out += ",f" + std::to_string(k);
  out += '\n';
  for (Index i = 0; i < table.rows(); ++i) {
    out += table.row_label(i);
    for (Index k = 0; k < table.dim(); ++k) {
      out += ',';
      append_double(out, table.data()(i, k));
    }
    out += '\n';
  }
  write_all(path, out);
}

StatsSet base_statistics(const FeatureTable& table) {
  StatsSet set;
  set.dim = table.dim();
  set.classes.reserve(static_cast<std::size_t>(table.num_classes()));
  for (int c = 0; c < table.num_classes(); ++c) {
    const RowMatrix rows = table.class_rows(c);
    const Index count = rows.rows();
    if (count < 2) {
      throw Error(ErrorKind::CovarianceUndefined,
                  "class '" + table.class_labels()[static_cast<std::size_t>(c)] + "' has " +
                      std::to_string(count) + " sample(s); covariance needs at least 2");
    }
    ClassStats s;
    s.class_id = c;
    s.label = table.class_labels()[static_cast<std::size_t>(c)];
    s.count = count;
    s.mean = rows.colwise().mean().transpose();
    const RowMatrix centered = rows.rowwise() - s.mean.transpose();
    s.cov = (centered.transpose() * centered) / static_cast<double>(count - 1);
    s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
    set.classes.push_back(std::move(s));
  }
  return set;
}

void save_stats(const StatsSet& stats, const fs::path& path, bool f32) {
  auto value = [f32](double v) { return f32 ? static_cast<double>(static_cast<float>(v)) : v; };
  json root;
  root["dim"] = stats.dim;
  json classes = json::array();
  for (const auto& s : stats.classes) {
    json mean = json::array();
    for (Index k = 0; k < s.mean.size(); ++k) mean.push_back(value(s.mean[k]));
    json cov_rows = json::array();
    for (Index r = 0; r < s.cov.rows(); ++r) {
      json row = json::array();
      for (Index k = 0; k < s.cov.cols(); ++k) row.push_back(value(s.cov(r, k)));
      cov_rows.push_back(std::move(row));
    }
    classes.push_back({{"label", s.label}, {"count", s.count}, {"mean", std::move(mean)}, {"cov_rows", std::move(cov_rows)}});
  }
  root["classes"] = std::move(classes);
  write_all(path, root.dump() + "\n");
}

StatsSet load_stats(const fs::path& path) {
  const std::string text = read_all(path);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, path.string() + ": not valid JSON (" + e.what() + ")");
  }
  auto fail = [&](const std::string& why) { return Error(ErrorKind::SchemaMismatch, path.string() + ": " + why); };
  if (!root.is_object() || !root.contains("dim") || !root["dim"].is_number_integer() || !root.contains("classes") ||
      !root["classes"].is_array()) {
    throw fail("expected {\"dim\": int, \"classes\": [...]}");
  }
  StatsSet set;
  set.dim = root["dim"].get<Index>();
  if (set.dim < 0) throw fail("negative dim");
  int id = 0;
  for (const auto& entry : root["classes"]) {
    if (!entry.is_object() || !entry.contains("label") || !entry.contains("count") || !entry.contains("mean") ||
        !entry.contains("cov_rows")) {
      throw fail("class entry " + std::to_string(id) + " lacks label/count/mean/cov_rows");
    }
    ClassStats s;
    s.class_id = id;
    try {
      s.label = entry["label"].get<std::string>();
      s.count = entry["count"].get<Index>();
      const auto mean = entry["mean"].get<std::vector<double>>();
      const auto cov = entry["cov_rows"].get<std::vector<std::vector<double>>>();
      if (static_cast<Index>(mean.size()) != set.dim || static_cast<Index>(cov.size()) != set.dim) {
        throw fail("class '" + s.label + "' does not match dim " + std::to_string(set.dim));
      }
      s.mean = Eigen::Map<const Vector>(mean.data(), set.dim);
      s.cov.resize(set.dim, set.dim);
      for (Index r = 0; r < set.dim; ++r) {
        const auto& row = cov[static_cast<std::size_t>(r)];
        if (static_cast<Index>(row.size()) != set.dim) throw fail("class '" + s.label + "' has a ragged cov_rows");
        for (Index k = 0; k < set.dim; ++k) s.cov(r, k) = row[static_cast<std::size_t>(k)];
      }
    } catch (const json::exception& e) {
      throw fail(std::string("malformed class entry: ") + e.what());
    }
    set.classes.push_back(std::move(s));
    ++id;
  }
  return set;
}

void check_stats_compatible(const StatsSet& stats, const FeatureTable& table) {
  if (stats.dim != table.dim()) {
    throw Error(ErrorKind::SchemaMismatch, "stats have dim " + std::to_string(stats.dim) +
                                               " but features have dim " + std::to_string(table.dim()));
  }
  if (static_cast<int>(stats.classes.size()) != table.num_classes()) {
    throw Error(ErrorKind::SchemaMismatch, "stats cover " + std::to_string(stats.classes.size()) +
                                               " classes but features have " + std::to_string(table.num_classes()));
  }
  for (std::size_t c = 0; c < stats.classes.size(); ++c) {
    if (stats.classes[c].label != table.class_labels()[c]) {
      throw Error(ErrorKind::SchemaMismatch, "stats class " + std::to_string(c) + " is '" + stats.classes[c].label +
                                                 "' but features have '" + table.class_labels()[c] + "'");
    }
  }
}

Vector tukey_transform(const Vector& x, double lambda) {
  if (lambda == 0.0) {
    if ((x.array() <= 0.0).any()) throw Error(ErrorKind::LogOfNonPositive, "log transform needs strictly positive features");
    return x.array().log();
  }
  if ((x.array() < 0.0).any()) throw Error(ErrorKind::NegativeInput, "power transform needs nonnegative features");
  if (lambda == 1.0) return x;
  return x.array().pow(lambda);
}

RowMatrix tukey_transform(const RowMatrix& rows, double lambda) {
  if (lambda == 0.0) {
    if ((rows.array() <= 0.0).any()) throw Error(ErrorKind::LogOfNonPositive, "log transform needs strictly positive features");
    return rows.array().log();
  }
  if ((rows.array() < 0.0).any()) throw Error(ErrorKind::NegativeInput, "power transform needs nonnegative features");
  if (lambda == 1.0) return rows;
  return rows.array().pow(lambda);
}

}  // namespace hotcalib
