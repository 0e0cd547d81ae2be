#include "hotcalib/linear_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "hotcalib/error.hpp"

namespace hotcalib {

namespace {

// Logits for every row; `features` gets an implicit trailing 1.
Matrix logits(const RowMatrix& features, const Matrix& weights) {
  const Index v = features.cols();
  Matrix z = features * weights.topRows(v);
  z.rowwise() += weights.row(v);
  return z;
}

void softmax_rows(Matrix& z) {
  for (Index i = 0; i < z.rows(); ++i) {
    const double top = z.row(i).maxCoeff();
    z.row(i) = (z.row(i).array() - top).exp();
    z.row(i) /= z.row(i).sum();
  }
}

}  // namespace

double lr_objective(const RowMatrix& features, std::span<const int> targets, const Matrix& weights,
                    double l2_weight, Matrix* grad) {
  const Index n = features.rows();
  const Index v = features.cols();
  if (weights.rows() != v + 1 || static_cast<Index>(targets.size()) != n) {
    throw Error(ErrorKind::DimensionMismatch, "objective inputs disagree in shape");
  }
  Matrix z = logits(features, weights);
  double loss = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double top = z.row(i).maxCoeff();
    const double lse = top + std::log((z.row(i).array() - top).exp().sum());
    loss += lse - z(i, targets[static_cast<std::size_t>(i)]);
  }
  loss /= static_cast<double>(n);
  const auto w = weights.topRows(v);
  loss += 0.5 * l2_weight * w.squaredNorm();

  if (grad != nullptr) {
    softmax_rows(z);
    for (Index i = 0; i < n; ++i) z(i, targets[static_cast<std::size_t>(i)]) -= 1.0;
    z /= static_cast<double>(n);
    grad->resize(v + 1, weights.cols());
    grad->topRows(v).noalias() = features.transpose() * z;
    grad->topRows(v) += l2_weight * w;
    grad->row(v) = z.colwise().sum();
  }
  return loss;
}

LinearModel train_lr(const RowMatrix& features, std::span<const int> labels, const LRConfig& cfg) {
  if (static_cast<Index>(labels.size()) != features.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "label count does not match row count");
  }
  if (!(cfg.grad_tol > 0.0) || !(cfg.l2_weight >= 0.0) || cfg.max_iter < 0) {
    throw Error(ErrorKind::InvalidArgument, "need grad_tol > 0, l2_weight >= 0, max_iter >= 0");
  }
  if (!features.allFinite()) throw Error(ErrorKind::NonFiniteInput, "training features contain non-finite values");

  LinearModel model;
  model.class_ids.assign(labels.begin(), labels.end());
  std::sort(model.class_ids.begin(), model.class_ids.end());
  model.class_ids.erase(std::unique(model.class_ids.begin(), model.class_ids.end()), model.class_ids.end());
  if (model.class_ids.size() < 2) {
    throw Error(ErrorKind::InsufficientClasses, "training needs at least 2 classes, got " +
                                                    std::to_string(model.class_ids.size()));
  }
  std::vector<int> targets(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    targets[i] = static_cast<int>(
        std::lower_bound(model.class_ids.begin(), model.class_ids.end(), labels[i]) - model.class_ids.begin());
  }

  const Index v = features.cols();
  const Index c = static_cast<Index>(model.class_ids.size());
  // Centring the columns only moves the bias, which is not penalised, so the
  // optimum maps back exactly; it removes the bias/weight coupling that
  // otherwise stalls gradient descent on offset features.
  const Vector centre = features.colwise().mean().transpose();
  const RowMatrix centred = features.rowwise() - centre.transpose();
  // Gradient of the original objective from the centred one.
  auto original_grad_norm = [&](const Matrix& g) {
    Matrix go = g;
    go.topRows(v) += centre * g.row(v);
    return go.cwiseAbs().maxCoeff();
  };

  const double n = static_cast<double>(features.rows());
  Matrix w = Matrix::Zero(v + 1, c);
  Matrix z = logits(centred, w);
  Matrix g;
  double f = lr_objective(centred, targets, w, cfg.l2_weight, &g);
  g.col(c - 1).setZero();
  model.loss_history.push_back(f);

  // Gradient descent: Barzilai-Borwein trial step, Armijo backtracking. The
  // loss change along a step is evaluated directly (log1p/expm1 form) rather
  // than as a difference of two rounded losses, so the line search stays
  // meaningful down to very small gradients.
  double step = 1.0;
  Matrix p(z.rows(), c), dz, w_next, g_next;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    if (original_grad_norm(g) <= cfg.grad_tol) break;
    p = z;
    softmax_rows(p);
    dz = logits(centred, g);  // logit change per unit step along -g
    const double g2 = g.squaredNorm();
    const double wg = w.topRows(v).cwiseProduct(g.topRows(v)).sum();
    const double gg = g.topRows(v).squaredNorm();
    double change = 0.0;
    bool accepted = false;
    for (int tries = 0; tries < 80; ++tries) {
      change = 0.0;
      for (Index i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (Index k = 0; k < c; ++k) s += p(i, k) * std::expm1(-step * dz(i, k));
        change += std::log1p(s) + step * dz(i, targets[static_cast<std::size_t>(i)]);
      }
      change = change / n + 0.5 * cfg.l2_weight * (step * step * gg - 2.0 * step * wg);
      if (std::isfinite(change) && change <= -1e-4 * step * g2) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no representable decrease; keep the current iterate
    w_next = w - step * g;
    z = logits(centred, w_next);
    lr_objective(centred, targets, w_next, cfg.l2_weight, &g_next);
    g_next.col(c - 1).setZero();
    const double sy = (w_next - w).cwiseProduct(g_next - g).sum();
    const double ss = (w_next - w).squaredNorm();
    step = sy > 0.0 ? ss / sy : 2.0 * step;
    w.swap(w_next);
    g.swap(g_next);
    f += change;
    model.loss_history.push_back(f);
  }

  model.grad_norm = original_grad_norm(g);
  model.converged = model.grad_norm <= cfg.grad_tol;
  model.iterations = it;
  model.train_loss = lr_objective(centred, targets, w, cfg.l2_weight);
  w.row(v) -= centre.transpose() * w.topRows(v);
  model.weights = std::move(w);
  return model;
}

Matrix predict_proba(const LinearModel& model, const RowMatrix& features) {
  if (features.cols() != model.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "model expects dim " + std::to_string(model.dim()) + ", got " +
                                                  std::to_string(features.cols()));
  }
  Matrix z = logits(features, model.weights);
  softmax_rows(z);
  return z;
}

std::vector<int> predict_labels(const LinearModel& model, const RowMatrix& features) {
  if (features.cols() != model.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "model expects dim " + std::to_string(model.dim()) + ", got " +
                                                  std::to_string(features.cols()));
  }
  const Matrix z = logits(features, model.weights);
  std::vector<int> out(static_cast<std::size_t>(features.rows()));
  for (Index i = 0; i < z.rows(); ++i) {
    Index best = 0;
    for (Index k = 1; k < z.cols(); ++k)
      if (z(i, k) > z(i, best)) best = k;  // strict: lowest id wins ties
    out[static_cast<std::size_t>(i)] = model.class_ids[static_cast<std::size_t>(best)];
  }
  return out;
}

Prediction predict(const LinearModel& model, const Vector& x) {
  const RowMatrix row = x.transpose();
  Prediction p;
  p.proba = predict_proba(model, row).row(0).transpose();
  Index best = 0;
  for (Index k = 1; k < p.proba.size(); ++k)
    if (p.proba[k] > p.proba[best]) best = k;
  p.label = model.class_ids[static_cast<std::size_t>(best)];
  return p;
}

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  nlohmann::json j;
  j["dim"] = model.dim();
  j["class_ids"] = model.class_ids;
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(model.weights.rows()));
  for (Index r = 0; r < model.weights.rows(); ++r)
    for (Index k = 0; k < model.weights.cols(); ++k) rows[static_cast<std::size_t>(r)].push_back(model.weights(r, k));
  j["weights"] = rows;
  j["train_loss"] = model.train_loss;
  j["iterations"] = model.iterations;
  j["converged"] = model.converged;
  j["grad_norm"] = model.grad_norm;
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << j.dump() << '\n';
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  LinearModel model;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto dim = j.at("dim").get<Index>();
    model.class_ids = j.at("class_ids").get<std::vector<int>>();
    const auto rows = j.at("weights").get<std::vector<std::vector<double>>>();
    const auto c = static_cast<Index>(model.class_ids.size());
    if (dim < 0 || c < 2 || static_cast<Index>(rows.size()) != dim + 1) throw Error(ErrorKind::SchemaMismatch, "");
    model.weights.resize(dim + 1, c);
    for (Index r = 0; r <= dim; ++r) {
      const auto& row = rows[static_cast<std::size_t>(r)];
      if (static_cast<Index>(row.size()) != c) throw Error(ErrorKind::SchemaMismatch, "");
      for (Index k = 0; k < c; ++k) model.weights(r, k) = row[static_cast<std::size_t>(k)];
    }
    model.train_loss = j.at("train_loss").get<double>();
    model.iterations = j.at("iterations").get<int>();
    model.converged = j.at("converged").get<bool>();
    model.grad_norm = j.at("grad_norm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, path.string() + ": malformed model (" + e.what() + ")");
  } catch (const Error&) {
    throw Error(ErrorKind::SchemaMismatch, path.string() + ": model shape is inconsistent");
  }
  return model;
}

}  // namespace hotcalib
