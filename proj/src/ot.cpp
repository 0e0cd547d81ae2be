#include "hotcalib/ot.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hotcalib/error.hpp"

namespace hotcalib::ot {

namespace {

constexpr double kSimplexTol = 1e-12;

void check_dims(const DiscreteDistribution& a, const DiscreteDistribution& b, const Matrix& cost) {
  if (cost.rows() != a.size() || cost.cols() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch,
                "cost is " + std::to_string(cost.rows()) + "x" + std::to_string(cost.cols()) +
                    " but marginals have sizes " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
}

void check_cost(const Matrix& cost) {
  if (!cost.allFinite()) throw Error(ErrorKind::NonFiniteCost, "cost matrix has non-finite entries");
  if ((cost.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "cost matrix has negative entries");
  }
}

void fill_violations(TransportPlan& plan) {
  plan.row_violation = (plan.values.rowwise().sum() - plan.row_marginal).lpNorm<1>();
  plan.col_violation = (plan.values.colwise().sum().transpose() - plan.col_marginal).lpNorm<1>();
}

// Dense two-phase simplex for  min c^T x  s.t.  A x = rhs, x >= 0, rhs >= 0.
// Bland's rule on both the entering and leaving choice guarantees termination.
class DenseSimplex {
 public:
  DenseSimplex(const Matrix& A, const Vector& rhs)
      : rows_(A.rows()), vars_(A.cols()), tab_(A.rows(), A.cols() + A.rows() + 1),
        basis_(static_cast<std::size_t>(A.rows())) {
    tab_.setZero();
    tab_.leftCols(vars_) = A;
    for (Index r = 0; r < rows_; ++r) {
      tab_(r, vars_ + r) = 1.0;
      tab_(r, rhs_col()) = rhs[r];
      basis_[static_cast<std::size_t>(r)] = vars_ + r;
    }
  }

  Vector solve(const Vector& c) {
    // Phase I: drive the artificial variables to zero.
    Vector phase1 = Vector::Zero(vars_ + rows_);
    phase1.tail(rows_).setOnes();
    run(phase1, vars_ + rows_);
    if (objective(phase1) > 1e-9) {
      throw Error(ErrorKind::InvalidArgument, "transport problem is infeasible");
    }
    evict_artificials();

    Vector phase2 = Vector::Zero(vars_ + rows_);
    phase2.head(vars_) = c;
    run(phase2, vars_);

    Vector x = Vector::Zero(vars_);
    for (Index r = 0; r < rows_; ++r) {
      const Index v = basis_[static_cast<std::size_t>(r)];
      if (v < vars_) x[v] = std::max(0.0, tab_(r, rhs_col()));
    }
    return x;
  }

 private:
  Index rhs_col() const { return vars_ + rows_; }

  double objective(const Vector& c) const {
    double z = 0.0;
    for (Index r = 0; r < rows_; ++r) z += c[basis_[static_cast<std::size_t>(r)]] * tab_(r, rhs_col());
    return z;
  }

  // Entering candidates are restricted to columns [0, allowed).
  void run(const Vector& c, Index allowed) {
    for (;;) {
      Index enter = -1;
      for (Index j = 0; j < allowed; ++j) {
        double reduced = c[j];
        for (Index r = 0; r < rows_; ++r) reduced -= c[basis_[static_cast<std::size_t>(r)]] * tab_(r, j);
        if (reduced < -kSimplexTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return;

      Index leave = -1;
      double best_ratio = std::numeric_limits<double>::infinity();
      for (Index r = 0; r < rows_; ++r) {
        const double coef = tab_(r, enter);
        if (coef <= kSimplexTol) continue;
        const double ratio = tab_(r, rhs_col()) / coef;
        if (ratio < best_ratio - kSimplexTol ||
            (std::abs(ratio - best_ratio) <= kSimplexTol &&
             basis_[static_cast<std::size_t>(r)] < basis_[static_cast<std::size_t>(leave)])) {
          best_ratio = ratio;
          leave = r;
        }
      }
      if (leave < 0) throw Error(ErrorKind::InvalidArgument, "transport problem is unbounded");
      pivot(leave, enter);
    }
  }

  void pivot(Index r, Index c) {
    tab_.row(r) /= tab_(r, c);
    for (Index i = 0; i < rows_; ++i) {
      if (i != r && tab_(i, c) != 0.0) tab_.row(i) -= tab_(i, c) * tab_.row(r);
    }
    basis_[static_cast<std::size_t>(r)] = c;
  }

  // After phase I an artificial may remain basic at level zero; swap it for
  // any structural column with a nonzero entry. Rows with none are redundant.
  void evict_artificials() {
    for (Index r = 0; r < rows_; ++r) {
      if (basis_[static_cast<std::size_t>(r)] < vars_) continue;
      for (Index j = 0; j < vars_; ++j) {
        if (std::abs(tab_(r, j)) > 1e-9) {
          pivot(r, j);
          break;
        }
      }
    }
  }

  Index rows_;
  Index vars_;
  Matrix tab_;
  std::vector<Index> basis_;
};

double log_sum_exp(const double* values, Index count, Index stride) {
  double peak = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < count; ++k) peak = std::max(peak, values[k * stride]);
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (Index k = 0; k < count; ++k) acc += std::exp(values[k * stride] - peak);
  return peak + std::log(acc);
}

struct SolveResult {
  Matrix plan;
  int iterations = 0;
};

// Entropic OT on dual potentials (f, g), in cost units, with plan
// T_ij = exp((f_i + g_j - C_ij) / eps). Each epsilon stage runs a few
// log-domain scaling sweeps and, if the marginals are still off, damped
// Newton steps on the dual. Epsilon is annealed geometrically from the
// cost scale down to the target so each stage starts near its optimum.
class LogDomainSolver {
 public:
  static constexpr double kAnneal = 0.25;
  static constexpr int kSweepsPerStage = 3;
  static constexpr double kStageTol = 1e-2;

  LogDomainSolver(const Matrix& cost, const Vector& a, const Vector& b)
      : cost_(cost), a_(a), b_(b), log_a_(a.array().log()), log_b_(b.array().log()),
        f_(Vector::Zero(cost.rows())), g_(Vector::Zero(cost.cols())) {}

  SolveResult solve(const SinkhornOptions& options) {
    const double target = options.epsilon;
    double eps = std::max(target, cost_.maxCoeff());
    int it = 0;
    for (;;) {
      const bool final_stage = eps <= target * (1.0 + 1e-12);
      if (final_stage) eps = target;
      const double stage_tol = final_stage ? options.tol : std::max(options.tol, kStageTol);

      double err = violation(eps);
      for (int k = 0; k < kSweepsPerStage && it < options.max_iter && err > stage_tol; ++k) {
        sweep(eps);
        ++it;
        err = violation(eps);
      }
      while (it < options.max_iter && err > stage_tol) {
        if (!newton_step(eps)) {
          // No ascent direction available; fall back to a scaling sweep.
          sweep(eps);
        }
        ++it;
        err = violation(eps);
      }
      if (final_stage || it >= options.max_iter) break;
      eps = std::max(target, eps * kAnneal);
    }
    // A budget exhausted mid-anneal still reports the plan at the target eps.
    return {plan(target), it};
  }

 private:
  Index rows() const { return cost_.rows(); }
  Index cols() const { return cost_.cols(); }

  void sweep(double eps) {
    std::vector<double> buf(static_cast<std::size_t>(std::max(rows(), cols())));
    for (Index i = 0; i < rows(); ++i) {
      for (Index j = 0; j < cols(); ++j) buf[static_cast<std::size_t>(j)] = (g_[j] - cost_(i, j)) / eps;
      f_[i] = eps * (log_a_[i] - log_sum_exp(buf.data(), cols(), 1));
    }
    for (Index j = 0; j < cols(); ++j) {
      for (Index i = 0; i < rows(); ++i) buf[static_cast<std::size_t>(i)] = (f_[i] - cost_(i, j)) / eps;
      g_[j] = eps * (log_b_[j] - log_sum_exp(buf.data(), rows(), 1));
    }
    if (!f_.allFinite() || !g_.allFinite()) {
      throw Error(ErrorKind::NumericalUnderflow, "log-domain scaling produced non-finite potentials");
    }
  }

  Matrix plan(double eps) const { return plan_at(f_, g_, eps); }

  Matrix plan_at(const Vector& f, const Vector& g, double eps) const {
    Matrix t(rows(), cols());
    for (Index j = 0; j < cols(); ++j)
      for (Index i = 0; i < rows(); ++i) t(i, j) = std::exp((f[i] + g[j] - cost_(i, j)) / eps);
    return t;
  }

  double violation(double eps) const { return violation_at(f_, g_, eps); }

  double violation_at(const Vector& f, const Vector& g, double eps) const {
    const Matrix t = plan_at(f, g, eps);
    return std::max((t.rowwise().sum() - a_).lpNorm<1>(),
                    (t.colwise().sum().transpose() - b_).lpNorm<1>());
  }

  double dual(const Vector& f, const Vector& g, double eps) const {
    return a_.dot(f) + b_.dot(g) - eps * plan_at(f, g, eps).sum();
  }

  // Newton direction for the concave dual, with the row block eliminated:
  // (diag(c) - T^T diag(r)^-1 T) dg = eps (b - c) - T^T diag(r)^-1 eps (a - r).
  // The Schur complement has the constant vector in its kernel; a rank-one
  // shift pins that gauge. Backtracking keeps every step an ascent step.
  bool newton_step(double eps) {
    const Matrix t = plan(eps);
    const Vector r = t.rowwise().sum();
    const Vector c = t.colwise().sum().transpose();
    if ((r.array() <= 0.0).any() || (c.array() <= 0.0).any()) return false;
    const Vector grad_f = a_ - r;
    const Vector grad_g = b_ - c;
    const Vector r_inv = r.cwiseInverse();

    Matrix schur = -(t.transpose() * r_inv.asDiagonal() * t);
    schur.diagonal() += c;
    schur.array() += c.mean();
    schur.diagonal().array() += 1e-14 * c.maxCoeff();
    const Vector rhs = eps * grad_g - t.transpose() * r_inv.cwiseProduct(eps * grad_f);
    const Vector dg = schur.ldlt().solve(rhs);
    const Vector df = r_inv.cwiseProduct(eps * grad_f - t * dg);
    if (!dg.allFinite() || !df.allFinite()) return false;

    const double slope = grad_f.dot(df) + grad_g.dot(dg);
    if (!(slope > 0.0)) return false;
    const double start = dual(f_, g_, eps);
    const double start_violation = violation(eps);
    // Near the optimum the Armijo increase drops below the rounding noise of
    // the dual value; there a step is accepted if it shrinks the violation.
    const double noise = 1e-14 * (std::abs(start) + 1.0);
    double step = 1.0;
    for (int k = 0; k < 50; ++k, step *= 0.5) {
      const Vector f = f_ + step * df;
      const Vector g = g_ + step * dg;
      const double value = dual(f, g, eps);
      if (!std::isfinite(value)) continue;
      const bool ascent = value >= start + 1e-4 * step * slope;
      const bool polish = value >= start - noise && violation_at(f, g, eps) < start_violation;
      if (ascent || polish) {
        f_ = f;
        g_ = g;
        return true;
      }
    }
    return false;
  }

  const Matrix& cost_;
  const Vector& a_;
  const Vector& b_;
  Vector log_a_;
  Vector log_b_;
  Vector f_;
  Vector g_;
};

}  // namespace

DiscreteDistribution::DiscreteDistribution(Vector weights) : weights_(std::move(weights)) {
  if (weights_.size() == 0) throw Error(ErrorKind::InvalidArgument, "empty distribution");
  if (!weights_.allFinite() || (weights_.array() < 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "distribution weights must be finite and nonnegative");
  }
  if (std::abs(weights_.sum() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument,
                "distribution weights sum to " + std::to_string(weights_.sum()) + ", expected 1");
  }
}

DiscreteDistribution DiscreteDistribution::uniform(Index n) {
  if (n <= 0) throw Error(ErrorKind::InvalidArgument, "uniform distribution needs at least one atom");
  return DiscreteDistribution(Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

TransportPlan sinkhorn(const DiscreteDistribution& a, const DiscreteDistribution& b,
                       const Matrix& cost, const SinkhornOptions& options) {
  check_dims(a, b, cost);
  check_cost(cost);
  if (!(options.epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be positive");
  if (!(options.tol > 0.0)) throw Error(ErrorKind::InvalidArgument, "tol must be positive");
  if ((a.weights().array() <= 0.0).any() || (b.weights().array() <= 0.0).any()) {
    throw Error(ErrorKind::InvalidArgument, "sinkhorn marginals must have strictly positive atoms");
  }
  if (!std::isfinite(cost.maxCoeff() / options.epsilon)) {
    throw Error(ErrorKind::NumericalUnderflow, "cost/epsilon overflows; epsilon too small for the cost scale");
  }

  // The Newton system is reduced onto the column potentials, so keep the
  // column side the smaller one.
  const bool transposed = cost.cols() > cost.rows();
  const Matrix oriented = transposed ? Matrix(cost.transpose()) : cost;
  const Vector& row_w = transposed ? b.weights() : a.weights();
  const Vector& col_w = transposed ? a.weights() : b.weights();

  LogDomainSolver solver(oriented, row_w, col_w);
  const SolveResult result = solver.solve(options);

  TransportPlan plan;
  plan.values = transposed ? Matrix(result.plan.transpose()) : result.plan;
  if (!plan.values.allFinite()) {
    throw Error(ErrorKind::NumericalUnderflow, "transport plan has non-finite entries");
  }
  plan.row_marginal = a.weights();
  plan.col_marginal = b.weights();
  plan.objective = (plan.values.array() * cost.array()).sum();
  plan.iterations = result.iterations;
  fill_violations(plan);
  plan.converged = std::max(plan.row_violation, plan.col_violation) <= options.tol;
  return plan;
}

TransportPlan exact_ot_small(const DiscreteDistribution& a, const DiscreteDistribution& b,
                             const Matrix& cost) {
  check_dims(a, b, cost);
  check_cost(cost);
  const Index n = a.size();
  const Index m = b.size();
  if (n * m > kExactMaxCells) {
    throw Error(ErrorKind::InstanceTooLarge,
                std::to_string(n) + "x" + std::to_string(m) + " exceeds the exact-solver limit of " +
                    std::to_string(kExactMaxCells) + " cells");
  }

  // Variable x(i, j) lives at column i * m + j. The last column-sum
  // constraint is implied by the others and is dropped.
  const Index constraints = n + m - 1;
  Matrix A = Matrix::Zero(constraints, n * m);
  Vector rhs(constraints);
  Vector c(n * m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      A(i, i * m + j) = 1.0;
      if (j < m - 1) A(n + j, i * m + j) = 1.0;
      c[i * m + j] = cost(i, j);
    }
    rhs[i] = a[i];
  }
  for (Index j = 0; j < m - 1; ++j) rhs[n + j] = b[j];

  DenseSimplex simplex(A, rhs);
  const Vector x = simplex.solve(c);

  TransportPlan plan;
  plan.values.resize(n, m);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < m; ++j) plan.values(i, j) = x[i * m + j];
  plan.row_marginal = a.weights();
  plan.col_marginal = b.weights();
  plan.objective = (plan.values.array() * cost.array()).sum();
  plan.converged = true;
  fill_violations(plan);
  return plan;
}

}  // namespace hotcalib::ot
