#pragma once

#include "hotcalib/types.hpp"

namespace hotcalib::ot {

/// Probability vector on a finite set of atoms. Construction validates that
/// entries are finite, nonnegative and sum to one within 1e-9.
class DiscreteDistribution {
 public:
  explicit DiscreteDistribution(Vector weights);

  static DiscreteDistribution uniform(Index n);

  const Vector& weights() const noexcept { return weights_; }
  Index size() const noexcept { return weights_.size(); }
  double operator[](Index i) const { return weights_[i]; }

 private:
  Vector weights_;
};

struct TransportPlan {
  Matrix values;
  Vector row_marginal;
  Vector col_marginal;
  double objective = 0.0;  // <T, C> of the returned plan
  int iterations = 0;
  bool converged = false;
  double row_violation = 0.0;  // || T 1 - a ||_1
  double col_violation = 0.0;  // || T^T 1 - b ||_1
};

struct SinkhornOptions {
  double epsilon = 0.01;
  int max_iter = 200;
  double tol = 1e-6;
};

/// Entropic OT: minimises <T, C> + epsilon * sum T ln T over couplings of a
/// and b. Works on log-domain dual potentials: alternating marginal scaling
/// with epsilon annealed down from the cost scale, plus Newton polishing of
/// the dual when scaling alone stalls. Scaling sweeps and Newton steps both
/// count against `max_iter`. A run that does not reach `tol` returns its last
/// iterate with converged == false.
TransportPlan sinkhorn(const DiscreteDistribution& a, const DiscreteDistribution& b,
                       const Matrix& cost, const SinkhornOptions& options = {});

/// Exact unregularised OT for desk-sized instances (n*m <= 64), solved as a
/// linear program with a two-phase simplex under Bland's rule.
TransportPlan exact_ot_small(const DiscreteDistribution& a, const DiscreteDistribution& b,
                             const Matrix& cost);

inline constexpr Index kExactMaxCells = 64;

}  // namespace hotcalib::ot
