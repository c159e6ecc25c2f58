#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "denpg/env.hpp"
#include "denpg/errors.hpp"
#include "denpg/policy.hpp"

namespace denpg {

struct GradientEstimate {
  enum class Provenance { reinforce, momentum, exact };
  Eigen::VectorXd v;
  Provenance provenance = Provenance::reinforce;
};

// REINFORCE with a scalar baseline:
//   g = [sum_h grad log pi(a^h|s^h)] * [sum_h gamma^h r^h - b]
inline GradientEstimate reinforce_grad(const Policy& policy, const Trajectory& tau, double baseline,
                                       double gamma, int channel = 0) {
  Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(policy.dim());
  for (int h = 0; h < tau.horizon; ++h) {
    if (tau.states[static_cast<std::size_t>(h)].absorbing) continue;
    score_sum += policy.score(tau.states[static_cast<std::size_t>(h)], tau.actions[static_cast<std::size_t>(h)]);
  }
  GradientEstimate g;
  g.provenance = GradientEstimate::Provenance::reinforce;
  g.v = score_sum * (tau.discounted_return(gamma, channel) - baseline);
  return g;
}

// Exact value of the enumerable MDP under the policy (oracle support).
inline double exact_value(const EnvSpec& env, const Policy& policy, double gamma, int horizon, int channel = 0) {
  double v = 0.0;
  for (const auto& et : enumerate_trajectories(env, horizon)) v += et.prob(policy) * et.traj.discounted_return(gamma, channel);
  return v;
}

// Exact policy gradient sum_tau p(tau|theta) [sum_h score] R(tau) by full
// enumeration.
inline Eigen::VectorXd exact_grad(const EnvSpec& env, const Policy& policy, double gamma, int horizon, int channel = 0) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  for (const auto& et : enumerate_trajectories(env, horizon)) {
    Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(policy.dim());
    for (int h = 0; h < horizon; ++h)
      score_sum += policy.score(et.traj.states[static_cast<std::size_t>(h)], et.traj.actions[static_cast<std::size_t>(h)]);
    g += et.prob(policy) * et.traj.discounted_return(gamma, channel) * score_sum;
  }
  return g;
}

inline constexpr double kOmegaLogClip = 20.0;

struct ImportanceWeight {
  double omega = 1.0;
  bool clipped = false;
};

// omega(tau | theta_old, theta_new) = prod_h pi_old(a^h|s^h) / pi_new(a^h|s^h),
// evaluated in log space and clipped to [e^-20, e^20]. The unbiasedness
// contract E[omega g(theta_old)] = grad V(theta_old) presumes the caller
// sampled tau under theta_new.
inline ImportanceWeight importance_weight(const Policy& pol_old, const Policy& pol_new, const Trajectory& tau) {
  if (pol_old.dim() != pol_new.dim() || pol_old.family() != pol_new.family())
    throw SpaceMismatch("importance weight needs two parameterizations of the same policy");
  double log_omega = 0.0;
  for (int h = 0; h < tau.horizon; ++h) {
    const auto& s = tau.states[static_cast<std::size_t>(h)];
    if (s.absorbing) continue;  // padded steps have unit likelihood ratio
    const auto& a = tau.actions[static_cast<std::size_t>(h)];
    log_omega += pol_old.log_prob(s, a) - pol_new.log_prob(s, a);
  }
  ImportanceWeight w;
  if (log_omega > kOmegaLogClip) {
    log_omega = kOmegaLogClip;
    w.clipped = true;
  } else if (log_omega < -kOmegaLogClip) {
    log_omega = -kOmegaLogClip;
    w.clipped = true;
  }
  w.omega = std::exp(log_omega);
  return w;
}

inline ImportanceWeight importance_weight(const Policy& base, const Eigen::VectorXd& theta_old,
                                          const Eigen::VectorXd& theta_new, const Trajectory& tau) {
  return importance_weight(base.with_params(theta_old), base.with_params(theta_new), tau);
}

// Momentum-based variance-reduced estimator:
//   v = beta * g_t + (1 - beta) * (v_prev + g_t - omega * g_prev)
// beta = 1 is the plain stochastic gradient (returned bitwise), beta = 0 the
// SARAH recursion.
inline GradientEstimate momentum_update(double beta, const Eigen::VectorXd& g_t, const Eigen::VectorXd& v_prev,
                                        const Eigen::VectorXd& g_prev_params, double omega) {
  if (g_t.size() != v_prev.size() || g_t.size() != g_prev_params.size())
    throw DimensionMismatch("momentum update operands differ in length");
  GradientEstimate out;
  out.provenance = GradientEstimate::Provenance::momentum;
  if (beta == 1.0) {
    out.v = g_t;
    return out;
  }
  out.v = beta * g_t + (1.0 - beta) * (v_prev + g_t - omega * g_prev_params);
  return out;
}

// Symmetric PSD estimate of the Fisher information, dense or block diagonal
// over the per-agent parameter blocks of a factorized policy.
struct FisherEstimate {
  Eigen::MatrixXd matrix;              // dense form
  std::vector<Eigen::MatrixXd> blocks; // block-diagonal form
  std::vector<int> block_dims;
  bool block_diagonal = false;
  double damping = 0.0;

  int dim() const {
    if (!block_diagonal) return static_cast<int>(matrix.rows());
    int d = 0;
    for (int b : block_dims) d += b;
    return d;
  }

  Eigen::MatrixXd dense() const {
    if (!block_diagonal) return matrix;
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(dim(), dim());
    int off = 0;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      full.block(off, off, block_dims[i], block_dims[i]) = blocks[i];
      off += block_dims[i];
    }
    return full;
  }
};

// (1/H) sum_h score(s^h,a^h) score(s^h,a^h)^T for one trajectory.
inline FisherEstimate fim_sample(const Policy& policy, const Trajectory& tau) {
  const int d = policy.dim();
  FisherEstimate f;
  f.matrix.setZero(d, d);
  f.block_dims = {d};
  for (int h = 0; h < tau.horizon; ++h) {
    if (tau.states[static_cast<std::size_t>(h)].absorbing) continue;
    const Eigen::VectorXd s = policy.score(tau.states[static_cast<std::size_t>(h)], tau.actions[static_cast<std::size_t>(h)]);
    f.matrix += s * s.transpose();
  }
  f.matrix /= static_cast<double>(tau.horizon);
  return f;
}

// Per-agent diagonal blocks of the joint FIM; the cross blocks of a
// factorized policy vanish in expectation and are never materialized.
inline FisherEstimate block_fim_sample(const Policy& policy, const Trajectory& tau) {
  if (policy.family() != PolicyFamily::factorized_product) return fim_sample(policy, tau);
  FisherEstimate f;
  f.block_diagonal = true;
  f.block_dims = policy.block_dims();
  for (int bd : f.block_dims) f.blocks.push_back(Eigen::MatrixXd::Zero(bd, bd));
  for (int h = 0; h < tau.horizon; ++h) {
    if (tau.states[static_cast<std::size_t>(h)].absorbing) continue;
    const Eigen::VectorXd s = policy.score(tau.states[static_cast<std::size_t>(h)], tau.actions[static_cast<std::size_t>(h)]);
    int off = 0;
    for (std::size_t b = 0; b < f.blocks.size(); ++b) {
      const auto sb = s.segment(off, f.block_dims[b]);
      f.blocks[b] += sb * sb.transpose();
      off += f.block_dims[b];
    }
  }
  for (auto& b : f.blocks) b /= static_cast<double>(tau.horizon);
  return f;
}

// Exact FIM of the enumerable MDP: the expectation of fim_sample under
// p(.|theta).
inline FisherEstimate fim_exact(const EnvSpec& env, const Policy& policy, int horizon) {
  const int d = policy.dim();
  FisherEstimate f;
  f.matrix.setZero(d, d);
  f.block_dims = {d};
  for (const auto& et : enumerate_trajectories(env, horizon))
    f.matrix += et.prob(policy) * fim_sample(policy, et.traj).matrix;
  return f;
}

struct SolveStats {
  long iterations = 0;  // CG iterations, or 1 per direct solve
};

namespace detail {

inline Eigen::VectorXd solve_damped_dense(const Eigen::MatrixXd& f, const Eigen::VectorXd& y, double eps,
                                          SolveStats* stats) {
  const Eigen::Index d = f.rows();
  const double ynorm = y.norm();
  if (ynorm == 0.0) return Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd a = f;
  a.diagonal().array() += eps;

  if (d <= 512) {
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw SolveFailure("Cholesky factorization failed; input not positive definite");
    Eigen::VectorXd x = llt.solve(y);
    if (stats) stats->iterations += 1;
    double res = (a * x - y).norm() / ynorm;
    if (res > 1e-8) {
      x += llt.solve(y - a * x);  // one refinement pass
      if (stats) stats->iterations += 1;
      res = (a * x - y).norm() / ynorm;
      if (res > 1e-8) throw SolveFailure("residual " + std::to_string(res) + " above 1e-8 after refinement");
    }
    return x;
  }

  // conjugate gradient for large blocks
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd r = y;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const double target = 1e-9 * ynorm;  // aim below the contract, then verify
  const long cap = 20 * d + 50;
  long it = 0;
  for (; it < cap && std::sqrt(rs) > target; ++it) {
    const Eigen::VectorXd ap = a * p;
    const double alpha = rs / p.dot(ap);
    x += alpha * p;
    r -= alpha * ap;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
  }
  if (stats) stats->iterations += it;
  const double res = (a * x - y).norm() / ynorm;
  if (res > 1e-8) throw SolveFailure("conjugate gradient stalled at relative residual " + std::to_string(res));
  return x;
}

}  // namespace detail

// Damped natural-gradient direction: solves (F + eps I) d = y to relative
// residual 1e-8, blockwise for block-diagonal estimates.
inline Eigen::VectorXd natural_direction(const FisherEstimate& f, const Eigen::VectorXd& y, double eps,
                                         SolveStats* stats = nullptr) {
  if (eps <= 0.0) throw ValidationError("damping must be positive");
  if (y.size() != f.dim()) throw DimensionMismatch("direction solve dimension mismatch");
  if (!f.block_diagonal) return detail::solve_damped_dense(f.matrix, y, eps, stats);
  Eigen::VectorXd d(y.size());
  int off = 0;
  for (std::size_t b = 0; b < f.blocks.size(); ++b) {
    d.segment(off, f.block_dims[b]) = detail::solve_damped_dense(f.blocks[b], y.segment(off, f.block_dims[b]), eps, stats);
    off += f.block_dims[b];
  }
  return d;
}

// Scalar moving-average baseline.
inline double baseline_update(double b_prev, double return_new, double alpha) {
  if (alpha < 0.0 || alpha > 1.0) throw ValidationError("baseline alpha must be in [0,1]");
  return (1.0 - alpha) * b_prev + alpha * return_new;
}

}  // namespace denpg
