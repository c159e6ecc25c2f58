#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cassert>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "denpg/env.hpp"
#include "denpg/errors.hpp"
#include "denpg/estimators.hpp"
#include "denpg/graph.hpp"
#include "denpg/policy.hpp"
#include "denpg/rng.hpp"

namespace denpg {

// mdnpg      full algorithm: momentum estimator, gradient tracking, damped
//            natural-gradient preconditioning
// mdpgt      same without preconditioning (d = y)
// dpg        vanilla decentralized gradient ascent: beta forced to 1 and the
//            tracker replaced by y^{t+1} = v^t
// npg_single mdnpg restricted to n = 1
enum class Algo { mdnpg, mdpgt, dpg, npg_single };

inline std::string to_string(Algo a) {
  switch (a) {
    case Algo::mdnpg: return "mdnpg";
    case Algo::mdpgt: return "mdpgt";
    case Algo::dpg: return "dpg";
    case Algo::npg_single: return "npg_single";
  }
  return "?";
}

inline Algo algo_from_string(const std::string& s) {
  if (s == "mdnpg") return Algo::mdnpg;
  if (s == "mdpgt") return Algo::mdpgt;
  if (s == "dpg") return Algo::dpg;
  if (s == "npg_single") return Algo::npg_single;
  throw ValidationError("unknown algorithm '" + s + "'");
}

struct RunConfig {
  int T = 100;
  int H = 10;
  int B = 1;
  double eta = 0.01;
  double beta = 0.2;
  double gamma = 0.99;
  double epsilon = 1e-3;
  Algo algo = Algo::mdnpg;
  TopologyKind topology = TopologyKind::ring;
  EdgeList custom_edges;
  int n = 1;
  EnvSpec env;
  PolicyFamily policy_family = PolicyFamily::tabular_softmax;
  int hidden = 16;
  std::uint64_t seed = 0;
  int eval_period = 10;
  int eval_episodes = 5;
  double baseline_alpha = 0.05;
  int fim_trajectories = 1;
  int agent_threads = 1;  // per-iteration rollout/estimator parallelism
  std::optional<Eigen::VectorXd> theta0;  // defaults to seeded uniform [-0.05, 0.05]

  void validate() const {
    if (T < 1) throw ValidationError("T >= 1");
    if (H < 1) throw ValidationError("H >= 1");
    if (B < 1) throw ValidationError("B >= 1");
    if (!(eta > 0.0)) throw ValidationError("eta > 0");
    if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("beta in (0,1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ValidationError("gamma in [0,1)");
    if (!(epsilon > 0.0)) throw ValidationError("epsilon > 0");
    if (n < 1) throw ValidationError("n >= 1");
    if (eval_period < 1) throw ValidationError("eval_period >= 1");
    if (eval_episodes < 1) throw ValidationError("eval_episodes >= 1");
    if (baseline_alpha < 0.0 || baseline_alpha > 1.0) throw ValidationError("baseline_alpha in [0,1]");
    if (fim_trajectories < 1) throw ValidationError("fim_trajectories >= 1");
    if (agent_threads < 1) throw ValidationError("agent_threads >= 1");
    if (algo == Algo::npg_single && n != 1) throw ValidationError("npg_single requires n = 1");
    env.validate();
    if (env.kind == EnvKind::coop_nav && env.nav.agents != n)
      throw ValidationError("coop_nav agent count must equal the swarm size");
    if (env.kind == EnvKind::multitask_gridworld && env.tasks != n)
      throw ValidationError("multitask task count must equal the swarm size");
    if (env.kind == EnvKind::tiny_mdp && env.tiny.channels() != 1 && env.tiny.channels() != n)
      throw ValidationError("tiny_mdp reward channels must be 1 or n");
  }
};

// Builds the policy driven by an environment: a single head for monolithic
// action spaces, a factorized product with one leaf per agent otherwise.
inline Policy make_policy(const EnvSpec& env, PolicyFamily leaf_family, int hidden) {
  const auto layout = env.action_layout();
  auto make_leaf = [&](int actions) -> Policy {
    switch (leaf_family) {
      case PolicyFamily::tabular_softmax:
        if (env.num_states() <= 0) throw SpaceMismatch("tabular policy needs an enumerable state space");
        return Policy::tabular(env.num_states(), actions);
      case PolicyFamily::linear_softmax:
        return Policy::linear(env.state_dim(), actions);
      case PolicyFamily::mlp_softmax:
        return Policy::mlp(env.state_dim(), hidden, actions);
      default:
        throw ValidationError("policy family must be tabular_softmax, linear_softmax or mlp_softmax");
    }
  };
  if (layout.size() == 1) return make_leaf(layout[0]);
  std::vector<Policy> blocks;
  blocks.reserve(layout.size());
  for (int m : layout) blocks.push_back(make_leaf(m));
  return Policy::factorized(std::move(blocks));
}

// Per-agent optimizer state: current/previous parameters, the momentum
// estimator and its predecessor, the gradient tracker, and the scalar
// baseline.
struct AgentState {
  Eigen::VectorXd theta;
  Eigen::VectorXd theta_prev;
  Eigen::VectorXd v;
  Eigen::VectorXd v_prev;
  Eigen::VectorXd y;
  double baseline = 0.0;
};

struct MetricsRow {
  int iteration = 0;
  double avg_return = 0.0;
  double consensus_err = 0.0;
  double tracker_err = 0.0;
  double consensus_residual = 0.0;  // max ||ybar^{t+1} - vbar^t||_inf since the previous record
  std::optional<double> stationarity_gap;
  long clip_events = 0;   // cumulative
  long solver_iters = 0;  // cumulative
};

struct SwarmMetrics {
  std::vector<MetricsRow> rows;
  double max_consensus_residual = 0.0;
  double max_mean_update_residual = 0.0;  // max ||thetabar^{t+1} - thetabar^t - eta dbar^t||_inf
  double max_consensus_error = 0.0;       // over every iteration, not only recorded rows
  long clip_events = 0;
  long solver_iterations = 0;
};

struct RunResult {
  SwarmMetrics metrics;
  Eigen::VectorXd theta_out;   // uniform draw over all (agent, iteration) iterates
  Eigen::VectorXd theta_mean;  // final mean iterate
  Policy policy;               // prototype carrying theta_mean
};

namespace detail {

// Runs body(i) for i in [0, n); agents own disjoint state and private
// streams, so execution order cannot change results. The first exception
// thrown by any worker is rethrown after all workers join.
template <typename F>
void for_each_agent(int n, int threads, F&& body) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      if (failed.load()) return;
      try {
        body(i);
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(threads, n);
  pool.reserve(static_cast<std::size_t>(k));
  for (int t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failed.load()) std::rethrow_exception(error);
}

}  // namespace detail

// ||(1/n_channels) sum_c exact_grad over channel c|| at the given policy;
// the convergence measure for enumerable environments.
inline double stationarity_gap(const EnvSpec& env, const Policy& policy, double gamma, int horizon) {
  if (env.kind != EnvKind::tiny_mdp) throw ValidationError("stationarity gap needs an enumerable environment");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(policy.dim());
  const int channels = env.reward_channels();
  for (int c = 0; c < channels; ++c) g += exact_grad(env, policy, gamma, horizon, c);
  g /= static_cast<double>(channels);
  return g.norm();
}

// Synchronous driver for a swarm of agents over a communication graph. All
// randomness is drawn from streams derived from (seed, tag, agent,
// iteration), so runs are bit-reproducible regardless of scheduling.
class Swarm {
 public:
  explicit Swarm(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    beta_ = cfg_.algo == Algo::dpg ? 1.0 : cfg_.beta;
    net_ = build_topology(cfg_.topology, cfg_.n, cfg_.custom_edges);
    if (cfg_.env.kind == EnvKind::multitask_gridworld) {
      envs_ = make_multitask_suite(cfg_.env, cfg_.n, cfg_.env.task_seed);
      for (auto& e : envs_) {
        e.gamma = cfg_.env.gamma;
        e.horizon = cfg_.env.horizon;
      }
    } else {
      envs_ = {cfg_.env};
    }
    channel_.resize(cfg_.n);
    for (int i = 0; i < cfg_.n; ++i) channel_[i] = cfg_.env.reward_channels() == cfg_.n ? i : 0;
    proto_ = make_policy(envs_[0], cfg_.policy_family, cfg_.hidden);
    d_ = proto_.dim();
  }

  const RunConfig& config() const { return cfg_; }
  const CommNetwork& network() const { return net_; }
  const Policy& prototype() const { return proto_; }
  const std::vector<AgentState>& agents() const { return agents_; }
  int iteration() const { return t_; }
  double effective_beta() const { return beta_; }

  StackedVector stacked_theta() const { return stack([](const AgentState& a) -> const Eigen::VectorXd& { return a.theta; }); }
  StackedVector stacked_tracker() const { return stack([](const AgentState& a) -> const Eigen::VectorXd& { return a.y; }); }
  StackedVector stacked_estimator() const { return stack([](const AgentState& a) -> const Eigen::VectorXd& { return a.v; }); }

  void initialize() {
    t_ = 0;
    clip_events_ = 0;
    solver_ = SolveStats{};
    window_consensus_residual_ = 0.0;
    window_update_residual_ = 0.0;
    metrics_ = SwarmMetrics{};

    Eigen::VectorXd theta0;
    if (cfg_.theta0) {
      if (cfg_.theta0->size() != d_) throw DimensionMismatch("theta0 override has wrong length");
      theta0 = *cfg_.theta0;
    } else {
      RngStream rng = make_stream(cfg_.seed, stream::theta0);
      theta0 = uniform_params(d_, rng);
    }

    agents_.assign(static_cast<std::size_t>(cfg_.n), AgentState{});
    StackedVector v0(cfg_.n, d_);
    for (int i = 0; i < cfg_.n; ++i) {
      auto& a = agents_[static_cast<std::size_t>(i)];
      a.theta = theta0;
      a.theta_prev = theta0;
      a.baseline = 0.0;
      a.v_prev = Eigen::VectorXd::Zero(d_);  // v^{-1}
      const Policy pol = proto_.with_params(theta0);
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(d_);
      for (int b = 0; b < cfg_.B; ++b) {
        RngStream rng = make_stream(cfg_.seed, stream::init_batch, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(b));
        const Trajectory tau = sample_trajectory(env_of(i), pol, cfg_.H, rng);
        acc += reinforce_grad(pol, tau, 0.0, cfg_.gamma, channel_[static_cast<std::size_t>(i)]).v;
      }
      a.v = acc / static_cast<double>(cfg_.B);
      v0.block(i) = a.v;
    }
    const StackedVector y1 = mix(net_.weights, v0);
    for (int i = 0; i < cfg_.n; ++i) agents_[static_cast<std::size_t>(i)].y = y1.block(i);

    RngStream draw = make_stream(cfg_.seed, stream::output_draw);
    out_t_ = draw.uniform_int(cfg_.T + 1);
    out_i_ = draw.uniform_int(cfg_.n);
    theta_out_ = theta0;  // overwritten when the drawn iterate is reached
  }

  // One synchronous round: estimator update, gradient tracking, and
  // preconditioned consensus parameter update.
  void step() {
    ++t_;
    const int n = cfg_.n;
    const bool needs_fim = cfg_.algo == Algo::mdnpg || cfg_.algo == Algo::npg_single;

    // per-agent phase: rollouts, estimators, Fisher samples. Agents touch
    // only their own state and streams, so this may run concurrently;
    // counters are reduced in index order afterwards.
    std::vector<Eigen::VectorXd> v_new(static_cast<std::size_t>(n));
    std::vector<FisherEstimate> fims(static_cast<std::size_t>(n));
    std::vector<char> clipped(static_cast<std::size_t>(n), 0);
    detail::for_each_agent(n, cfg_.agent_threads, [&](int i) {
      auto& a = agents_[static_cast<std::size_t>(i)];
      RngStream rng = make_stream(cfg_.seed, stream::step_sample, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t_));
      const Policy cur = proto_.with_params(a.theta);
      const Trajectory tau = sample_trajectory(env_of(i), cur, cfg_.H, rng);
      const double ret = tau.discounted_return(cfg_.gamma, channel_[static_cast<std::size_t>(i)]);
      const GradientEstimate g = reinforce_grad(cur, tau, a.baseline, cfg_.gamma, channel_[static_cast<std::size_t>(i)]);
      if (beta_ == 1.0) {
        v_new[static_cast<std::size_t>(i)] = g.v;
      } else {
        const Policy prev = proto_.with_params(a.theta_prev);
        const GradientEstimate g_prev = reinforce_grad(prev, tau, a.baseline, cfg_.gamma, channel_[static_cast<std::size_t>(i)]);
        const ImportanceWeight w = importance_weight(prev, cur, tau);
        clipped[static_cast<std::size_t>(i)] = w.clipped ? 1 : 0;
        v_new[static_cast<std::size_t>(i)] = momentum_update(beta_, g.v, a.v, g_prev.v, w.omega).v;
      }
      a.baseline = baseline_update(a.baseline, ret, cfg_.baseline_alpha);
      if (needs_fim) {
        FisherEstimate f = proto_.family() == PolicyFamily::factorized_product ? block_fim_sample(cur, tau) : fim_sample(cur, tau);
        for (int k = 1; k < cfg_.fim_trajectories; ++k) {
          RngStream frng = make_stream(cfg_.seed, stream::fim_extra, static_cast<std::uint64_t>(i),
                                       static_cast<std::uint64_t>(t_), static_cast<std::uint64_t>(k));
          const Trajectory ftau = sample_trajectory(env_of(i), cur, cfg_.H, frng);
          const FisherEstimate fk = proto_.family() == PolicyFamily::factorized_product ? block_fim_sample(cur, ftau) : fim_sample(cur, ftau);
          if (f.block_diagonal)
            for (std::size_t b = 0; b < f.blocks.size(); ++b) f.blocks[b] += fk.blocks[b];
          else
            f.matrix += fk.matrix;
        }
        if (cfg_.fim_trajectories > 1) {
          const double inv = 1.0 / static_cast<double>(cfg_.fim_trajectories);
          if (f.block_diagonal)
            for (auto& b : f.blocks) b *= inv;
          else
            f.matrix *= inv;
        }
        fims[static_cast<std::size_t>(i)] = std::move(f);
      }
    });
    for (int i = 0; i < n; ++i) clip_events_ += clipped[static_cast<std::size_t>(i)];

    // gradient tracking (dpg keeps the uncorrected estimator)
    StackedVector y_new(n, d_);
    if (cfg_.algo == Algo::dpg) {
      for (int i = 0; i < n; ++i) y_new.block(i) = v_new[static_cast<std::size_t>(i)];
    } else {
      StackedVector z(n, d_);
      for (int i = 0; i < n; ++i)
        z.block(i) = agents_[static_cast<std::size_t>(i)].y + v_new[static_cast<std::size_t>(i)] - agents_[static_cast<std::size_t>(i)].v;
      y_new = mix(net_.weights, z);
    }

    // dynamic average consensus identity: ybar^{t+1} = vbar^t
    Eigen::VectorXd vbar = Eigen::VectorXd::Zero(d_);
    for (int i = 0; i < n; ++i) vbar += v_new[static_cast<std::size_t>(i)];
    vbar /= static_cast<double>(n);
    const double consensus_residual = (y_new.mean_block() - vbar).lpNorm<Eigen::Infinity>();
    assert(consensus_residual < 1e-9);
    window_consensus_residual_ = std::max(window_consensus_residual_, consensus_residual);
    metrics_.max_consensus_residual = std::max(metrics_.max_consensus_residual, consensus_residual);

    StackedVector dvec(n, d_);
    std::vector<SolveStats> stats(static_cast<std::size_t>(n));
    detail::for_each_agent(n, cfg_.agent_threads, [&](int i) {
      if (needs_fim)
        dvec.block(i) = natural_direction(fims[static_cast<std::size_t>(i)], y_new.block(i), cfg_.epsilon,
                                          &stats[static_cast<std::size_t>(i)]);
      else
        dvec.block(i) = y_new.block(i);
    });
    for (int i = 0; i < n; ++i) solver_.iterations += stats[static_cast<std::size_t>(i)].iterations;

    StackedVector z2(n, d_);
    for (int i = 0; i < n; ++i) z2.block(i) = agents_[static_cast<std::size_t>(i)].theta + cfg_.eta * dvec.block(i);
    const StackedVector theta_new = mix(net_.weights, z2);

    // mean-iterate recursion: thetabar^{t+1} = thetabar^t + eta dbar^t
    const Eigen::VectorXd theta_bar_old = stacked_theta().mean_block();
    const double update_residual =
        (theta_new.mean_block() - theta_bar_old - cfg_.eta * dvec.mean_block()).lpNorm<Eigen::Infinity>();
    window_update_residual_ = std::max(window_update_residual_, update_residual);
    metrics_.max_mean_update_residual = std::max(metrics_.max_mean_update_residual, update_residual);

    for (int i = 0; i < n; ++i) {
      auto& a = agents_[static_cast<std::size_t>(i)];
      a.theta_prev = a.theta;
      a.theta = theta_new.block(i);
      a.v_prev = a.v;
      a.v = v_new[static_cast<std::size_t>(i)];
      a.y = y_new.block(i);
    }
    metrics_.max_consensus_error = std::max(metrics_.max_consensus_error, theta_new.consensus_error());

    if (t_ == out_t_) theta_out_ = agents_[static_cast<std::size_t>(out_i_)].theta;
  }

  MetricsRow record() {
    MetricsRow row;
    row.iteration = t_;
    row.avg_return = evaluate_mean_policy();
    row.consensus_err = stacked_theta().consensus_error();
    row.tracker_err = stacked_tracker().consensus_error();
    row.consensus_residual = window_consensus_residual_;
    window_consensus_residual_ = 0.0;
    window_update_residual_ = 0.0;
    if (cfg_.env.kind == EnvKind::tiny_mdp) {
      try {
        const Policy pol = proto_.with_params(mean_theta());
        row.stationarity_gap = stationarity_gap(cfg_.env, pol, cfg_.gamma, cfg_.H);
      } catch (const TooLarge&) {
        row.stationarity_gap = std::nullopt;
      }
    }
    row.clip_events = clip_events_;
    row.solver_iters = solver_.iterations;
    metrics_.rows.push_back(row);
    return row;
  }

  RunResult run() {
    initialize();
    for (int t = 1; t <= cfg_.T; ++t) {
      step();
      if (t % cfg_.eval_period == 0 || t == cfg_.T) record();
    }
    metrics_.clip_events = clip_events_;
    metrics_.solver_iterations = solver_.iterations;
    RunResult res;
    res.metrics = metrics_;
    res.theta_out = theta_out_;
    res.theta_mean = mean_theta();
    res.policy = proto_.with_params(res.theta_mean);
    return res;
  }

  Eigen::VectorXd mean_theta() const { return stacked_theta().mean_block(); }

  // Average discounted return of the mean policy over the evaluation
  // episodes, averaged over agents (each with its own environment/reward
  // channel).
  double evaluate_mean_policy() const {
    const Policy pol = proto_.with_params(mean_theta());
    double total = 0.0;
    for (int i = 0; i < cfg_.n; ++i) {
      for (int e = 0; e < cfg_.eval_episodes; ++e) {
        RngStream rng = make_stream(cfg_.seed, stream::eval, static_cast<std::uint64_t>(t_), static_cast<std::uint64_t>(i),
                                    static_cast<std::uint64_t>(e));
        const Trajectory tau = sample_trajectory(env_of(i), pol, cfg_.H, rng);
        total += tau.discounted_return(cfg_.gamma, channel_[static_cast<std::size_t>(i)]);
      }
    }
    return total / static_cast<double>(cfg_.n * cfg_.eval_episodes);
  }

 private:
  const EnvSpec& env_of(int i) const { return envs_.size() == 1 ? envs_[0] : envs_[static_cast<std::size_t>(i)]; }

  template <typename F>
  StackedVector stack(F&& field) const {
    StackedVector s(cfg_.n, d_);
    for (int i = 0; i < cfg_.n; ++i) s.block(i) = field(agents_[static_cast<std::size_t>(i)]);
    return s;
  }

  RunConfig cfg_;
  double beta_ = 1.0;
  CommNetwork net_;
  std::vector<EnvSpec> envs_;
  std::vector<int> channel_;
  Policy proto_;
  int d_ = 0;
  std::vector<AgentState> agents_;
  int t_ = 0;
  long clip_events_ = 0;
  SolveStats solver_;
  double window_consensus_residual_ = 0.0;
  double window_update_residual_ = 0.0;
  int out_t_ = 0;
  int out_i_ = 0;
  Eigen::VectorXd theta_out_;
  SwarmMetrics metrics_;
};

}  // namespace denpg
