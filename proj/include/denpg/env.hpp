#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "denpg/errors.hpp"
#include "denpg/policy.hpp"
#include "denpg/rng.hpp"

namespace denpg {

// One H-horizon rollout. Rewards are per channel: a single row for
// single-agent environments, one row per agent otherwise.
struct Trajectory {
  std::vector<State> states;    // length H+1
  std::vector<Action> actions;  // length H
  Eigen::MatrixXd rewards;      // channels x H
  int horizon = 0;

  double discounted_return(double gamma, int channel = 0) const {
    double r = 0.0, g = 1.0;
    for (int h = 0; h < horizon; ++h) {
      r += g * rewards(channel, h);
      g *= gamma;
    }
    return r;
  }
};

enum class EnvKind { tiny_mdp, gridworld, multitask_gridworld, coop_nav };

inline std::string to_string(EnvKind k) {
  switch (k) {
    case EnvKind::tiny_mdp: return "tiny_mdp";
    case EnvKind::gridworld: return "gridworld";
    case EnvKind::multitask_gridworld: return "multitask_gridworld";
    case EnvKind::coop_nav: return "coop_nav";
  }
  return "?";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "tiny_mdp") return EnvKind::tiny_mdp;
  if (s == "gridworld") return EnvKind::gridworld;
  if (s == "multitask_gridworld") return EnvKind::multitask_gridworld;
  if (s == "coop_nav") return EnvKind::coop_nav;
  throw ValidationError("unknown env kind '" + s + "'");
}

// Exactly enumerable MDP with inline tables; the oracle environment.
// P[s](a, s') is the transition row, R[c][s](a, s') the reward of channel c,
// all rewards in [-1, 1].
struct TinyMdp {
  int num_states = 0;
  int num_actions = 0;  // joint action count
  std::vector<Eigen::MatrixXd> P;
  std::vector<std::vector<Eigen::MatrixXd>> R;
  Eigen::VectorXd rho0;
  std::vector<int> agent_actions;  // optional factorization; product must equal num_actions

  int channels() const { return static_cast<int>(R.size()); }
};

enum class GridMetric { manhattan, euclidean };
enum class GridEvent { none, goal, obstacle };
using GridCell = std::pair<int, int>;  // (row, col)

struct GridWorld {
  int size = 0;
  int goal = 0;                // cell id = row * size + col
  std::vector<int> obstacles;  // cell ids
  GridMetric metric = GridMetric::manhattan;
};

// n agents on the [0,2]x[0,2] square, discrete 5-action moves with fixed
// step, one landmark per agent.
struct CoopNav {
  int agents = 0;
  std::vector<Eigen::Vector2d> landmarks;
  double step_size = 0.1;
  double collision_radius = 0.1;
};

struct EnvSpec {
  EnvKind kind = EnvKind::tiny_mdp;
  double gamma = 0.99;
  int horizon = 1;
  TinyMdp tiny;
  GridWorld grid;
  CoopNav nav;
  int tasks = 1;                 // multitask_gridworld only
  std::uint64_t task_seed = 0;   // multitask_gridworld only

  void validate() const;
  int reward_channels() const {
    switch (kind) {
      case EnvKind::tiny_mdp: return tiny.channels();
      case EnvKind::coop_nav: return nav.agents;
      default: return 1;
    }
  }
  // discrete state count (absorbing state included); -1 for continuous
  int num_states() const {
    switch (kind) {
      case EnvKind::tiny_mdp: return tiny.num_states;
      case EnvKind::gridworld:
      case EnvKind::multitask_gridworld: return grid.size * grid.size + 1;
      case EnvKind::coop_nav: return -1;
    }
    return -1;
  }
  int state_dim() const { return kind == EnvKind::coop_nav ? 4 * nav.agents : num_states(); }
  int num_joint_actions() const {
    switch (kind) {
      case EnvKind::tiny_mdp: return tiny.num_actions;
      case EnvKind::gridworld:
      case EnvKind::multitask_gridworld: return 4;
      case EnvKind::coop_nav: {
        int m = 1;
        for (int i = 0; i < nav.agents; ++i) m *= 5;
        return m;
      }
    }
    return 0;
  }
  // per-policy-block action counts: {joint} for monolithic policies,
  // per-agent counts for factorized ones
  std::vector<int> action_layout() const {
    if (kind == EnvKind::coop_nav) return std::vector<int>(nav.agents, 5);
    if (kind == EnvKind::tiny_mdp && !tiny.agent_actions.empty()) return tiny.agent_actions;
    return {num_joint_actions()};
  }
};

inline void EnvSpec::validate() const {
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  if (gamma < 0.0 || gamma >= 1.0) throw ValidationError("gamma must be in [0,1)");
  switch (kind) {
    case EnvKind::tiny_mdp: {
      const auto& m = tiny;
      if (m.num_states < 1 || m.num_actions < 1) throw ValidationError("tiny_mdp needs at least one state and action");
      if (static_cast<int>(m.P.size()) != m.num_states) throw ValidationError("tiny_mdp P has wrong state count");
      if (m.R.empty()) throw ValidationError("tiny_mdp needs at least one reward channel");
      for (const auto& ps : m.P) {
        if (ps.rows() != m.num_actions || ps.cols() != m.num_states) throw ValidationError("tiny_mdp P table shape mismatch");
        for (Eigen::Index a = 0; a < ps.rows(); ++a) {
          if (ps.row(a).minCoeff() < 0.0) throw ValidationError("tiny_mdp P has a negative probability");
          if (std::abs(ps.row(a).sum() - 1.0) > 1e-12) throw ValidationError("tiny_mdp P row does not sum to 1");
        }
      }
      for (const auto& chan : m.R) {
        if (static_cast<int>(chan.size()) != m.num_states) throw ValidationError("tiny_mdp R has wrong state count");
        for (const auto& rs : chan) {
          if (rs.rows() != m.num_actions || rs.cols() != m.num_states) throw ValidationError("tiny_mdp R table shape mismatch");
          if (rs.minCoeff() < -1.0 || rs.maxCoeff() > 1.0) throw ValidationError("tiny_mdp rewards must lie in [-1,1]");
        }
      }
      if (m.rho0.size() != m.num_states) throw ValidationError("tiny_mdp rho0 has wrong length");
      if (m.rho0.minCoeff() < 0.0 || std::abs(m.rho0.sum() - 1.0) > 1e-12)
        throw ValidationError("tiny_mdp rho0 is not a distribution");
      if (!m.agent_actions.empty()) {
        int prod = 1;
        for (int k : m.agent_actions) {
          if (k < 1) throw ValidationError("tiny_mdp agent_actions entries must be >= 1");
          prod *= k;
        }
        if (prod != m.num_actions) throw ValidationError("tiny_mdp agent_actions product must equal num_actions");
      }
      break;
    }
    case EnvKind::gridworld:
    case EnvKind::multitask_gridworld: {
      const int s = grid.size;
      if (s < 2) throw ValidationError("gridworld size must be >= 2");
      if (grid.goal < 0 || grid.goal >= s * s) throw ValidationError("gridworld goal outside the grid");
      for (int c : grid.obstacles) {
        if (c < 0 || c >= s * s) throw ValidationError("gridworld obstacle outside the grid");
        if (c == grid.goal) throw ValidationError("gridworld obstacle on the goal");
      }
      if (static_cast<int>(grid.obstacles.size()) + 1 >= s * s) throw ValidationError("gridworld has no free cell");
      if (kind == EnvKind::multitask_gridworld && tasks < 1) throw ValidationError("multitask needs tasks >= 1");
      break;
    }
    case EnvKind::coop_nav: {
      if (nav.agents < 1) throw ValidationError("coop_nav needs at least one agent");
      if (static_cast<int>(nav.landmarks.size()) != nav.agents) throw ValidationError("coop_nav needs one landmark per agent");
      for (const auto& lm : nav.landmarks)
        if (lm.x() < 0.0 || lm.x() > 2.0 || lm.y() < 0.0 || lm.y() > 2.0)
          throw ValidationError("coop_nav landmark outside the 2x2 region");
      if (nav.step_size <= 0.0 || nav.collision_radius <= 0.0) throw ValidationError("coop_nav step and radius must be positive");
      break;
    }
  }
}

inline double grid_distance(GridCell a, GridCell b, GridMetric metric) {
  const double dr = static_cast<double>(a.first - b.first);
  const double dc = static_cast<double>(a.second - b.second);
  if (metric == GridMetric::manhattan) return std::abs(dr) + std::abs(dc);
  return std::sqrt(dr * dr + dc * dc);
}

// -0.1 * distance-to-goal, +10 on reaching the goal, -10 on an obstacle.
inline double gridworld_reward(GridCell state, GridCell goal, GridEvent event,
                               GridMetric metric = GridMetric::manhattan) {
  const double base = -0.1 * grid_distance(state, goal, metric);
  if (event == GridEvent::goal) return base + 10.0;
  if (event == GridEvent::obstacle) return base - 10.0;
  return base;
}

// -(distance to the landmark) - (number of colliding agents)
inline double coopnav_reward(const Eigen::Vector2d& agent_pos, const Eigen::Vector2d& landmark, int collisions) {
  return -(agent_pos - landmark).norm() - static_cast<double>(collisions);
}

namespace detail {

inline State tiny_state(const TinyMdp& m, int s) {
  State st;
  st.id = s;
  st.x = Eigen::VectorXd::Zero(m.num_states);
  st.x[s] = 1.0;
  return st;
}

inline State grid_state(const GridWorld& g, int id) {
  State st;
  st.id = id;
  st.x = Eigen::VectorXd::Zero(g.size * g.size + 1);
  st.x[id] = 1.0;
  st.absorbing = id == g.size * g.size;
  return st;
}

inline State nav_state(const CoopNav& nav, const std::vector<Eigen::Vector2d>& pos) {
  State st;
  st.x.resize(4 * nav.agents);
  for (int i = 0; i < nav.agents; ++i) {
    st.x[2 * i] = pos[i].x();
    st.x[2 * i + 1] = pos[i].y();
  }
  for (int i = 0; i < nav.agents; ++i) {
    st.x[2 * nav.agents + 2 * i] = nav.landmarks[i].x();
    st.x[2 * nav.agents + 2 * i + 1] = nav.landmarks[i].y();
  }
  return st;
}

// Mixed-radix encoding of per-agent action ids into the joint id, block 0
// most significant.
inline int joint_action_id(const Eigen::VectorXi& per_agent, const std::vector<int>& layout) {
  int id = 0;
  for (std::size_t i = 0; i < layout.size(); ++i) id = id * layout[i] + per_agent[static_cast<int>(i)];
  return id;
}

inline Eigen::VectorXi split_action_id(int joint, const std::vector<int>& layout) {
  Eigen::VectorXi per_agent(static_cast<int>(layout.size()));
  for (int i = static_cast<int>(layout.size()) - 1; i >= 0; --i) {
    per_agent[i] = joint % layout[static_cast<std::size_t>(i)];
    joint /= layout[static_cast<std::size_t>(i)];
  }
  return per_agent;
}

inline void check_policy_compatible(const EnvSpec& env, const Policy& policy) {
  const auto layout = env.action_layout();
  if (policy.family() == PolicyFamily::mlp_gaussian) throw SpaceMismatch("gaussian policies are not driven by these environments");
  if (policy.action_blocks() != static_cast<int>(layout.size()))
    throw SpaceMismatch("policy has " + std::to_string(policy.action_blocks()) + " action blocks, environment expects " +
                        std::to_string(layout.size()));
  for (std::size_t i = 0; i < layout.size(); ++i)
    if (policy.num_actions(static_cast<int>(i)) != layout[i]) throw SpaceMismatch("action count mismatch in block " + std::to_string(i));
  if (policy.family() == PolicyFamily::tabular_softmax) {
    if (policy.num_states() != env.num_states()) throw SpaceMismatch("tabular policy state count mismatch");
  } else if (env.state_dim() > 0) {
    const Policy& probe = policy.family() == PolicyFamily::factorized_product ? policy.blocks().front() : policy;
    if (probe.state_dim() != env.state_dim()) throw SpaceMismatch("policy feature dimension mismatch");
  }
}

}  // namespace detail

// Draws one trajectory of nominal length H under the given policy. The
// stream is consumed in a fixed order: initial state first, then per step
// the action followed by the transition. Early-terminating gridworld
// episodes continue in an absorbing state with zero reward so the length is
// always H.
inline Trajectory sample_trajectory(const EnvSpec& env, const Policy& policy, int horizon, RngStream& rng) {
  env.validate();
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  detail::check_policy_compatible(env, policy);
  Trajectory tau;
  tau.horizon = horizon;
  tau.rewards.setZero(env.reward_channels(), horizon);

  switch (env.kind) {
    case EnvKind::tiny_mdp: {
      const auto& m = env.tiny;
      const auto layout = env.action_layout();
      int s = rng.categorical(std::span<const double>(m.rho0.data(), static_cast<std::size_t>(m.rho0.size())));
      tau.states.push_back(detail::tiny_state(m, s));
      for (int h = 0; h < horizon; ++h) {
        const Action a = policy.sample_action(tau.states.back(), rng);
        const int aj = detail::joint_action_id(a.discrete, layout);
        const Eigen::VectorXd row = m.P[s].row(aj);
        const int s2 = rng.categorical(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
        for (int c = 0; c < m.channels(); ++c) tau.rewards(c, h) = m.R[c][s](aj, s2);
        tau.actions.push_back(a);
        s = s2;
        tau.states.push_back(detail::tiny_state(m, s));
      }
      return tau;
    }
    case EnvKind::gridworld:
    case EnvKind::multitask_gridworld: {
      const auto& g = env.grid;
      const int side = g.size;
      const int absorbing = side * side;
      std::vector<int> free_cells;
      for (int c = 0; c < side * side; ++c)
        if (c != g.goal && std::find(g.obstacles.begin(), g.obstacles.end(), c) == g.obstacles.end())
          free_cells.push_back(c);
      int cell = free_cells[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(free_cells.size())))];
      tau.states.push_back(detail::grid_state(g, cell));
      const GridCell goal{g.goal / side, g.goal % side};
      for (int h = 0; h < horizon; ++h) {
        if (cell == absorbing) {  // padding: no policy decision, no stream draw
          tau.actions.push_back(Action::of(0));
          tau.rewards(0, h) = 0.0;
          tau.states.push_back(detail::grid_state(g, cell));
          continue;
        }
        const Action a = policy.sample_action(tau.states.back(), rng);
        tau.actions.push_back(a);
        int r = cell / side, c = cell % side;
        switch (a.discrete[0]) {
          case 0: r = std::max(0, r - 1); break;
          case 1: r = std::min(side - 1, r + 1); break;
          case 2: c = std::min(side - 1, c + 1); break;
          case 3: c = std::max(0, c - 1); break;
          default: throw SpaceMismatch("gridworld action out of range");
        }
        const int next = r * side + c;
        GridEvent ev = GridEvent::none;
        if (next == g.goal) ev = GridEvent::goal;
        else if (std::find(g.obstacles.begin(), g.obstacles.end(), next) != g.obstacles.end()) ev = GridEvent::obstacle;
        tau.rewards(0, h) = gridworld_reward({r, c}, goal, ev, g.metric);
        cell = (ev == GridEvent::none) ? next : absorbing;
        tau.states.push_back(detail::grid_state(g, cell));
      }
      return tau;
    }
    case EnvKind::coop_nav: {
      const auto& nav = env.nav;
      std::vector<Eigen::Vector2d> pos(static_cast<std::size_t>(nav.agents));
      for (int i = 0; i < nav.agents; ++i) {
        const double x = rng.uniform(0.0, 2.0);
        const double y = rng.uniform(0.0, 2.0);
        pos[static_cast<std::size_t>(i)] = {x, y};
      }
      tau.states.push_back(detail::nav_state(nav, pos));
      for (int h = 0; h < horizon; ++h) {
        const Action a = policy.sample_action(tau.states.back(), rng);
        tau.actions.push_back(a);
        for (int i = 0; i < nav.agents; ++i) {
          auto& p = pos[static_cast<std::size_t>(i)];
          switch (a.discrete[i]) {
            case 0: p.y() += nav.step_size; break;
            case 1: p.y() -= nav.step_size; break;
            case 2: p.x() += nav.step_size; break;
            case 3: p.x() -= nav.step_size; break;
            case 4: break;
            default: throw SpaceMismatch("coop_nav action out of range");
          }
          p.x() = std::clamp(p.x(), 0.0, 2.0);
          p.y() = std::clamp(p.y(), 0.0, 2.0);
        }
        for (int i = 0; i < nav.agents; ++i) {
          int collisions = 0;
          for (int j = 0; j < nav.agents; ++j)
            if (j != i && (pos[static_cast<std::size_t>(i)] - pos[static_cast<std::size_t>(j)]).norm() < nav.collision_radius)
              ++collisions;
          tau.rewards(i, h) = coopnav_reward(pos[static_cast<std::size_t>(i)], nav.landmarks[static_cast<std::size_t>(i)], collisions);
        }
        tau.states.push_back(detail::nav_state(nav, pos));
      }
      return tau;
    }
  }
  throw ValidationError("unreachable env kind");
}

// One structurally possible trajectory of a tiny MDP together with its
// policy-independent probability mass rho0(s0) * prod P. Multiplying in the
// policy factors gives p(tau|theta).
struct EnumeratedTrajectory {
  Trajectory traj;
  double structural_prob = 0.0;

  double policy_log_prob(const Policy& policy) const {
    double lp = 0.0;
    for (int h = 0; h < traj.horizon; ++h) lp += policy.log_prob(traj.states[static_cast<std::size_t>(h)], traj.actions[static_cast<std::size_t>(h)]);
    return lp;
  }
  double prob(const Policy& policy) const { return structural_prob * std::exp(policy_log_prob(policy)); }
};

// All trajectories with nonzero structural probability, each exactly once.
// Guarded by |S|^(H+1) * |A|^H <= 10^6.
inline std::vector<EnumeratedTrajectory> enumerate_trajectories(const EnvSpec& env, int horizon) {
  env.validate();
  if (env.kind != EnvKind::tiny_mdp) throw ValidationError("only tiny_mdp environments are enumerable");
  if (horizon < 1) throw ValidationError("horizon must be >= 1");
  const auto& m = env.tiny;
  const double count = std::pow(static_cast<double>(m.num_states), horizon + 1) *
                       std::pow(static_cast<double>(m.num_actions), horizon);
  if (count > 1e6) throw TooLarge("enumeration would visit up to " + std::to_string(count) + " trajectories");

  const auto layout = env.action_layout();
  std::vector<EnumeratedTrajectory> out;
  Trajectory tau;
  tau.horizon = horizon;
  tau.rewards.setZero(m.channels(), horizon);

  struct Frame {
    int state;
    double prob;
  };
  std::vector<int> state_path{0};
  std::vector<int> action_path;

  // depth-first walk over (state, action, next-state) choices
  auto dfs = [&](auto&& self, int s, int h, double struct_prob) -> void {
    if (h == horizon) {
      EnumeratedTrajectory et;
      et.structural_prob = struct_prob;
      et.traj.horizon = horizon;
      et.traj.rewards.setZero(m.channels(), horizon);
      for (int i = 0; i <= horizon; ++i) et.traj.states.push_back(detail::tiny_state(m, state_path[static_cast<std::size_t>(i)]));
      for (int i = 0; i < horizon; ++i) {
        const int aj = action_path[static_cast<std::size_t>(i)];
        Action a;
        a.discrete = detail::split_action_id(aj, layout);
        et.traj.actions.push_back(a);
        for (int c = 0; c < m.channels(); ++c)
          et.traj.rewards(c, i) = m.R[c][state_path[static_cast<std::size_t>(i)]](aj, state_path[static_cast<std::size_t>(i) + 1]);
      }
      out.push_back(std::move(et));
      return;
    }
    for (int a = 0; a < m.num_actions; ++a) {
      for (int s2 = 0; s2 < m.num_states; ++s2) {
        const double p = m.P[s](a, s2);
        if (p <= 0.0) continue;
        action_path.push_back(a);
        state_path.push_back(s2);
        self(self, s2, h + 1, struct_prob * p);
        state_path.pop_back();
        action_path.pop_back();
      }
    }
  };

  for (int s0 = 0; s0 < m.num_states; ++s0) {
    if (m.rho0[s0] <= 0.0) continue;
    state_path[0] = s0;
    dfs(dfs, s0, 0, m.rho0[s0]);
  }
  return out;
}

// n GridWorld variants sharing grid size and action set, differing in
// seeded goal/obstacle placement; variant 0 is the base itself.
inline std::vector<EnvSpec> make_multitask_suite(const EnvSpec& base, int n, std::uint64_t perturbation_seed) {
  if (base.kind != EnvKind::gridworld && base.kind != EnvKind::multitask_gridworld)
    throw ValidationError("multitask suite needs a gridworld base");
  if (n < 1) throw ValidationError("suite size must be >= 1");
  EnvSpec proto = base;
  proto.kind = EnvKind::gridworld;
  proto.tasks = 1;
  proto.validate();

  std::vector<EnvSpec> suite{proto};
  std::set<std::vector<int>> seen;  // variants must have pairwise-distinct obstacle sets
  auto layout_key = [](const EnvSpec& e) {
    std::vector<int> obs = e.grid.obstacles;
    std::sort(obs.begin(), obs.end());
    return obs;
  };
  seen.insert(layout_key(proto));

  const int cells = base.grid.size * base.grid.size;
  const int num_obs = static_cast<int>(base.grid.obstacles.size());
  for (int k = 1; k < n; ++k) {
    RngStream rng = make_stream(perturbation_seed, stream::multitask, static_cast<std::uint64_t>(k));
    EnvSpec variant = proto;
    for (int attempt = 0; attempt < 1000; ++attempt) {
      variant.grid.goal = rng.uniform_int(cells);
      std::set<int> obs;
      while (static_cast<int>(obs.size()) < num_obs) {
        const int c = rng.uniform_int(cells);
        if (c != variant.grid.goal) obs.insert(c);
      }
      variant.grid.obstacles.assign(obs.begin(), obs.end());
      if (seen.insert(layout_key(variant)).second) break;
      if (attempt == 999) throw ValidationError("could not draw a distinct gridworld variant");
    }
    variant.validate();
    suite.push_back(variant);
  }
  return suite;
}

// Convenience builders for seeded experiment environments.

inline EnvSpec make_coop_nav(int agents, std::uint64_t seed, double gamma, int horizon) {
  EnvSpec env;
  env.kind = EnvKind::coop_nav;
  env.gamma = gamma;
  env.horizon = horizon;
  env.nav.agents = agents;
  RngStream rng = make_stream(seed, stream::env_build);
  for (int i = 0; i < agents; ++i) {
    const double x = rng.uniform(0.0, 2.0);
    const double y = rng.uniform(0.0, 2.0);
    env.nav.landmarks.push_back({x, y});
  }
  env.validate();
  return env;
}

inline EnvSpec make_random_tiny(int num_states, int num_actions, int channels, std::uint64_t seed,
                                double gamma, int horizon) {
  EnvSpec env;
  env.kind = EnvKind::tiny_mdp;
  env.gamma = gamma;
  env.horizon = horizon;
  auto& m = env.tiny;
  m.num_states = num_states;
  m.num_actions = num_actions;
  RngStream rng = make_stream(seed, stream::env_build);
  for (int s = 0; s < num_states; ++s) {
    Eigen::MatrixXd p(num_actions, num_states);
    for (int a = 0; a < num_actions; ++a) {
      for (int s2 = 0; s2 < num_states; ++s2) p(a, s2) = 0.05 + rng.u01();
      p.row(a) /= p.row(a).sum();
    }
    m.P.push_back(p);
  }
  m.R.resize(static_cast<std::size_t>(channels));
  for (int c = 0; c < channels; ++c)
    for (int s = 0; s < num_states; ++s) {
      Eigen::MatrixXd r(num_actions, num_states);
      for (int a = 0; a < num_actions; ++a)
        for (int s2 = 0; s2 < num_states; ++s2) r(a, s2) = rng.uniform(-1.0, 1.0);
      m.R[static_cast<std::size_t>(c)].push_back(r);
    }
  m.rho0.resize(num_states);
  for (int s = 0; s < num_states; ++s) m.rho0[s] = 0.05 + rng.u01();
  m.rho0 /= m.rho0.sum();
  env.validate();
  return env;
}

}  // namespace denpg
