#pragma once

#include <Eigen/Dense>

#include "denpg/env.hpp"
#include "denpg/policy.hpp"

namespace fixtures {

// The canonical 2-state/2-action/H=3 oracle MDP used across the estimator
// and optimizer suites. Tables are hand-picked, all rewards in [-1,1].
inline denpg::EnvSpec canonical_tiny(int channels = 1) {
  denpg::EnvSpec env;
  env.kind = denpg::EnvKind::tiny_mdp;
  env.gamma = 0.9;
  env.horizon = 3;
  auto& m = env.tiny;
  m.num_states = 2;
  m.num_actions = 2;
  Eigen::MatrixXd p0(2, 2), p1(2, 2);
  p0 << 0.7, 0.3, 0.2, 0.8;
  p1 << 0.4, 0.6, 0.9, 0.1;
  m.P = {p0, p1};
  Eigen::MatrixXd r00(2, 2), r01(2, 2);
  r00 << 0.5, -0.25, 1.0, -1.0;
  r01 << -0.5, 0.75, 0.25, 0.0;
  m.R = {{r00, r01}};
  if (channels >= 2) {
    Eigen::MatrixXd r10(2, 2), r11(2, 2);
    r10 << -0.3, 0.8, 0.1, -0.6;
    r11 << 0.9, -0.2, -0.75, 0.4;
    m.R.push_back({r10, r11});
  }
  for (int c = 2; c < channels; ++c) {
    // extra channels: shifted copies of channel 0, kept inside [-1,1]
    Eigen::MatrixXd a = m.R[0][0] * (0.5 + 0.1 * c);
    Eigen::MatrixXd b = m.R[0][1] * (0.4 - 0.1 * c);
    m.R.push_back({a, b});
  }
  m.rho0.resize(2);
  m.rho0 << 0.6, 0.4;
  env.validate();
  return env;
}

// Two-agent collaborative variant: joint action space 2x2, one reward
// channel per agent.
inline denpg::EnvSpec canonical_tiny_two_agent() {
  denpg::EnvSpec env = denpg::make_random_tiny(2, 4, 2, 0xc0ffee, 0.9, 3);
  env.tiny.agent_actions = {2, 2};
  env.validate();
  return env;
}

inline denpg::Policy tabular_for(const denpg::EnvSpec& env) {
  const auto layout = env.action_layout();
  if (layout.size() == 1) return denpg::Policy::tabular(env.num_states(), layout[0]);
  std::vector<denpg::Policy> blocks;
  for (int m : layout) blocks.push_back(denpg::Policy::tabular(env.num_states(), m));
  return denpg::Policy::factorized(blocks);
}

// Test-side value oracle: explicit nested sums over the tiny MDP tree,
// independent of enumerate_trajectories and exact_grad.
inline double oracle_value(const denpg::EnvSpec& env, const denpg::Policy& pol, int channel = 0) {
  const auto& m = env.tiny;
  const auto layout = env.action_layout();
  double value = 0.0;
  auto walk = [&](auto&& self, int s, int h, double prob, double disc, double ret) -> void {
    if (h == env.horizon) {
      value += prob * ret;
      return;
    }
    denpg::State st;
    st.id = s;
    st.x = Eigen::VectorXd::Zero(m.num_states);
    st.x[s] = 1.0;
    for (int aj = 0; aj < m.num_actions; ++aj) {
      denpg::Action act;
      act.discrete.resize(static_cast<int>(layout.size()));
      int rem = aj;
      for (int b = static_cast<int>(layout.size()) - 1; b >= 0; --b) {
        act.discrete[b] = rem % layout[static_cast<std::size_t>(b)];
        rem /= layout[static_cast<std::size_t>(b)];
      }
      const double pa = std::exp(pol.log_prob(st, act));
      for (int s2 = 0; s2 < m.num_states; ++s2) {
        const double pt = m.P[s](aj, s2);
        if (pt <= 0.0) continue;
        self(self, s2, h + 1, prob * pa * pt, disc * env.gamma,
             ret + disc * m.R[static_cast<std::size_t>(channel)][s](aj, s2));
      }
    }
  };
  for (int s0 = 0; s0 < m.num_states; ++s0)
    if (m.rho0[s0] > 0.0) walk(walk, s0, 0, m.rho0[s0], 1.0, 0.0);
  return value;
}

inline bool same_trajectory(const denpg::Trajectory& a, const denpg::Trajectory& b) {
  if (a.horizon != b.horizon || a.states.size() != b.states.size()) return false;
  for (std::size_t i = 0; i < a.states.size(); ++i) {
    if (a.states[i].id != b.states[i].id) return false;
    if (a.states[i].x.size() != b.states[i].x.size() || !(a.states[i].x.array() == b.states[i].x.array()).all()) return false;
  }
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    if (a.actions[i].discrete.size() != b.actions[i].discrete.size()) return false;
    if ((a.actions[i].discrete.array() != b.actions[i].discrete.array()).any()) return false;
  }
  return (a.rewards.array() == b.rewards.array()).all();
}

}  // namespace fixtures
