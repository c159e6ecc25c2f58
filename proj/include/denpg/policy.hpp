#pragma once

#include <Eigen/Dense>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "denpg/errors.hpp"
#include "denpg/rng.hpp"

namespace denpg {

enum class PolicyFamily { tabular_softmax, linear_softmax, mlp_softmax, mlp_gaussian, factorized_product };

inline std::string to_string(PolicyFamily f) {
  switch (f) {
    case PolicyFamily::tabular_softmax: return "tabular_softmax";
    case PolicyFamily::linear_softmax: return "linear_softmax";
    case PolicyFamily::mlp_softmax: return "mlp_softmax";
    case PolicyFamily::mlp_gaussian: return "mlp_gaussian";
    case PolicyFamily::factorized_product: return "factorized_product";
  }
  return "?";
}

inline PolicyFamily policy_family_from_string(const std::string& s) {
  if (s == "tabular_softmax") return PolicyFamily::tabular_softmax;
  if (s == "linear_softmax") return PolicyFamily::linear_softmax;
  if (s == "mlp_softmax") return PolicyFamily::mlp_softmax;
  if (s == "mlp_gaussian") return PolicyFamily::mlp_gaussian;
  if (s == "factorized_product") return PolicyFamily::factorized_product;
  throw ValidationError("unknown policy family '" + s + "'");
}

// State encoding as seen by policies: a discrete index (when the environment
// is enumerable) plus a feature vector. Discrete environments fill both.
// Absorbing padding states carry no policy decision: the sampler never
// consults the policy there and estimators treat the step as a point mass
// (zero score, unit likelihood ratio).
struct State {
  int id = -1;
  Eigen::VectorXd x;
  bool absorbing = false;
};

// Joint action: one discrete id per policy block (length 1 for single
// policies), or a continuous vector for the Gaussian head.
struct Action {
  Eigen::VectorXi discrete;
  Eigen::VectorXd continuous;

  static Action of(int a) {
    Action act;
    act.discrete.resize(1);
    act.discrete[0] = a;
    return act;
  }
};

namespace detail {

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace detail

// Differentiable stochastic policy over a flat parameter vector theta.
// The handle is immutable per evaluation; reparameterize with set_params or
// with_params. Gradients are hand-coded over the fixed one-hidden-layer
// shapes, no general autodiff.
class Policy {
 public:
  Policy() = default;

  static Policy tabular(int num_states, int num_actions) {
    Policy p;
    p.family_ = PolicyFamily::tabular_softmax;
    p.num_states_ = num_states;
    p.num_actions_ = num_actions;
    p.theta_ = Eigen::VectorXd::Zero(num_states * num_actions);
    return p;
  }

  static Policy linear(int state_dim, int num_actions) {
    Policy p;
    p.family_ = PolicyFamily::linear_softmax;
    p.state_dim_ = state_dim;
    p.num_actions_ = num_actions;
    p.theta_ = Eigen::VectorXd::Zero(num_actions * state_dim);
    return p;
  }

  static Policy mlp(int state_dim, int hidden, int num_actions) {
    Policy p;
    p.family_ = PolicyFamily::mlp_softmax;
    p.state_dim_ = state_dim;
    p.hidden_ = hidden;
    p.num_actions_ = num_actions;
    p.theta_ = Eigen::VectorXd::Zero(hidden * state_dim + hidden + num_actions * hidden + num_actions);
    return p;
  }

  static Policy gaussian(int state_dim, int hidden, int action_dim, double sigma_floor = 0.05) {
    Policy p;
    p.family_ = PolicyFamily::mlp_gaussian;
    p.state_dim_ = state_dim;
    p.hidden_ = hidden;
    p.action_dim_ = action_dim;
    p.sigma_floor_ = sigma_floor;
    const int out = 2 * action_dim;
    p.theta_ = Eigen::VectorXd::Zero(hidden * state_dim + hidden + out * hidden + out);
    return p;
  }

  static Policy factorized(std::vector<Policy> blocks) {
    Policy p;
    p.family_ = PolicyFamily::factorized_product;
    int d = 0;
    for (auto& b : blocks) {
      if (b.family_ == PolicyFamily::factorized_product) throw ValidationError("factorized blocks cannot nest");
      if (b.family_ == PolicyFamily::mlp_gaussian) throw ValidationError("factorized blocks must be discrete");
      p.offsets_.push_back(d);
      d += b.dim();
    }
    p.children_ = std::move(blocks);
    p.theta_.setZero(d);
    for (std::size_t i = 0; i < p.children_.size(); ++i)
      p.theta_.segment(p.offsets_[i], p.children_[i].dim()) = p.children_[i].theta_;
    return p;
  }

  PolicyFamily family() const { return family_; }
  int dim() const { return static_cast<int>(theta_.size()); }
  int state_dim() const { return state_dim_; }
  int num_states() const { return num_states_; }
  int hidden() const { return hidden_; }
  int action_dim() const { return action_dim_; }
  double sigma_floor() const { return sigma_floor_; }

  // Number of discrete action slots an Action must carry.
  int action_blocks() const { return family_ == PolicyFamily::factorized_product ? static_cast<int>(children_.size()) : 1; }

  int num_actions(int block = 0) const {
    if (family_ == PolicyFamily::factorized_product) return children_.at(block).num_actions_;
    return num_actions_;
  }

  std::vector<int> block_dims() const {
    if (family_ != PolicyFamily::factorized_product) return {dim()};
    std::vector<int> dims;
    for (const auto& c : children_) dims.push_back(c.dim());
    return dims;
  }

  const std::vector<Policy>& blocks() const { return children_; }

  const Eigen::VectorXd& params() const { return theta_; }

  void set_params(const Eigen::VectorXd& theta) {
    if (theta.size() != theta_.size()) throw DimensionMismatch("parameter vector has wrong length");
    theta_ = theta;
  }

  Policy with_params(const Eigen::VectorXd& theta) const {
    Policy p = *this;
    p.set_params(theta);
    return p;
  }

  double log_prob(const State& s, const Action& a) const {
    switch (family_) {
      case PolicyFamily::factorized_product: {
        if (a.discrete.size() != action_blocks()) throw SpaceMismatch("joint action arity mismatch");
        double lp = 0.0;
        for (std::size_t i = 0; i < children_.size(); ++i)
          lp += children_[i].leaf_log_prob(theta_.segment(offsets_[i], children_[i].dim()), s, a.discrete[static_cast<int>(i)]);
        return lp;
      }
      case PolicyFamily::mlp_gaussian:
        return gaussian_log_prob(theta_, s, a.continuous);
      default:
        if (a.discrete.size() != 1) throw SpaceMismatch("expected a single discrete action");
        return leaf_log_prob(theta_, s, a.discrete[0]);
    }
  }

  // Gradient of log_prob with respect to theta; for the factorized product,
  // the concatenation of per-block scores.
  Eigen::VectorXd score(const State& s, const Action& a) const {
    switch (family_) {
      case PolicyFamily::factorized_product: {
        if (a.discrete.size() != action_blocks()) throw SpaceMismatch("joint action arity mismatch");
        Eigen::VectorXd g = Eigen::VectorXd::Zero(dim());
        for (std::size_t i = 0; i < children_.size(); ++i)
          g.segment(offsets_[i], children_[i].dim()) =
              children_[i].leaf_score(theta_.segment(offsets_[i], children_[i].dim()), s, a.discrete[static_cast<int>(i)]);
        return g;
      }
      case PolicyFamily::mlp_gaussian:
        return gaussian_score(theta_, s, a.continuous);
      default:
        if (a.discrete.size() != 1) throw SpaceMismatch("expected a single discrete action");
        return leaf_score(theta_, s, a.discrete[0]);
    }
  }

  // Draws from the exact categorical/Gaussian law. Consumes the stream in
  // block order for factorized policies.
  Action sample_action(const State& s, RngStream& rng) const {
    Action a;
    switch (family_) {
      case PolicyFamily::factorized_product: {
        a.discrete.resize(action_blocks());
        for (std::size_t i = 0; i < children_.size(); ++i) {
          const Eigen::VectorXd p = children_[i].leaf_probs(theta_.segment(offsets_[i], children_[i].dim()), s);
          a.discrete[static_cast<int>(i)] = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
        }
        return a;
      }
      case PolicyFamily::mlp_gaussian: {
        Eigen::VectorXd mu, sigma;
        gaussian_head(s, &mu, &sigma);
        a.continuous.resize(action_dim_);
        for (int j = 0; j < action_dim_; ++j) a.continuous[j] = mu[j] + sigma[j] * rng.normal();
        return a;
      }
      default: {
        const Eigen::VectorXd p = leaf_probs(theta_, s);
        a.discrete.resize(1);
        a.discrete[0] = rng.categorical(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
        return a;
      }
    }
  }

  // pi(.|s) for discrete families (block b of a factorized product).
  Eigen::VectorXd action_probs(const State& s, int block = 0) const {
    if (family_ == PolicyFamily::factorized_product)
      return children_.at(block).leaf_probs(theta_.segment(offsets_[block], children_[block].dim()), s);
    if (family_ == PolicyFamily::mlp_gaussian) throw SpaceMismatch("gaussian head has no action probabilities");
    return leaf_probs(theta_, s);
  }

  void gaussian_head(const State& s, Eigen::VectorXd* mu, Eigen::VectorXd* sigma) const {
    if (family_ != PolicyFamily::mlp_gaussian) throw SpaceMismatch("not a gaussian policy");
    Eigen::VectorXd pre, h, out;
    mlp_forward(theta_, s.x, 2 * action_dim_, &pre, &h, &out);
    *mu = out.head(action_dim_);
    sigma->resize(action_dim_);
    for (int j = 0; j < action_dim_; ++j) (*sigma)[j] = detail::softplus(out[action_dim_ + j]) + sigma_floor_;
  }

  void save(std::ostream& os) const {
    os << "denpg-policy v1\n";
    write_arch(os);
    os << "dim " << dim() << "\n";
    os << "data\n";
    for (Eigen::Index i = 0; i < theta_.size(); ++i) {
      const std::uint64_t bits = std::bit_cast<std::uint64_t>(theta_[i]);
      char bytes[8];
      for (int b = 0; b < 8; ++b) bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
      os.write(bytes, 8);
    }
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open " + path + " for writing");
    save(os);
  }

  static Policy load(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != "denpg-policy v1") throw ParseError("bad policy file header");
    Policy p = read_arch(is);
    if (!std::getline(is, line)) throw ParseError("missing dim line");
    std::istringstream ds(line);
    std::string key;
    long d = -1;
    if (!(ds >> key >> d) || key != "dim" || d != p.dim()) throw ParseError("dim line does not match architecture");
    if (!std::getline(is, line) || line != "data") throw ParseError("missing data marker");
    Eigen::VectorXd theta(d);
    for (long i = 0; i < d; ++i) {
      char bytes[8];
      if (!is.read(bytes, 8)) throw ParseError("truncated parameter payload");
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b])) << (8 * b);
      theta[i] = std::bit_cast<double>(bits);
    }
    p.set_params(theta);
    return p;
  }

  static Policy load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError("cannot open policy file " + path);
    return load(is);
  }

 private:
  using ParamView = Eigen::Ref<const Eigen::VectorXd>;

  Eigen::VectorXd leaf_logits(const ParamView& th, const State& s) const {
    switch (family_) {
      case PolicyFamily::tabular_softmax:
        if (s.id < 0 || s.id >= num_states_) throw SpaceMismatch("tabular policy needs a state index in range");
        return th.segment(s.id * num_actions_, num_actions_);
      case PolicyFamily::linear_softmax: {
        if (s.x.size() != state_dim_) throw SpaceMismatch("feature length mismatch");
        Eigen::Map<const Eigen::MatrixXd> w(th.data(), num_actions_, state_dim_);
        return w * s.x;
      }
      case PolicyFamily::mlp_softmax: {
        Eigen::VectorXd pre, h, logits;
        mlp_forward(th, s.x, num_actions_, &pre, &h, &logits);
        return logits;
      }
      default:
        throw SpaceMismatch("not a discrete leaf family");
    }
  }

  Eigen::VectorXd leaf_probs(const ParamView& th, const State& s) const {
    Eigen::VectorXd logits = leaf_logits(th, s);
    const double mx = logits.maxCoeff();
    Eigen::VectorXd z = (logits.array() - mx).exp();
    return z / z.sum();
  }

  double leaf_log_prob(const ParamView& th, const State& s, int a) const {
    Eigen::VectorXd logits = leaf_logits(th, s);
    if (a < 0 || a >= logits.size()) throw SpaceMismatch("action id out of range");
    const double mx = logits.maxCoeff();
    return logits[a] - mx - std::log((logits.array() - mx).exp().sum());
  }

  // d log pi / d logits = e_a - pi(.|s), pushed through the family layout.
  Eigen::VectorXd leaf_score(const ParamView& th, const State& s, int a) const {
    switch (family_) {
      case PolicyFamily::tabular_softmax: {
        Eigen::VectorXd g = Eigen::VectorXd::Zero(th.size());
        Eigen::VectorXd p = leaf_probs(th, s);
        g.segment(s.id * num_actions_, num_actions_) = -p;
        g[s.id * num_actions_ + a] += 1.0;
        return g;
      }
      case PolicyFamily::linear_softmax: {
        Eigen::VectorXd dlogits = -leaf_probs(th, s);
        dlogits[a] += 1.0;
        Eigen::VectorXd g(th.size());
        Eigen::Map<Eigen::MatrixXd>(g.data(), num_actions_, state_dim_) = dlogits * s.x.transpose();
        return g;
      }
      case PolicyFamily::mlp_softmax: {
        Eigen::VectorXd pre, h, logits;
        mlp_forward(th, s.x, num_actions_, &pre, &h, &logits);
        const double mx = logits.maxCoeff();
        Eigen::VectorXd p = (logits.array() - mx).exp();
        p /= p.sum();
        Eigen::VectorXd dlogits = -p;
        dlogits[a] += 1.0;
        return mlp_backward(th, s.x, num_actions_, pre, h, dlogits);
      }
      default:
        throw SpaceMismatch("not a discrete leaf family");
    }
  }

  // layout: [W1 (k x m), b1 (k), W2 (out x k), b2 (out)], matrices column-major
  void mlp_forward(const ParamView& th, const Eigen::VectorXd& x, int out_dim, Eigen::VectorXd* pre,
                   Eigen::VectorXd* h, Eigen::VectorXd* out) const {
    if (x.size() != state_dim_) throw SpaceMismatch("feature length mismatch");
    const int m = state_dim_, k = hidden_;
    Eigen::Map<const Eigen::MatrixXd> w1(th.data(), k, m);
    Eigen::Map<const Eigen::VectorXd> b1(th.data() + k * m, k);
    Eigen::Map<const Eigen::MatrixXd> w2(th.data() + k * m + k, out_dim, k);
    Eigen::Map<const Eigen::VectorXd> b2(th.data() + k * m + k + out_dim * k, out_dim);
    *pre = w1 * x + b1;
    *h = pre->cwiseMax(0.0);
    *out = w2 * (*h) + b2;
  }

  Eigen::VectorXd mlp_backward(const ParamView& th, const Eigen::VectorXd& x, int out_dim,
                               const Eigen::VectorXd& pre, const Eigen::VectorXd& h,
                               const Eigen::VectorXd& dout) const {
    const int m = state_dim_, k = hidden_;
    Eigen::Map<const Eigen::MatrixXd> w2(th.data() + k * m + k, out_dim, k);
    Eigen::VectorXd g(th.size());
    Eigen::Map<Eigen::MatrixXd> gw1(g.data(), k, m);
    Eigen::Map<Eigen::VectorXd> gb1(g.data() + k * m, k);
    Eigen::Map<Eigen::MatrixXd> gw2(g.data() + k * m + k, out_dim, k);
    Eigen::Map<Eigen::VectorXd> gb2(g.data() + k * m + k + out_dim * k, out_dim);
    gw2 = dout * h.transpose();
    gb2 = dout;
    Eigen::VectorXd dh = w2.transpose() * dout;
    Eigen::VectorXd dpre = (pre.array() > 0.0).select(dh, 0.0);
    gw1 = dpre * x.transpose();
    gb1 = dpre;
    return g;
  }

  double gaussian_log_prob(const ParamView& th, const State& s, const Eigen::VectorXd& u) const {
    if (u.size() != action_dim_) throw SpaceMismatch("continuous action dimension mismatch");
    Eigen::VectorXd pre, h, out;
    mlp_forward(th, s.x, 2 * action_dim_, &pre, &h, &out);
    double lp = 0.0;
    for (int j = 0; j < action_dim_; ++j) {
      const double mu = out[j];
      const double sigma = detail::softplus(out[action_dim_ + j]) + sigma_floor_;
      const double z = (u[j] - mu) / sigma;
      lp += -0.5 * std::log(2.0 * M_PI) - std::log(sigma) - 0.5 * z * z;
    }
    return lp;
  }

  Eigen::VectorXd gaussian_score(const ParamView& th, const State& s, const Eigen::VectorXd& u) const {
    if (u.size() != action_dim_) throw SpaceMismatch("continuous action dimension mismatch");
    Eigen::VectorXd pre, h, out;
    mlp_forward(th, s.x, 2 * action_dim_, &pre, &h, &out);
    Eigen::VectorXd dout(2 * action_dim_);
    for (int j = 0; j < action_dim_; ++j) {
      const double mu = out[j];
      const double sraw = out[action_dim_ + j];
      const double sigma = detail::softplus(sraw) + sigma_floor_;
      const double diff = u[j] - mu;
      dout[j] = diff / (sigma * sigma);
      const double dsigma = diff * diff / (sigma * sigma * sigma) - 1.0 / sigma;
      dout[action_dim_ + j] = dsigma * detail::sigmoid(sraw);
    }
    return mlp_backward(th, s.x, 2 * action_dim_, pre, h, dout);
  }

  void write_arch(std::ostream& os) const {
    switch (family_) {
      case PolicyFamily::tabular_softmax:
        os << "arch tabular_softmax " << num_states_ << " " << num_actions_ << "\n";
        break;
      case PolicyFamily::linear_softmax:
        os << "arch linear_softmax " << state_dim_ << " " << num_actions_ << "\n";
        break;
      case PolicyFamily::mlp_softmax:
        os << "arch mlp_softmax " << state_dim_ << " " << hidden_ << " " << num_actions_ << "\n";
        break;
      case PolicyFamily::mlp_gaussian:
        os << "arch mlp_gaussian " << state_dim_ << " " << hidden_ << " " << action_dim_ << " " << sigma_floor_ << "\n";
        break;
      case PolicyFamily::factorized_product:
        os << "arch factorized_product " << children_.size() << "\n";
        for (const auto& c : children_) c.write_arch(os);
        break;
    }
  }

  static Policy read_arch(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ParseError("missing arch line");
    std::istringstream ls(line);
    std::string key, fam;
    if (!(ls >> key >> fam) || key != "arch") throw ParseError("bad arch line: " + line);
    if (fam == "tabular_softmax") {
      int s, a;
      if (!(ls >> s >> a)) throw ParseError("bad arch line: " + line);
      return tabular(s, a);
    }
    if (fam == "linear_softmax") {
      int m, a;
      if (!(ls >> m >> a)) throw ParseError("bad arch line: " + line);
      return linear(m, a);
    }
    if (fam == "mlp_softmax") {
      int m, k, a;
      if (!(ls >> m >> k >> a)) throw ParseError("bad arch line: " + line);
      return mlp(m, k, a);
    }
    if (fam == "mlp_gaussian") {
      int m, k, ad;
      double fl;
      if (!(ls >> m >> k >> ad >> fl)) throw ParseError("bad arch line: " + line);
      return gaussian(m, k, ad, fl);
    }
    if (fam == "factorized_product") {
      int nb;
      if (!(ls >> nb)) throw ParseError("bad arch line: " + line);
      std::vector<Policy> blocks;
      for (int i = 0; i < nb; ++i) blocks.push_back(read_arch(is));
      return factorized(std::move(blocks));
    }
    throw ParseError("unknown family in arch line: " + line);
  }

  PolicyFamily family_ = PolicyFamily::tabular_softmax;
  int state_dim_ = 0;
  int num_states_ = 0;
  int num_actions_ = 0;
  int hidden_ = 0;
  int action_dim_ = 0;
  double sigma_floor_ = 0.05;
  std::vector<Policy> children_;
  std::vector<int> offsets_;
  Eigen::VectorXd theta_;
};

inline Eigen::VectorXd uniform_params(int d, RngStream& rng, double half_range = 0.05) {
  Eigen::VectorXd theta(d);
  for (int i = 0; i < d; ++i) theta[i] = rng.uniform(-half_range, half_range);
  return theta;
}

struct ScoreBoundReport {
  double g_hat = 0.0;     // max ||score||^2 over the sample
  std::size_t worst = 0;  // index attaining the max
  std::size_t count = 0;
};

// Empirical surrogate for the score bound constant: reports the largest
// squared score norm seen on a sample of state-action pairs. Diagnostic only.
inline ScoreBoundReport score_bound_check(const Policy& policy, std::span<const State> states,
                                          std::span<const Action> actions) {
  if (states.size() != actions.size()) throw DimensionMismatch("state/action sample sizes differ");
  ScoreBoundReport rep;
  rep.count = states.size();
  for (std::size_t i = 0; i < states.size(); ++i) {
    const double q = policy.score(states[i], actions[i]).squaredNorm();
    if (q > rep.g_hat) {
      rep.g_hat = q;
      rep.worst = i;
    }
  }
  return rep;
}

}  // namespace denpg
