// SPDX-License-Identifier: Apache-2.0
#pragma once

// Discrete-action softmax policies over a fixed action space, either tabular
// (state key -> logit vector) or linear (weight matrix over sparse features).
// Provides normalized distributions, sampling with log-probabilities, KL
// divergence, analytic score gradients, immutable snapshots and JSON
// checkpoints with a content digest.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"

#include "immo/errors.hpp"
#include "immo/rng.hpp"

namespace immo {

inline constexpr double kProbabilityFloor = 1e-12;
inline constexpr int kCheckpointFormatVersion = 1;

/// Sparse feature vector with a declared dimension. Indices are unique.
struct SparseVector {
  int dim = 0;
  std::vector<std::pair<int, double>> entries;

  void add(int index, double value) {
    if (index < 0 || index >= dim) throw DimensionMismatch("feature index out of range");
    for (auto& [i, v] : entries)
      if (i == index) {
        v += value;
        return;
      }
    entries.emplace_back(index, value);
  }
  /// Sorted by index, zeros dropped.
  SparseVector canonical() const {
    SparseVector out{dim, {}};
    for (const auto& e : entries)
      if (e.second != 0.0) out.entries.push_back(e);
    std::sort(out.entries.begin(), out.entries.end());
    return out;
  }
  std::vector<double> dense() const {
    std::vector<double> d(static_cast<std::size_t>(dim), 0.0);
    for (const auto& [i, v] : entries) d[static_cast<std::size_t>(i)] += v;
    return d;
  }
  bool operator==(const SparseVector& o) const {
    return dim == o.dim && canonical().entries == o.canonical().entries;
  }
};

/// Key built from the canonical nonzero entries, used by tabular policies.
inline std::string state_key(const SparseVector& v) {
  std::string key;
  char buf[64];
  for (const auto& [i, x] : v.canonical().entries) {
    if (x == 1.0) std::snprintf(buf, sizeof buf, "%d;", i);
    else std::snprintf(buf, sizeof buf, "%d:%.17g;", i, x);
    key += buf;
  }
  return key;
}

/// What a policy conditions on: a key (tabular) and features (linear).
struct PolicyState {
  std::string key;
  SparseVector features;

  static PolicyState from_features(SparseVector f) {
    PolicyState s;
    s.key = state_key(f);
    s.features = std::move(f);
    return s;
  }
  static PolicyState from_key(std::string key) { return PolicyState{std::move(key), {}}; }
};

/// Allowed action ids; empty means every action is allowed.
using ActionMask = std::vector<int>;

struct ActionSpace {
  std::vector<std::string> surfaces;

  int size() const { return static_cast<int>(surfaces.size()); }
  void validate() const {
    if (size() < 2) throw InvalidArgument("action space needs at least two actions");
    auto sorted = surfaces;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw InvalidArgument("action surfaces must be unique");
  }
  bool operator==(const ActionSpace&) const = default;
};

enum class Parameterization { Tabular, Linear };

inline std::string_view name(Parameterization p) {
  return p == Parameterization::Tabular ? "tabular" : "linear";
}

class SoftmaxPolicy {
 public:
  static SoftmaxPolicy tabular(ActionSpace space) {
    space.validate();
    SoftmaxPolicy p;
    p.space_ = std::move(space);
    p.kind_ = Parameterization::Tabular;
    return p;
  }
  static SoftmaxPolicy linear(ActionSpace space, int feature_dim) {
    space.validate();
    if (feature_dim <= 0) throw InvalidArgument("feature dimension must be positive");
    SoftmaxPolicy p;
    p.space_ = std::move(space);
    p.kind_ = Parameterization::Linear;
    p.feature_dim_ = feature_dim;
    p.weights_.assign(static_cast<std::size_t>(p.space_.size()) * static_cast<std::size_t>(feature_dim), 0.0);
    return p;
  }

  const ActionSpace& action_space() const { return space_; }
  int num_actions() const { return space_.size(); }
  Parameterization parameterization() const { return kind_; }
  int feature_dim() const { return feature_dim_; }
  double temperature() const { return temperature_; }
  void set_temperature(double t) {
    if (!(t > 0.0) || !std::isfinite(t)) throw InvalidArgument("temperature must be positive");
    temperature_ = t;
  }

  /// Raw (untempered) logits; unseen tabular states are all-zero.
  std::vector<double> logits(const PolicyState& s) const {
    const auto k = static_cast<std::size_t>(num_actions());
    if (kind_ == Parameterization::Tabular) {
      auto it = table_.find(s.key);
      return it == table_.end() ? std::vector<double>(k, 0.0) : it->second;
    }
    if (s.features.dim != feature_dim_)
      throw DimensionMismatch("state has " + std::to_string(s.features.dim) + " features, policy expects " +
                              std::to_string(feature_dim_));
    std::vector<double> z(k, 0.0);
    for (std::size_t a = 0; a < k; ++a) {
      const double* row = &weights_[a * static_cast<std::size_t>(feature_dim_)];
      for (const auto& [i, v] : s.features.entries) z[a] += row[i] * v;
    }
    return z;
  }

  // Parameter access. Tabular entries are created on write.
  std::vector<double>& table_row(const std::string& key) {
    auto [it, inserted] = table_.try_emplace(key);
    if (inserted) it->second.assign(static_cast<std::size_t>(num_actions()), 0.0);
    return it->second;
  }
  const std::unordered_map<std::string, std::vector<double>>& table() const { return table_; }
  double& weight(int action, int feature) {
    return weights_.at(static_cast<std::size_t>(action) * static_cast<std::size_t>(feature_dim_) +
                       static_cast<std::size_t>(feature));
  }
  double weight(int action, int feature) const {
    return weights_.at(static_cast<std::size_t>(action) * static_cast<std::size_t>(feature_dim_) +
                       static_cast<std::size_t>(feature));
  }
  const std::vector<double>& weights() const { return weights_; }

 private:
  ActionSpace space_;
  Parameterization kind_ = Parameterization::Tabular;
  double temperature_ = 1.0;
  std::unordered_map<std::string, std::vector<double>> table_;
  int feature_dim_ = 0;
  std::vector<double> weights_;
};

namespace detail {

inline std::vector<char> allowed_flags(int k, const ActionMask& mask) {
  std::vector<char> allowed(static_cast<std::size_t>(k), mask.empty() ? 1 : 0);
  for (int a : mask) {
    if (a < 0 || a >= k) throw DimensionMismatch("mask action out of range");
    allowed[static_cast<std::size_t>(a)] = 1;
  }
  return allowed;
}

}  // namespace detail

/// Softmax with max-logit subtraction. Masked actions get probability 0.
inline std::vector<double> action_distribution(const SoftmaxPolicy& policy, const PolicyState& state,
                                               const ActionMask& mask = {}) {
  const auto z = policy.logits(state);
  const auto allowed = detail::allowed_flags(policy.num_actions(), mask);
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < z.size(); ++a)
    if (allowed[a]) zmax = std::max(zmax, z[a] / policy.temperature());
  std::vector<double> p(z.size(), 0.0);
  double total = 0.0;
  for (std::size_t a = 0; a < z.size(); ++a)
    if (allowed[a]) total += p[a] = std::exp(z[a] / policy.temperature() - zmax);
  for (double& x : p) x /= total;
  return p;
}

inline double log_prob(const SoftmaxPolicy& policy, const PolicyState& state, int action,
                       const ActionMask& mask = {}) {
  const auto p = action_distribution(policy, state, mask);
  if (action < 0 || action >= static_cast<int>(p.size())) throw DimensionMismatch("action out of range");
  return std::log(p[static_cast<std::size_t>(action)]);
}

struct SampledAction {
  int action = 0;
  double log_prob = 0.0;
};

/// Inverse-CDF draw using one uniform from `rng`.
inline SampledAction sample_action(const SoftmaxPolicy& policy, const PolicyState& state, Rng& rng,
                                   const ActionMask& mask = {}) {
  const auto p = action_distribution(policy, state, mask);
  const double u = rng.uniform();
  double cum = 0.0;
  int chosen = -1;
  for (std::size_t a = 0; a < p.size(); ++a) {
    if (p[a] <= 0.0) continue;
    chosen = static_cast<int>(a);
    cum += p[a];
    if (u < cum) break;
  }
  return {chosen, std::log(p[static_cast<std::size_t>(chosen)])};
}

inline int greedy_action(const SoftmaxPolicy& policy, const PolicyState& state, const ActionMask& mask = {}) {
  const auto p = action_distribution(policy, state, mask);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

/// KL(p || q) = sum p ln(p/q), with 0 ln 0 = 0 and q clamped below at 1e-12.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw DimensionMismatch("kl: vectors differ in length");
  double d = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] <= 0.0) continue;
    d += p[j] * std::log(p[j] / std::max(q[j], kProbabilityFloor));
  }
  return std::max(d, 0.0);
}

/// Gradient with respect to the parameters a state touches. For both
/// parameterizations it factors as coefficients over actions times the
/// state's feature vector (tabular: the state's own logit row).
struct PolicyGradient {
  std::string key;
  SparseVector features;
  std::vector<double> coeffs;  // d/d logit_a, already divided by temperature

  std::vector<double> dense(const SoftmaxPolicy& policy) const {
    if (policy.parameterization() == Parameterization::Tabular) return coeffs;
    std::vector<double> g(static_cast<std::size_t>(policy.num_actions() * policy.feature_dim()), 0.0);
    for (std::size_t a = 0; a < coeffs.size(); ++a)
      for (const auto& [i, v] : features.entries)
        g[a * static_cast<std::size_t>(policy.feature_dim()) + static_cast<std::size_t>(i)] += coeffs[a] * v;
    return g;
  }
};

/// grad log pi(action | state) = (onehot(action) - probs) / T, outer the
/// features for linear policies.
inline PolicyGradient grad_log_prob(const SoftmaxPolicy& policy, const PolicyState& state, int action,
                                    const ActionMask& mask = {}) {
  auto p = action_distribution(policy, state, mask);
  if (action < 0 || action >= static_cast<int>(p.size())) throw DimensionMismatch("action out of range");
  PolicyGradient g{state.key, state.features, std::vector<double>(p.size())};
  for (std::size_t a = 0; a < p.size(); ++a)
    g.coeffs[a] = ((static_cast<int>(a) == action ? 1.0 : 0.0) - p[a]) / policy.temperature();
  return g;
}

/// Gradient of KL(pi(.|s) || ref) with respect to the policy's logits at s:
/// p_a (ln(p_a / q_a) - KL) / T.
inline PolicyGradient grad_kl(const SoftmaxPolicy& policy, const PolicyState& state,
                              const std::vector<double>& reference, const ActionMask& mask = {}) {
  auto p = action_distribution(policy, state, mask);
  const double d = kl(p, reference);
  PolicyGradient g{state.key, state.features, std::vector<double>(p.size(), 0.0)};
  for (std::size_t a = 0; a < p.size(); ++a)
    if (p[a] > 0.0)
      g.coeffs[a] = p[a] * (std::log(p[a] / std::max(reference[a], kProbabilityFloor)) - d) / policy.temperature();
  return g;
}

/// theta += scale * g
inline void apply_gradient(SoftmaxPolicy& policy, const PolicyGradient& g, double scale) {
  if (policy.parameterization() == Parameterization::Tabular) {
    auto& row = policy.table_row(g.key);
    for (std::size_t a = 0; a < row.size(); ++a) row[a] += scale * g.coeffs[a];
    return;
  }
  for (std::size_t a = 0; a < g.coeffs.size(); ++a) {
    if (g.coeffs[a] == 0.0) continue;
    for (const auto& [i, v] : g.features.entries) policy.weight(static_cast<int>(a), i) += scale * g.coeffs[a] * v;
  }
}

// ---------------------------------------------------------------------------
// Checkpoints, digests and snapshots

inline nlohmann::json parameters_json(const SoftmaxPolicy& policy) {
  if (policy.parameterization() == Parameterization::Tabular) {
    std::map<std::string, std::vector<double>> sorted(policy.table().begin(), policy.table().end());
    nlohmann::json table = nlohmann::json::object();
    for (const auto& [k, v] : sorted) table[k] = v;
    return {{"table", table}};
  }
  nlohmann::json nz = nlohmann::json::array();
  for (int a = 0; a < policy.num_actions(); ++a)
    for (int i = 0; i < policy.feature_dim(); ++i)
      if (double w = policy.weight(a, i); w != 0.0) nz.push_back({a, i, w});
  return {{"feature_dim", policy.feature_dim()}, {"nonzero_weights", nz}};
}

/// Hex FNV-1a over the canonical parameter serialization.
inline std::string digest(const SoftmaxPolicy& policy) {
  nlohmann::json canon{{"parameterization", name(policy.parameterization())},
                       {"temperature", policy.temperature()},
                       {"action_space", policy.action_space().surfaces},
                       {"parameters", parameters_json(policy)}};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon.dump())));
  return buf;
}

inline nlohmann::json to_checkpoint(const SoftmaxPolicy& policy) {
  return {{"format_version", kCheckpointFormatVersion},
          {"action_space", policy.action_space().surfaces},
          {"parameterization", name(policy.parameterization())},
          {"temperature", policy.temperature()},
          {"parameters", parameters_json(policy)},
          {"digest", digest(policy)}};
}

inline SoftmaxPolicy from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw FormatError("unsupported checkpoint format version");
    ActionSpace space{j.at("action_space").get<std::vector<std::string>>()};
    const auto kind = j.at("parameterization").get<std::string>();
    const auto& params = j.at("parameters");
    SoftmaxPolicy p;
    if (kind == "tabular") {
      p = SoftmaxPolicy::tabular(space);
      for (const auto& [k, v] : params.at("table").items()) {
        auto row = v.get<std::vector<double>>();
        if (static_cast<int>(row.size()) != p.num_actions()) throw FormatError("logit row has wrong length");
        p.table_row(k) = std::move(row);
      }
    } else if (kind == "linear") {
      p = SoftmaxPolicy::linear(space, params.at("feature_dim").get<int>());
      for (const auto& e : params.at("nonzero_weights")) p.weight(e.at(0).get<int>(), e.at(1).get<int>()) = e.at(2).get<double>();
    } else {
      throw FormatError("unknown parameterization '" + kind + "'");
    }
    p.set_temperature(j.value("temperature", 1.0));
    if (j.contains("digest") && j["digest"].get<std::string>() != digest(p))
      throw FormatError("checkpoint digest mismatch");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string{"checkpoint: "} + e.what());
  }
}

/// Write via a temporary file and rename, so readers never see partial files.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open " + tmp.string() + " for writing");
    out << contents;
    if (!out) throw Error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_checkpoint(const SoftmaxPolicy& policy, const std::filesystem::path& path) {
  write_file_atomic(path, to_checkpoint(policy).dump(1) + "\n");
}

inline SoftmaxPolicy load_checkpoint(const std::filesystem::path& path) {
  try {
    return from_checkpoint(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Frozen copy of a policy plus its digest.
class PolicySnapshot {
 public:
  PolicySnapshot() = default;
  explicit PolicySnapshot(const SoftmaxPolicy& policy)
      : policy_(std::make_shared<const SoftmaxPolicy>(policy)), digest_(immo::digest(policy)) {}

  const SoftmaxPolicy& policy() const { return *policy_; }
  const std::string& digest() const { return digest_; }
  bool empty() const { return !policy_; }

 private:
  std::shared_ptr<const SoftmaxPolicy> policy_;
  std::string digest_;
};

inline PolicySnapshot snapshot(const SoftmaxPolicy& policy) { return PolicySnapshot(policy); }
inline SoftmaxPolicy restore(const PolicySnapshot& s) { return s.policy(); }

}  // namespace immo
