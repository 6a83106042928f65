// SPDX-License-Identifier: Apache-2.0
#pragma once

// Exact best-achievable accuracy of a reasoner that sees the problem, the
// caption and t noisy oracle answers. Scenes sharing (template, slot,
// caption) form a group; inside a group, scenes are merged into profiles
// (all 15 oracle answers plus the ground truth), which is all a strategy can
// ever learn about them. The optimum over deterministic query trees is then
// an expectimax over unnormalized posterior weights, with the symmetric
// channel marginalized analytically.

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "immo/errors.hpp"
#include "immo/sceneworld.hpp"
#include "immo/training.hpp"

namespace immo {

inline constexpr long kCeilingEvaluationCap = 1'000'000;

struct CeilingProfile {
  std::array<TokenId, kNumQueries> answers{};
  TokenId truth = 0;
  double weight = 0.0;
};

struct CeilingGroup {
  TemplateId template_id{};
  Shape slot{};
  CaptionInfo caption;
  double weight = 0.0;
  std::vector<CeilingProfile> profiles;
};

struct CeilingResult {
  double ceiling = 0.0;
  std::array<double, kNumTemplates> per_template{};
  std::array<double, kNumTemplates> template_weight{};
  long evaluations = 0;
};

namespace detail {

inline int group_index(TemplateId t, Shape slot, const CaptionInfo& c) {
  return ((((static_cast<int>(t) * kNumShapes + static_cast<int>(slot)) * (kMaxObjects - kMinObjects + 1) +
            (c.num_objects - kMinObjects)) * kNumShapes + static_cast<int>(c.shape)) * kNumColors) +
         static_cast<int>(c.color);
}
inline constexpr int kNumGroups = kNumTemplates * kNumShapes * (kMaxObjects - kMinObjects + 1) * kNumShapes * kNumColors;

class GroupAccumulator {
 public:
  GroupAccumulator() : maps_(kNumGroups) {}

  /// Adds every problem of `scene` with its generation probability scaled by w.
  void add_scene(const Scene& scene, double w) {
    const auto slots = valid_slots(scene);
    int ntemplates = 0;
    for (const auto& s : slots) ntemplates += s.empty() ? 0 : 1;
    if (ntemplates == 0) return;
    const std::uint64_t answers = answer_code(scene);
    const CaptionInfo c = caption_of(scene);
    for (int t = 0; t < kNumTemplates; ++t) {
      const auto& ss = slots[static_cast<std::size_t>(t)];
      for (Shape slot : ss) {
        const auto tid = static_cast<TemplateId>(t);
        add(tid, slot, c, answers, *instantiate(scene, tid, slot), w / ntemplates / static_cast<double>(ss.size()));
      }
    }
  }

  void add(TemplateId t, Shape slot, const CaptionInfo& c, std::uint64_t answers, TokenId truth, double w) {
    maps_[static_cast<std::size_t>(group_index(t, slot, c))][(answers << 4) | static_cast<std::uint64_t>(truth)] += w;
  }

  static std::uint64_t answer_code(const Scene& scene) {
    std::uint64_t code = 0;
    for (int q = 0; q < kNumQueries; ++q)
      code |= static_cast<std::uint64_t>(oracle_answer(scene, QueryAction::from_id(q))) << (4 * q);
    return code;
  }

  static CaptionInfo caption_of(const Scene& scene) {
    const ObjectSpec* first = scene.at(0);
    return {static_cast<int>(scene.objects.size()), first->shape, first->color};
  }

  std::vector<CeilingGroup> groups() const {
    std::vector<CeilingGroup> out;
    for (int g = 0; g < kNumGroups; ++g) {
      const auto& m = maps_[static_cast<std::size_t>(g)];
      if (m.empty()) continue;
      CeilingGroup grp;
      int rest = g;
      const int color = rest % kNumColors;
      rest /= kNumColors;
      const int shape = rest % kNumShapes;
      rest /= kNumShapes;
      const int count = rest % (kMaxObjects - kMinObjects + 1);
      rest /= (kMaxObjects - kMinObjects + 1);
      grp.slot = static_cast<Shape>(rest % kNumShapes);
      grp.template_id = static_cast<TemplateId>(rest / kNumShapes);
      grp.caption = {count + kMinObjects, static_cast<Shape>(shape), static_cast<Color>(color)};
      std::vector<std::pair<std::uint64_t, double>> sorted(m.begin(), m.end());
      std::sort(sorted.begin(), sorted.end());
      for (const auto& [key, w] : sorted) {
        CeilingProfile p;
        p.truth = static_cast<TokenId>(key & 0xF);
        const std::uint64_t a = key >> 4;
        for (int q = 0; q < kNumQueries; ++q) p.answers[static_cast<std::size_t>(q)] = static_cast<TokenId>((a >> (4 * q)) & 0xF);
        p.weight = w;
        grp.weight += w;
        grp.profiles.push_back(p);
      }
      out.push_back(std::move(grp));
    }
    return out;
  }

 private:
  std::vector<std::unordered_map<std::uint64_t, double>> maps_;
};

/// Index of each token inside a query kind's answer vocabulary (-1 if absent).
inline std::array<std::array<int, kNumTokens>, kNumQueryKinds> vocab_index() {
  std::array<std::array<int, kNumTokens>, kNumQueryKinds> idx{};
  for (int k = 0; k < kNumQueryKinds; ++k) {
    idx[static_cast<std::size_t>(k)].fill(-1);
    const auto v = answer_vocab(static_cast<QueryKind>(k));
    for (std::size_t i = 0; i < v.size(); ++i) idx[static_cast<std::size_t>(k)][static_cast<std::size_t>(v[i])] = static_cast<int>(i);
  }
  return idx;
}

class Expectimax {
 public:
  Expectimax(const CeilingGroup& g, double epsilon) : g_(g), eps_(epsilon), vidx_(vocab_index()) {
    const auto vocab = template_answer_vocab(g.template_id);
    finals_.assign(vocab.begin(), vocab.end());
  }

  long evaluations = 0;

  double value(const std::vector<double>& w, int turns) {
    if (turns == 0) return best_final(w);
    evaluations += kNumQueries;
    double best = 0.0;
    if (turns == 1) {
      for (int q = 0; q < kNumQueries; ++q) best = std::max(best, last_query_value(w, QueryAction::from_id(q)));
      return best;
    }
    std::vector<double> next(w.size());
    for (int qi = 0; qi < kNumQueries; ++qi) {
      const auto q = QueryAction::from_id(qi);
      const auto vocab = answer_vocab(q.kind);
      double v = 0.0;
      for (TokenId a : vocab) {
        double mass = 0.0;
        for (std::size_t p = 0; p < w.size(); ++p) {
          next[p] = w[p] * channel_probability(a, g_.profiles[p].answers[static_cast<std::size_t>(qi)], q, eps_);
          mass += next[p];
        }
        if (mass > 0.0) v += value(next, turns - 1);
      }
      best = std::max(best, v);
    }
    return best;
  }

 private:
  double best_final(const std::vector<double>& w) const {
    double best = 0.0;
    for (TokenId f : finals_) {
      double s = 0.0;
      for (std::size_t p = 0; p < w.size(); ++p)
        if (g_.profiles[p].truth == f) s += w[p];
      best = std::max(best, s);
    }
    return best;
  }

  // sum_a max_g sum_f M[a][f] T[g][f], with T[g][f] the posterior mass of
  // truth g and oracle answer f.
  double last_query_value(const std::vector<double>& w, QueryAction q) const {
    const auto vocab = answer_vocab(q.kind);
    const auto& idx = vidx_[static_cast<std::size_t>(q.kind)];
    const std::size_t nv = vocab.size();
    std::vector<double> T(finals_.size() * nv, 0.0);
    for (std::size_t p = 0; p < w.size(); ++p) {
      if (w[p] == 0.0) continue;
      const auto& prof = g_.profiles[p];
      const auto gi = static_cast<std::size_t>(std::find(finals_.begin(), finals_.end(), prof.truth) - finals_.begin());
      if (gi == finals_.size()) continue;
      const int f = idx[static_cast<std::size_t>(prof.answers[static_cast<std::size_t>(q.id())])];
      T[gi * nv + static_cast<std::size_t>(f)] += w[p];
    }
    double total = 0.0;
    for (std::size_t a = 0; a < nv; ++a) {
      double best = 0.0;
      for (std::size_t gi = 0; gi < finals_.size(); ++gi) {
        double s = 0.0;
        for (std::size_t f = 0; f < nv; ++f) s += channel_probability(vocab[a], vocab[f], q, eps_) * T[gi * nv + f];
        best = std::max(best, s);
      }
      total += best;
    }
    return total;
  }

  const CeilingGroup& g_;
  double eps_;
  std::array<std::array<int, kNumTokens>, kNumQueryKinds> vidx_;
  std::vector<TokenId> finals_;
};

}  // namespace detail

/// Exact problem distribution of generate_scene + generate_problem: n
/// uniform on [min_objects, max_objects], attributes uniform and independent.
inline std::vector<CeilingGroup> population_groups(int min_objects = kMinObjects, int max_objects = kMaxObjects) {
  if (min_objects < kMinObjects || max_objects > kMaxObjects || min_objects > max_objects)
    throw InvalidArgument("object range must satisfy 2 <= min <= max <= 5");
  detail::GroupAccumulator acc;
  constexpr int kCombos = kNumShapes * kNumColors * kNumSizes;
  const double pn = 1.0 / (max_objects - min_objects + 1);
  for (int n = min_objects; n <= max_objects; ++n) {
    long total = 1;
    for (int i = 0; i < n; ++i) total *= kCombos;
    const double w = pn / static_cast<double>(total);
    Scene scene;
    scene.objects.resize(static_cast<std::size_t>(n));
    for (long code = 0; code < total; ++code) {
      long c = code;
      for (int p = 0; p < n; ++p) {
        auto& o = scene.objects[static_cast<std::size_t>(p)];
        const int k = static_cast<int>(c % kCombos);
        c /= kCombos;
        o.shape = static_cast<Shape>(k / (kNumColors * kNumSizes));
        o.color = static_cast<Color>((k / kNumSizes) % kNumColors);
        o.size = static_cast<Size>(k % kNumSizes);
        o.position = p;
      }
      acc.add_scene(scene, w);
    }
  }
  return acc.groups();
}

/// Uniform weights over a finite list of problems.
inline std::vector<CeilingGroup> empirical_groups(const std::vector<SceneProblem>& problems) {
  if (problems.empty()) throw EmptyDataset("no problems for the ceiling");
  detail::GroupAccumulator acc;
  const double w = 1.0 / static_cast<double>(problems.size());
  for (const auto& sp : problems)
    acc.add(sp.problem.template_id, sp.problem.slot, detail::GroupAccumulator::caption_of(sp.scene),
            detail::GroupAccumulator::answer_code(sp.scene), sp.problem.ground_truth, w);
  return acc.groups();
}

/// Upper bound on query evaluations: each query node scores all 15 queries
/// and branches over at most 63 (query, answer) pairs.
inline long ceiling_evaluation_bound(std::size_t groups, int turns) {
  long per_group = 0, nodes = 1;
  int branching = 0;
  for (int k = 0; k < kNumQueryKinds; ++k) branching += 3 * static_cast<int>(answer_vocab(static_cast<QueryKind>(k)).size());
  for (int d = 0; d < turns; ++d) {
    per_group += nodes * kNumQueries;
    if (per_group > kCeilingEvaluationCap) return kCeilingEvaluationCap + 1;
    nodes *= branching;
  }
  const long total = per_group * static_cast<long>(groups);
  return per_group > 0 && total / per_group != static_cast<long>(groups) ? kCeilingEvaluationCap + 1 : total;
}

inline CeilingResult brute_force_ceiling(const std::vector<CeilingGroup>& groups, int turns, double epsilon) {
  if (turns < 0) throw InvalidArgument("turns must be non-negative");
  if (epsilon < 0.0 || epsilon > 1.0) throw InvalidArgument("epsilon must lie in [0, 1]");
  if (groups.empty()) throw EmptyDataset("no problem groups");
  const long bound = ceiling_evaluation_bound(groups.size(), turns);
  if (bound > kCeilingEvaluationCap)
    throw CeilingTooLarge("t=" + std::to_string(turns) + " needs more than 10^6 strategy evaluations");
  CeilingResult res;
  double total_weight = 0.0;
  for (const auto& g : groups) {
    detail::Expectimax ex(g, epsilon);
    std::vector<double> w;
    for (const auto& p : g.profiles) w.push_back(p.weight);
    const double v = ex.value(w, turns);
    res.evaluations += ex.evaluations;
    const auto t = static_cast<std::size_t>(g.template_id);
    res.per_template[t] += v;
    res.template_weight[t] += g.weight;
    res.ceiling += v;
    total_weight += g.weight;
  }
  res.ceiling /= total_weight;
  for (std::size_t t = 0; t < kNumTemplates; ++t)
    if (res.template_weight[t] > 0.0) res.per_template[t] /= res.template_weight[t];
  for (auto& w : res.template_weight) w /= total_weight;
  return res;
}

inline CeilingResult brute_force_ceiling(const std::vector<SceneProblem>& problems, int turns, double epsilon) {
  return brute_force_ceiling(empirical_groups(problems), turns, epsilon);
}

}  // namespace immo
