// SPDX-License-Identifier: Apache-2.0
#pragma once

// Fixed-length state encodings for the two roles, and the expansions the
// linear policies are trained on.
//
// Reasoner state (kReasonerFeatureDim):
//   [template one-hot | slot one-hot | caption: object count, leftmost shape,
//    leftmost colour | bag of (query, answer token) counts | completed-turn
//    one-hot | final-decision flag]
//
// Observer state (kObserverFeatureDim):
//   [scene block | query one-hot], where the scene block counts per-object
//   descriptors (shape, colour, size, left neighbour's shape) and one-hot
//   encodes how many objects carry each shape and each colour. Descriptors
//   depend on positions only through the left-neighbour relation, so the
//   order of the object list does not matter.

#include "immo/monologue.hpp"
#include "immo/policy.hpp"
#include "immo/protocol.hpp"
#include "immo/sceneworld.hpp"

namespace immo {

namespace reasoner_layout {
inline constexpr int kTemplate = 0;
inline constexpr int kSlot = kTemplate + kNumTemplates;
inline constexpr int kCaptionCount = kSlot + kNumShapes;
inline constexpr int kCaptionShape = kCaptionCount + (kMaxObjects - kMinObjects + 1);
inline constexpr int kCaptionColor = kCaptionShape + kNumShapes;
inline constexpr int kBag = kCaptionColor + kNumColors;
inline constexpr int kTurn = kBag + kNumQueries * kNumTokens;
inline constexpr int kPhase = kTurn + kMaxTurnsCap + 1;
inline constexpr int kDim = kPhase + 1;
}  // namespace reasoner_layout

inline constexpr int kReasonerFeatureDim = reasoner_layout::kDim;

enum class ReasonerPhase { Query, Final };

inline SparseVector featurize_reasoner_state(const Problem& problem, const InnerMonologue& im,
                                             ReasonerPhase phase = ReasonerPhase::Query) {
  namespace L = reasoner_layout;
  SparseVector x{kReasonerFeatureDim, {}};
  x.add(L::kTemplate + static_cast<int>(problem.template_id), 1.0);
  x.add(L::kSlot + static_cast<int>(problem.slot), 1.0);
  if (auto c = parse_caption(im.caption().text)) {
    x.add(L::kCaptionCount + c->num_objects - kMinObjects, 1.0);
    x.add(L::kCaptionShape + static_cast<int>(c->shape), 1.0);
    x.add(L::kCaptionColor + static_cast<int>(c->color), 1.0);
  }
  for (const auto& t : parsed_turns(im)) x.add(L::kBag + t.query.id() * kNumTokens + t.answer, 1.0);
  x.add(L::kTurn + std::min(im.completed_turns(), kMaxTurnsCap), 1.0);
  if (phase == ReasonerPhase::Final) x.add(L::kPhase, 1.0);
  return x.canonical();
}

namespace observer_layout {
inline constexpr int kDescriptors = kNumShapes * kNumColors * kNumSizes * (kNumShapes + 1);
inline constexpr int kShapeCounts = kDescriptors;
inline constexpr int kColorCounts = kShapeCounts + kNumShapes * (kMaxObjects + 1);
inline constexpr int kSceneBlock = kColorCounts + kNumColors * (kMaxObjects + 1);
inline constexpr int kQuery = kSceneBlock;
inline constexpr int kDim = kQuery + kNumQueries;
}  // namespace observer_layout

inline constexpr int kObserverFeatureDim = observer_layout::kDim;

inline SparseVector featurize_observer_state(const Scene& scene, QueryAction query) {
  namespace L = observer_layout;
  SparseVector x{kObserverFeatureDim, {}};
  for (const auto& o : scene.objects) {
    const ObjectSpec* left = scene.at(o.position - 1);
    const int l = left ? static_cast<int>(left->shape) : kNumShapes;
    const int d = ((static_cast<int>(o.shape) * kNumColors + static_cast<int>(o.color)) * kNumSizes +
                   static_cast<int>(o.size)) * (kNumShapes + 1) + l;
    x.add(d, 1.0);
  }
  for (int s = 0; s < kNumShapes; ++s)
    x.add(L::kShapeCounts + s * (kMaxObjects + 1) + scene.count(static_cast<Shape>(s)), 1.0);
  for (int c = 0; c < kNumColors; ++c)
    x.add(L::kColorCounts + c * (kMaxObjects + 1) + scene.count(static_cast<Color>(c)), 1.0);
  x.add(L::kQuery + query.id(), 1.0);
  return x.canonical();
}

// ---------------------------------------------------------------------------
// Linear-policy expansions. The reasoner's weights are conditioned on the
// problem (template x slot); the observer's on the query.

/// Which reasoner blocks the linear expansion keeps.
struct ReasonerEncoding {
  bool bag_presence = false;  // clip bag counts to {0, 1}
  bool turn_features = true;  // include the completed-turn one-hot
};

namespace reasoner_expansion {
inline constexpr int kContexts = kNumTemplates * kNumShapes;
inline constexpr int kCaptions = (kMaxObjects - kMinObjects + 1) * kNumShapes * kNumColors;
// bias | caption one-hot | bag | bag entries whose answer names the caption's
// shape (x caption colour) or colour (x caption shape) | turn
inline constexpr int kCaption = 1;
inline constexpr int kBag = kCaption + kCaptions;
inline constexpr int kShapeMatch = kBag + kNumQueries * kNumTokens;
inline constexpr int kColorMatch = kShapeMatch + kNumQueries * kNumColors;
inline constexpr int kTurn = kColorMatch + kNumQueries * kNumShapes;
inline constexpr int kBlock = kTurn + kMaxTurnsCap + 1;
inline constexpr int kDim = kContexts * kBlock;
}  // namespace reasoner_expansion

inline constexpr int kReasonerPolicyDim = reasoner_expansion::kDim;

/// Problem-conditioned expansion of a reasoner feature vector: every block
/// is replicated per (template, slot) context and only the active context's
/// copy is non-zero.
inline SparseVector expand_reasoner_features(const SparseVector& x, const ReasonerEncoding& enc = {}) {
  namespace R = reasoner_layout;
  namespace E = reasoner_expansion;
  if (x.dim != kReasonerFeatureDim) throw DimensionMismatch("reasoner feature vector has wrong dimension");
  int tmpl = -1, slot = -1, count = -1, shape = -1, color = -1;
  std::vector<std::pair<int, double>> bag, turn;
  for (const auto& [i, v] : x.entries) {
    if (i < R::kSlot) tmpl = i - R::kTemplate;
    else if (i < R::kCaptionCount) slot = i - R::kSlot;
    else if (i < R::kCaptionShape) count = i - R::kCaptionCount;
    else if (i < R::kCaptionColor) shape = i - R::kCaptionShape;
    else if (i < R::kBag) color = i - R::kCaptionColor;
    else if (i < R::kTurn) bag.emplace_back(i - R::kBag, enc.bag_presence ? 1.0 : v);
    else if (i < R::kPhase) turn.emplace_back(i - R::kTurn, 1.0);
  }
  if (tmpl < 0 || slot < 0) throw InvalidArgument("reasoner features lack template or slot");
  const bool captioned = count >= 0 && shape >= 0 && color >= 0;
  const int base = (tmpl * kNumShapes + slot) * E::kBlock;
  SparseVector out{kReasonerPolicyDim, {}};
  out.entries.emplace_back(base, 1.0);
  if (captioned) out.entries.emplace_back(base + E::kCaption + (count * kNumShapes + shape) * kNumColors + color, 1.0);
  for (const auto& [b, v] : bag) {
    out.entries.emplace_back(base + E::kBag + b, v);
    if (!captioned) continue;
    const int q = b / kNumTokens, a = b % kNumTokens;
    if (a == token_of(static_cast<Shape>(shape))) out.entries.emplace_back(base + E::kShapeMatch + q * kNumColors + color, v);
    if (a == token_of(static_cast<Color>(color))) out.entries.emplace_back(base + E::kColorMatch + q * kNumShapes + shape, v);
  }
  if (enc.turn_features)
    for (const auto& [t, v] : turn) out.entries.emplace_back(base + E::kTurn + t, v);
  return out.canonical();
}

inline constexpr int kObserverBlock = observer_layout::kSceneBlock + 1;
inline constexpr int kObserverPolicyDim = kNumQueries * kObserverBlock;

inline SparseVector expand_observer_features(const SparseVector& x) {
  namespace L = observer_layout;
  if (x.dim != kObserverFeatureDim) throw DimensionMismatch("observer feature vector has wrong dimension");
  int query = -1;
  for (const auto& [i, v] : x.entries)
    if (i >= L::kQuery) query = i - L::kQuery;
  if (query < 0) throw InvalidArgument("observer features lack a query");
  SparseVector out{kObserverPolicyDim, {}};
  const int base = query * kObserverBlock;
  out.entries.emplace_back(base, 1.0);
  for (const auto& [i, v] : x.entries)
    if (i < L::kSceneBlock) out.entries.emplace_back(base + 1 + i, v);
  return out.canonical();
}

// ---------------------------------------------------------------------------
// Action spaces

inline ActionSpace reasoner_action_space() {
  ActionSpace s;
  for (int q = 0; q < kNumQueries; ++q) s.surfaces.push_back(query_surface(QueryAction::from_id(q)));
  for (int t = 0; t < kNumTokens; ++t) s.surfaces.push_back("answer: " + std::string{token_name(t)});
  return s;
}

inline ActionSpace observer_action_space() {
  ActionSpace s;
  for (int t = 0; t < kNumTokens; ++t) s.surfaces.emplace_back(token_name(t));
  return s;
}

inline ActionMask reasoner_query_mask() {
  ActionMask m;
  for (int q = 0; q < kNumQueries; ++q) m.push_back(q);
  return m;
}

inline ActionMask reasoner_final_mask(TemplateId t) {
  ActionMask m;
  for (TokenId tok : template_answer_vocab(t)) m.push_back(reasoner_answer_action(tok));
  return m;
}

inline ActionMask observer_answer_mask(QueryAction q) {
  const auto v = answer_vocab(q.kind);
  return ActionMask(v.begin(), v.end());
}

}  // namespace immo
