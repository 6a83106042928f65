// SPDX-License-Identifier: Apache-2.0
#pragma once

// Symbolic scene world: scenes of 2-5 attributed objects in a row, templated
// one- and two-hop questions with unique ground truth, ground-truth and noisy
// observer semantics, captions, declarative rationales and their conversion
// into two-turn dialogues, and gold trajectories for imitation.

#include <algorithm>
#include <array>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/errors.hpp"
#include "immo/rng.hpp"
#include "immo/vocab.hpp"

namespace immo {

struct ObjectSpec {
  Shape shape{};
  Color color{};
  Size size{};
  int position = 0;
  bool operator==(const ObjectSpec&) const = default;
};

struct Scene {
  std::string id;
  std::vector<ObjectSpec> objects;

  /// Object at a given left-to-right position, or nullptr.
  const ObjectSpec* at(int position) const {
    for (const auto& o : objects)
      if (o.position == position) return &o;
    return nullptr;
  }
  int count(Shape s) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                          [s](const ObjectSpec& o) { return o.shape == s; }));
  }
  int count(Color c) const {
    return static_cast<int>(std::count_if(objects.begin(), objects.end(),
                                          [c](const ObjectSpec& o) { return o.color == c; }));
  }
  /// The unique object of a shape, or nullptr when absent or repeated.
  const ObjectSpec* unique(Shape s) const {
    if (count(s) != 1) return nullptr;
    for (const auto& o : objects)
      if (o.shape == s) return &o;
    return nullptr;
  }
  const ObjectSpec* unique(Color c) const {
    if (count(c) != 1) return nullptr;
    for (const auto& o : objects)
      if (o.color == c) return &o;
    return nullptr;
  }
  bool operator==(const Scene&) const = default;
};

/// Throws InvalidArgument when the scene violates its invariants.
inline void validate_scene(const Scene& scene) {
  const int n = static_cast<int>(scene.objects.size());
  if (n < kMinObjects || n > kMaxObjects)
    throw InvalidArgument("scene must hold 2..5 objects, got " + std::to_string(n));
  std::array<bool, kMaxObjects> seen{};
  for (const auto& o : scene.objects) {
    if (o.position < 0 || o.position >= n || seen[static_cast<std::size_t>(o.position)])
      throw InvalidArgument("scene positions must form 0..n-1");
    seen[static_cast<std::size_t>(o.position)] = true;
  }
}

struct Problem {
  TemplateId template_id{};
  Shape slot{};
  std::string surface;
  TokenId ground_truth = 0;
  int hops = 1;
  bool operator==(const Problem&) const = default;
};

inline Problem make_problem(TemplateId t, Shape slot, TokenId ground_truth) {
  return {t, slot, template_surface(t, slot), ground_truth, template_hops(t)};
}

// ---------------------------------------------------------------------------
// Generation

inline Scene generate_scene(Rng& rng, int min_objects = kMinObjects,
                            int max_objects = kMaxObjects) {
  if (min_objects < kMinObjects || max_objects > kMaxObjects || min_objects > max_objects)
    throw InvalidArgument("object range must satisfy 2 <= min <= max <= 5");
  Scene scene;
  std::ostringstream id;
  id << "s" << std::hex << rng.next_u64();
  scene.id = id.str();
  const int n = rng.between(min_objects, max_objects);
  for (int p = 0; p < n; ++p) {
    ObjectSpec o;
    o.shape = static_cast<Shape>(rng.below(kNumShapes));
    o.color = static_cast<Color>(rng.below(kNumColors));
    o.size = static_cast<Size>(rng.below(kNumSizes));
    o.position = p;
    scene.objects.push_back(o);
  }
  return scene;
}

/// Left neighbour of the unique object of shape `s` when the two-hop
/// templates can be instantiated on it: `s` unique, not leftmost, and the
/// neighbour's shape unique too.
inline const ObjectSpec* two_hop_referent(const Scene& scene, Shape s) {
  const ObjectSpec* x = scene.unique(s);
  if (!x || x->position == 0) return nullptr;
  const ObjectSpec* y = scene.at(x->position - 1);
  if (!y || scene.count(y->shape) != 1) return nullptr;
  return y;
}

/// Ground truth of (template, slot) on a scene, or nullopt when the template
/// cannot be instantiated unambiguously.
inline std::optional<TokenId> instantiate(const Scene& scene, TemplateId t, Shape slot) {
  switch (t) {
    case TemplateId::ColorOf:
      if (auto* o = scene.unique(slot)) return token_of(o->color);
      return std::nullopt;
    case TemplateId::SizeOf:
      if (auto* o = scene.unique(slot)) return token_of(o->size);
      return std::nullopt;
    case TemplateId::CountOf: return count_token(scene.count(slot));
    case TemplateId::ColorLeftOf:
      if (auto* y = two_hop_referent(scene, slot)) return token_of(y->color);
      return std::nullopt;
    case TemplateId::SizeLeftOf:
      if (auto* y = two_hop_referent(scene, slot)) return token_of(y->size);
      return std::nullopt;
  }
  return std::nullopt;
}

/// All (template, slot) pairs instantiable on the scene, grouped by template.
inline std::array<std::vector<Shape>, kNumTemplates> valid_slots(const Scene& scene) {
  std::array<std::vector<Shape>, kNumTemplates> out;
  for (int t = 0; t < kNumTemplates; ++t)
    for (int s = 0; s < kNumShapes; ++s)
      if (instantiate(scene, static_cast<TemplateId>(t), static_cast<Shape>(s)))
        out[static_cast<std::size_t>(t)].push_back(static_cast<Shape>(s));
  return out;
}

/// Template drawn uniformly among instantiable templates, then slot uniformly
/// among its valid fillers.
inline Problem generate_problem(const Scene& scene, Rng& rng) {
  validate_scene(scene);
  const auto slots = valid_slots(scene);
  std::vector<int> templates;
  for (int t = 0; t < kNumTemplates; ++t)
    if (!slots[static_cast<std::size_t>(t)].empty()) templates.push_back(t);
  if (templates.empty()) throw NoValidProblem("no template instantiates on scene " + scene.id);
  const int t = templates[rng.below(templates.size())];
  const auto& choices = slots[static_cast<std::size_t>(t)];
  const Shape slot = choices[rng.below(choices.size())];
  const auto tid = static_cast<TemplateId>(t);
  return make_problem(tid, slot, *instantiate(scene, tid, slot));
}

// ---------------------------------------------------------------------------
// Observer semantics

inline TokenId oracle_answer(const Scene& scene, QueryAction q) {
  const auto shape = static_cast<Shape>(q.slot);
  switch (q.kind) {
    case QueryKind::ColorOf:
      if (auto* o = scene.unique(shape)) return token_of(o->color);
      return kNoneToken;
    case QueryKind::ShapeOf:
      if (auto* o = scene.unique(static_cast<Color>(q.slot))) return token_of(o->shape);
      return kNoneToken;
    case QueryKind::LeftOf:
      if (auto* o = scene.unique(shape); o && o->position > 0) return token_of(scene.at(o->position - 1)->shape);
      return kNoneToken;
    case QueryKind::SizeOf:
      if (auto* o = scene.unique(shape)) return token_of(o->size);
      return kNoneToken;
    case QueryKind::Count: return count_token(scene.count(shape));
  }
  return kNoneToken;
}

/// Symmetric noise channel: with probability epsilon replace `token` by a
/// uniformly drawn different token of the query's answer vocabulary.
inline TokenId corrupt(TokenId token, QueryAction q, double epsilon, Rng& rng) {
  if (epsilon < 0.0 || epsilon > 1.0) throw InvalidArgument("epsilon must lie in [0, 1]");
  if (epsilon == 0.0 || !rng.bernoulli(epsilon)) return token;
  const auto vocab = answer_vocab(q.kind);
  std::vector<TokenId> wrong;
  for (TokenId t : vocab)
    if (t != token) wrong.push_back(t);
  return wrong[rng.below(wrong.size())];
}

inline TokenId noisy_answer(const Scene& scene, QueryAction q, double epsilon, Rng& rng) {
  return corrupt(oracle_answer(scene, q), q, epsilon, rng);
}

/// Probability that the noisy observer emits `answer` for query q when the
/// true answer is `truth`.
inline double channel_probability(TokenId answer, TokenId truth, QueryAction q, double epsilon) {
  const auto vocab = answer_vocab(q.kind);
  if (answer == truth) return 1.0 - epsilon;
  if (std::find(vocab.begin(), vocab.end(), answer) == vocab.end()) return 0.0;
  return epsilon / static_cast<double>(vocab.size() - 1);
}

/// Caption naming only the leftmost object.
inline std::string caption(const Scene& scene) {
  validate_scene(scene);
  const ObjectSpec* first = scene.at(0);
  return "a scene with " + std::to_string(scene.objects.size()) + " objects including a " +
         std::string{name(first->color)} + " " + std::string{name(first->shape)};
}

/// What the caption reveals: object count and the leftmost object's shape/colour.
struct CaptionInfo {
  int num_objects = 0;
  Shape shape{};
  Color color{};
  bool operator==(const CaptionInfo&) const = default;
};

inline std::optional<CaptionInfo> parse_caption(std::string_view text) {
  std::istringstream in{std::string{text}};
  std::string a, scene, with, objects, including, art, color, shape;
  int n = 0;
  if (!(in >> a >> scene >> with >> n >> objects >> including >> art >> color >> shape)) return std::nullopt;
  if (a != "a" || scene != "scene" || with != "with" || objects != "objects" || including != "including")
    return std::nullopt;
  auto c = parse_color(color);
  auto s = parse_shape(shape);
  if (!c || !s || n < kMinObjects || n > kMaxObjects) return std::nullopt;
  return CaptionInfo{n, *s, *c};
}

// ---------------------------------------------------------------------------
// Rationales

struct DialogueTurn {
  QueryAction query;
  TokenId answer = 0;
  bool operator==(const DialogueTurn&) const = default;
};

struct GoldDialogue {
  std::vector<DialogueTurn> turns;
  TokenId final_answer = 0;
  bool operator==(const GoldDialogue&) const = default;
};

struct RationaleRecord {
  Scene scene;
  Problem problem;
  std::string rationale;
  std::optional<GoldDialogue> gold_dialogue;
};

namespace detail {

inline std::string count_sentence(Shape s, int k) {
  if (k == 1) return "There is 1 " + std::string{name(s)} + ".";
  return "There are " + std::to_string(k) + " " + std::string{name(s)} + "s.";
}

inline Shape next_shape(Shape s) { return static_cast<Shape>((static_cast<int>(s) + 1) % kNumShapes); }

}  // namespace detail

/// Declarative two-sentence rationale for a problem, in the order a solver
/// would establish the facts. One-hop problems state the key fact followed
/// by a side fact.
inline std::string generate_rationale(const Scene& scene, const Problem& p) {
  const std::string x{name(p.slot)};
  switch (p.template_id) {
    case TemplateId::ColorOf:
    case TemplateId::SizeOf: {
      const ObjectSpec* o = scene.unique(p.slot);
      if (!o) throw InvalidArgument("problem does not fit scene");
      const auto attr = p.template_id == TemplateId::ColorOf ? name(o->color) : name(o->size);
      return "The " + x + " is " + std::string{attr} + ". " + detail::count_sentence(p.slot, 1);
    }
    case TemplateId::CountOf: {
      const Shape other = detail::next_shape(p.slot);
      return detail::count_sentence(p.slot, scene.count(p.slot)) + " " +
             detail::count_sentence(other, scene.count(other));
    }
    case TemplateId::ColorLeftOf:
    case TemplateId::SizeLeftOf: {
      const ObjectSpec* y = two_hop_referent(scene, p.slot);
      if (!y) throw InvalidArgument("problem does not fit scene");
      const std::string ys{name(y->shape)};
      const auto attr = p.template_id == TemplateId::ColorLeftOf ? name(y->color) : name(y->size);
      return "The object left of the " + x + " is the " + ys + ". The " + ys + " is " +
             std::string{attr} + ".";
    }
  }
  return {};
}

namespace detail {

inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == '.') {
      auto b = cur.find_first_not_of(' ');
      if (b != std::string::npos) out.push_back(cur.substr(b));
      else if (!cur.empty()) out.emplace_back();
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (cur.find_first_not_of(' ') != std::string::npos) out.push_back("<unterminated>");
  return out;
}

inline std::vector<std::string> words(std::string_view s) {
  std::istringstream in{std::string{s}};
  std::vector<std::string> w;
  for (std::string t; in >> t;) w.push_back(t);
  return w;
}

inline std::optional<Shape> parse_plural_shape(std::string_view w) {
  if (w.empty() || w.back() != 's') return std::nullopt;
  return parse_shape(w.substr(0, w.size() - 1));
}

/// One declarative sentence to the (query, answer) pair it asserts.
inline std::optional<DialogueTurn> parse_fact(const std::string& sentence) {
  const auto w = words(sentence);
  // "The X is C" / "The X is S"
  if (w.size() == 4 && w[0] == "The" && w[2] == "is") {
    auto x = parse_shape(w[1]);
    if (!x) return std::nullopt;
    if (auto c = parse_color(w[3])) return DialogueTurn{ask_color_of(*x), token_of(*c)};
    if (auto s = parse_size(w[3])) return DialogueTurn{ask_size_of(*x), token_of(*s)};
    return std::nullopt;
  }
  // "The object left of the X is the Y"
  if (w.size() == 9 && w[0] == "The" && w[1] == "object" && w[2] == "left" && w[3] == "of" &&
      w[4] == "the" && w[6] == "is" && w[7] == "the") {
    auto x = parse_shape(w[5]);
    auto y = parse_shape(w[8]);
    if (x && y) return DialogueTurn{ask_left_of(*x), token_of(*y)};
    return std::nullopt;
  }
  // "The C object is the X"
  if (w.size() == 6 && w[0] == "The" && w[2] == "object" && w[3] == "is" && w[4] == "the") {
    auto c = parse_color(w[1]);
    auto x = parse_shape(w[5]);
    if (c && x) return DialogueTurn{ask_shape_of(*c), token_of(*x)};
    return std::nullopt;
  }
  // "There is 1 X" / "There are k Xs"
  if (w.size() == 4 && w[0] == "There") {
    if (w[1] == "is" && w[2] == "1") {
      if (auto x = parse_shape(w[3])) return DialogueTurn{ask_count(*x), count_token(1)};
      return std::nullopt;
    }
    if (w[1] == "are" && w[2].size() == 1 && w[2][0] >= '0' && w[2][0] <= '5' && w[2] != "1") {
      if (auto x = parse_plural_shape(w[3])) return DialogueTurn{ask_count(*x), count_token(w[2][0] - '0')};
    }
  }
  return std::nullopt;
}

inline std::optional<TokenId> lookup(const std::vector<DialogueTurn>& facts, QueryAction q) {
  for (const auto& f : facts)
    if (f.query == q) return f.answer;
  return std::nullopt;
}

}  // namespace detail

/// Answer to the problem entailed by a set of observed facts, if any.
inline std::optional<TokenId> solve_from_facts(const Problem& p, const std::vector<DialogueTurn>& facts) {
  auto known = [&](QueryAction q) -> std::optional<TokenId> {
    auto a = detail::lookup(facts, q);
    if (a && *a == kNoneToken) return std::nullopt;
    return a;
  };
  switch (p.template_id) {
    case TemplateId::ColorOf: return known(ask_color_of(p.slot));
    case TemplateId::SizeOf: return known(ask_size_of(p.slot));
    case TemplateId::CountOf: return known(ask_count(p.slot));
    case TemplateId::ColorLeftOf:
    case TemplateId::SizeLeftOf: {
      auto y = known(ask_left_of(p.slot));
      if (!y || *y < token_of(Shape::Circle) || *y > token_of(Shape::Triangle)) return std::nullopt;
      const auto ys = static_cast<Shape>(*y - token_of(Shape::Circle));
      return known(p.template_id == TemplateId::ColorLeftOf ? ask_color_of(ys) : ask_size_of(ys));
    }
  }
  return std::nullopt;
}

/// Exhaustive check that some sequence of at most `max_queries` oracle
/// queries entails the problem's ground truth.
inline bool solvable_within(const Scene& scene, const Problem& p, int max_queries) {
  std::vector<DialogueTurn> facts;
  auto search = [&](auto&& self, int depth) -> bool {
    if (auto a = solve_from_facts(p, facts); a && *a == p.ground_truth) return true;
    if (depth == max_queries) return false;
    for (int id = 0; id < kNumQueries; ++id) {
      const auto q = QueryAction::from_id(id);
      facts.push_back({q, oracle_answer(scene, q)});
      const bool ok = self(self, depth + 1);
      facts.pop_back();
      if (ok) return true;
    }
    return false;
  };
  return search(search, 0);
}

/// Rule-based conversion of a declarative rationale into exactly two
/// (query, answer) pairs, kept in sentence order, plus the final answer
/// derived from those facts for the record's problem.
inline RationaleRecord convert_rationale(RationaleRecord record) {
  const auto sentences = detail::split_sentences(record.rationale);
  if (sentences.size() != 2)
    throw UnparseableRationale("expected two sentences, got " + std::to_string(sentences.size()));
  GoldDialogue dialogue;
  for (const auto& s : sentences) {
    auto fact = detail::parse_fact(s);
    if (!fact) throw UnparseableRationale("sentence out of grammar: '" + s + "'");
    dialogue.turns.push_back(*fact);
  }
  const auto answer = solve_from_facts(record.problem, dialogue.turns);
  if (!answer) throw UnparseableRationale("rationale does not determine the answer");
  dialogue.final_answer = *answer;
  record.gold_dialogue = std::move(dialogue);
  return record;
}

/// True iff every dialogue answer equals the scene oracle's answer.
inline bool oracle_consistent(const Scene& scene, const GoldDialogue& d) {
  return std::all_of(d.turns.begin(), d.turns.end(),
                     [&](const DialogueTurn& t) { return oracle_answer(scene, t.query) == t.answer; });
}

// ---------------------------------------------------------------------------
// Gold trajectories in the reasoner's action space: ids [0, 15) are queries,
// [15, 30) are final-answer tokens.

inline constexpr int kReasonerActions = kNumQueries + kNumTokens;
inline constexpr int reasoner_query_action(QueryAction q) { return q.id(); }
inline constexpr int reasoner_answer_action(TokenId t) { return kNumQueries + t; }

enum class Role { Observer, Reasoner };

inline std::string_view name(Role r) { return r == Role::Observer ? "observer" : "reasoner"; }

struct GoldStep {
  Role role;
  int action_id;
  bool operator==(const GoldStep&) const = default;
};

/// Minimal query sequence (length = hops) then the correct final answer.
inline std::vector<GoldStep> gold_trajectory(const Scene& scene, const Problem& p) {
  std::vector<GoldStep> out;
  auto query = [&](QueryAction q) { out.push_back({Role::Reasoner, reasoner_query_action(q)}); };
  switch (p.template_id) {
    case TemplateId::ColorOf: query(ask_color_of(p.slot)); break;
    case TemplateId::SizeOf: query(ask_size_of(p.slot)); break;
    case TemplateId::CountOf: query(ask_count(p.slot)); break;
    case TemplateId::ColorLeftOf:
    case TemplateId::SizeLeftOf: {
      const ObjectSpec* y = two_hop_referent(scene, p.slot);
      if (!y) throw InvalidArgument("problem does not fit scene");
      query(ask_left_of(p.slot));
      query(p.template_id == TemplateId::ColorLeftOf ? ask_color_of(y->shape) : ask_size_of(y->shape));
      break;
    }
  }
  out.push_back({Role::Reasoner, reasoner_answer_action(p.ground_truth)});
  return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects)
    objs.push_back({{"shape", name(o.shape)}, {"color", name(o.color)}, {"size", name(o.size)},
                    {"position", o.position}});
  return {{"id", s.id}, {"objects", objs}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene s;
    s.id = j.at("id").get<std::string>();
    for (const auto& o : j.at("objects")) {
      auto sh = parse_shape(o.at("shape").get<std::string>());
      auto co = parse_color(o.at("color").get<std::string>());
      auto sz = parse_size(o.at("size").get<std::string>());
      if (!sh || !co || !sz) throw FormatError("unknown object attribute");
      s.objects.push_back({*sh, *co, *sz, o.at("position").get<int>()});
    }
    validate_scene(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string{"scene: "} + e.what());
  }
}

inline nlohmann::json to_json(const Problem& p) {
  return {{"template_id", name(p.template_id)},
          {"slots", nlohmann::json::array({name(p.slot)})},
          {"surface", p.surface},
          {"ground_truth", token_name(p.ground_truth)},
          {"hops", p.hops}};
}

inline Problem problem_from_json(const nlohmann::json& j) {
  try {
    auto t = parse_template(j.at("template_id").get<std::string>());
    const auto& slots = j.at("slots");
    if (!t || slots.size() != 1) throw FormatError("bad problem template or slots");
    auto s = parse_shape(slots[0].get<std::string>());
    auto g = parse_token(j.at("ground_truth").get<std::string>());
    if (!s || !g) throw FormatError("bad problem slot or ground truth");
    Problem p = make_problem(*t, *s, *g);
    if (j.contains("surface") && j["surface"].get<std::string>() != p.surface)
      throw FormatError("problem surface does not match template");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string{"problem: "} + e.what());
  }
}

inline nlohmann::json to_json(const GoldDialogue& d) {
  nlohmann::json turns = nlohmann::json::array();
  for (const auto& t : d.turns)
    turns.push_back({{"query", query_surface(t.query)}, {"answer", token_name(t.answer)}});
  return {{"turns", turns}, {"final_answer", token_name(d.final_answer)}};
}

inline GoldDialogue gold_dialogue_from_json(const nlohmann::json& j) {
  try {
    GoldDialogue d;
    for (const auto& t : j.at("turns")) {
      auto q = parse_query(t.at("query").get<std::string>());
      auto a = parse_token(t.at("answer").get<std::string>());
      if (!q || !a) throw FormatError("bad dialogue turn");
      d.turns.push_back({*q, *a});
    }
    auto f = parse_token(j.at("final_answer").get<std::string>());
    if (!f) throw FormatError("bad final answer");
    d.final_answer = *f;
    return d;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string{"gold_dialogue: "} + e.what());
  }
}

/// One dataset line.
inline nlohmann::json to_json(const RationaleRecord& r) {
  nlohmann::json j{{"scene", to_json(r.scene)}, {"problem", to_json(r.problem)}, {"rationale", r.rationale}};
  j["gold_dialogue"] = r.gold_dialogue ? to_json(*r.gold_dialogue) : nlohmann::json(nullptr);
  return j;
}

inline RationaleRecord record_from_json(const nlohmann::json& j) {
  RationaleRecord r;
  r.scene = scene_from_json(j.at("scene"));
  r.problem = problem_from_json(j.at("problem"));
  r.rationale = j.value("rationale", std::string{});
  if (j.contains("gold_dialogue") && !j["gold_dialogue"].is_null())
    r.gold_dialogue = gold_dialogue_from_json(j["gold_dialogue"]);
  return r;
}

/// Scene + problem + rationale, drawn until a problem instantiates.
inline RationaleRecord generate_record(Rng& rng) {
  for (;;) {
    Scene scene = generate_scene(rng);
    try {
      Problem p = generate_problem(scene, rng);
      std::string rationale = generate_rationale(scene, p);
      return {std::move(scene), std::move(p), std::move(rationale), std::nullopt};
    } catch (const NoValidProblem&) {
    }
  }
}

}  // namespace immo
