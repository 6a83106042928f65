// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "immo/errors.hpp"
#include "immo/sceneworld.hpp"

namespace immo {

enum class UtteranceKind { Caption, Query, Answer, FinalAnswer };

inline std::string_view name(UtteranceKind k) {
  switch (k) {
    case UtteranceKind::Caption: return "caption";
    case UtteranceKind::Query: return "query";
    case UtteranceKind::Answer: return "answer";
    case UtteranceKind::FinalAnswer: return "final_answer";
  }
  return {};
}

inline Role speaker_of(UtteranceKind k) {
  return (k == UtteranceKind::Caption || k == UtteranceKind::Answer) ? Role::Observer : Role::Reasoner;
}

struct Utterance {
  Role speaker = Role::Observer;
  UtteranceKind kind = UtteranceKind::Caption;
  std::string text;
  std::optional<int> action_id;

  bool operator==(const Utterance&) const = default;
};

/// Builds an utterance, enforcing the speaker/kind pairing and non-empty text.
inline Utterance make_utterance(UtteranceKind kind, std::string text, std::optional<int> action_id = std::nullopt) {
  if (text.empty()) throw EmptyUtterance(std::string{name(kind)} + " has empty text");
  return {speaker_of(kind), kind, std::move(text), action_id};
}

inline void validate_utterance(const Utterance& u) {
  if (u.text.empty()) throw EmptyUtterance(std::string{name(u.kind)} + " has empty text");
  if (u.speaker != speaker_of(u.kind)) throw InvalidArgument(std::string{name(u.kind)} + " has the wrong speaker");
}

/// Caption followed by strictly alternating Query/Answer entries.
class InnerMonologue {
 public:
  explicit InnerMonologue(Utterance caption) {
    validate_utterance(caption);
    if (caption.kind != UtteranceKind::Caption) throw InvalidArgument("monologue must start with a caption");
    entries_.push_back(std::move(caption));
  }

  const std::vector<Utterance>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const Utterance& caption() const { return entries_.front(); }
  int completed_turns() const { return static_cast<int>((entries_.size() - 1) / 2); }

  /// Returns the extended monologue IM_i = IM_{i-1} + Q_i + A_i.
  InnerMonologue extended(Utterance query, Utterance answer) const {
    validate_utterance(query);
    validate_utterance(answer);
    if (query.kind != UtteranceKind::Query || answer.kind != UtteranceKind::Answer)
      throw InvalidArgument("a turn is one Query followed by one Answer");
    InnerMonologue out = *this;
    out.entries_.push_back(std::move(query));
    out.entries_.push_back(std::move(answer));
    return out;
  }

  bool operator==(const InnerMonologue&) const = default;

 private:
  std::vector<Utterance> entries_;
};

/// Parsed (query, answer) pairs of the monologue; entries whose text is not
/// in the scene-world vocabulary (e.g. free text from a remote model) are
/// skipped.
inline std::vector<DialogueTurn> parsed_turns(const InnerMonologue& im) {
  std::vector<DialogueTurn> out;
  const auto& e = im.entries();
  for (std::size_t i = 1; i + 1 < e.size(); i += 2) {
    auto q = parse_query(e[i].text);
    auto a = parse_token(e[i + 1].text);
    if (q && a) out.push_back({*q, *a});
  }
  return out;
}

inline nlohmann::json to_json(const Utterance& u) {
  return {{"speaker", name(u.speaker)},
          {"kind", name(u.kind)},
          {"text", u.text},
          {"action_id", u.action_id ? nlohmann::json(*u.action_id) : nlohmann::json(nullptr)}};
}

inline Utterance utterance_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  UtteranceKind k;
  if (kind == "caption") k = UtteranceKind::Caption;
  else if (kind == "query") k = UtteranceKind::Query;
  else if (kind == "answer") k = UtteranceKind::Answer;
  else if (kind == "final_answer") k = UtteranceKind::FinalAnswer;
  else throw FormatError("unknown utterance kind '" + kind + "'");
  std::optional<int> id;
  if (j.contains("action_id") && !j["action_id"].is_null()) id = j["action_id"].get<int>();
  Utterance u = make_utterance(k, j.at("text").get<std::string>(), id);
  if (j.contains("speaker") && j["speaker"].get<std::string>() != name(u.speaker))
    throw FormatError("utterance speaker does not match its kind");
  return u;
}

inline nlohmann::json to_json(const InnerMonologue& im) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& u : im.entries()) a.push_back(to_json(u));
  return a;
}

inline InnerMonologue monologue_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty() || j.size() % 2 == 0) throw FormatError("monologue must have odd length >= 1");
  InnerMonologue im(utterance_from_json(j[0]));
  for (std::size_t i = 1; i + 1 < j.size(); i += 2)
    im = im.extended(utterance_from_json(j[i]), utterance_from_json(j[i + 1]));
  return im;
}

}  // namespace immo
