// SPDX-License-Identifier: Apache-2.0
#pragma once

// Closed vocabularies of the scene world: object attributes, answer tokens,
// query actions and problem templates. Everything here is constexpr tables
// plus lookups by surface string.

#include <array>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace immo {

enum class Shape : int { Circle = 0, Square = 1, Triangle = 2 };
enum class Color : int { Red = 0, Blue = 1, Green = 2 };
enum class Size : int { Small = 0, Large = 1 };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 3;
inline constexpr int kNumSizes = 2;
inline constexpr int kMaxObjects = 5;
inline constexpr int kMinObjects = 2;

inline constexpr std::array<std::string_view, kNumShapes> kShapeNames{"circle", "square",
                                                                      "triangle"};
inline constexpr std::array<std::string_view, kNumColors> kColorNames{"red", "blue", "green"};
inline constexpr std::array<std::string_view, kNumSizes> kSizeNames{"small", "large"};

inline std::string_view name(Shape s) { return kShapeNames[static_cast<int>(s)]; }
inline std::string_view name(Color c) { return kColorNames[static_cast<int>(c)]; }
inline std::string_view name(Size s) { return kSizeNames[static_cast<int>(s)]; }

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view text,
                               const std::array<std::string_view, N>& names) {
  for (std::size_t i = 0; i < N; ++i)
    if (names[i] == text) return static_cast<Enum>(i);
  return std::nullopt;
}
inline std::optional<Shape> parse_shape(std::string_view t) { return parse_enum<Shape>(t, kShapeNames); }
inline std::optional<Color> parse_color(std::string_view t) { return parse_enum<Color>(t, kColorNames); }
inline std::optional<Size> parse_size(std::string_view t) { return parse_enum<Size>(t, kSizeNames); }

// ---------------------------------------------------------------------------
// Answer tokens. Ids are stable and used as action ids by observer policies.

using TokenId = int;

inline constexpr std::array<std::string_view, 15> kTokenNames{
    "red",   "blue", "green", "circle", "square", "triangle", "small", "large",
    "0",     "1",    "2",     "3",      "4",      "5",        "none"};
inline constexpr int kNumTokens = static_cast<int>(kTokenNames.size());

inline constexpr TokenId token_of(Color c) { return static_cast<int>(c); }
inline constexpr TokenId token_of(Shape s) { return 3 + static_cast<int>(s); }
inline constexpr TokenId token_of(Size s) { return 6 + static_cast<int>(s); }
inline constexpr TokenId count_token(int k) { return 8 + k; }
inline constexpr TokenId kNoneToken = 14;

inline std::string_view token_name(TokenId t) { return kTokenNames.at(static_cast<std::size_t>(t)); }

inline std::optional<TokenId> parse_token(std::string_view text) {
  for (int i = 0; i < kNumTokens; ++i)
    if (kTokenNames[static_cast<std::size_t>(i)] == text) return i;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Query actions: kind x slot. AskShapeOf takes a color slot, all others a shape.

enum class QueryKind : int { ColorOf = 0, ShapeOf = 1, LeftOf = 2, SizeOf = 3, Count = 4 };
inline constexpr int kNumQueryKinds = 5;
inline constexpr int kNumQueries = kNumQueryKinds * 3;

using QueryId = int;

struct QueryAction {
  QueryKind kind;
  int slot;  // Shape or Color index depending on kind

  constexpr QueryId id() const { return static_cast<int>(kind) * 3 + slot; }
  static constexpr QueryAction from_id(QueryId id) { return {static_cast<QueryKind>(id / 3), id % 3}; }
  bool operator==(const QueryAction&) const = default;
};

inline QueryAction ask_color_of(Shape s) { return {QueryKind::ColorOf, static_cast<int>(s)}; }
inline QueryAction ask_shape_of(Color c) { return {QueryKind::ShapeOf, static_cast<int>(c)}; }
inline QueryAction ask_left_of(Shape s) { return {QueryKind::LeftOf, static_cast<int>(s)}; }
inline QueryAction ask_size_of(Shape s) { return {QueryKind::SizeOf, static_cast<int>(s)}; }
inline QueryAction ask_count(Shape s) { return {QueryKind::Count, static_cast<int>(s)}; }

inline std::string query_surface(QueryAction q) {
  const std::string shape{kShapeNames[static_cast<std::size_t>(q.slot)]};
  switch (q.kind) {
    case QueryKind::ColorOf: return "What color is the " + shape + "?";
    case QueryKind::ShapeOf:
      return "What shape is the " + std::string{kColorNames[static_cast<std::size_t>(q.slot)]} +
             " object?";
    case QueryKind::LeftOf: return "What is left of the " + shape + "?";
    case QueryKind::SizeOf: return "What size is the " + shape + "?";
    case QueryKind::Count: return "How many " + shape + "s are there?";
  }
  return {};
}

inline std::optional<QueryAction> parse_query(std::string_view surface) {
  for (int id = 0; id < kNumQueries; ++id) {
    auto q = QueryAction::from_id(id);
    if (query_surface(q) == surface) return q;
  }
  return std::nullopt;
}

inline constexpr std::array<TokenId, 4> kColorVocab{0, 1, 2, kNoneToken};
inline constexpr std::array<TokenId, 4> kShapeVocab{3, 4, 5, kNoneToken};
inline constexpr std::array<TokenId, 3> kSizeVocab{6, 7, kNoneToken};
inline constexpr std::array<TokenId, 6> kCountVocab{8, 9, 10, 11, 12, 13};

/// Fixed answer vocabulary of a query kind.
inline std::span<const TokenId> answer_vocab(QueryKind kind) {
  switch (kind) {
    case QueryKind::ColorOf: return kColorVocab;
    case QueryKind::ShapeOf:
    case QueryKind::LeftOf: return kShapeVocab;
    case QueryKind::SizeOf: return kSizeVocab;
    case QueryKind::Count: return kCountVocab;
  }
  return {};
}

// ---------------------------------------------------------------------------
// Problem templates.

enum class TemplateId : int { ColorOf = 0, SizeOf = 1, CountOf = 2, ColorLeftOf = 3, SizeLeftOf = 4 };
inline constexpr int kNumTemplates = 5;

inline constexpr std::array<std::string_view, kNumTemplates> kTemplateNames{
    "color_of", "size_of", "count_of", "color_left_of", "size_left_of"};

inline std::string_view name(TemplateId t) { return kTemplateNames[static_cast<std::size_t>(t)]; }
inline std::optional<TemplateId> parse_template(std::string_view t) {
  return parse_enum<TemplateId>(t, kTemplateNames);
}

inline int template_hops(TemplateId t) {
  return (t == TemplateId::ColorLeftOf || t == TemplateId::SizeLeftOf) ? 2 : 1;
}

inline constexpr std::array<TokenId, 3> kColorAnswers{0, 1, 2};
inline constexpr std::array<TokenId, 2> kSizeAnswers{6, 7};

/// Tokens a final answer for the template may take.
inline std::span<const TokenId> template_answer_vocab(TemplateId t) {
  switch (t) {
    case TemplateId::ColorOf:
    case TemplateId::ColorLeftOf: return kColorAnswers;
    case TemplateId::SizeOf:
    case TemplateId::SizeLeftOf: return kSizeAnswers;
    case TemplateId::CountOf: return kCountVocab;
  }
  return {};
}

inline std::string template_surface(TemplateId t, Shape slot) {
  const std::string s{name(slot)};
  switch (t) {
    case TemplateId::ColorOf: return "What is the color of the " + s + "?";
    case TemplateId::SizeOf: return "What is the size of the " + s + "?";
    case TemplateId::CountOf: return "How many " + s + "s are there?";
    case TemplateId::ColorLeftOf: return "What is the color of the object left of the " + s + "?";
    case TemplateId::SizeLeftOf: return "What is the size of the object left of the " + s + "?";
  }
  return {};
}

}  // namespace immo
