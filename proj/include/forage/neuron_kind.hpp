#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

namespace forage {

/// The closed set of neuron kinds a controller can be built from.
enum class NeuronKind : std::uint8_t {
  Sum,
  Product,
  Divide,
  SumThreshold,
  GreaterThan,
  SignOf,
  Min,
  Max,
  Abs,
  If,
  Interpolate,
  Sin,
  Cos,
  Atan,
  Log,
  Exp,
  Sigmoid,
  Integrate,
  Differentiate,
  Smooth,
  Memory,
  Wave,
  Saw,
  Constant,
};

inline constexpr std::size_t kNeuronKindCount = 24;
inline constexpr std::size_t kNeuronInputs = 3;
inline constexpr std::size_t kNeuronParams = 3;

namespace detail {
struct KindInfo {
  std::string_view name;
  std::size_t arity;  // number of inputs the kind reads
  bool stateful;
};

inline constexpr std::array<KindInfo, kNeuronKindCount> kKindTable{{
    {"Sum", 3, false},          {"Product", 3, false},     {"Divide", 2, false},   {"SumThreshold", 3, false},
    {"GreaterThan", 2, false},  {"SignOf", 2, false},      {"Min", 3, false},      {"Max", 3, false},
    {"Abs", 1, false},          {"If", 3, false},          {"Interpolate", 3, false}, {"Sin", 1, false},
    {"Cos", 1, false},          {"Atan", 1, false},        {"Log", 1, false},      {"Exp", 1, false},
    {"Sigmoid", 1, false},      {"Integrate", 1, true},    {"Differentiate", 1, true}, {"Smooth", 1, true},
    {"Memory", 2, true},        {"Wave", 0, true},         {"Saw", 0, true},       {"constant", 0, false},
}};
}  // namespace detail

constexpr std::string_view kind_name(NeuronKind k) { return detail::kKindTable[static_cast<std::size_t>(k)].name; }
constexpr std::size_t kind_arity(NeuronKind k) { return detail::kKindTable[static_cast<std::size_t>(k)].arity; }
constexpr bool kind_stateful(NeuronKind k) { return detail::kKindTable[static_cast<std::size_t>(k)].stateful; }

inline std::optional<NeuronKind> kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNeuronKindCount; ++i)
    if (detail::kKindTable[i].name == name) return static_cast<NeuronKind>(i);
  return std::nullopt;
}

}  // namespace forage
