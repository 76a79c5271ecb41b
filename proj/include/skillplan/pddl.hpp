#pragma once

// STRIPS subset of PDDL: untyped domains with conjunctive positive
// preconditions and add/delete effects, plus problems with :init/:goal.

#include <compare>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace skillplan::pddl {

/// Predicate (or action) instance. Arguments are either `?variables` (schema
/// level) or object identifiers (ground level).
struct Atom {
  std::string predicate;
  std::vector<std::string> args;

  auto operator<=>(const Atom&) const = default;
  bool operator==(const Atom&) const = default;
};

std::string to_string(const Atom& atom);

using SymbolicState = std::set<Atom>;

struct PredicateSchema {
  std::string name;
  std::vector<std::string> params;

  std::size_t arity() const { return params.size(); }
  bool operator==(const PredicateSchema&) const = default;
};

struct ActionSchema {
  std::string name;
  std::vector<std::string> params;
  std::vector<Atom> precondition;
  std::vector<Atom> add;
  std::vector<Atom> del;
  /// Set when the effect carries an `around` atom (uncertain placement).
  bool probabilistic = false;

  bool operator==(const ActionSchema&) const = default;
};

struct DomainDef {
  std::string name;
  std::vector<PredicateSchema> predicates;
  std::vector<ActionSchema> actions;

  const PredicateSchema* find_predicate(std::string_view name) const;
  const ActionSchema* find_action(std::string_view name) const;
  /// Predicates that appear in some add or delete effect.
  std::set<std::string> fluent_predicates() const;

  bool operator==(const DomainDef&) const = default;
};

struct ProblemDef {
  std::string name;
  std::string domain_name;
  std::vector<std::string> objects;
  std::vector<Atom> init;
  std::vector<Atom> goal;

  bool operator==(const ProblemDef&) const = default;
};

/// Fully instantiated action.
struct GroundAction {
  std::string name;
  std::vector<std::string> args;
  std::vector<Atom> precondition;
  std::vector<Atom> add;
  std::vector<Atom> del;
  bool probabilistic = false;
};

/// Name of the effect predicate marking an uncertain, skill-produced placement.
inline constexpr std::string_view kAroundPredicate = "around";

/// Identifiers are case-insensitive and normalized to lower case.
std::string normalize_identifier(std::string_view text);

DomainDef parse_domain(std::string_view text);
ProblemDef parse_problem(std::string_view text, const DomainDef& domain);

/// Canonical pretty-printers; parse(print(x)) == x.
std::string print_domain(const DomainDef& domain);
std::string print_problem(const ProblemDef& problem);

GroundAction ground(const ActionSchema& schema, std::span<const std::string> args);

bool holds(const SymbolicState& state, std::span<const Atom> atoms);
bool applicable(const SymbolicState& state, const GroundAction& action);
/// (state \ del) ∪ add; throws Error(PreconditionViolation) if not applicable.
SymbolicState apply(const SymbolicState& state, const GroundAction& action);

}  // namespace skillplan::pddl
