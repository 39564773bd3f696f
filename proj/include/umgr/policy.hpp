#pragma once

// Usage-policy language: AST, parser, renderer, and decision procedure.
//
// Grammar (UTF-8, one clause per line, "#" comments):
//   clause := ("permit" | "deny") action "to" role
//             ["scope" category ("," category)*]
//             ["when" pred ("and" pred)*]
//             ["expires" timestamp] ["price" decimal] ["attribution"]
//   action := "read" | "append" | "supersede" | "aggregate" | "redistribute"
//   pred   := ident op literal
//   op     := "=" | "!=" | "<" | "<=" | ">" | ">=" | "in" | "before" | "after"
//   literal:= RFC 3339 timestamp | decimal | token | "{" lit ("," lit)* "}"
//
// Combining rule: deny-overrides with default deny. A deny clause matches on
// scope intersection; a permit clause must cover every requested category.
// Evaluation is a pure function of its inputs; "now" is always explicit.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "umgr/core.hpp"

namespace umgr {

enum class Action { read, append, supersede, aggregate, redistribute };

constexpr Action kAllActions[] = {
    Action::read, Action::append, Action::supersede, Action::aggregate,
    Action::redistribute,
};

std::string_view to_string(Action a);
std::optional<Action> action_from_string(std::string_view s);

enum class PredOp { eq, ne, lt, le, gt, ge, in_set, before, after };

std::string_view to_string(PredOp op);

struct Predicate {
    std::string parameter;
    PredOp op = PredOp::eq;
    std::vector<Value> operand;  // size 1 unless op == in_set

    friend bool operator==(const Predicate&, const Predicate&) = default;
};

// The parameters whose values change between requests. Anything else is an
// attribute of the negotiated subject and holds still for a given consumer.
bool is_environment_parameter(std::string_view name);

enum class Effect { permit, deny };

struct Clause {
    Effect effect = Effect::deny;
    Action action = Action::read;
    RoleKind role = RoleKind::patient;
    std::set<FactCategory> scope;  // empty = all categories
    std::vector<Predicate> conditions;  // conjunctive
    std::optional<Timestamp> expires;
    std::optional<Amount> price;  // meaningful on permit only
    bool requires_attribution = false;

    friend bool operator==(const Clause&, const Clause&) = default;
};

// A clause is static when nothing in it varies per request: no expiry and no
// condition on an environment parameter.
bool is_static_clause(const Clause& c);

struct UsagePolicy {
    std::string policy_id;
    std::string issuer;
    std::vector<Clause> clauses;  // order matters for reporting only

    friend bool operator==(const UsagePolicy&, const UsagePolicy&) = default;
};

enum class Outcome { permit, deny };

struct Obligations {
    bool attribution = false;
    std::optional<Amount> price;

    friend bool operator==(const Obligations&, const Obligations&) = default;
};

struct Decision {
    Outcome outcome = Outcome::deny;
    std::optional<std::size_t> matched_clause;
    Obligations obligations;
    std::string reason;

    bool permitted() const { return outcome == Outcome::permit; }

    friend bool operator==(const Decision&, const Decision&) = default;
};

// Parses clause lines (policy_id/issuer are supplied by the container; the
// text format carries clauses only). Throws ParseError with SyntaxError or
// TypeError: temporal operators demand the Date parameter, Date comparisons
// demand timestamp literals, price must be a non-negative amount.
UsagePolicy parse_policy(std::string_view source, std::string policy_id = "",
                         std::string issuer = "");

// Canonical text; parse(render(p)) reproduces the clause list exactly.
std::string render_policy(const UsagePolicy& policy);
std::string render_clause(const Clause& clause);

// Deny-overrides decision for one policy.
Decision evaluate(const UsagePolicy& policy, Action action,
                  const std::set<FactCategory>& categories, const Context& ctx,
                  Timestamp now);

// Exhaustive and disjoint (static, dynamic) partition of the clause list.
std::pair<std::vector<Clause>, std::vector<Clause>> classify_clauses(
    const UsagePolicy& policy);

// Per-policy decisions; denying entries identify the conflict cause.
std::vector<std::pair<std::string, Decision>> explain_conflict(
    const std::vector<UsagePolicy>& policies, Action action,
    const std::set<FactCategory>& categories, const Context& ctx, Timestamp now);

// True when every predicate holds in ctx. Missing parameters and type
// mismatches make a predicate false, never an error.
bool conditions_hold(const std::vector<Predicate>& conditions, const Context& ctx);

// One value against one predicate, same fail-closed semantics.
bool value_satisfies(const Value& value, const Predicate& pred);

}  // namespace umgr
