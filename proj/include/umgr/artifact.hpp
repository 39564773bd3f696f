#pragma once

// Filtered records, licenses, bundles, aggregation, and compensation.
//
// The subset law anchors everything here: a filter only ever projects, so
// filtered output is a subset of the record's current facts, and composition
// preserves that transitively. Licenses carry provenance (who supplied what,
// with which share) so compensation can be attributed through any number of
// re-licensing steps.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "umgr/audit.hpp"
#include "umgr/core.hpp"
#include "umgr/policy.hpp"

namespace umgr {

struct Filter {
    std::string filter_id;
    std::set<FactCategory> allowed_categories;
    std::vector<Predicate> fact_conditions;  // over recorded_at, author_role, ...

    friend bool operator==(const Filter&, const Filter&) = default;
};

struct FilteredRecord {
    std::string source_record_id;
    std::uint64_t source_version = 0;
    std::vector<Fact> facts;
    std::string filter_id;

    std::set<FactCategory> categories() const;

    friend bool operator==(const FilteredRecord&, const FilteredRecord&) = default;
};

struct ProvenanceEntry {
    std::string source_record_id;  // "-" for attribution-only entries (brokers)
    std::string owner_subject;
    double share = 0.0;  // in [0,1]; entries of one license sum to 1

    bool record_backed() const { return source_record_id != "-"; }

    friend bool operator==(const ProvenanceEntry&, const ProvenanceEntry&) = default;
};

struct License {
    std::string license_id;
    std::string producer;
    std::string consumer;
    UsagePolicy policy;  // policy.issuer == producer
    Timestamp issued_at = 0;
    std::vector<ProvenanceEntry> provenance;

    friend bool operator==(const License&, const License&) = default;
};

struct AggregateSet {
    struct Element {
        std::string source_record_id;
        std::vector<Fact> facts;

        friend bool operator==(const Element&, const Element&) = default;
    };

    std::vector<Element> elements;  // one per source record
    std::vector<License> constituent_licenses;

    friend bool operator==(const AggregateSet&, const AggregateSet&) = default;
};

struct Bundle {
    std::string bundle_id;
    std::variant<FilteredRecord, AggregateSet> payload;
    License license;
    Timestamp created_at = 0;

    bool is_aggregate() const {
        return std::holds_alternative<AggregateSet>(payload);
    }

    friend bool operator==(const Bundle&, const Bundle&) = default;
};

class AggregationDenied : public Error {
  public:
    AggregationDenied(Errc code, std::string what,
                      std::vector<std::pair<std::string, Decision>> conflicts)
        : Error(code, std::move(what)), conflicts_(std::move(conflicts)) {}

    const std::vector<std::pair<std::string, Decision>>& conflicts() const {
        return conflicts_;
    }

  private:
    std::vector<std::pair<std::string, Decision>> conflicts_;
};

// Projection only: current facts, intersected with allowed categories and
// the fact-level conditions. Deterministic; empty output is legal.
FilteredRecord apply_filter(const Record& record, const Filter& filter);

// Checks fact-level predicates against one fact (recorded_at, category,
// author_subject, author_role, body).
bool fact_matches(const Fact& fact, const std::vector<Predicate>& conditions);

// Issues a bundle after negotiation. Every static permit clause must be
// satisfiable against the filtered record: a static grant naming a category
// the filter removed throws Error{StaticScopeMismatch}. The bundle keeps the
// validated static grants plus all dynamic clauses; provenance is a single
// full-share entry for the producer. Emits bundle_issued.
Bundle issue_bundle(const FilteredRecord& fr, const UsagePolicy& agreed_policy,
                    const std::string& producer, const std::string& consumer,
                    Timestamp now, audit::Log& log);

// Dynamic adjudication of one use request against the bundle's license.
// Non-licensees are denied with reason "not licensee". Total: every failure
// mode is a deny Decision. Emits decision_rendered.
Decision request_use(const Bundle& bundle, Action action,
                     const std::set<FactCategory>& categories, const Context& ctx,
                     Timestamp now, audit::Log& log);

// Decision on an aggregate: the conjunction over every constituent license
// (deny wins, obligations merge: prices add, attribution ORs).
Decision aggregate_decision(const AggregateSet& agg, Action action,
                            const std::set<FactCategory>& categories,
                            const Context& ctx, Timestamp now);

// Combines >= 2 bundles. Every constituent license must permit both
// `aggregate` and requested_action for ctx; otherwise throws
// AggregationDenied carrying the per-policy conflict explanation.
AggregateSet aggregate(const std::vector<Bundle>& bundles, Action requested_action,
                       const Context& ctx, Timestamp now, audit::Log& log);

// Splits payment over constituent provenance, weighted by each license's
// permit-clause prices (equal weights when no license carries a price).
// Largest-remainder rounding at 2 decimals; outputs sum to payment exactly.
// Emits compensation_attributed.
std::vector<std::pair<std::string, Amount>> attribute_compensation(
    const AggregateSet& agg, Amount payment, audit::Log& log);

// Broker-only re-licensing of an aggregate. Requires every constituent to
// permit `redistribute` for ctx; throws AggregationDenied with code
// RedistributionDenied otherwise. The new license's policy is the composite
// conjunction of the constituents, its provenance lists every original owner
// plus the broker. Emits bundle_issued.
Bundle redistribute_bundle(const AggregateSet& agg, const std::string& new_consumer,
                           const Context& ctx, Timestamp now, audit::Log& log);

// Materialized conjunction of several policies: a context is permitted by
// the result iff every input policy permits it. Product construction over
// permit clauses (matching action/role tuples, intersected scopes,
// concatenated conditions, min expiry, summed prices) plus the union of all
// deny clauses.
UsagePolicy conjunction_policy(const std::vector<UsagePolicy>& policies,
                               std::string policy_id, std::string issuer);

// Bundle invariant check: record-backed provenance ids equal the payload's
// record ids, shares sum to 1 (+-1e-9), policy issuer matches producer.
// Throws Error{InvariantViolation}.
void validate_bundle(const Bundle& bundle);

}  // namespace umgr
