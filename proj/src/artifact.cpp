#include "umgr/artifact.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace umgr {

std::set<FactCategory> FilteredRecord::categories() const {
    std::set<FactCategory> out;
    for (const Fact& f : facts) out.insert(f.category);
    return out;
}

namespace {

std::optional<Value> fact_field_value(const Fact& fact, const std::string& name) {
    if (name == "recorded_at") return Value::timestamp(fact.recorded_at);
    if (name == "category") return Value::word(std::string(to_string(fact.category)));
    if (name == "author_subject") return Value::word(fact.author_subject);
    if (name == "author_role") return Value::word(std::string(to_string(fact.author_role)));
    if (name == "fact_id") return Value::word(fact.fact_id);
    if (name == "body") return Value::word(fact.body);
    return std::nullopt;
}

std::string join_categories(const std::set<FactCategory>& cats) {
    std::string out;
    for (FactCategory c : cats) {
        if (!out.empty()) out += ",";
        out += to_string(c);
    }
    return out;
}

}  // namespace

bool fact_matches(const Fact& fact, const std::vector<Predicate>& conditions) {
    for (const Predicate& p : conditions) {
        auto v = fact_field_value(fact, p.parameter);
        if (!v || !value_satisfies(*v, p)) return false;
    }
    return true;
}

FilteredRecord apply_filter(const Record& record, const Filter& filter) {
    FilteredRecord out;
    out.source_record_id = record.record_id;
    out.source_version = record.version;
    out.filter_id = filter.filter_id;
    for (const Fact& f : current_facts(record)) {
        if (!filter.allowed_categories.empty() &&
            !filter.allowed_categories.contains(f.category))
            continue;
        if (!fact_matches(f, filter.fact_conditions)) continue;
        out.facts.push_back(f);
    }
    return out;
}

Bundle issue_bundle(const FilteredRecord& fr, const UsagePolicy& agreed_policy,
                    const std::string& producer, const std::string& consumer,
                    Timestamp now, audit::Log& log) {
    if (agreed_policy.issuer != producer)
        throw Error(Errc::InvariantViolation,
                    "license policy must be issued by the producer");
    for (const Clause& c : agreed_policy.clauses)
        if (c.expires && *c.expires <= now)
            throw Error(Errc::InvariantViolation,
                        "clause expiry predates policy issuance");

    // Static grants are resolved now, against the data actually present;
    // whatever survives rides along with the dynamic clauses.
    const std::set<FactCategory> present = fr.categories();
    auto [statics, dynamics] = classify_clauses(agreed_policy);
    for (const Clause& c : statics) {
        if (c.effect != Effect::permit) continue;
        for (FactCategory granted : c.scope) {
            if (!present.contains(granted))
                throw Error(Errc::StaticScopeMismatch,
                            "static grant of '" + std::string(to_string(granted)) +
                                "' but the filter removed it");
        }
    }

    std::string material = producer + "|" + consumer + "|" + fr.source_record_id +
                           "|" + std::to_string(fr.source_version) + "|" +
                           std::to_string(now) + "|" + render_policy(agreed_policy);
    Bundle bundle;
    bundle.bundle_id = derived_id("B", material);
    bundle.payload = fr;
    bundle.created_at = now;
    bundle.license = License{
        derived_id("L", material), producer,          consumer,
        agreed_policy,             now,               {ProvenanceEntry{fr.source_record_id, producer, 1.0}},
    };
    validate_bundle(bundle);

    log.append(audit::Event{
        now,
        producer,
        audit::EventKind::bundle_issued,
        {
            {"bundle_id", bundle.bundle_id},
            {"license_id", bundle.license.license_id},
            {"record_id", fr.source_record_id},
            {"consumer", consumer},
            {"categories", join_categories(present)},
        },
    });
    return bundle;
}

Decision request_use(const Bundle& bundle, Action action,
                     const std::set<FactCategory>& categories, const Context& ctx,
                     Timestamp now, audit::Log& log) {
    Decision decision;
    if (ctx.subject.subject_id != bundle.license.consumer)
        decision = Decision{Outcome::deny, std::nullopt, {}, "not licensee"};
    else
        decision = evaluate(bundle.license.policy, action, categories, ctx, now);

    audit::Event ev{
        now,
        ctx.subject.subject_id,
        audit::EventKind::decision_rendered,
        {
            {"bundle_id", bundle.bundle_id},
            {"action", std::string(to_string(action))},
            {"categories", join_categories(categories)},
            {"outcome", decision.permitted() ? "permit" : "deny"},
            {"reason", decision.reason},
        },
    };
    if (decision.permitted() && decision.obligations.price)
        ev.detail["price_owed"] = to_string(*decision.obligations.price);
    log.append(ev);
    return decision;
}

Decision aggregate_decision(const AggregateSet& agg, Action action,
                            const std::set<FactCategory>& categories,
                            const Context& ctx, Timestamp now) {
    Obligations merged;
    std::int64_t price_cents = 0;
    bool any_price = false;
    for (const License& lic : agg.constituent_licenses) {
        Decision d = evaluate(lic.policy, action, categories, ctx, now);
        if (!d.permitted())
            return Decision{Outcome::deny, std::nullopt, {},
                            "denied by " + lic.policy.policy_id + ": " + d.reason};
        merged.attribution |= d.obligations.attribution;
        if (d.obligations.price) {
            any_price = true;
            price_cents += d.obligations.price->cents;
        }
    }
    if (any_price) merged.price = Amount{price_cents};
    return Decision{Outcome::permit, std::nullopt, merged,
                    "permitted by all constituents"};
}

namespace {

std::set<FactCategory> categories_for_license(const AggregateSet& agg,
                                              const License& lic) {
    std::set<FactCategory> out;
    for (const ProvenanceEntry& pe : lic.provenance) {
        if (!pe.record_backed()) continue;
        for (const auto& el : agg.elements) {
            if (el.source_record_id != pe.source_record_id) continue;
            for (const Fact& f : el.facts) out.insert(f.category);
        }
    }
    return out;
}

}  // namespace

AggregateSet aggregate(const std::vector<Bundle>& bundles, Action requested_action,
                       const Context& ctx, Timestamp now, audit::Log& log) {
    if (bundles.size() < 2)
        throw Error(Errc::InvariantViolation, "aggregation needs at least 2 bundles");

    AggregateSet agg;
    std::vector<std::pair<std::string, Decision>> conflicts;
    bool denied = false;
    for (const Bundle& b : bundles) {
        const auto* fr = std::get_if<FilteredRecord>(&b.payload);
        if (!fr)
            throw Error(Errc::InvariantViolation,
                        "aggregates combine filtered-record bundles; re-license "
                        "aggregates through a broker instead");

        Decision d;
        if (ctx.subject.subject_id != b.license.consumer) {
            d = Decision{Outcome::deny, std::nullopt, {}, "not licensee"};
        } else {
            d = evaluate(b.license.policy, Action::aggregate, fr->categories(), ctx, now);
            if (d.permitted()) {
                Decision du = evaluate(b.license.policy, requested_action,
                                       fr->categories(), ctx, now);
                if (!du.permitted()) d = du;
            }
        }
        denied |= !d.permitted();
        conflicts.emplace_back(b.license.policy.policy_id, d);

        auto el = std::find_if(agg.elements.begin(), agg.elements.end(),
                               [&](const AggregateSet::Element& e) {
                                   return e.source_record_id == fr->source_record_id;
                               });
        if (el == agg.elements.end()) {
            agg.elements.push_back({fr->source_record_id, fr->facts});
        } else {
            for (const Fact& f : fr->facts) {
                bool seen = std::any_of(el->facts.begin(), el->facts.end(),
                                        [&](const Fact& g) { return g.fact_id == f.fact_id; });
                if (!seen) el->facts.push_back(f);
            }
        }
        agg.constituent_licenses.push_back(b.license);
    }

    std::string denying;
    for (const auto& [pid, d] : conflicts)
        if (!d.permitted()) denying += (denying.empty() ? "" : ", ") + pid;

    log.append(audit::Event{
        now,
        ctx.subject.subject_id,
        audit::EventKind::decision_rendered,
        {
            {"action", std::string(to_string(requested_action))},
            {"kind", "aggregate"},
            {"bundles", std::to_string(bundles.size())},
            {"outcome", denied ? "deny" : "permit"},
            {"denying_policies", denying},
        },
    });

    if (denied)
        throw AggregationDenied(Errc::AggregationDenied,
                                "aggregation denied by: " + denying,
                                std::move(conflicts));
    return agg;
}

std::vector<std::pair<std::string, Amount>> attribute_compensation(
    const AggregateSet& agg, Amount payment, audit::Log& log) {
    if (payment.cents < 0)
        throw Error(Errc::InvariantViolation, "payment must be non-negative");

    // Weight per constituent license: the sum of its permit-clause prices.
    // When nobody priced anything, every constituent weighs the same.
    std::vector<std::int64_t> weights;
    for (const License& lic : agg.constituent_licenses) {
        std::int64_t w = 0;
        for (const Clause& c : lic.policy.clauses)
            if (c.effect == Effect::permit && c.price) w += c.price->cents;
        weights.push_back(w);
    }
    if (std::all_of(weights.begin(), weights.end(), [](auto w) { return w == 0; }))
        std::fill(weights.begin(), weights.end(), 1);
    const long double total_weight =
        std::accumulate(weights.begin(), weights.end(), 0LL);

    struct Slice {
        std::string owner;
        std::int64_t cents;
        long double remainder;
        std::size_t index;
    };
    std::vector<Slice> slices;
    for (std::size_t i = 0; i < agg.constituent_licenses.size(); ++i) {
        const License& lic = agg.constituent_licenses[i];
        long double share_sum = 0;
        for (const ProvenanceEntry& pe : lic.provenance) share_sum += pe.share;
        for (const ProvenanceEntry& pe : lic.provenance) {
            long double ideal = payment.cents * (weights[i] / total_weight) *
                                (share_sum > 0 ? pe.share / share_sum : 0.0L);
            auto base = static_cast<std::int64_t>(std::floor(ideal));
            slices.push_back({pe.owner_subject, base, ideal - base, slices.size()});
        }
    }

    // Largest remainder: hand the leftover cents to the largest fractional
    // parts, index order breaking ties. Conservation is exact by construction.
    std::int64_t distributed = 0;
    for (const Slice& s : slices) distributed += s.cents;
    std::int64_t leftover = payment.cents - distributed;
    std::vector<std::size_t> order(slices.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return slices[a].remainder > slices[b].remainder;
    });
    for (std::size_t k = 0; leftover > 0 && k < order.size(); ++k, --leftover)
        slices[order[k]].cents += 1;

    std::vector<std::pair<std::string, Amount>> out;
    for (const Slice& s : slices) {
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& p) { return p.first == s.owner; });
        if (it == out.end())
            out.emplace_back(s.owner, Amount{s.cents});
        else
            it->second = it->second + Amount{s.cents};
    }

    std::map<std::string, std::string> detail{
        {"payment", to_string(payment)},
        {"constituents", std::to_string(agg.constituent_licenses.size())},
    };
    for (const auto& [owner, amount] : out) detail["owner:" + owner] = to_string(amount);
    log.append(audit::Event{0, "system", audit::EventKind::compensation_attributed,
                            std::move(detail)});
    return out;
}

// ---------------------------------------------------------------------------
// Composite (conjunction) policies
// ---------------------------------------------------------------------------

UsagePolicy conjunction_policy(const std::vector<UsagePolicy>& policies,
                               std::string policy_id, std::string issuer) {
    if (policies.empty())
        throw Error(Errc::InvariantViolation, "conjunction of zero policies");

    UsagePolicy out;
    out.policy_id = std::move(policy_id);
    out.issuer = std::move(issuer);

    // Any constituent deny stands on its own.
    for (const UsagePolicy& p : policies)
        for (const Clause& c : p.clauses)
            if (c.effect == Effect::deny) out.clauses.push_back(c);

    // Permits: product construction. A composite permit exists for every
    // tuple of same-action/same-role permit clauses, one drawn from each
    // constituent; scopes intersect, conditions conjoin, expiries take the
    // minimum, prices add, attribution ORs. A tuple whose scopes intersect
    // to nothing can never cover a non-empty request and is dropped.
    for (Action action : kAllActions) {
        for (RoleKind role : kAllRoles) {
            std::vector<std::vector<const Clause*>> per_policy;
            bool feasible = true;
            for (const UsagePolicy& p : policies) {
                std::vector<const Clause*> matches;
                for (const Clause& c : p.clauses)
                    if (c.effect == Effect::permit && c.action == action && c.role == role)
                        matches.push_back(&c);
                if (matches.empty()) {
                    feasible = false;
                    break;
                }
                per_policy.push_back(std::move(matches));
            }
            if (!feasible) continue;

            std::vector<std::size_t> pick(per_policy.size(), 0);
            for (;;) {
                Clause combined;
                combined.effect = Effect::permit;
                combined.action = action;
                combined.role = role;
                bool scope_all = true;
                bool scope_empty = false;
                std::int64_t price_cents = 0;
                bool any_price = false;
                for (std::size_t i = 0; i < pick.size(); ++i) {
                    const Clause& c = *per_policy[i][pick[i]];
                    if (!c.scope.empty()) {
                        if (scope_all) {
                            combined.scope = c.scope;
                            scope_all = false;
                        } else {
                            std::set<FactCategory> inter;
                            std::set_intersection(combined.scope.begin(),
                                                  combined.scope.end(), c.scope.begin(),
                                                  c.scope.end(),
                                                  std::inserter(inter, inter.begin()));
                            combined.scope = std::move(inter);
                            if (combined.scope.empty()) scope_empty = true;
                        }
                    }
                    for (const Predicate& pr : c.conditions) {
                        bool dup = std::find(combined.conditions.begin(),
                                             combined.conditions.end(),
                                             pr) != combined.conditions.end();
                        if (!dup) combined.conditions.push_back(pr);
                    }
                    if (c.expires)
                        combined.expires = combined.expires
                                               ? std::min(*combined.expires, *c.expires)
                                               : *c.expires;
                    if (c.price) {
                        any_price = true;
                        price_cents += c.price->cents;
                    }
                    combined.requires_attribution |= c.requires_attribution;
                }
                if (any_price) combined.price = Amount{price_cents};
                if (!scope_empty) out.clauses.push_back(std::move(combined));

                std::size_t i = 0;
                while (i < pick.size() && ++pick[i] == per_policy[i].size())
                    pick[i++] = 0;
                if (i == pick.size()) break;
            }
        }
    }

    if (out.clauses.empty()) {
        // Nothing is jointly permitted; keep the policy well-formed with an
        // explicit blanket deny per action.
        for (Action action : kAllActions)
            for (RoleKind role : kAllRoles)
                out.clauses.push_back(Clause{Effect::deny, action, role, {}, {},
                                             std::nullopt, std::nullopt, false});
    }
    return out;
}

Bundle redistribute_bundle(const AggregateSet& agg, const std::string& new_consumer,
                           const Context& ctx, Timestamp now, audit::Log& log) {
    if (ctx.role != RoleKind::broker)
        throw AggregationDenied(Errc::RedistributionDenied,
                                "redistribution requires the broker role", {});

    std::vector<std::pair<std::string, Decision>> conflicts;
    bool denied = false;
    for (const License& lic : agg.constituent_licenses) {
        Decision d;
        if (ctx.subject.subject_id != lic.consumer)
            d = Decision{Outcome::deny, std::nullopt, {}, "not licensee"};
        else
            d = evaluate(lic.policy, Action::redistribute,
                         categories_for_license(agg, lic), ctx, now);
        denied |= !d.permitted();
        conflicts.emplace_back(lic.policy.policy_id, d);
    }
    if (denied) {
        std::string denying;
        for (const auto& [pid, d] : conflicts)
            if (!d.permitted()) denying += (denying.empty() ? "" : ", ") + pid;
        throw AggregationDenied(Errc::RedistributionDenied,
                                "redistribution denied by: " + denying,
                                std::move(conflicts));
    }

    std::vector<UsagePolicy> policies;
    std::string material = ctx.subject.subject_id + "|" + new_consumer + "|" +
                           std::to_string(now);
    for (const License& lic : agg.constituent_licenses) {
        policies.push_back(lic.policy);
        material += "|" + lic.license_id;
    }

    Bundle bundle;
    bundle.bundle_id = derived_id("B", material);
    bundle.created_at = now;
    bundle.payload = agg;

    License lic;
    lic.license_id = derived_id("L", material);
    lic.producer = ctx.subject.subject_id;
    lic.consumer = new_consumer;
    lic.policy = conjunction_policy(policies, derived_id("POL", material),
                                    ctx.subject.subject_id);
    lic.issued_at = now;

    // Every original owner keeps a slice; the broker joins as one more party.
    const auto parties = static_cast<double>(agg.constituent_licenses.size()) + 1.0;
    for (const License& src : agg.constituent_licenses) {
        double share_sum = 0;
        for (const ProvenanceEntry& pe : src.provenance) share_sum += pe.share;
        for (const ProvenanceEntry& pe : src.provenance)
            lic.provenance.push_back(
                {pe.source_record_id, pe.owner_subject,
                 (share_sum > 0 ? pe.share / share_sum : 0.0) / parties});
    }
    lic.provenance.push_back({"-", ctx.subject.subject_id, 1.0 / parties});
    bundle.license = std::move(lic);
    validate_bundle(bundle);

    log.append(audit::Event{
        now,
        ctx.subject.subject_id,
        audit::EventKind::bundle_issued,
        {
            {"bundle_id", bundle.bundle_id},
            {"license_id", bundle.license.license_id},
            {"consumer", new_consumer},
            {"kind", "redistribution"},
            {"constituents", std::to_string(agg.constituent_licenses.size())},
        },
    });
    return bundle;
}

void validate_bundle(const Bundle& bundle) {
    const License& lic = bundle.license;
    if (lic.policy.issuer != lic.producer)
        throw Error(Errc::InvariantViolation, "license policy issuer != producer");

    double share_sum = 0;
    std::set<std::string> prov_ids;
    for (const ProvenanceEntry& pe : lic.provenance) {
        share_sum += pe.share;
        if (pe.share < 0 || pe.share > 1)
            throw Error(Errc::InvariantViolation, "provenance share outside [0,1]");
        if (pe.record_backed()) prov_ids.insert(pe.source_record_id);
    }
    if (std::abs(share_sum - 1.0) > 1e-9)
        throw Error(Errc::InvariantViolation, "provenance shares do not sum to 1");

    std::set<std::string> payload_ids;
    if (const auto* fr = std::get_if<FilteredRecord>(&bundle.payload))
        payload_ids.insert(fr->source_record_id);
    else
        for (const auto& el : std::get<AggregateSet>(bundle.payload).elements)
            payload_ids.insert(el.source_record_id);
    if (payload_ids != prov_ids)
        throw Error(Errc::InvariantViolation,
                    "license provenance does not match payload records");
}

}  // namespace umgr
