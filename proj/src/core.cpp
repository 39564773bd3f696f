#include "umgr/core.hpp"

#include <algorithm>

#include "umgr/audit.hpp"

namespace umgr {

std::string_view to_string(FactCategory c) {
    switch (c) {
        case FactCategory::vaccination: return "vaccination";
        case FactCategory::psychiatric: return "psychiatric";
        case FactCategory::genetic: return "genetic";
        case FactCategory::prescription: return "prescription";
        case FactCategory::lab_marker: return "lab_marker";
        case FactCategory::treatment: return "treatment";
        case FactCategory::contact_info: return "contact_info";
    }
    return "?";
}

std::optional<FactCategory> category_from_string(std::string_view s) {
    for (FactCategory c : kAllCategories)
        if (to_string(c) == s) return c;
    return std::nullopt;
}

std::string_view to_string(RoleKind r) {
    switch (r) {
        case RoleKind::patient: return "patient";
        case RoleKind::physician: return "physician";
        case RoleKind::administrator: return "administrator";
        case RoleKind::researcher: return "researcher";
        case RoleKind::broker: return "broker";
        case RoleKind::employer: return "employer";
    }
    return "?";
}

std::optional<RoleKind> role_from_string(std::string_view s) {
    for (RoleKind r : kAllRoles)
        if (to_string(r) == s) return r;
    return std::nullopt;
}

std::string_view to_string(DeviceType d) {
    switch (d) {
        case DeviceType::certified: return "certified";
        case DeviceType::mobile: return "mobile";
        case DeviceType::desktop: return "desktop";
        case DeviceType::unknown: return "unknown";
    }
    return "?";
}

std::optional<DeviceType> device_from_string(std::string_view s) {
    for (DeviceType d : kAllDeviceTypes)
        if (to_string(d) == s) return d;
    return std::nullopt;
}

const Fact* Record::find_fact(std::string_view fact_id) const {
    auto it = std::find_if(facts.begin(), facts.end(),
                           [&](const Fact& f) { return f.fact_id == fact_id; });
    return it == facts.end() ? nullptr : &*it;
}

Timestamp Environment::date() const {
    auto it = parameters.find("Date");
    return it != parameters.end() && it->second.kind == Value::Kind::Timestamp
               ? it->second.ts
               : 0;
}

std::string Environment::location() const {
    auto it = parameters.find("Location");
    return it != parameters.end() ? value_to_text(it->second) : std::string();
}

DeviceType Environment::device() const {
    auto it = parameters.find("DeviceType");
    if (it == parameters.end()) return DeviceType::unknown;
    return device_from_string(value_to_text(it->second)).value_or(DeviceType::unknown);
}

void validate_environment(const Environment& env) {
    auto require = [&](const char* key) -> const Value& {
        auto it = env.parameters.find(key);
        if (it == env.parameters.end())
            throw Error(Errc::InvariantViolation,
                        std::string("environment missing required key ") + key);
        return it->second;
    };
    if (require("Date").kind != Value::Kind::Timestamp)
        throw Error(Errc::InvariantViolation, "environment Date must be a timestamp");
    require("Location");
    const Value& dev = require("DeviceType");
    if (!device_from_string(value_to_text(dev)))
        throw Error(Errc::InvariantViolation,
                    "unknown DeviceType '" + value_to_text(dev) + "'");
}

Environment make_environment(Timestamp date, std::string location, DeviceType device,
                             std::map<std::string, Value> extra) {
    Environment env{std::move(extra)};
    env.parameters["Date"] = Value::timestamp(date);
    env.parameters["Location"] = Value::word(std::move(location));
    env.parameters["DeviceType"] = Value::word(std::string(to_string(device)));
    validate_environment(env);
    return env;
}

Context make_context(Subject subject, RoleKind role, Environment env) {
    validate_environment(env);
    if (role != RoleKind::patient && !subject.verified_roles.contains(role))
        throw Error(Errc::RoleNotAuthorized,
                    "subject " + subject.subject_id + " does not hold role '" +
                        std::string(to_string(role)) + "'");
    return Context{std::move(subject), role, std::move(env)};
}

namespace {

void check_authorship(const Fact& fact, const Context& ctx) {
    if (fact.author_role != ctx.role)
        throw Error(Errc::RoleNotAuthorized,
                    "fact author_role does not match the acting role");
    if (fact.author_subject != ctx.subject.subject_id)
        throw Error(Errc::RoleNotAuthorized,
                    "fact author_subject does not match the acting subject");
}

audit::Event fact_event(audit::EventKind kind, const Record& record,
                        const Fact& fact, const Context& ctx) {
    return audit::Event{
        fact.recorded_at,
        ctx.subject.subject_id,
        kind,
        {
            {"record_id", record.record_id},
            {"fact_id", fact.fact_id},
            {"category", std::string(to_string(fact.category))},
            {"role", std::string(to_string(ctx.role))},
        },
    };
}

}  // namespace

Record append_fact(const Record& record, const Fact& fact, const Context& ctx,
                   audit::Log& log) {
    check_authorship(fact, ctx);
    if (fact.category != FactCategory::contact_info) {
        if (!is_provider_class(ctx.role))
            throw Error(Errc::RoleNotAuthorized,
                        "role '" + std::string(to_string(ctx.role)) +
                            "' may not append medical facts");
    } else if (!is_provider_class(ctx.role) && ctx.subject.subject_id != record.owner) {
        throw Error(Errc::RoleNotAuthorized,
                    "contact information is editable by the record owner");
    }
    if (record.find_fact(fact.fact_id))
        throw Error(Errc::DuplicateFactId, "fact id '" + fact.fact_id + "' already present");
    if (fact.superseded_by)
        throw Error(Errc::InvariantViolation, "new facts cannot arrive superseded");

    Record next = record;
    next.facts.push_back(fact);
    next.version += 1;
    log.append(fact_event(audit::EventKind::fact_appended, next, fact, ctx));
    return next;
}

Record supersede_fact(const Record& record, std::string_view old_id,
                      const Fact& new_fact, const Context& ctx, audit::Log& log) {
    const Fact* old = record.find_fact(old_id);
    if (!old)
        throw Error(Errc::UnknownFact, "no fact '" + std::string(old_id) + "' in record");
    if (old->superseded_by)
        throw Error(Errc::AlreadySuperseded,
                    "fact '" + std::string(old_id) + "' is already superseded");
    if (new_fact.category != old->category)
        throw Error(Errc::InvariantViolation,
                    "superseding fact must keep category '" +
                        std::string(to_string(old->category)) + "'");

    check_authorship(new_fact, ctx);
    if (old->category == FactCategory::contact_info) {
        if (ctx.subject.subject_id != record.owner)
            throw Error(Errc::NotOriginalAuthor,
                        "contact information is corrected by the record owner");
    } else {
        if (!is_provider_class(ctx.role))
            throw Error(Errc::RoleNotAuthorized,
                        "medical corrections require a provider-class role");
        if (ctx.subject.subject_id != old->author_subject)
            throw Error(Errc::NotOriginalAuthor,
                        "only the original author may correct this fact");
    }
    if (record.find_fact(new_fact.fact_id))
        throw Error(Errc::DuplicateFactId,
                    "fact id '" + new_fact.fact_id + "' already present");
    if (new_fact.superseded_by)
        throw Error(Errc::InvariantViolation, "new facts cannot arrive superseded");

    Record next = record;
    for (Fact& f : next.facts)
        if (f.fact_id == old_id) f.superseded_by = new_fact.fact_id;
    next.facts.push_back(new_fact);
    next.version += 1;  // one mutation, one increment

    audit::Event ev = fact_event(audit::EventKind::fact_superseded, next, new_fact, ctx);
    ev.detail["superseded_fact_id"] = std::string(old_id);
    log.append(ev);
    return next;
}

std::vector<Fact> current_facts(const Record& record) {
    std::vector<Fact> out;
    for (const Fact& f : record.facts)
        if (!f.superseded_by) out.push_back(f);
    return out;
}

}  // namespace umgr
