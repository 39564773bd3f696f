#pragma once

// Domain model for managed health records.
//
// DESIGN INVARIANTS:
//   1. APPEND-ONLY: medical facts are never removed or mutated. A correction
//      appends a superseding fact and leaves the original in place.
//   2. VERSIONED: Record.version counts successful mutations, +1 each.
//   3. ROLE-PARTITIONED: medical categories are writable by provider-class
//      roles only; record owners edit contact information.
//
// Everything here is a value type; mutations return new values.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "umgr/common.hpp"

namespace umgr {

namespace audit {
class Log;
}

enum class FactCategory {
    vaccination,
    psychiatric,
    genetic,
    prescription,
    lab_marker,
    treatment,
    contact_info,
};

constexpr FactCategory kAllCategories[] = {
    FactCategory::vaccination, FactCategory::psychiatric, FactCategory::genetic,
    FactCategory::prescription, FactCategory::lab_marker, FactCategory::treatment,
    FactCategory::contact_info,
};

enum class RoleKind {
    patient,
    physician,
    administrator,
    researcher,
    broker,
    employer,
};

constexpr RoleKind kAllRoles[] = {
    RoleKind::patient,  RoleKind::physician, RoleKind::administrator,
    RoleKind::researcher, RoleKind::broker,  RoleKind::employer,
};

// Physicians author medical facts; nobody else does.
constexpr bool is_provider_class(RoleKind r) { return r == RoleKind::physician; }

std::string_view to_string(FactCategory c);
std::optional<FactCategory> category_from_string(std::string_view s);
std::string_view to_string(RoleKind r);
std::optional<RoleKind> role_from_string(std::string_view s);

enum class DeviceType { certified, mobile, desktop, unknown };

constexpr DeviceType kAllDeviceTypes[] = {
    DeviceType::certified, DeviceType::mobile, DeviceType::desktop,
    DeviceType::unknown,
};

std::string_view to_string(DeviceType d);
std::optional<DeviceType> device_from_string(std::string_view s);

struct Fact {
    std::string fact_id;
    FactCategory category = FactCategory::contact_info;
    std::string author_subject;
    RoleKind author_role = RoleKind::patient;
    Timestamp recorded_at = 0;
    std::string body;  // opaque; the engine never interprets medical content
    std::optional<std::string> superseded_by;

    friend bool operator==(const Fact&, const Fact&) = default;
};

struct Record {
    std::string record_id;
    std::string owner;
    std::vector<Fact> facts;  // insertion order preserved, fact_id unique
    std::uint64_t version = 0;

    const Fact* find_fact(std::string_view fact_id) const;

    friend bool operator==(const Record&, const Record&) = default;
};

struct Subject {
    std::string subject_id;
    std::string display_name;
    std::map<std::string, Value> parameters;
    std::set<RoleKind> verified_roles;  // credential checks are simulated

    friend bool operator==(const Subject&, const Subject&) = default;
};

// Required keys: Date, Location, DeviceType. Extra keys allowed.
struct Environment {
    std::map<std::string, Value> parameters;

    Timestamp date() const;
    std::string location() const;
    DeviceType device() const;

    friend bool operator==(const Environment&, const Environment&) = default;
};

// Throws Error{InvariantViolation} if a required key is missing or the
// device token is not one of the four known types.
Environment make_environment(Timestamp date, std::string location, DeviceType device,
                             std::map<std::string, Value> extra = {});
void validate_environment(const Environment& env);

struct Context {
    Subject subject;
    RoleKind role = RoleKind::patient;
    Environment environment;

    friend bool operator==(const Context&, const Context&) = default;
};

// Enforces role membership: any role other than patient must appear in the
// subject's verified_roles. Throws Error{RoleNotAuthorized}.
Context make_context(Subject subject, RoleKind role, Environment env);

// ---------------------------------------------------------------------------
// Record operations. Each successful mutation emits one audit entry.
// ---------------------------------------------------------------------------

// Appends a fact. Medical categories require a provider-class context whose
// subject is the fact's author; contact_info may also be appended by the
// record owner. Throws RoleNotAuthorized, DuplicateFactId.
Record append_fact(const Record& record, const Fact& fact, const Context& ctx,
                   audit::Log& log);

// Marks old_id superseded by new_fact and appends new_fact. Medical facts may
// only be corrected by their original author (provider-class); contact_info
// by the record owner. Throws UnknownFact, AlreadySuperseded,
// NotOriginalAuthor, DuplicateFactId, RoleNotAuthorized.
Record supersede_fact(const Record& record, std::string_view old_id,
                      const Fact& new_fact, const Context& ctx, audit::Log& log);

// Facts not superseded, in record order.
std::vector<Fact> current_facts(const Record& record);

}  // namespace umgr
