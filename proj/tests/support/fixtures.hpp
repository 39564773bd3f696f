#pragma once

// Shared builders for tests: subjects, contexts, records, and small policies.

#include <string>
#include <vector>

#include "umgr/artifact.hpp"
#include "umgr/audit.hpp"
#include "umgr/core.hpp"
#include "umgr/policy.hpp"

namespace umgr::test {

inline constexpr Timestamp kT0 = 1767225600;  // 2026-01-01T00:00:00Z

inline Subject subject(std::string id, std::vector<RoleKind> roles = {}) {
    Subject s;
    s.subject_id = std::move(id);
    s.display_name = s.subject_id;
    for (RoleKind r : roles) s.verified_roles.insert(r);
    return s;
}

inline Context ctx_of(const Subject& s, RoleKind role, Timestamp at = kT0,
                      std::string location = "hospital",
                      DeviceType device = DeviceType::certified) {
    return make_context(s, role, make_environment(at, std::move(location), device));
}

inline Fact fact(std::string id, FactCategory category, const Context& author,
                 std::string body = "x", Timestamp at = kT0) {
    Fact f;
    f.fact_id = std::move(id);
    f.category = category;
    f.author_subject = author.subject.subject_id;
    f.author_role = author.role;
    f.recorded_at = at;
    f.body = std::move(body);
    return f;
}

// A record owned by `owner` with one physician-authored fact per category.
inline Record record_with(const std::string& record_id, const Subject& owner,
                          const Subject& physician,
                          const std::vector<FactCategory>& categories,
                          audit::Log& log) {
    Record r;
    r.record_id = record_id;
    r.owner = owner.subject_id;
    Context doc = ctx_of(physician, RoleKind::physician);
    int n = 0;
    for (FactCategory c : categories) {
        r = append_fact(r, fact(record_id + "-f" + std::to_string(n++), c, doc), doc,
                        log);
    }
    return r;
}

}  // namespace umgr::test
