#include "umgr/audit.hpp"

#include <nlohmann/json.hpp>

namespace umgr::audit {

std::string_view to_string(EventKind k) {
    switch (k) {
        case EventKind::fact_appended: return "fact_appended";
        case EventKind::fact_superseded: return "fact_superseded";
        case EventKind::decision_rendered: return "decision_rendered";
        case EventKind::session_event: return "session_event";
        case EventKind::bundle_issued: return "bundle_issued";
        case EventKind::compensation_attributed: return "compensation_attributed";
    }
    return "?";
}

std::optional<EventKind> event_kind_from_string(std::string_view s) {
    for (EventKind k :
         {EventKind::fact_appended, EventKind::fact_superseded,
          EventKind::decision_rendered, EventKind::session_event,
          EventKind::bundle_issued, EventKind::compensation_attributed})
        if (to_string(k) == s) return k;
    return std::nullopt;
}

std::string render_detail(const std::map<std::string, std::string>& detail) {
    // nlohmann::json objects are key-sorted, so dump() is canonical.
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : detail) j[k] = v;
    return j.dump();
}

std::string hash_input(const AuditEntry& e) {
    std::string s;
    s += std::to_string(e.sequence);
    s += '\t';
    s += std::to_string(e.timestamp);
    s += '\t';
    s += e.actor;
    s += '\t';
    s += to_string(e.kind);
    s += '\t';
    s += e.detail;
    s += '\t';
    s += e.prev_hash;
    return s;
}

const AuditEntry& Log::append(const Event& event) {
    std::lock_guard lock(mu_);
    AuditEntry e;
    e.sequence = entries_.size();
    e.timestamp = event.timestamp;
    e.actor = event.actor;
    e.kind = event.kind;
    e.detail = render_detail(event.detail);
    e.prev_hash = entries_.empty() ? std::string(kZeroDigest)
                                   : entries_.back().entry_hash;
    e.entry_hash = sha256_hex(hash_input(e));
    entries_.push_back(std::move(e));
    return entries_.back();
}

std::vector<AuditEntry> Log::snapshot() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::size_t Log::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

VerifyResult verify_chain(const std::vector<AuditEntry>& entries) {
    std::string expected_prev(kZeroDigest);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const AuditEntry& e = entries[i];
        if (e.sequence != i) return Tampered{i};
        if (e.prev_hash != expected_prev) return Tampered{i};
        if (sha256_hex(hash_input(e)) != e.entry_hash) return Tampered{i};
        expected_prev = e.entry_hash;
    }
    return std::monostate{};
}

VerifyResult verify_chain(const Log& log) { return verify_chain(log.snapshot()); }

ChainHead chain_head(const std::vector<AuditEntry>& entries) {
    if (entries.empty()) return ChainHead{};
    return ChainHead{entries.size(), entries.back().entry_hash};
}

ChainHead chain_head(const Log& log) { return chain_head(log.snapshot()); }

VerifyResult verify_chain(const std::vector<AuditEntry>& entries,
                          const ChainHead& anchor) {
    if (VerifyResult structural = verify_chain(entries);
        !std::holds_alternative<std::monostate>(structural))
        return structural;
    if (entries.size() != anchor.count)
        return Tampered{std::min<std::uint64_t>(entries.size(), anchor.count)};
    const std::string& head =
        entries.empty() ? std::string(kZeroDigest) : entries.back().entry_hash;
    if (head != anchor.head_hash)
        return Tampered{entries.empty() ? 0 : entries.size() - 1};
    return std::monostate{};
}

std::vector<AuditEntry> edit_history(const Log& log, std::string_view record_id) {
    std::vector<AuditEntry> out;
    for (const AuditEntry& e : log.snapshot()) {
        if (e.kind != EventKind::fact_appended && e.kind != EventKind::fact_superseded)
            continue;
        auto j = nlohmann::json::parse(e.detail, nullptr, false);
        if (j.is_object() && j.value("record_id", "") == record_id)
            out.push_back(e);
    }
    return out;
}

}  // namespace umgr::audit
