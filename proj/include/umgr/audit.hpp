#pragma once

// Hash-chained, append-only audit log.
//
// Chain construction:
//   entry_hash(n) = SHA-256 over "sequence \t timestamp \t actor \t kind
//                    \t detail \t prev_hash" rendered canonically
//   prev_hash(n)  = entry_hash(n-1); entry 0 links to the all-zero digest.
//
// detail is a compact JSON object with lexicographically sorted keys, so the
// hashed bytes are identical on every platform.
//
// Single-writer: appends are serialized behind a mutex; readers take
// snapshots.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "umgr/common.hpp"

namespace umgr::audit {

enum class EventKind {
    fact_appended,
    fact_superseded,
    decision_rendered,
    session_event,
    bundle_issued,
    compensation_attributed,
};

std::string_view to_string(EventKind k);
std::optional<EventKind> event_kind_from_string(std::string_view s);

struct Event {
    Timestamp timestamp = 0;
    std::string actor;
    EventKind kind = EventKind::session_event;
    std::map<std::string, std::string> detail;
};

struct AuditEntry {
    std::uint64_t sequence = 0;
    Timestamp timestamp = 0;
    std::string actor;
    EventKind kind = EventKind::session_event;
    std::string detail;     // canonical JSON, sorted keys
    std::string prev_hash;  // 64 hex chars
    std::string entry_hash;

    friend bool operator==(const AuditEntry&, const AuditEntry&) = default;
};

// Canonical byte string the entry hash is computed over.
std::string hash_input(const AuditEntry& e);

// Sorted-key compact JSON rendering of a detail map.
std::string render_detail(const std::map<std::string, std::string>& detail);

struct Tampered {
    std::uint64_t first_bad_sequence = 0;

    friend bool operator==(const Tampered&, const Tampered&) = default;
};

// ok == monostate
using VerifyResult = std::variant<std::monostate, Tampered>;

// Trusted anchor for a chain. Structural verification alone cannot see a
// truncated tail (a shorter chain is still a valid chain); checking against
// a head captured at append time closes that hole.
struct ChainHead {
    std::uint64_t count = 0;
    std::string head_hash{kZeroDigest};

    friend bool operator==(const ChainHead&, const ChainHead&) = default;
};

class Log {
  public:
    Log() = default;

    // Adopts previously persisted entries verbatim, hashes included, so a
    // tampered store still looks tampered to verify_chain.
    explicit Log(std::vector<AuditEntry> entries) : entries_(std::move(entries)) {}

    Log(const Log& o) : entries_(o.snapshot()) {}
    Log& operator=(const Log& o) {
        if (this != &o) entries_ = o.snapshot();
        return *this;
    }

    const AuditEntry& append(const Event& event);

    std::vector<AuditEntry> snapshot() const;
    std::size_t size() const;

    friend bool operator==(const Log& a, const Log& b) {
        return a.snapshot() == b.snapshot();
    }

  private:
    mutable std::mutex mu_;
    std::vector<AuditEntry> entries_;
};

// ok iff every entry's hash recomputes, sequences are 0..n-1, and each
// prev_hash links to the previous entry. Reports the earliest bad sequence
// (position index for sequence-numbering violations).
VerifyResult verify_chain(const std::vector<AuditEntry>& entries);
VerifyResult verify_chain(const Log& log);

ChainHead chain_head(const std::vector<AuditEntry>& entries);
ChainHead chain_head(const Log& log);

// Structural verification plus the anchor comparison; detects tail
// truncation and extension as well.
VerifyResult verify_chain(const std::vector<AuditEntry>& entries,
                          const ChainHead& anchor);

// fact_appended / fact_superseded entries whose detail names record_id.
std::vector<AuditEntry> edit_history(const Log& log, std::string_view record_id);

}  // namespace umgr::audit
