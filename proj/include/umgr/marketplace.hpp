#pragma once

// Marketplace state and its three partitioned stores.
//
// Partitioning rule: the application store holds subjects, listings, and
// negotiation sessions; the record store holds records and bundles (the only
// places medical facts ever serialize); the audit store holds the hash
// chain. Wiping the application store can never lose medical data.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "umgr/artifact.hpp"
#include "umgr/audit.hpp"
#include "umgr/core.hpp"
#include "umgr/negotiation.hpp"

namespace umgr {

struct Listing {
    std::string listing_id;
    std::string producer;
    std::set<FactCategory> advertised_categories;
    std::string blurb;
    std::string contact;  // opaque address token

    friend bool operator==(const Listing&, const Listing&) = default;
};

struct StorePaths {
    std::filesystem::path root;

    std::filesystem::path application() const { return root / "application"; }
    std::filesystem::path record() const { return root / "record"; }
    std::filesystem::path audit() const { return root / "audit"; }
};

struct MarketplaceState {
    std::map<std::string, Subject> subjects;
    std::map<std::string, Record> records;
    std::map<std::string, Listing> listings;
    std::map<std::string, NegotiationSession> sessions;
    std::map<std::string, Bundle> bundles;
    audit::Log audit_log;

    friend bool operator==(const MarketplaceState&, const MarketplaceState&) = default;
};

// Listings advertise only what the producer's records actually contain at
// listing time. Throws Error{UnknownEntity, InvariantViolation}.
Listing create_listing(const MarketplaceState& state, const std::string& producer,
                       std::set<FactCategory> advertised, std::string blurb,
                       std::string contact);

// Listings whose advertised categories intersect the query. Contact
// information only; never fact contents. Throws Error{EmptyQuery}.
std::vector<Listing> search(const MarketplaceState& state,
                            const std::set<FactCategory>& query);

// Writes every store file under the three roots (creating directories),
// canonical NDJSON with the "UMGR-STORE v1" header; the audit store keeps
// the tab-separated chain format.
void persist(const MarketplaceState& state, const StorePaths& paths);

// Inverse of persist. Throws Error{VersionMismatch} on a future format
// header and Error{SyntaxError} on malformed content. Does not verify the
// audit chain; services do that at startup.
MarketplaceState load(const StorePaths& paths);

// Just the audit store, for verification tooling.
audit::Log load_audit_log(const StorePaths& paths);

// Anchored verification of the persisted audit store: structural chain
// checks plus the head record (count + head hash) written at persist time,
// so tail truncation is just as visible as an in-place edit.
audit::VerifyResult verify_audit_store(const StorePaths& paths);

}  // namespace umgr
