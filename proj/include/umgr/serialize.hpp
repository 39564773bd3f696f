#pragma once

// Canonical serialization: JSON forms for the wire and the stores, the
// three-section bundle document, and the tab-separated audit log lines.
//
// Canonical means byte-stable: JSON objects render with sorted keys,
// numbers render with the shortest exact form, lines end with LF. Store
// files start with the format version header "UMGR-STORE v1".

#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "umgr/artifact.hpp"
#include "umgr/audit.hpp"
#include "umgr/core.hpp"
#include "umgr/negotiation.hpp"
#include "umgr/policy.hpp"

namespace umgr {

inline constexpr std::string_view kStoreHeader = "UMGR-STORE v1";
inline constexpr std::string_view kBundleHeader = "UMGR-BUNDLE v1";

using Json = nlohmann::json;

Json to_json(const Value& v);
Value value_from_json(const Json& j);

Json to_json(const Fact& f);
Fact fact_from_json(const Json& j);

Json to_json(const Record& r);
Record record_from_json(const Json& j);

Json to_json(const Subject& s);
Subject subject_from_json(const Json& j);

Json to_json(const Environment& e);
Environment environment_from_json(const Json& j);

Json to_json(const Context& c);
Context context_from_json(const Json& j);

Json to_json(const UsagePolicy& p);
UsagePolicy policy_from_json(const Json& j);

Json to_json(const Decision& d);
Decision decision_from_json(const Json& j);

Json to_json(const Proposal& p);
Proposal proposal_from_json(const Json& j);

Json to_json(const NegotiationSession& s);
NegotiationSession session_from_json(const Json& j);

Json to_json(const License& l);
License license_from_json(const Json& j);

Json to_json(const Bundle& b);
Bundle bundle_from_json(const Json& j);

Json to_json(const audit::AuditEntry& e);
audit::AuditEntry audit_entry_from_json(const Json& j);

std::set<FactCategory> categories_from_json(const Json& j);
Json categories_to_json(const std::set<FactCategory>& cats);

// Tab-separated audit log line (no trailing newline) and its inverse.
std::string audit_entry_to_line(const audit::AuditEntry& e);
audit::AuditEntry audit_entry_from_line(const std::string& line);

// TSV-safe escaping for free text (\t, \n, \r, backslash).
std::string tsv_escape(std::string_view text);
std::string tsv_unescape(std::string_view text);

// The consumer-facing bundle document: header, [meta], [facts] (one
// tab-separated fact per line), [policy] (DSL text), [provenance].
std::string render_bundle_document(const Bundle& bundle);

// Hex digest accompanying every bundle document.
std::string bundle_digest(const std::string& document);

// Reconstructs a filtered-record bundle from its document. Aggregate
// documents are distribution-only and cannot round-trip (constituent
// licenses live in the record store). Throws Error{SyntaxError,
// VersionMismatch}.
Bundle parse_bundle_document(const std::string& document);

}  // namespace umgr
