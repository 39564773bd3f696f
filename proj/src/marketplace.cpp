#include "umgr/marketplace.hpp"

#include <fstream>

#include "umgr/serialize.hpp"

namespace umgr {

namespace fs = std::filesystem;

Listing create_listing(const MarketplaceState& state, const std::string& producer,
                       std::set<FactCategory> advertised, std::string blurb,
                       std::string contact) {
    if (!state.subjects.contains(producer))
        throw Error(Errc::UnknownEntity, "unknown producer '" + producer + "'");

    std::set<FactCategory> present;
    for (const auto& [id, record] : state.records)
        if (record.owner == producer)
            for (const Fact& f : current_facts(record)) present.insert(f.category);
    for (FactCategory c : advertised)
        if (!present.contains(c))
            throw Error(Errc::InvariantViolation,
                        "listing advertises '" + std::string(to_string(c)) +
                            "' which the producer's records do not contain");

    Listing l;
    l.listing_id = derived_id("LST", producer + "|" + blurb + "|" +
                                         std::to_string(state.listings.size()));
    l.producer = producer;
    l.advertised_categories = std::move(advertised);
    l.blurb = std::move(blurb);
    l.contact = std::move(contact);
    return l;
}

std::vector<Listing> search(const MarketplaceState& state,
                            const std::set<FactCategory>& query) {
    if (query.empty()) throw Error(Errc::EmptyQuery, "search needs categories");
    std::vector<Listing> out;
    for (const auto& [id, listing] : state.listings) {
        bool hit = std::any_of(query.begin(), query.end(), [&](FactCategory c) {
            return listing.advertised_categories.contains(c);
        });
        if (hit) out.push_back(listing);
    }
    return out;
}

namespace {

Json listing_to_json(const Listing& l) {
    return Json{{"listing_id", l.listing_id},
                {"producer", l.producer},
                {"advertised_categories", categories_to_json(l.advertised_categories)},
                {"blurb", l.blurb},
                {"contact", l.contact}};
}

Listing listing_from_json(const Json& j) {
    Listing l;
    l.listing_id = j.at("listing_id");
    l.producer = j.at("producer");
    l.advertised_categories = categories_from_json(j.at("advertised_categories"));
    l.blurb = j.at("blurb");
    l.contact = j.at("contact");
    return l;
}

void write_store_file(const fs::path& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(Errc::StoreCorrupt, "cannot write " + path.string());
    out << kStoreHeader << '\n';
    for (const std::string& line : lines) out << line << '\n';
}

std::vector<std::string> read_store_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(Errc::StoreCorrupt, "cannot read " + path.string());
    std::string header;
    if (!std::getline(in, header))
        throw Error(Errc::StoreCorrupt, "empty store file " + path.string());
    if (header != kStoreHeader) {
        if (header.rfind("UMGR-STORE", 0) == 0)
            throw Error(Errc::VersionMismatch,
                        "store format '" + header + "' is not supported");
        throw Error(Errc::StoreCorrupt, "missing store header in " + path.string());
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

template <typename T, typename ToJson>
std::vector<std::string> json_lines(const std::map<std::string, T>& entities,
                                    ToJson&& to) {
    std::vector<std::string> lines;
    lines.reserve(entities.size());
    for (const auto& [id, e] : entities) lines.push_back(to(e).dump());
    return lines;
}

}  // namespace

void persist(const MarketplaceState& state, const StorePaths& paths) {
    fs::create_directories(paths.application());
    fs::create_directories(paths.record());
    fs::create_directories(paths.audit());

    write_store_file(paths.application() / "subjects.txt",
                     json_lines(state.subjects, [](const Subject& s) { return to_json(s); }));
    write_store_file(paths.application() / "listings.txt",
                     json_lines(state.listings, listing_to_json));
    write_store_file(
        paths.application() / "sessions.txt",
        json_lines(state.sessions,
                   [](const NegotiationSession& s) { return to_json(s); }));
    write_store_file(paths.record() / "records.txt",
                     json_lines(state.records, [](const Record& r) { return to_json(r); }));
    write_store_file(paths.record() / "bundles.txt",
                     json_lines(state.bundles, [](const Bundle& b) { return to_json(b); }));

    std::vector<std::string> audit_lines;
    for (const audit::AuditEntry& e : state.audit_log.snapshot())
        audit_lines.push_back(audit_entry_to_line(e));
    write_store_file(paths.audit() / "log.txt", audit_lines);

    audit::ChainHead head = audit::chain_head(state.audit_log);
    write_store_file(paths.audit() / "head.txt",
                     {std::to_string(head.count) + "\t" + head.head_hash});
}

MarketplaceState load(const StorePaths& paths) try {
    MarketplaceState state;
    for (const std::string& line : read_store_file(paths.application() / "subjects.txt")) {
        Subject s = subject_from_json(Json::parse(line));
        state.subjects.emplace(s.subject_id, std::move(s));
    }
    for (const std::string& line : read_store_file(paths.application() / "listings.txt")) {
        Listing l = listing_from_json(Json::parse(line));
        state.listings.emplace(l.listing_id, std::move(l));
    }
    for (const std::string& line : read_store_file(paths.application() / "sessions.txt")) {
        NegotiationSession s = session_from_json(Json::parse(line));
        state.sessions.emplace(s.session_id, std::move(s));
    }
    for (const std::string& line : read_store_file(paths.record() / "records.txt")) {
        Record r = record_from_json(Json::parse(line));
        state.records.emplace(r.record_id, std::move(r));
    }
    for (const std::string& line : read_store_file(paths.record() / "bundles.txt")) {
        Bundle b = bundle_from_json(Json::parse(line));
        state.bundles.emplace(b.bundle_id, std::move(b));
    }

    // Audit entries reload verbatim; replaying them through Log::append would
    // re-derive hashes and mask tampering.
    state.audit_log = load_audit_log(paths);
    return state;
} catch (const Json::exception& e) {
    throw Error(Errc::StoreCorrupt, std::string("malformed store content: ") + e.what());
}

audit::Log load_audit_log(const StorePaths& paths) {
    std::vector<audit::AuditEntry> entries;
    for (const std::string& line : read_store_file(paths.audit() / "log.txt"))
        entries.push_back(audit_entry_from_line(line));
    return audit::Log(std::move(entries));
}

audit::VerifyResult verify_audit_store(const StorePaths& paths) {
    audit::Log log = load_audit_log(paths);

    std::vector<std::string> head_lines = read_store_file(paths.audit() / "head.txt");
    if (head_lines.size() != 1)
        throw Error(Errc::StoreCorrupt, "audit head record missing");
    auto tab = head_lines[0].find('\t');
    if (tab == std::string::npos)
        throw Error(Errc::StoreCorrupt, "malformed audit head record");
    audit::ChainHead anchor{std::stoull(head_lines[0].substr(0, tab)),
                            head_lines[0].substr(tab + 1)};
    return audit::verify_chain(log.snapshot(), anchor);
}

}  // namespace umgr
