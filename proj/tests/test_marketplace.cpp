#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "umgr/serialize.hpp"
#include "umgr/service.hpp"

using namespace umgr;
using namespace umgr::test;
namespace fs = std::filesystem;

namespace {

struct TempStore {
    fs::path root;

    TempStore() {
        static std::atomic<int> counter{0};
        root = fs::temp_directory_path() /
               ("umgr-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter++));
        fs::remove_all(root);
    }
    ~TempStore() { fs::remove_all(root); }

    StorePaths paths() const { return StorePaths{root}; }
};

MarketplaceState small_state(Rng& rng, std::size_t records = 3, std::size_t sessions = 2) {
    MarketplaceState st;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    Subject ria = subject("ria", {RoleKind::researcher});
    ria.parameters["trust_level"] = Value::number(3);
    st.subjects = {{"alice", alice}, {"drkim", drkim}, {"ria", ria}};

    for (std::size_t i = 0; i < records; ++i) {
        Record r = gen_record(rng, "R" + std::to_string(i), alice, drkim, st.audit_log);
        st.records[r.record_id] = r;
    }
    for (std::size_t i = 0; i < sessions; ++i) {
        Proposal p;
        p.proposal_id = "P-1";
        p.from_party = Party::consumer;
        p.requested_categories = gen_categories(rng, 2);
        p.policy_terms = parse_policy("permit read to researcher", "POL-s" + std::to_string(i),
                                      "alice");
        p.price = Amount{std::int64_t(pick(rng, 1000))};
        p.round = 1;
        NegotiationSession s =
            open_session("alice", "ria", "R" + std::to_string(i % records), p);
        if (pick(rng, 2)) s = respond(s, Accept{Party::producer});
        st.sessions[s.session_id] = s;
    }

    // a listing over categories actually present
    std::set<FactCategory> present;
    for (const auto& [id, r] : st.records)
        for (const Fact& f : current_facts(r)) present.insert(f.category);
    if (!present.empty()) {
        Listing l = create_listing(st, "alice", {*present.begin()}, "desk data",
                                   "alice@market");
        st.listings[l.listing_id] = l;
    }

    // one issued bundle so the record store has both entity kinds
    const Record& r0 = st.records.at("R0");
    FilteredRecord fr = apply_filter(r0, Filter{"f-all", {}, {}});
    Bundle b = issue_bundle(fr, parse_policy("permit read to researcher", "POL-b", "alice"),
                            "alice", "ria", kT0, st.audit_log);
    st.bundles[b.bundle_id] = b;
    return st;
}

}  // namespace

TEST_CASE("search returns intersecting listings only, and no fact bodies") {
    Rng rng(41);
    MarketplaceState st;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    st.subjects = {{"alice", alice}, {"drkim", drkim}};
    st.records["R1"] = record_with(
        "R1", alice, drkim,
        {FactCategory::lab_marker, FactCategory::vaccination, FactCategory::genetic},
        st.audit_log);

    auto add = [&](std::set<FactCategory> cats, const std::string& blurb) {
        Listing l = create_listing(st, "alice", std::move(cats), blurb, "alice@x");
        st.listings[l.listing_id] = l;
    };
    add({FactCategory::lab_marker}, "labs");
    add({FactCategory::lab_marker, FactCategory::vaccination}, "labs+vax");
    add({FactCategory::genetic}, "genes");
    add({FactCategory::vaccination}, "vax");
    add({FactCategory::genetic, FactCategory::vaccination}, "mixed");

    auto hits = search(st, {FactCategory::lab_marker});
    CHECK(hits.size() == 2);
    for (const Listing& l : hits)
        CHECK(l.advertised_categories.count(FactCategory::lab_marker) == 1);

    CHECK(search(st, {FactCategory::psychiatric}).empty());
    CHECK_THROWS_AS(search(st, {}), Error);

    // union over singleton queries equals the query over the union set
    std::set<std::string> union_ids;
    for (FactCategory c : {FactCategory::lab_marker, FactCategory::genetic})
        for (const Listing& l : search(st, {c})) union_ids.insert(l.listing_id);
    std::set<std::string> joint_ids;
    for (const Listing& l : search(st, {FactCategory::lab_marker, FactCategory::genetic}))
        joint_ids.insert(l.listing_id);
    CHECK(union_ids == joint_ids);

    // and the same over random listings and random queries
    for (int round = 0; round < 30; ++round) {
        MarketplaceState rnd;
        rnd.subjects = st.subjects;
        rnd.records = st.records;
        for (int i = 0; i < 6; ++i) {
            Listing l;
            l.listing_id = "LST-" + std::to_string(round) + "-" + std::to_string(i);
            l.producer = "alice";
            l.advertised_categories = gen_categories(rng, 3);
            l.contact = "alice@x";
            rnd.listings[l.listing_id] = l;
        }
        std::set<FactCategory> query = gen_categories(rng, 3);
        std::set<std::string> by_union, by_query;
        for (FactCategory c : query)
            for (const Listing& l : search(rnd, {c})) by_union.insert(l.listing_id);
        for (const Listing& l : search(rnd, query)) by_query.insert(l.listing_id);
        CHECK(by_union == by_query);
    }
}

TEST_CASE("listings cannot advertise categories the records lack") {
    MarketplaceState st;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    st.subjects = {{"alice", alice}, {"drkim", drkim}};
    st.records["R1"] =
        record_with("R1", alice, drkim, {FactCategory::lab_marker}, st.audit_log);
    CHECK_THROWS_AS(
        create_listing(st, "alice", {FactCategory::genetic}, "nope", "alice@x"), Error);
    CHECK_THROWS_AS(create_listing(st, "nobody", {FactCategory::lab_marker}, "x", "y"),
                    Error);
}

TEST_CASE("persist/load round-trips the whole state") {
    Rng rng(42);
    SUBCASE("empty state") {
        TempStore tmp;
        MarketplaceState st;
        persist(st, tmp.paths());
        CHECK(load(tmp.paths()) == st);
    }
    SUBCASE("populated state") {
        TempStore tmp;
        MarketplaceState st = small_state(rng, 5, 3);
        persist(st, tmp.paths());
        MarketplaceState back = load(tmp.paths());
        CHECK(back.subjects == st.subjects);
        CHECK(back.records == st.records);
        CHECK(back.listings == st.listings);
        CHECK(back.sessions == st.sessions);
        CHECK(back.bundles == st.bundles);
        CHECK(back.audit_log == st.audit_log);
        CHECK(back == st);
        CHECK(oracle_chain_ok(back.audit_log.snapshot()));
    }
}

TEST_CASE("future store versions are refused") {
    Rng rng(43);
    TempStore tmp;
    MarketplaceState st = small_state(rng);
    persist(st, tmp.paths());

    fs::path subjects = tmp.paths().application() / "subjects.txt";
    std::string content;
    {
        std::ifstream in(subjects);
        std::getline(in, content);
    }
    CHECK(content == kStoreHeader);
    {
        std::ofstream out(subjects, std::ios::trunc);
        out << "UMGR-STORE v2\n";
    }
    try {
        load(tmp.paths());
        FAIL("expected VersionMismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::VersionMismatch);
    }
}

TEST_CASE("record facts never serialize into the application store") {
    Rng rng(44);
    TempStore tmp;
    MarketplaceState st = small_state(rng, 4, 2);
    persist(st, tmp.paths());

    // collect every fact body and id in the record store
    std::vector<std::string> bodies;
    for (const auto& [id, r] : st.records)
        for (const Fact& f : r.facts) bodies.push_back(f.body);

    for (const char* name : {"subjects.txt", "listings.txt", "sessions.txt"}) {
        std::ifstream in(tmp.paths().application() / name);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        for (const std::string& body : bodies) CHECK(content.find(body) == std::string::npos);
    }
}

TEST_CASE("bundle documents carry three sections and a true digest") {
    Rng rng(45);
    audit::Log log;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    Record r = record_with("R1", alice, drkim,
                           {FactCategory::lab_marker, FactCategory::vaccination}, log);
    // free text with separators must survive the tab-separated fact lines
    Context author = ctx_of(drkim, RoleKind::physician);
    Fact nasty = fact("n1", FactCategory::lab_marker, author, "a\tb\nc\\d");
    r = append_fact(r, nasty, author, log);
    FilteredRecord fr = apply_filter(r, Filter{"f", {FactCategory::lab_marker}, {}});
    Bundle b = issue_bundle(
        fr,
        parse_policy("permit read to researcher scope lab_marker price 2.50\n"
                     "deny read to employer",
                     "POL-x", "alice"),
        "alice", "ria", kT0, log);

    std::string doc = render_bundle_document(b);
    CHECK(doc.find("[meta]") != std::string::npos);
    CHECK(doc.find("[facts]") != std::string::npos);
    CHECK(doc.find("[policy]") != std::string::npos);
    CHECK(doc.find("[provenance]") != std::string::npos);
    CHECK(bundle_digest(doc) == sha256_hex(doc));
    CHECK(bundle_digest(doc) == oracle_sha256_hex(doc));

    Bundle back = parse_bundle_document(doc);
    CHECK(back == b);

    std::string versioned = doc;
    versioned.replace(0, std::string(kBundleHeader).size(), "UMGR-BUNDLE v9");
    CHECK_THROWS_AS(parse_bundle_document(versioned), Error);
}

TEST_CASE("service: register, list, search, negotiate, use, restart") {
    Rng rng(46);
    TempStore tmp;
    MarketplaceState seeded;
    {
        Subject alice = subject("alice");
        Subject drkim = subject("drkim", {RoleKind::physician});
        seeded.subjects = {{"alice", alice}, {"drkim", drkim}};
        seeded.records["R1"] = record_with(
            "R1", alice, drkim, {FactCategory::lab_marker, FactCategory::psychiatric},
            seeded.audit_log);
        persist(seeded, tmp.paths());
    }

    std::string bundle_id;
    std::uint16_t port = 0;
    {
        Service service(tmp.paths(), 0);
        port = service.port();
        Client client("127.0.0.1", port);

        Subject ria = subject("ria", {RoleKind::researcher});
        client.call("register_subject", Json{{"subject", to_json(ria)}});

        Json listing = client.call("create_listing",
                                   Json{{"producer", "alice"},
                                        {"advertised_categories", Json::array({"lab_marker"})},
                                        {"blurb", "cholesterol panels"},
                                        {"contact", "alice@market"}});
        CHECK(listing.at("listing").at("producer") == "alice");

        Json found = client.call("search", Json{{"categories", Json::array({"lab_marker"})}});
        REQUIRE(found.at("listings").size() == 1);
        CHECK(found.at("listings")[0].at("contact") == "alice@market");
        CHECK(found.dump().find("cholesterol panel bodies") == std::string::npos);

        Proposal p;
        p.proposal_id = "P-1";
        p.from_party = Party::consumer;
        p.requested_categories = {FactCategory::lab_marker};
        p.policy_terms =
            parse_policy("permit read to researcher scope lab_marker", "POL-1", "alice");
        p.price = Amount{400};
        p.round = 1;
        Json opened = client.call("open_session", Json{{"producer", "alice"},
                                                       {"consumer", "ria"},
                                                       {"record_id", "R1"},
                                                       {"initial", to_json(p)},
                                                       {"now", kT0}});
        NegotiationSession session = session_from_json(opened.at("session"));
        CHECK(session.state == SessionState::AwaitingProducer);

        Json agreed = client.call(
            "respond",
            Json{{"session_id", session.session_id},
                 {"response", Json{{"type", "accept"}, {"by", "producer"}}},
                 {"now", kT0 + 60}});
        REQUIRE(agreed.contains("bundle_id"));
        bundle_id = agreed.at("bundle_id");

        Json fetched = client.call(
            "fetch_bundle", Json{{"bundle_id", bundle_id}, {"requester", "ria"}});
        CHECK(fetched.at("digest") ==
              bundle_digest(fetched.at("document").get<std::string>()));
        CHECK_THROWS_AS(client.call("fetch_bundle", Json{{"bundle_id", bundle_id},
                                                         {"requester", "eve"}}),
                        Error);

        Json ctx = to_json(ctx_of(ria, RoleKind::researcher, kT0 + 120));
        Json used = client.call("request_use", Json{{"bundle_id", bundle_id},
                                                    {"action", "read"},
                                                    {"categories", Json::array({"lab_marker"})},
                                                    {"context", ctx},
                                                    {"now", kT0 + 120}});
        CHECK(used.at("decision").at("outcome") == "permit");

        Json history = client.call("audit_history", Json{{"record_id", "R1"}});
        CHECK(history.at("entries").size() == 2);  // the two seeded facts

        service.stop();
    }

    // state survives restart from the stores
    {
        Service service(tmp.paths(), 0);
        Client client("127.0.0.1", service.port());
        Json found = client.call("search", Json{{"categories", Json::array({"lab_marker"})}});
        CHECK(found.at("listings").size() == 1);
        Json fetched = client.call("fetch_bundle",
                                   Json{{"bundle_id", bundle_id}, {"requester", "ria"}});
        CHECK(fetched.at("digest").get<std::string>().size() == 64);
        service.stop();
    }
}

TEST_CASE("service: aggregation endpoint with compensation and conflict reporting") {
    TempStore tmp;
    MarketplaceState seeded;
    Subject alice = subject("alice");
    Subject bert = subject("bert");
    Subject drkim = subject("drkim", {RoleKind::physician});
    Subject bo = subject("bo", {RoleKind::broker, RoleKind::researcher});
    seeded.subjects = {{"alice", alice}, {"bert", bert}, {"drkim", drkim}, {"bo", bo}};
    seeded.records["R1"] =
        record_with("R1", alice, drkim, {FactCategory::lab_marker}, seeded.audit_log);
    seeded.records["R2"] =
        record_with("R2", bert, drkim, {FactCategory::vaccination}, seeded.audit_log);

    const std::string yes = "permit read to broker\npermit aggregate to broker";
    const std::string no = "permit read to broker\ndeny aggregate to broker";
    FilteredRecord fr1 = apply_filter(seeded.records["R1"], Filter{"f1", {}, {}});
    FilteredRecord fr2 = apply_filter(seeded.records["R2"], Filter{"f2", {}, {}});
    Bundle b1 = issue_bundle(fr1, parse_policy(yes, "POL-yes-1", "alice"), "alice", "bo",
                             kT0, seeded.audit_log);
    Bundle b2 = issue_bundle(fr2, parse_policy(yes, "POL-yes-2", "bert"), "bert", "bo",
                             kT0, seeded.audit_log);
    Bundle b3 = issue_bundle(fr2, parse_policy(no, "POL-no", "bert"), "bert", "bo",
                             kT0 + 1, seeded.audit_log);
    seeded.bundles = {{b1.bundle_id, b1}, {b2.bundle_id, b2}, {b3.bundle_id, b3}};
    persist(seeded, tmp.paths());

    Service service(tmp.paths(), 0);
    Client client("127.0.0.1", service.port());
    Json ctx = to_json(ctx_of(bo, RoleKind::broker, kT0 + 300));

    Json ok = client.call("aggregate",
                          Json{{"bundle_ids", Json::array({b1.bundle_id, b2.bundle_id})},
                               {"requested_action", "read"},
                               {"context", ctx},
                               {"now", kT0 + 300},
                               {"payment", "9.00"}});
    CHECK(ok.at("elements").size() == 2);
    std::int64_t total = 0;
    for (const Json& c : ok.at("compensation"))
        total += parse_amount(c.at("amount").get<std::string>())->cents;
    CHECK(total == 900);

    try {
        client.call("aggregate",
                    Json{{"bundle_ids", Json::array({b1.bundle_id, b3.bundle_id})},
                         {"requested_action", "read"},
                         {"context", ctx},
                         {"now", kT0 + 300}});
        FAIL("expected AggregationDenied over the wire");
    } catch (const AggregationDenied& e) {
        bool named = false;
        for (const auto& [pid, d] : e.conflicts())
            if (pid == "POL-no" && !d.permitted()) named = true;
        CHECK(named);
    }
    service.stop();
}

TEST_CASE("service refuses tampered audit stores at startup") {
    Rng rng(47);
    TempStore tmp;
    MarketplaceState st = small_state(rng);
    persist(st, tmp.paths());

    fs::path log_file = tmp.paths().audit() / "log.txt";
    std::vector<std::string> lines;
    {
        std::ifstream in(log_file);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    REQUIRE(lines.size() > 3);
    lines[3][lines[3].find('\t') + 1] ^= 1;  // flip a byte inside entry 2
    {
        std::ofstream out(log_file, std::ios::trunc);
        for (const std::string& l : lines) out << l << '\n';
    }

    try {
        Service service(tmp.paths(), 0);
        FAIL("expected StoreCorrupt");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::StoreCorrupt);
    }
}

TEST_CASE("service refuses a truncated audit store at startup") {
    Rng rng(49);
    TempStore tmp;
    MarketplaceState st = small_state(rng);
    persist(st, tmp.paths());

    fs::path log_file = tmp.paths().audit() / "log.txt";
    std::vector<std::string> lines;
    {
        std::ifstream in(log_file);
        std::string line;
        while (std::getline(in, line)) lines.push_back(line);
    }
    lines.pop_back();  // drop the newest entry
    {
        std::ofstream out(log_file, std::ios::trunc);
        for (const std::string& l : lines) out << l << '\n';
    }

    try {
        Service service(tmp.paths(), 0);
        FAIL("expected StoreCorrupt");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::StoreCorrupt);
    }
}

TEST_CASE("a second service on the same store refuses to start") {
    TempStore tmp;
    MarketplaceState st;
    persist(st, tmp.paths());

    Service first(tmp.paths(), 0);
    try {
        Service second(tmp.paths(), 0);
        FAIL("expected the lock to hold");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::BindFailure);
    }
    first.stop();

    // once released, the store is usable again
    Service third(tmp.paths(), 0);
    third.stop();
}

TEST_CASE("property: persisted prefixes reload consistently") {
    Rng rng(48);
    for (int i = 0; i < 20; ++i) {
        TempStore tmp;
        MarketplaceState st = small_state(rng, 1 + pick(rng, 4), pick(rng, 4));
        persist(st, tmp.paths());
        MarketplaceState back = load(tmp.paths());
        REQUIRE(back == st);
        REQUIRE(std::holds_alternative<std::monostate>(verify_chain(back.audit_log)));
        // every session references a known record; bundles reference real records
        for (const auto& [id, s] : back.sessions) REQUIRE(back.records.count(s.record_id));
        for (const auto& [id, b] : back.bundles)
            for (const auto& pe : b.license.provenance)
                if (pe.record_backed()) REQUIRE(back.records.count(pe.source_record_id));
    }
}
