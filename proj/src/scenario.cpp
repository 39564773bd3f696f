#include "umgr/scenario.hpp"

#include <fstream>
#include <sstream>

#include "umgr/serialize.hpp"
#include "umgr/service.hpp"

namespace umgr {

namespace fs = std::filesystem;

const std::vector<std::string>& scenario_names() {
    static const std::vector<std::string> names{
        "marketplace_negotiation", "broker_aggregation", "remote_access",
        "employer_monitoring", "custom_care",
    };
    return names;
}

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::UnknownEntity, "missing fixture file " + path.string());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

Json load_json(const fs::path& path) { return Json::parse(slurp(path)); }

// Replaces $NAME tokens in fixture policy text.
std::string substitute(std::string text,
                       const std::map<std::string, std::string>& vars) {
    for (const auto& [name, value] : vars) {
        const std::string token = "$" + name;
        for (std::size_t at = text.find(token); at != std::string::npos;
             at = text.find(token, at + value.size()))
            text.replace(at, token.size(), value);
    }
    return text;
}

struct Clock {
    Timestamp now;
    Timestamp tick(Timestamp step = 60) { return now += step; }
};

Environment env_at(Timestamp t, const std::string& location, DeviceType device) {
    return make_environment(t, location, device);
}

// Transcript writer: every line flows through here so scenarios stay
// byte-stable by construction.
struct Transcript {
    std::ostringstream out;

    void line(const std::string& s) { out << s << '\n'; }
    std::string str() const { return out.str(); }
};

struct Fixture {
    Json config;
    fs::path root;

    std::string policy_text(const std::string& file,
                            const std::map<std::string, std::string>& vars) const {
        return substitute(slurp(root / file), vars);
    }
};

}  // namespace

MarketplaceState seed_state_from_fixture(const fs::path& fixture_path) {
    MarketplaceState state;

    for (const Json& sj : load_json(fixture_path / "subjects.json")) {
        Subject s = subject_from_json(sj);
        state.subjects[s.subject_id] = s;
    }

    // records.txt: "record <id> owner <subject>" then "fact <id> <category>
    // <author> <role> <date> <body...>" lines, seeded through append_fact so
    // every fact lands in the audit chain.
    std::istringstream in(slurp(fixture_path / "records.txt"));
    std::string line;
    std::string current;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "record") {
            std::string id, kw, owner;
            ls >> id >> kw >> owner;
            if (kw != "owner") throw Error(Errc::SyntaxError, "bad record line: " + line);
            Record r;
            r.record_id = id;
            r.owner = owner;
            state.records[id] = r;
            current = id;
        } else if (word == "fact") {
            std::string fact_id, category, author, role, date;
            ls >> fact_id >> category >> author >> role >> date;
            std::string body;
            std::getline(ls, body);
            if (!body.empty() && body.front() == ' ') body.erase(0, 1);

            Fact f;
            f.fact_id = fact_id;
            f.category = *category_from_string(category);
            f.author_subject = author;
            f.author_role = *role_from_string(role);
            auto t = parse_rfc3339(date);
            if (!t) throw Error(Errc::SyntaxError, "bad date in: " + line);
            f.recorded_at = *t;
            f.body = body;

            Context ctx = make_context(state.subjects.at(author), f.author_role,
                                       env_at(f.recorded_at, "clinic", DeviceType::certified));
            state.records[current] =
                append_fact(state.records.at(current), f, ctx, state.audit_log);
        } else {
            throw Error(Errc::SyntaxError, "bad fixture line: " + line);
        }
    }
    return state;
}

namespace {

// --- shared wire helpers ---------------------------------------------------

Json subject_payload(const MarketplaceState& seeded, const std::string& id) {
    return Json{{"subject", to_json(seeded.subjects.at(id))}};
}

Json context_payload(const MarketplaceState& seeded, const std::string& subject_id,
                     RoleKind role, Timestamp t, const std::string& location,
                     DeviceType device) {
    Context ctx = make_context(seeded.subjects.at(subject_id), role,
                               env_at(t, location, device));
    return to_json(ctx);
}

Proposal make_proposal(const std::string& policy_text, const std::string& producer,
                       const std::set<FactCategory>& categories, Amount price,
                       std::uint32_t round, Party from, const std::string& tag) {
    Proposal p;
    p.proposal_id = "P-" + tag + "-" + std::to_string(round);
    p.from_party = from;
    p.requested_categories = categories;
    p.policy_terms = parse_policy(policy_text, "POL-" + tag, producer);
    p.price = price;
    p.round = round;
    return p;
}

std::string describe_decision(const Json& dj) {
    Decision d = decision_from_json(dj);
    std::string s = d.permitted() ? "permit" : "deny";
    s += " (" + d.reason;
    if (d.permitted() && d.obligations.price)
        s += ", price owed " + to_string(*d.obligations.price);
    if (d.permitted() && d.obligations.attribution) s += ", attribution required";
    s += ")";
    return s;
}

// Drives one negotiation over the wire with client-side strategies. Returns
// the terminal session JSON response (with bundle_id when agreed).
Json negotiate(Client& client, Transcript& t, Clock& clock, const std::string& producer, const std::string& consumer,
               const std::string& record_id, Proposal initial,
               Strategy& producer_strategy, Strategy& consumer_strategy,
               std::uint64_t seed) {
    Json opened = client.call("open_session",
                              Json{{"producer", producer},
                                   {"consumer", consumer},
                                   {"record_id", record_id},
                                   {"initial", to_json(initial)},
                                   {"now", clock.tick()}});
    NegotiationSession session = session_from_json(opened.at("session"));
    t.line("session " + session.session_id + " opened: " + consumer + " proposes " +
           to_string(initial.price) + " for " +
           categories_to_json(initial.requested_categories).dump());

    Json last;
    while (!session.terminal()) {
        Strategy& turn = session.awaited() == Party::producer ? producer_strategy
                                                              : consumer_strategy;
        std::optional<Response> r = turn.decide(session, seed);
        if (!r) throw Error(Errc::StrategyTimeout, "scenario strategy deferred");

        Json rj;
        std::string said;
        if (const auto* a = std::get_if<Accept>(&*r)) {
            rj = Json{{"type", "accept"}, {"by", to_string(a->by)}};
            said = std::string(to_string(a->by)) + " accepts";
        } else if (const auto* x = std::get_if<Reject>(&*r)) {
            rj = Json{{"type", "reject"}, {"by", to_string(x->by)}};
            said = std::string(to_string(x->by)) + " rejects";
        } else {
            const Proposal& p = std::get<Proposal>(*r);
            rj = Json{{"type", "counter"}, {"proposal", to_json(p)}};
            said = std::string(to_string(p.from_party)) + " counters at " +
                   to_string(p.price);
        }
        last = client.call("respond", Json{{"session_id", session.session_id},
                                           {"response", rj},
                                           {"now", clock.tick()}});
        session = session_from_json(last.at("session"));
        t.line("round " + std::to_string(session.history.back().round) + ": " + said +
               " -> " + std::string(to_string(session.state)));
    }

    if (session.state == SessionState::Agreed)
        t.line("agreed at " + to_string(session.agreed_terms().price) + " after " +
               std::to_string(session.history.size()) + " proposals");
    else
        t.line("negotiation rejected after " + std::to_string(session.history.size()) +
               " proposals");
    last["session"] = to_json(session);
    return last;
}

void verify_stores(Transcript& t, const StorePaths& stores) {
    MarketplaceState reloaded = load(stores);
    if (!std::holds_alternative<std::monostate>(verify_audit_store(stores)))
        throw Error(Errc::StoreCorrupt, "audit chain broken after scenario");
    t.line("audit verify: ok (" + std::to_string(reloaded.audit_log.size()) +
           " entries)");
}

// --- the five scenarios ----------------------------------------------------

void scenario_marketplace_negotiation(const Fixture& fx, Client& client, Transcript& t,
                                      const MarketplaceState& seeded, Clock& clock,
                                      std::uint64_t seed) {
    const std::string producer = fx.config.at("producer");
    const std::string consumer = fx.config.at("consumer");
    const std::string record_id = fx.config.at("record_id");
    const auto categories = categories_from_json(fx.config.at("categories"));

    client.call("register_subject", subject_payload(seeded, consumer));
    t.line("registered consumer " + consumer);

    Json listing = client.call(
        "create_listing",
        Json{{"producer", producer},
             {"advertised_categories", fx.config.at("categories")},
             {"blurb", fx.config.at("blurb")},
             {"contact", producer + "@market"}});
    t.line("listing " + listing.at("listing").at("listing_id").get<std::string>() +
           " created by " + producer);

    Json hits = client.call("search", Json{{"categories", fx.config.at("categories")}});
    t.line("search found " + std::to_string(hits.at("listings").size()) +
           " listing(s); contact " +
           hits.at("listings").at(0).at("contact").get<std::string>());

    // The consumer's opening bid moves with the seed; the crossing point is
    // pinned by reserve <= limit.
    Amount start{*parse_amount(fx.config.at("start").get<std::string>())};
    start.cents += static_cast<std::int64_t>(seed % 3) * 100;
    Amount step = *parse_amount(fx.config.at("step").get<std::string>());
    Amount limit = *parse_amount(fx.config.at("limit").get<std::string>());
    Amount reserve = *parse_amount(fx.config.at("reserve").get<std::string>());

    std::string policy_text = fx.policy_text(fx.config.at("policy"), {});
    Proposal initial = make_proposal(policy_text, producer, categories, start, 1,
                                     Party::consumer, "mkt");
    LinearConcessionStrategy consumer_strategy(Party::consumer, start, step, limit);
    AcceptThresholdStrategy producer_strategy(Party::producer, reserve);

    Json done = negotiate(client, t, clock, producer, consumer, record_id,
                          initial, producer_strategy, consumer_strategy, seed);
    if (!done.contains("bundle_id"))
        throw Error(Errc::InvariantViolation, "expected an agreed bundle");
    const std::string bundle_id = done.at("bundle_id");
    t.line("bundle " + bundle_id + " issued");

    Json fetched = client.call("fetch_bundle",
                               Json{{"bundle_id", bundle_id}, {"requester", consumer}});
    t.line("bundle fetched; digest " + fetched.at("digest").get<std::string>());

    Json used = client.call(
        "request_use",
        Json{{"bundle_id", bundle_id},
             {"action", "read"},
             {"categories", fx.config.at("categories")},
             {"context", context_payload(seeded, consumer, RoleKind::researcher,
                                         clock.tick(), "lab", DeviceType::desktop)},
             {"now", clock.now}});
    t.line("read request: " + describe_decision(used.at("decision")));
}

void scenario_broker_aggregation(const Fixture& fx, Client& client, Transcript& t,
                                 const MarketplaceState& seeded, Clock& clock,
                                 std::uint64_t seed) {
    const std::string broker = fx.config.at("broker");
    client.call("register_subject", subject_payload(seeded, broker));
    t.line("registered broker " + broker);

    std::vector<std::string> compliant_bundles;
    std::string conflicting_bundle;
    for (const Json& deal : fx.config.at("deals")) {
        const std::string producer = deal.at("producer");
        const std::string record_id = deal.at("record_id");
        const auto categories = categories_from_json(deal.at("categories"));
        Amount price = *parse_amount(deal.at("price").get<std::string>());

        std::string policy_text = fx.policy_text(deal.at("policy"), {});
        Proposal initial = make_proposal(policy_text, producer, categories, price, 1,
                                         Party::consumer, record_id);
        AcceptThresholdStrategy accept_anything(Party::producer, Amount{0});
        LinearConcessionStrategy consumer_strategy(Party::consumer, price, Amount{0},
                                                   price);
        Json done = negotiate(client, t, clock, producer, broker, record_id,
                              initial, accept_anything, consumer_strategy, seed);
        const std::string bundle_id = done.at("bundle_id");
        t.line("bundle " + bundle_id + " acquired from " + producer);
        if (deal.value("conflicting", false))
            conflicting_bundle = bundle_id;
        else
            compliant_bundles.push_back(bundle_id);
    }

    auto aggregate_call = [&](const std::vector<std::string>& ids, Amount payment) {
        Json bundle_ids = Json::array();
        for (const std::string& id : ids) bundle_ids.push_back(id);
        return client.call(
            "aggregate",
            Json{{"bundle_ids", std::move(bundle_ids)},
                 {"requested_action", "read"},
                 {"context", context_payload(seeded, broker, RoleKind::broker,
                                             clock.tick(), "office", DeviceType::desktop)},
                 {"now", clock.now},
                 {"payment", to_string(payment)}});
    };

    Amount payment = *parse_amount(fx.config.at("payment").get<std::string>());
    Json ok = aggregate_call(compliant_bundles, payment);
    t.line("compliant aggregate: " + std::to_string(ok.at("elements").size()) +
           " records combined");
    for (const Json& c : ok.at("compensation"))
        t.line("  compensation " + c.at("owner").get<std::string>() + " <- " +
               c.at("amount").get<std::string>());

    std::vector<std::string> with_conflict = compliant_bundles;
    with_conflict.push_back(conflicting_bundle);
    try {
        aggregate_call(with_conflict, payment);
        throw Error(Errc::InvariantViolation, "conflicting aggregate was not denied");
    } catch (const AggregationDenied& e) {
        t.line("conflicting aggregate denied: " + std::string(e.what()));
        for (const auto& [policy_id, decision] : e.conflicts())
            if (!decision.permitted())
                t.line("  cause: " + policy_id + " -> " + decision.reason);
    }
}

void scenario_remote_access(const Fixture& fx, Client& client, Transcript& t,
                            const MarketplaceState& seeded, Clock& clock,
                            std::uint64_t seed) {
    const std::string producer = fx.config.at("producer");
    const std::string admin = fx.config.at("consumer");
    const std::string record_id = fx.config.at("record_id");

    client.call("register_subject", subject_payload(seeded, admin));
    t.line("registered administrator " + admin);

    const Timestamp expiry = clock.now + fx.config.at("expiry_seconds").get<Timestamp>();
    std::string policy_text =
        fx.policy_text(fx.config.at("policy"), {{"EXPIRY", format_rfc3339(expiry)}});
    Amount price = *parse_amount(fx.config.at("price").get<std::string>());
    auto categories = categories_from_json(fx.config.at("categories"));

    Proposal initial =
        make_proposal(policy_text, producer, categories, price, 1, Party::consumer, "ra");
    AcceptThresholdStrategy accept_anything(Party::producer, Amount{0});
    LinearConcessionStrategy consumer_strategy(Party::consumer, price, Amount{0}, price);
    Json done = negotiate(client, t, clock, producer, admin, record_id, initial,
                          accept_anything, consumer_strategy, seed);
    const std::string bundle_id = done.at("bundle_id");
    t.line("bundle " + bundle_id + " issued (vaccination only, expires " +
           format_rfc3339(expiry) + ")");

    auto request = [&](const char* what, const Json& cats, Timestamp at) {
        Json used = client.call(
            "request_use",
            Json{{"bundle_id", bundle_id},
                 {"action", "read"},
                 {"categories", cats},
                 {"context", context_payload(seeded, admin, RoleKind::administrator, at,
                                             "school", DeviceType::desktop)},
                 {"now", at}});
        t.line(std::string(what) + ": " + describe_decision(used.at("decision")));
    };

    request("vaccination read", Json::array({"vaccination"}), clock.tick());
    request("psychiatric read", Json::array({"psychiatric"}), clock.tick());
    request("vaccination read after expiry", Json::array({"vaccination"}),
            expiry + 3600);
}

void scenario_employer_monitoring(const Fixture& fx, Client& client, Transcript& t,
                                  const MarketplaceState& seeded, Clock& clock,
                                  std::uint64_t seed) {
    const std::string producer = fx.config.at("producer");
    const std::string employer = fx.config.at("consumer");
    const std::string record_id = fx.config.at("record_id");

    client.call("register_subject", subject_payload(seeded, employer));
    t.line("registered employer " + employer);

    std::string policy_text = fx.policy_text(fx.config.at("policy"), {});
    Amount price = *parse_amount(fx.config.at("price").get<std::string>());
    auto categories = categories_from_json(fx.config.at("categories"));

    Proposal initial =
        make_proposal(policy_text, producer, categories, price, 1, Party::consumer, "em");
    AcceptThresholdStrategy accept_anything(Party::producer, Amount{0});
    LinearConcessionStrategy consumer_strategy(Party::consumer, price, Amount{0}, price);
    Json done = negotiate(client, t, clock, producer, employer, record_id,
                          initial, accept_anything, consumer_strategy, seed);
    const std::string bundle_id = done.at("bundle_id");
    t.line("bundle " + bundle_id + " issued (lab markers only)");

    Json fetched = client.call("fetch_bundle",
                               Json{{"bundle_id", bundle_id}, {"requester", employer}});
    const std::string& document = fetched.at("document").get_ref<const std::string&>();
    bool leak = document.find("psychiatric") != std::string::npos ||
                document.find("treatment") != std::string::npos;
    t.line(std::string("bundle withholds psychiatric and dependency data: ") +
           (leak ? "NO" : "yes"));
    if (leak) throw Error(Errc::InvariantViolation, "withheld categories leaked");

    auto request = [&](const char* what, const Json& cats) {
        Json used = client.call(
            "request_use",
            Json{{"bundle_id", bundle_id},
                 {"action", "read"},
                 {"categories", cats},
                 {"context", context_payload(seeded, employer, RoleKind::employer,
                                             clock.tick(), "office", DeviceType::desktop)},
                 {"now", clock.now}});
        t.line(std::string(what) + ": " + describe_decision(used.at("decision")));
    };
    request("lab_marker read", Json::array({"lab_marker"}));
    request("psychiatric read", Json::array({"psychiatric"}));
    request("treatment read", Json::array({"treatment"}));
}

void scenario_custom_care(const Fixture& fx, Client& client, Transcript& t,
                          const MarketplaceState& seeded, Clock& clock,
                          std::uint64_t seed) {
    const std::string producer = fx.config.at("producer");
    const std::string pharma = fx.config.at("consumer");
    const std::string record_id = fx.config.at("record_id");

    client.call("register_subject", subject_payload(seeded, pharma));
    t.line("registered pharmaceutical researcher " + pharma);

    std::string policy_text = fx.policy_text(fx.config.at("policy"), {});
    Amount price = *parse_amount(fx.config.at("price").get<std::string>());
    auto categories = categories_from_json(fx.config.at("categories"));

    Proposal initial =
        make_proposal(policy_text, producer, categories, price, 1, Party::consumer, "cc");
    AcceptThresholdStrategy accept_anything(Party::producer, Amount{0});
    LinearConcessionStrategy consumer_strategy(Party::consumer, price, Amount{0}, price);
    Json done = negotiate(client, t, clock, producer, pharma, record_id, initial,
                          accept_anything, consumer_strategy, seed);
    const std::string bundle_id = done.at("bundle_id");
    t.line("bundle " + bundle_id + " issued (prescriptions and lab markers)");

    auto request = [&](const char* what, const Json& cats) {
        Json used = client.call(
            "request_use",
            Json{{"bundle_id", bundle_id},
                 {"action", "read"},
                 {"categories", cats},
                 {"context", context_payload(seeded, pharma, RoleKind::researcher,
                                             clock.tick(), "lab", DeviceType::certified)},
                 {"now", clock.now}});
        t.line(std::string(what) + ": " + describe_decision(used.at("decision")));
    };
    request("prescription + lab read", fx.config.at("categories"));
    request("genetic read", Json::array({"genetic"}));

    Json history = client.call("audit_history", Json{{"record_id", record_id}});
    t.line("edit history for " + record_id + ": " +
           std::to_string(history.at("entries").size()) + " entries");
}

}  // namespace

std::string run_scenario(const ScenarioSpec& spec, const StorePaths& stores,
                         Timestamp start) {
    Fixture fx{load_json(spec.fixture_path / "scenario.json"), spec.fixture_path};
    Transcript t;
    t.line("scenario " + spec.name + " seed " + std::to_string(spec.seed));

    MarketplaceState seeded = seed_state_from_fixture(spec.fixture_path);
    persist(seeded, stores);
    t.line("seeded " + std::to_string(seeded.records.size()) + " record(s), " +
           std::to_string(seeded.audit_log.size()) + " audit entries");

    Clock clock{start};
    {
        Service service(stores, 0);
        Client client("127.0.0.1", service.port());

        if (spec.name == "marketplace_negotiation")
            scenario_marketplace_negotiation(fx, client, t, seeded, clock, spec.seed);
        else if (spec.name == "broker_aggregation")
            scenario_broker_aggregation(fx, client, t, seeded, clock, spec.seed);
        else if (spec.name == "remote_access")
            scenario_remote_access(fx, client, t, seeded, clock, spec.seed);
        else if (spec.name == "employer_monitoring")
            scenario_employer_monitoring(fx, client, t, seeded, clock, spec.seed);
        else if (spec.name == "custom_care")
            scenario_custom_care(fx, client, t, seeded, clock, spec.seed);
        else
            throw Error(Errc::UnknownEntity, "unknown scenario '" + spec.name + "'");

        service.stop();
    }

    verify_stores(t, stores);
    return t.str();
}

}  // namespace umgr
