#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace umgr;
using namespace umgr::test;

namespace {

Proposal opening(Amount price, std::set<FactCategory> cats = {FactCategory::lab_marker},
                 const std::string& producer = "alice") {
    Proposal p;
    p.proposal_id = "P-1";
    p.from_party = Party::consumer;
    p.requested_categories = std::move(cats);
    p.policy_terms =
        parse_policy("permit read to researcher scope lab_marker", "POL-n", producer);
    p.price = price;
    p.round = 1;
    return p;
}

NegotiationSession fresh(Amount price = Amount{500}) {
    return open_session("alice", "ria", "R1", opening(price));
}

}  // namespace

TEST_CASE("opening a session awaits the producer") {
    NegotiationSession s = fresh();
    CHECK(s.state == SessionState::AwaitingProducer);
    CHECK(s.history.size() == 1);
    CHECK(s.producer == "alice");
    CHECK(s.consumer == "ria");
    CHECK_FALSE(s.terminal());
}

TEST_CASE("self-negotiation and malformed openings are rejected") {
    CHECK_THROWS_AS(open_session("alice", "alice", "R1", opening(Amount{100})), Error);

    Proposal wrong_party = opening(Amount{100});
    wrong_party.from_party = Party::producer;
    CHECK_THROWS_AS(open_session("alice", "ria", "R1", wrong_party), Error);

    Proposal wrong_round = opening(Amount{100});
    wrong_round.round = 2;
    try {
        open_session("alice", "ria", "R1", wrong_round);
        FAIL("expected MalformedProposal");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::MalformedProposal);
    }
}

TEST_CASE("counter then accept agrees on the counter's terms") {
    NegotiationSession s = fresh(Amount{500});
    Proposal counter = s.history.back();
    counter.proposal_id = "P-2";
    counter.from_party = Party::producer;
    counter.price = Amount{900};
    counter.round = 2;
    s = respond(s, counter);
    CHECK(s.state == SessionState::AwaitingConsumer);

    s = respond(s, Accept{Party::consumer});
    CHECK(s.state == SessionState::Agreed);
    CHECK(s.agreed_terms().price == Amount{900});
    CHECK(s.agreed_terms().from_party == Party::producer);
}

TEST_CASE("reject closes the session forever") {
    NegotiationSession s = fresh();
    s = respond(s, Reject{Party::producer});
    CHECK(s.state == SessionState::Rejected);
    CHECK_THROWS_AS(respond(s, Accept{Party::producer}), Error);
    try {
        respond(s, Accept{Party::producer});
    } catch (const Error& e) {
        CHECK(e.code() == Errc::SessionClosed);
    }
}

TEST_CASE("turn and round discipline") {
    NegotiationSession s = fresh();
    // consumer may not answer its own proposal
    try {
        respond(s, Accept{Party::consumer});
        FAIL("expected WrongTurn");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::WrongTurn);
    }

    Proposal stale = s.history.back();
    stale.from_party = Party::producer;
    stale.round = 5;
    try {
        respond(s, stale);
        FAIL("expected StaleRound");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::StaleRound);
    }
}

TEST_CASE("history alternates parties and stays within max_rounds") {
    NegotiationSession s = open_session("alice", "ria", "R1", opening(Amount{100}));
    for (std::uint32_t round = 2; !s.terminal(); ++round) {
        Proposal counter = s.history.back();
        counter.proposal_id = "P-" + std::to_string(round);
        counter.from_party = s.awaited();
        counter.round = round;
        s = respond(s, counter);
    }
    CHECK(s.state == SessionState::Rejected);  // nobody ever accepted
    CHECK(s.history.size() == s.max_rounds);
    for (std::size_t i = 1; i < s.history.size(); ++i)
        CHECK(s.history[i].from_party != s.history[i - 1].from_party);
}

TEST_CASE("the worked fixture: concession from 4 meets reserve 9 within 6 rounds") {
    NegotiationSession s = fresh(Amount{400});
    AcceptThresholdStrategy producer(Party::producer, Amount{900});
    LinearConcessionStrategy consumer(Party::consumer, Amount{400}, Amount{100},
                                      Amount{1200});
    NegotiationSession done = run_automated(s, producer, consumer, 1);
    CHECK(done.state == SessionState::Agreed);
    CHECK(done.agreed_terms().price == Amount{900});
    CHECK(done.history.size() <= 12);  // six full exchange rounds
    CHECK(done.history.size() == 10);  // predicted: 2 * ceil((9-4)/1)
}

TEST_CASE("a reserve above the consumer's ceiling runs out the clock") {
    NegotiationSession s = fresh(Amount{400});
    AcceptThresholdStrategy producer(Party::producer, Amount{5000});
    LinearConcessionStrategy consumer(Party::consumer, Amount{400}, Amount{100},
                                      Amount{1200});
    NegotiationSession done = run_automated(s, producer, consumer, 1);
    CHECK(done.state == SessionState::Rejected);
    CHECK(done.history.size() == done.max_rounds);
}

TEST_CASE("accept-anything strategies agree immediately") {
    NegotiationSession s = fresh(Amount{700});
    AcceptThresholdStrategy producer(Party::producer, Amount{0});
    AcceptThresholdStrategy consumer(Party::consumer, Amount{100000});
    NegotiationSession done = run_automated(s, producer, consumer, 1);
    CHECK(done.state == SessionState::Agreed);
    CHECK(done.history.size() == 1);
    CHECK(done.agreed_terms().price == Amount{700});
}

TEST_CASE("a strategy that never answers times out") {
    struct Mute : Strategy {
        std::optional<Response> decide(const NegotiationSession&, std::uint64_t) override {
            return std::nullopt;
        }
    };
    NegotiationSession s = fresh();
    Mute mute;
    AcceptThresholdStrategy consumer(Party::consumer, Amount{100000});
    try {
        run_automated(s, mute, consumer, 1);
        FAIL("expected StrategyTimeout");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::StrategyTimeout);
    }
}

TEST_CASE("property: simulation matches the closed-form crossing analysis") {
    Rng rng(31);
    int agreements = 0, rejections = 0;
    for (int i = 0; i < 80; ++i) {
        std::int64_t start = 100 + std::int64_t(pick(rng, 900));
        std::int64_t step = pick(rng, 2) ? 50 + std::int64_t(pick(rng, 250)) : 0;
        std::int64_t limit = start + std::int64_t(pick(rng, 1500));
        std::int64_t reserve = 100 + std::int64_t(pick(rng, 2200));

        CrossingPrediction want = predict_crossing(start, step, limit, reserve, 16);

        NegotiationSession s = fresh(Amount{start});
        AcceptThresholdStrategy producer(Party::producer, Amount{reserve});
        LinearConcessionStrategy consumer(Party::consumer, Amount{start}, Amount{step},
                                          Amount{limit});
        NegotiationSession done = run_automated(s, producer, consumer, 1);

        REQUIRE(done.terminal());
        REQUIRE(done.history.size() <= done.max_rounds);
        if (want.agrees) {
            ++agreements;
            REQUIRE(done.state == SessionState::Agreed);
            REQUIRE(done.agreed_terms().price == Amount{want.price_cents});
            REQUIRE(done.history.size() == want.proposals);
        } else {
            ++rejections;
            REQUIRE(done.state == SessionState::Rejected);
            REQUIRE(done.history.size() == done.max_rounds);
        }

        // determinism for a fixed seed
        NegotiationSession again = run_automated(s, producer, consumer, 1);
        REQUIRE(again == done);
    }
    CHECK(agreements > 10);
    CHECK(rejections > 10);
}

TEST_CASE("conclude_to_bundle carries the agreed terms field for field") {
    audit::Log log;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    Record r = record_with("R1", alice, drkim,
                           {FactCategory::lab_marker, FactCategory::psychiatric}, log);

    NegotiationSession s = fresh(Amount{400});
    AcceptThresholdStrategy producer(Party::producer, Amount{900});
    LinearConcessionStrategy consumer(Party::consumer, Amount{400}, Amount{100},
                                      Amount{1200});
    NegotiationSession done = run_automated(s, producer, consumer, 1);
    REQUIRE(done.state == SessionState::Agreed);

    Bundle b = conclude_to_bundle(done, r, kT0, log);
    const Proposal& terms = done.agreed_terms();
    CHECK(b.license.producer == "alice");
    CHECK(b.license.consumer == "ria");
    // policy fidelity: same clauses, with the agreed price stamped on permits
    REQUIRE(b.license.policy.clauses.size() == terms.policy_terms.clauses.size());
    CHECK(b.license.policy.policy_id == terms.policy_terms.policy_id);
    for (std::size_t i = 0; i < terms.policy_terms.clauses.size(); ++i) {
        Clause want = terms.policy_terms.clauses[i];
        if (want.effect == Effect::permit) want.price = terms.price;
        CHECK(b.license.policy.clauses[i] == want);
    }

    // the payload only carries the requested categories
    const auto& fr = std::get<FilteredRecord>(b.payload);
    for (const Fact& f : fr.facts) CHECK(f.category == FactCategory::lab_marker);

    // license price obligation equals the agreed price
    Decision d = request_use(b, Action::read, {FactCategory::lab_marker},
                             ctx_of(subject("ria", {RoleKind::researcher}),
                                    RoleKind::researcher),
                             kT0, log);
    CHECK(d.permitted());
    CHECK(d.obligations.price == Amount{900});
}

TEST_CASE("conclude_to_bundle rejects sessions that are not agreed") {
    audit::Log log;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});
    Record r = record_with("R1", alice, drkim, {FactCategory::lab_marker}, log);

    NegotiationSession s = fresh();
    try {
        conclude_to_bundle(s, r, kT0, log);
        FAIL("expected NotAgreed");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::NotAgreed);
    }
    NegotiationSession rejected = respond(s, Reject{Party::producer});
    CHECK_THROWS_AS(conclude_to_bundle(rejected, r, kT0, log), Error);
}

TEST_CASE("property: bundle facts are a subset of the record for random sessions") {
    Rng rng(32);
    audit::Log log;
    Subject alice = subject("alice");
    Subject drkim = subject("drkim", {RoleKind::physician});

    for (int i = 0; i < 50; ++i) {
        Record r = gen_record(rng, "R" + std::to_string(i), alice, drkim, log);
        std::set<FactCategory> want = gen_categories(rng, 3);
        Proposal p = opening(Amount{100 + std::int64_t(pick(rng, 900))}, want);
        // scope-free grant: the filter, not the static scope check, narrows
        p.policy_terms = parse_policy("permit read to researcher", "POL-n", "alice");
        NegotiationSession s = open_session("alice", "ria", r.record_id, p);
        s = respond(s, Accept{Party::producer});
        REQUIRE(s.state == SessionState::Agreed);

        Bundle b = conclude_to_bundle(s, r, kT0, log);
        const auto& fr = std::get<FilteredRecord>(b.payload);
        auto cur = current_facts(r);
        for (const Fact& f : fr.facts) {
            CHECK(std::find(cur.begin(), cur.end(), f) != cur.end());
            CHECK(want.count(f.category) == 1);
        }
    }
}

TEST_CASE("terminal absorption: nothing moves an agreed session") {
    NegotiationSession s = fresh();
    s = respond(s, Accept{Party::producer});
    REQUIRE(s.state == SessionState::Agreed);
    CHECK_THROWS_AS(respond(s, Reject{Party::consumer}), Error);
    Proposal late = s.history.back();
    late.round += 1;
    late.from_party = Party::consumer;
    CHECK_THROWS_AS(respond(s, late), Error);
}
