#include "umgr/negotiation.hpp"

#include <algorithm>

namespace umgr {

std::string_view to_string(Party p) {
    return p == Party::producer ? "producer" : "consumer";
}

std::optional<Party> party_from_string(std::string_view s) {
    if (s == "producer") return Party::producer;
    if (s == "consumer") return Party::consumer;
    return std::nullopt;
}

std::string_view to_string(SessionState s) {
    switch (s) {
        case SessionState::AwaitingProducer: return "AwaitingProducer";
        case SessionState::AwaitingConsumer: return "AwaitingConsumer";
        case SessionState::Agreed: return "Agreed";
        case SessionState::Rejected: return "Rejected";
    }
    return "?";
}

std::optional<SessionState> session_state_from_string(std::string_view s) {
    for (SessionState st : {SessionState::AwaitingProducer, SessionState::AwaitingConsumer,
                            SessionState::Agreed, SessionState::Rejected})
        if (to_string(st) == s) return st;
    return std::nullopt;
}

const Proposal& NegotiationSession::agreed_terms() const {
    if (state != SessionState::Agreed)
        throw Error(Errc::NotAgreed, "session has no agreed terms");
    return history.back();
}

NegotiationSession open_session(const std::string& producer, const std::string& consumer,
                                const std::string& record_id, const Proposal& initial,
                                std::uint32_t max_rounds) {
    if (producer == consumer)
        throw Error(Errc::SelfNegotiation, "producer and consumer are the same party");
    if (initial.from_party != Party::consumer)
        throw Error(Errc::MalformedProposal, "consumers open negotiations");
    if (initial.round != 1)
        throw Error(Errc::MalformedProposal, "opening proposal must be round 1");
    if (initial.price.cents < 0)
        throw Error(Errc::MalformedProposal, "negative price");
    if (max_rounds == 0)
        throw Error(Errc::InvariantViolation, "max_rounds must be positive");

    NegotiationSession s;
    s.session_id = derived_id(
        "N", producer + "|" + consumer + "|" + record_id + "|" + initial.proposal_id);
    s.producer = producer;
    s.consumer = consumer;
    s.record_id = record_id;
    s.state = SessionState::AwaitingProducer;
    s.history = {initial};
    s.max_rounds = max_rounds;
    return s;
}

NegotiationSession respond(const NegotiationSession& session, const Response& response) {
    if (session.terminal())
        throw Error(Errc::SessionClosed, "session " + session.session_id +
                                             " is " + std::string(to_string(session.state)));

    const Party awaited = session.awaited();
    NegotiationSession next = session;

    if (const auto* accept = std::get_if<Accept>(&response)) {
        if (accept->by != awaited)
            throw Error(Errc::WrongTurn, "awaiting the " + std::string(to_string(awaited)));
        next.state = SessionState::Agreed;
        return next;
    }
    if (const auto* reject = std::get_if<Reject>(&response)) {
        if (reject->by != awaited)
            throw Error(Errc::WrongTurn, "awaiting the " + std::string(to_string(awaited)));
        next.state = SessionState::Rejected;
        return next;
    }

    const Proposal& counter = std::get<Proposal>(response);
    if (counter.from_party != awaited)
        throw Error(Errc::WrongTurn, "awaiting the " + std::string(to_string(awaited)));
    if (counter.round != session.history.back().round + 1)
        throw Error(Errc::StaleRound,
                    "expected round " + std::to_string(session.history.back().round + 1));
    if (counter.price.cents < 0)
        throw Error(Errc::MalformedProposal, "negative price");

    if (session.history.size() >= session.max_rounds) {
        next.state = SessionState::Rejected;  // round budget exhausted
        return next;
    }
    next.history.push_back(counter);
    next.state = awaited == Party::producer ? SessionState::AwaitingConsumer
                                            : SessionState::AwaitingProducer;
    return next;
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

namespace {

std::size_t proposals_by(const NegotiationSession& session, Party party) {
    return static_cast<std::size_t>(
        std::count_if(session.history.begin(), session.history.end(),
                      [&](const Proposal& p) { return p.from_party == party; }));
}

Proposal counter_from_last(const NegotiationSession& session, Party party, Amount price) {
    Proposal p = session.history.back();  // counter keeps the other terms
    p.proposal_id = "P-" + std::to_string(session.history.back().round + 1);
    p.from_party = party;
    p.price = price;
    p.round = session.history.back().round + 1;
    return p;
}

}  // namespace

std::optional<Response> AcceptThresholdStrategy::decide(
    const NegotiationSession& session, std::uint64_t) {
    const Proposal& last = session.last_proposal();
    const bool selling = party_ == Party::producer;
    if (selling ? last.price >= reserve_ : last.price <= reserve_)
        return Accept{party_};
    return counter_from_last(session, party_, reserve_);
}

Amount LinearConcessionStrategy::willingness(std::size_t own_proposals_made) const {
    Amount w{start_.cents + step_.cents * static_cast<std::int64_t>(own_proposals_made)};
    return std::min(w, limit_);
}

std::optional<Response> LinearConcessionStrategy::decide(
    const NegotiationSession& session, std::uint64_t) {
    const bool buying = party_ == Party::consumer;
    const Amount w = willingness(proposals_by(session, party_));
    const Proposal& last = session.last_proposal();
    if (last.from_party != party_ && (buying ? last.price <= w : last.price >= w))
        return Accept{party_};
    return counter_from_last(session, party_, w);
}

NegotiationSession run_automated(const NegotiationSession& session,
                                 Strategy& producer_strategy,
                                 Strategy& consumer_strategy, std::uint64_t seed) {
    if (session.history.size() != 1 || session.terminal())
        throw Error(Errc::InvariantViolation, "run_automated wants a fresh session");

    NegotiationSession s = session;
    std::uint32_t deferrals = 0;
    while (!s.terminal()) {
        Strategy& turn = s.awaited() == Party::producer ? producer_strategy
                                                        : consumer_strategy;
        std::optional<Response> r = turn.decide(s, seed);
        if (!r) {
            if (++deferrals > s.max_rounds)
                throw Error(Errc::StrategyTimeout,
                            "strategy exceeded the session round budget");
            continue;
        }
        deferrals = 0;
        s = respond(s, *r);
    }
    return s;
}

Bundle conclude_to_bundle(const NegotiationSession& session, const Record& record,
                          Timestamp now, audit::Log& log) {
    if (session.state != SessionState::Agreed)
        throw Error(Errc::NotAgreed, "session " + session.session_id + " is " +
                                         std::string(to_string(session.state)));
    if (record.record_id != session.record_id)
        throw Error(Errc::UnknownEntity, "record does not match the session");

    const Proposal& terms = session.agreed_terms();
    Filter filter{
        derived_id("F", session.session_id + "|" + std::to_string(terms.round)),
        terms.requested_categories,
        {},
    };
    FilteredRecord fr = apply_filter(record, filter);

    // Agreement fidelity: the license carries the accepted policy verbatim,
    // with the agreed headline price stamped onto its permit clauses.
    UsagePolicy policy = terms.policy_terms;
    if (terms.price.cents > 0)
        for (Clause& c : policy.clauses)
            if (c.effect == Effect::permit) c.price = terms.price;

    return issue_bundle(fr, policy, session.producer, session.consumer, now, log);
}

}  // namespace umgr
