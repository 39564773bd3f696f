#pragma once

// Bilateral proposal/counter-proposal protocol between one producer and one
// consumer, plus deterministic automated strategies.
//
// Session lifecycle: AwaitingProducer <-> AwaitingConsumer until Agreed or
// Rejected (both terminal). Rounds strictly increase; a counter past
// max_rounds closes the session as Rejected.

#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "umgr/artifact.hpp"
#include "umgr/policy.hpp"

namespace umgr {

enum class Party { producer, consumer };

std::string_view to_string(Party p);
std::optional<Party> party_from_string(std::string_view s);

struct Proposal {
    std::string proposal_id;
    Party from_party = Party::consumer;
    std::set<FactCategory> requested_categories;
    UsagePolicy policy_terms;
    Amount price;
    std::uint32_t round = 1;

    friend bool operator==(const Proposal&, const Proposal&) = default;
};

enum class SessionState { AwaitingProducer, AwaitingConsumer, Agreed, Rejected };

std::string_view to_string(SessionState s);
std::optional<SessionState> session_state_from_string(std::string_view s);

struct NegotiationSession {
    std::string session_id;
    std::string producer;
    std::string consumer;
    std::string record_id;
    SessionState state = SessionState::AwaitingProducer;
    std::vector<Proposal> history;
    std::uint32_t max_rounds = 16;

    bool terminal() const {
        return state == SessionState::Agreed || state == SessionState::Rejected;
    }
    Party awaited() const {
        return state == SessionState::AwaitingProducer ? Party::producer
                                                       : Party::consumer;
    }
    const Proposal& last_proposal() const { return history.back(); }
    // Agreed terms: the proposal the acceptance pointed at.
    const Proposal& agreed_terms() const;

    friend bool operator==(const NegotiationSession&, const NegotiationSession&) = default;
};

struct Accept {
    Party by = Party::producer;

    friend bool operator==(const Accept&, const Accept&) = default;
};
struct Reject {
    Party by = Party::producer;

    friend bool operator==(const Reject&, const Reject&) = default;
};
using Response = std::variant<Accept, Reject, Proposal>;

// Consumers initiate. Throws SelfNegotiation, MalformedProposal (wrong
// opening party or round != 1).
NegotiationSession open_session(const std::string& producer,
                                const std::string& consumer,
                                const std::string& record_id,
                                const Proposal& initial,
                                std::uint32_t max_rounds = 16);

// Applies one response from the awaited party. Throws SessionClosed,
// WrongTurn, StaleRound (counter round != last + 1). A counter that would
// push history past max_rounds rejects the session instead of growing it.
NegotiationSession respond(const NegotiationSession& session, const Response& response);

// Automated agents. decide() returns nullopt to defer (still thinking);
// run_automated re-asks up to a budget and then gives up with
// StrategyTimeout. Implementations must be deterministic in
// (history, own parameters, seed).
class Strategy {
  public:
    virtual ~Strategy() = default;
    virtual std::optional<Response> decide(const NegotiationSession& session,
                                           std::uint64_t seed) = 0;
};

// Seller with a fixed reserve: accepts any offer at or above it, otherwise
// counters at the reserve.
class AcceptThresholdStrategy : public Strategy {
  public:
    AcceptThresholdStrategy(Party party, Amount reserve)
        : party_(party), reserve_(reserve) {}

    std::optional<Response> decide(const NegotiationSession& session,
                                   std::uint64_t seed) override;

  private:
    Party party_;
    Amount reserve_;
};

// Buyer conceding linearly: the j-th own offer is min(start + j*step, limit);
// accepts any counter at or below the next own offer.
class LinearConcessionStrategy : public Strategy {
  public:
    LinearConcessionStrategy(Party party, Amount start, Amount step, Amount limit)
        : party_(party), start_(start), step_(step), limit_(limit) {}

    std::optional<Response> decide(const NegotiationSession& session,
                                   std::uint64_t seed) override;

  private:
    Amount willingness(std::size_t own_proposals_made) const;

    Party party_;
    Amount start_;
    Amount step_;
    Amount limit_;
};

// Alternates strategy calls on a freshly opened session until terminal.
// Deterministic for a fixed seed. Throws StrategyTimeout when a strategy
// defers more than the session's round budget.
NegotiationSession run_automated(const NegotiationSession& session,
                                 Strategy& producer_strategy,
                                 Strategy& consumer_strategy, std::uint64_t seed);

// Agreed session -> bundle: filter built from the agreed categories, then
// issue_bundle with the agreed policy; the agreed price is stamped onto the
// permit clauses. Throws NotAgreed; StaticScopeMismatch propagates.
Bundle conclude_to_bundle(const NegotiationSession& session, const Record& record,
                          Timestamp now, audit::Log& log);

}  // namespace umgr
