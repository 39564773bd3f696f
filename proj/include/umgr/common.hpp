#pragma once

// Shared scalar types and error machinery for the usage-management engine.
//
// Conventions used across the codebase:
//   - Timestamps are UTC seconds since the Unix epoch, always caller-supplied.
//   - Money is integer cents (Amount); arithmetic on money never touches
//     floating point.
//   - Value is the one scalar type policies, environments, and subject
//     parameters share: a timestamp, a number, or an opaque token.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace umgr {

using Timestamp = std::int64_t;

// RFC 3339 date ("2026-01-01") or date-time ("2026-01-01T12:30:00Z",
// offsets allowed). Dates resolve to midnight UTC.
std::optional<Timestamp> parse_rfc3339(std::string_view text);
std::string format_rfc3339(Timestamp t);

// Money in abstract currency units, fixed at 2 decimals.
struct Amount {
    std::int64_t cents = 0;

    friend bool operator==(const Amount&, const Amount&) = default;
    friend auto operator<=>(const Amount&, const Amount&) = default;
    Amount operator+(Amount o) const { return {cents + o.cents}; }
};

std::optional<Amount> parse_amount(std::string_view text);
std::string to_string(Amount a);  // "8.00", "-0.25"

// One scalar value: policies compare these against context parameters.
struct Value {
    enum class Kind { Timestamp, Number, Token };

    Kind kind = Kind::Token;
    Timestamp ts = 0;
    double num = 0.0;
    std::string token;

    static Value timestamp(Timestamp t) { return {Kind::Timestamp, t, 0.0, {}}; }
    static Value number(double n) { return {Kind::Number, 0, n, {}}; }
    static Value word(std::string s) { return {Kind::Token, 0, 0.0, std::move(s)}; }

    friend bool operator==(const Value&, const Value&) = default;
    friend auto operator<=>(const Value&, const Value&) = default;
};

// Lexical form -> Value. RFC 3339 text becomes a Timestamp, numeric text a
// Number, anything else a Token. Used by the DSL, fixtures, and the wire.
Value value_from_text(std::string_view text);
std::string value_to_text(const Value& v);

enum class Errc {
    // core-model
    RoleNotAuthorized,
    DuplicateFactId,
    NotOriginalAuthor,
    AlreadySuperseded,
    UnknownFact,
    // policy
    SyntaxError,
    TypeError,
    // artifact
    StaticScopeMismatch,
    AggregationDenied,
    RedistributionDenied,
    // negotiation
    SelfNegotiation,
    MalformedProposal,
    WrongTurn,
    SessionClosed,
    StaleRound,
    NotAgreed,
    StrategyTimeout,
    // marketplace
    EmptyQuery,
    BindFailure,
    StoreCorrupt,
    VersionMismatch,
    UnknownEntity,
    // anything that breaks a stated invariant
    InvariantViolation,
};

std::string_view errc_name(Errc c);

class Error : public std::runtime_error {
  public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(what), code_(code) {}

    Errc code() const { return code_; }

  private:
    Errc code_;
};

// Policy-text errors carry a 1-based source position.
class ParseError : public Error {
  public:
    ParseError(Errc code, int line, int column, const std::string& what)
        : Error(code, what), line_(line), column_(column) {}

    int line() const { return line_; }
    int column() const { return column_; }

  private:
    int line_;
    int column_;
};

// SHA-256 of the given bytes, lower-case hex (64 chars).
std::string sha256_hex(std::string_view bytes);

// "<prefix>-<first 10 hex of sha256(material)>"; deterministic entity ids.
std::string derived_id(std::string_view prefix, std::string_view material);

constexpr std::string_view kZeroDigest =
    "0000000000000000000000000000000000000000000000000000000000000000";

}  // namespace umgr
