#include "umgr/common.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>

namespace umgr {

namespace {

bool all_digits(std::string_view s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

}  // namespace

std::optional<Timestamp> parse_rfc3339(std::string_view text) {
    // date: YYYY-MM-DD   date-time: YYYY-MM-DDThh:mm:ss(Z|+hh:mm|-hh:mm)
    if (text.size() < 10) return std::nullopt;
    if (text[4] != '-' || text[7] != '-') return std::nullopt;
    if (!all_digits(text.substr(0, 4)) || !all_digits(text.substr(5, 2)) ||
        !all_digits(text.substr(8, 2)))
        return std::nullopt;

    int year = 0, month = 0, day = 0;
    std::from_chars(text.data(), text.data() + 4, year);
    std::from_chars(text.data() + 5, text.data() + 7, month);
    std::from_chars(text.data() + 8, text.data() + 10, day);
    if (month < 1 || month > 12 || day < 1 || day > 31) return std::nullopt;

    std::chrono::year_month_day ymd{std::chrono::year{year},
                                    std::chrono::month{unsigned(month)},
                                    std::chrono::day{unsigned(day)}};
    if (!ymd.ok()) return std::nullopt;
    Timestamp secs =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::sys_days{ymd}.time_since_epoch())
            .count();

    if (text.size() == 10) return secs;

    if (text[10] != 'T' && text[10] != 't' && text[10] != ' ') return std::nullopt;
    if (text.size() < 19) return std::nullopt;
    if (text[13] != ':' || text[16] != ':') return std::nullopt;
    if (!all_digits(text.substr(11, 2)) || !all_digits(text.substr(14, 2)) ||
        !all_digits(text.substr(17, 2)))
        return std::nullopt;

    int hh = 0, mm = 0, ss = 0;
    std::from_chars(text.data() + 11, text.data() + 13, hh);
    std::from_chars(text.data() + 14, text.data() + 16, mm);
    std::from_chars(text.data() + 17, text.data() + 19, ss);
    if (hh > 23 || mm > 59 || ss > 60) return std::nullopt;
    secs += hh * 3600 + mm * 60 + ss;

    std::string_view rest = text.substr(19);
    if (rest.empty()) return std::nullopt;  // offset is mandatory in RFC 3339
    if (rest == "Z" || rest == "z") return secs;
    if (rest.size() == 6 && (rest[0] == '+' || rest[0] == '-') && rest[3] == ':' &&
        all_digits(rest.substr(1, 2)) && all_digits(rest.substr(4, 2))) {
        int oh = 0, om = 0;
        std::from_chars(rest.data() + 1, rest.data() + 3, oh);
        std::from_chars(rest.data() + 4, rest.data() + 6, om);
        Timestamp off = oh * 3600 + om * 60;
        return rest[0] == '+' ? secs - off : secs + off;
    }
    return std::nullopt;
}

std::string format_rfc3339(Timestamp t) {
    using namespace std::chrono;
    sys_seconds tp{seconds{t}};
    auto dp = floor<days>(tp);
    year_month_day ymd{dp};
    hh_mm_ss hms{tp - dp};
    char buf[48];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", int(ymd.year()),
                  unsigned(ymd.month()), unsigned(ymd.day()),
                  int(hms.hours().count()), int(hms.minutes().count()),
                  int(hms.seconds().count()));
    return buf;
}

std::optional<Amount> parse_amount(std::string_view text) {
    if (text.empty()) return std::nullopt;
    bool neg = false;
    size_t i = 0;
    if (text[0] == '-') { neg = true; i = 1; }
    std::int64_t whole = 0, frac = 0;
    size_t digits = 0;
    for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i, ++digits)
        whole = whole * 10 + (text[i] - '0');
    if (digits == 0) return std::nullopt;
    if (i < text.size()) {
        if (text[i] != '.') return std::nullopt;
        ++i;
        size_t fdigits = 0;
        for (; i < text.size() && std::isdigit(static_cast<unsigned char>(text[i])); ++i, ++fdigits) {
            if (fdigits < 2) frac = frac * 10 + (text[i] - '0');
            else if (text[i] != '0') return std::nullopt;  // sub-cent precision is rejected
        }
        if (fdigits == 0 || i < text.size()) return std::nullopt;
        if (fdigits == 1) frac *= 10;
    }
    std::int64_t cents = whole * 100 + frac;
    return Amount{neg ? -cents : cents};
}

std::string to_string(Amount a) {
    std::int64_t c = a.cents;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%lld.%02lld", c < 0 ? "-" : "",
                  static_cast<long long>(std::llabs(c) / 100),
                  static_cast<long long>(std::llabs(c) % 100));
    return buf;
}

Value value_from_text(std::string_view text) {
    if (auto t = parse_rfc3339(text)) return Value::timestamp(*t);
    if (!text.empty()) {
        double d = 0.0;
        auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), d);
        if (ec == std::errc() && p == text.data() + text.size())
            return Value::number(d);
    }
    return Value::word(std::string(text));
}

std::string value_to_text(const Value& v) {
    switch (v.kind) {
        case Value::Kind::Timestamp:
            return format_rfc3339(v.ts);
        case Value::Kind::Number: {
            if (v.num == std::floor(v.num) && std::abs(v.num) < 1e15) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v.num));
                return buf;
            }
            // shortest text that parses back to the same double
            char buf[64];
            auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v.num);
            return ec == std::errc() ? std::string(buf, p) : std::string("0");
        }
        case Value::Kind::Token:
            return v.token;
    }
    return {};
}

std::string_view errc_name(Errc c) {
    switch (c) {
        case Errc::RoleNotAuthorized: return "RoleNotAuthorized";
        case Errc::DuplicateFactId: return "DuplicateFactId";
        case Errc::NotOriginalAuthor: return "NotOriginalAuthor";
        case Errc::AlreadySuperseded: return "AlreadySuperseded";
        case Errc::UnknownFact: return "UnknownFact";
        case Errc::SyntaxError: return "SyntaxError";
        case Errc::TypeError: return "TypeError";
        case Errc::StaticScopeMismatch: return "StaticScopeMismatch";
        case Errc::AggregationDenied: return "AggregationDenied";
        case Errc::RedistributionDenied: return "RedistributionDenied";
        case Errc::SelfNegotiation: return "SelfNegotiation";
        case Errc::MalformedProposal: return "MalformedProposal";
        case Errc::WrongTurn: return "WrongTurn";
        case Errc::SessionClosed: return "SessionClosed";
        case Errc::StaleRound: return "StaleRound";
        case Errc::NotAgreed: return "NotAgreed";
        case Errc::StrategyTimeout: return "StrategyTimeout";
        case Errc::EmptyQuery: return "EmptyQuery";
        case Errc::BindFailure: return "BindFailure";
        case Errc::StoreCorrupt: return "StoreCorrupt";
        case Errc::VersionMismatch: return "VersionMismatch";
        case Errc::UnknownEntity: return "UnknownEntity";
        case Errc::InvariantViolation: return "InvariantViolation";
    }
    return "Unknown";
}

std::string sha256_hex(std::string_view bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr);
    static constexpr char hexdig[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hexdig[digest[i] >> 4]);
        out.push_back(hexdig[digest[i] & 0xf]);
    }
    return out;
}

std::string derived_id(std::string_view prefix, std::string_view material) {
    std::string out(prefix);
    out.push_back('-');
    out += sha256_hex(material).substr(0, 10);
    return out;
}

}  // namespace umgr
