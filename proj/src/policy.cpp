#include "umgr/policy.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace umgr {

std::string_view to_string(Action a) {
    switch (a) {
        case Action::read: return "read";
        case Action::append: return "append";
        case Action::supersede: return "supersede";
        case Action::aggregate: return "aggregate";
        case Action::redistribute: return "redistribute";
    }
    return "?";
}

std::optional<Action> action_from_string(std::string_view s) {
    for (Action a : kAllActions)
        if (to_string(a) == s) return a;
    return std::nullopt;
}

std::string_view to_string(PredOp op) {
    switch (op) {
        case PredOp::eq: return "=";
        case PredOp::ne: return "!=";
        case PredOp::lt: return "<";
        case PredOp::le: return "<=";
        case PredOp::gt: return ">";
        case PredOp::ge: return ">=";
        case PredOp::in_set: return "in";
        case PredOp::before: return "before";
        case PredOp::after: return "after";
    }
    return "?";
}

bool is_environment_parameter(std::string_view name) {
    return name == "Date" || name == "Location" || name == "DeviceType";
}

bool is_static_clause(const Clause& c) {
    if (c.expires) return false;
    for (const Predicate& p : c.conditions)
        if (is_environment_parameter(p.parameter)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Lexer: one clause per line; words, commas, braces, comparison operators.
// ---------------------------------------------------------------------------

namespace {

struct Token {
    std::string text;
    int column = 0;  // 1-based
};

bool word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' ||
           c == ':' || c == '-' || c == '+';
}

std::vector<Token> lex_line(const std::string& line, int lineno) {
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < line.size()) {
        char c = line[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        int col = static_cast<int>(i) + 1;
        if (c == ',' || c == '{' || c == '}') {
            out.push_back({std::string(1, c), col});
            ++i;
        } else if (c == '!' || c == '<' || c == '>' || c == '=') {
            std::string op(1, c);
            if (c != '=' && i + 1 < line.size() && line[i + 1] == '=') {
                op.push_back('=');
                ++i;
            }
            if (op == "!")
                throw ParseError(Errc::SyntaxError, lineno, col, "stray '!'");
            out.push_back({op, col});
            ++i;
        } else if (word_char(c)) {
            std::size_t j = i;
            while (j < line.size() && word_char(line[j])) ++j;
            out.push_back({line.substr(i, j - i), col});
            i = j;
        } else {
            throw ParseError(Errc::SyntaxError, lineno, col,
                             std::string("unexpected character '") + c + "'");
        }
    }
    return out;
}

class ClauseParser {
  public:
    ClauseParser(std::vector<Token> tokens, int lineno)
        : tokens_(std::move(tokens)), lineno_(lineno) {}

    Clause parse() {
        Clause clause;
        std::string head = expect_word("permit or deny");
        if (head == "permit")
            clause.effect = Effect::permit;
        else if (head == "deny")
            clause.effect = Effect::deny;
        else
            fail_back("expected 'permit' or 'deny', got '" + head + "'");

        std::string action = expect_word("action");
        auto a = action_from_string(action);
        if (!a) fail_back("unknown action '" + action + "'");
        clause.action = *a;

        if (expect_word("'to'") != "to") fail_back("expected 'to'");

        std::string role = expect_word("role");
        auto r = role_from_string(role);
        if (!r) fail_back("unknown role '" + role + "'");
        clause.role = *r;

        if (peek_is("scope")) {
            next();
            for (;;) {
                std::string cat = expect_word("category");
                auto fc = category_from_string(cat);
                if (!fc) fail_back("unknown category '" + cat + "'");
                clause.scope.insert(*fc);
                if (!peek_is(",")) break;
                next();
            }
        }

        if (peek_is("when")) {
            next();
            for (;;) {
                clause.conditions.push_back(parse_predicate());
                if (!peek_is("and")) break;
                next();
            }
        }

        if (peek_is("expires")) {
            next();
            Token t = expect("timestamp");
            auto ts = parse_rfc3339(t.text);
            if (!ts)
                throw ParseError(Errc::TypeError, lineno_, t.column,
                                 "'expires' needs an RFC 3339 timestamp");
            clause.expires = *ts;
        }

        if (peek_is("price")) {
            next();
            Token t = expect("amount");
            auto amt = parse_amount(t.text);
            if (!amt || amt->cents < 0)
                throw ParseError(Errc::TypeError, lineno_, t.column,
                                 "'price' needs a non-negative decimal");
            clause.price = *amt;
        }

        if (peek_is("attribution")) {
            next();
            clause.requires_attribution = true;
        }

        if (pos_ < tokens_.size())
            throw ParseError(Errc::SyntaxError, lineno_, tokens_[pos_].column,
                             "trailing input '" + tokens_[pos_].text + "'");
        return clause;
    }

  private:
    Predicate parse_predicate() {
        Predicate pred;
        Token name = expect("parameter name");
        pred.parameter = name.text;

        Token op = expect("operator");
        static const std::pair<std::string_view, PredOp> ops[] = {
            {"=", PredOp::eq},   {"!=", PredOp::ne},    {"<", PredOp::lt},
            {"<=", PredOp::le},  {">", PredOp::gt},     {">=", PredOp::ge},
            {"in", PredOp::in_set}, {"before", PredOp::before}, {"after", PredOp::after},
        };
        auto found = std::find_if(std::begin(ops), std::end(ops),
                                  [&](auto& e) { return e.first == op.text; });
        if (found == std::end(ops))
            throw ParseError(Errc::SyntaxError, lineno_, op.column,
                             "unknown operator '" + op.text + "'");
        pred.op = found->second;

        if (pred.op == PredOp::in_set) {
            Token brace = expect("'{'");
            if (brace.text != "{")
                throw ParseError(Errc::SyntaxError, lineno_, brace.column,
                                 "'in' needs a {...} set literal");
            for (;;) {
                Token item = expect("set item");
                if (item.text == "}" && pred.operand.empty()) break;
                pred.operand.push_back(value_from_text(item.text));
                Token sep = expect("',' or '}'");
                if (sep.text == "}") break;
                if (sep.text != ",")
                    throw ParseError(Errc::SyntaxError, lineno_, sep.column,
                                     "expected ',' or '}'");
            }
        } else {
            Token lit = expect("literal");
            if (lit.text == "{" || lit.text == "}" || lit.text == ",")
                throw ParseError(Errc::SyntaxError, lineno_, lit.column,
                                 "expected a scalar literal");
            pred.operand.push_back(value_from_text(lit.text));
        }

        type_check(pred, op.column);
        return pred;
    }

    void type_check(const Predicate& pred, int col) {
        bool temporal = pred.op == PredOp::before || pred.op == PredOp::after;
        if (temporal && pred.parameter != "Date")
            throw ParseError(Errc::TypeError, lineno_, col,
                             "'" + std::string(to_string(pred.op)) +
                                 "' applies to the Date parameter only");
        for (const Value& v : pred.operand) {
            if (pred.parameter == "Date" && v.kind != Value::Kind::Timestamp)
                throw ParseError(Errc::TypeError, lineno_, col,
                                 "Date compares against timestamps");
            bool ordering = pred.op == PredOp::lt || pred.op == PredOp::le ||
                            pred.op == PredOp::gt || pred.op == PredOp::ge;
            if (ordering && v.kind == Value::Kind::Token)
                throw ParseError(Errc::TypeError, lineno_, col,
                                 "ordering operators need a number or timestamp");
        }
    }

    bool peek_is(std::string_view text) const {
        return pos_ < tokens_.size() && tokens_[pos_].text == text;
    }
    Token next() { return tokens_[pos_++]; }
    Token expect(const std::string& what) {
        if (pos_ >= tokens_.size())
            throw ParseError(Errc::SyntaxError, lineno_, end_column(), "expected " + what);
        return tokens_[pos_++];
    }
    std::string expect_word(const std::string& what) { return expect(what).text; }
    [[noreturn]] void fail_back(const std::string& msg) {
        throw ParseError(Errc::SyntaxError, lineno_, tokens_[pos_ - 1].column, msg);
    }
    int end_column() const {
        return tokens_.empty() ? 1
                               : tokens_.back().column +
                                     static_cast<int>(tokens_.back().text.size());
    }

    std::vector<Token> tokens_;
    int lineno_;
    std::size_t pos_ = 0;
};

}  // namespace

UsagePolicy parse_policy(std::string_view source, std::string policy_id,
                         std::string issuer) {
    UsagePolicy policy;
    policy.policy_id = std::move(policy_id);
    policy.issuer = std::move(issuer);

    std::istringstream in{std::string(source)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        policy.clauses.push_back(ClauseParser(lex_line(line, lineno), lineno).parse());
    }
    if (policy.clauses.empty())
        throw ParseError(Errc::SyntaxError, std::max(lineno, 1), 1,
                         "policy has no clauses");
    return policy;
}

std::string render_clause(const Clause& clause) {
    std::ostringstream out;
    out << (clause.effect == Effect::permit ? "permit" : "deny") << ' '
        << to_string(clause.action) << " to " << to_string(clause.role);
    if (!clause.scope.empty()) {
        out << " scope ";
        bool first = true;
        for (FactCategory c : clause.scope) {
            if (!first) out << ", ";
            out << to_string(c);
            first = false;
        }
    }
    if (!clause.conditions.empty()) {
        out << " when ";
        bool first = true;
        for (const Predicate& p : clause.conditions) {
            if (!first) out << " and ";
            first = false;
            out << p.parameter << ' ' << to_string(p.op) << ' ';
            if (p.op == PredOp::in_set) {
                out << '{';
                for (std::size_t i = 0; i < p.operand.size(); ++i) {
                    if (i) out << ", ";
                    out << value_to_text(p.operand[i]);
                }
                out << '}';
            } else {
                out << value_to_text(p.operand.at(0));
            }
        }
    }
    if (clause.expires) out << " expires " << format_rfc3339(*clause.expires);
    if (clause.price) out << " price " << to_string(*clause.price);
    if (clause.requires_attribution) out << " attribution";
    return out.str();
}

std::string render_policy(const UsagePolicy& policy) {
    std::string out;
    for (const Clause& c : policy.clauses) {
        out += render_clause(c);
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

const Value* lookup_parameter(const Context& ctx, const std::string& name) {
    if (is_environment_parameter(name)) {
        auto it = ctx.environment.parameters.find(name);
        return it == ctx.environment.parameters.end() ? nullptr : &it->second;
    }
    if (auto it = ctx.subject.parameters.find(name); it != ctx.subject.parameters.end())
        return &it->second;
    if (auto it = ctx.environment.parameters.find(name);
        it != ctx.environment.parameters.end())
        return &it->second;
    return nullptr;
}

bool ordered_compare(const Value& a, const Value& b, PredOp op) {
    if (a.kind != b.kind) return false;
    double x, y;
    if (a.kind == Value::Kind::Number) {
        x = a.num;
        y = b.num;
    } else if (a.kind == Value::Kind::Timestamp) {
        x = static_cast<double>(a.ts);
        y = static_cast<double>(b.ts);
    } else {
        return false;  // tokens have no order
    }
    switch (op) {
        case PredOp::lt: return x < y;
        case PredOp::le: return x <= y;
        case PredOp::gt: return x > y;
        case PredOp::ge: return x >= y;
        default: return false;
    }
}

bool predicate_holds(const Predicate& pred, const Context& ctx) {
    const Value* v = lookup_parameter(ctx, pred.parameter);
    return v && value_satisfies(*v, pred);
}

bool clause_applicable(const Clause& c, Action action, const Context& ctx,
                       Timestamp now) {
    if (c.action != action || c.role != ctx.role) return false;
    if (c.expires && now >= *c.expires) return false;
    return conditions_hold(c.conditions, ctx);
}

bool scope_intersects(const Clause& c, const std::set<FactCategory>& categories) {
    if (c.scope.empty()) return true;
    return std::any_of(categories.begin(), categories.end(),
                       [&](FactCategory x) { return c.scope.contains(x); });
}

bool scope_covers(const Clause& c, const std::set<FactCategory>& categories) {
    if (c.scope.empty()) return true;
    return std::all_of(categories.begin(), categories.end(),
                       [&](FactCategory x) { return c.scope.contains(x); });
}

}  // namespace

bool value_satisfies(const Value& v, const Predicate& pred) {
    switch (pred.op) {
        case PredOp::eq:
            return v == pred.operand.at(0);
        case PredOp::ne:
            return v.kind == pred.operand.at(0).kind && !(v == pred.operand.at(0));
        case PredOp::lt:
        case PredOp::le:
        case PredOp::gt:
        case PredOp::ge:
            return ordered_compare(v, pred.operand.at(0), pred.op);
        case PredOp::in_set:
            return std::find(pred.operand.begin(), pred.operand.end(), v) !=
                   pred.operand.end();
        case PredOp::before:
            return v.kind == Value::Kind::Timestamp &&
                   pred.operand.at(0).kind == Value::Kind::Timestamp &&
                   v.ts < pred.operand.at(0).ts;
        case PredOp::after:
            return v.kind == Value::Kind::Timestamp &&
                   pred.operand.at(0).kind == Value::Kind::Timestamp &&
                   v.ts > pred.operand.at(0).ts;
    }
    return false;
}

bool conditions_hold(const std::vector<Predicate>& conditions, const Context& ctx) {
    return std::all_of(conditions.begin(), conditions.end(),
                       [&](const Predicate& p) { return predicate_holds(p, ctx); });
}

Decision evaluate(const UsagePolicy& policy, Action action,
                  const std::set<FactCategory>& categories, const Context& ctx,
                  Timestamp now) {
    for (std::size_t i = 0; i < policy.clauses.size(); ++i) {
        const Clause& c = policy.clauses[i];
        if (c.effect == Effect::deny && clause_applicable(c, action, ctx, now) &&
            scope_intersects(c, categories)) {
            return Decision{Outcome::deny, i, {},
                            "denied by clause " + std::to_string(i)};
        }
    }
    for (std::size_t i = 0; i < policy.clauses.size(); ++i) {
        const Clause& c = policy.clauses[i];
        if (c.effect == Effect::permit && clause_applicable(c, action, ctx, now) &&
            scope_covers(c, categories)) {
            return Decision{Outcome::permit, i,
                            Obligations{c.requires_attribution, c.price},
                            "permitted by clause " + std::to_string(i)};
        }
    }
    return Decision{Outcome::deny, std::nullopt, {}, "default deny"};
}

std::pair<std::vector<Clause>, std::vector<Clause>> classify_clauses(
    const UsagePolicy& policy) {
    std::vector<Clause> statics, dynamics;
    for (const Clause& c : policy.clauses)
        (is_static_clause(c) ? statics : dynamics).push_back(c);
    return {std::move(statics), std::move(dynamics)};
}

std::vector<std::pair<std::string, Decision>> explain_conflict(
    const std::vector<UsagePolicy>& policies, Action action,
    const std::set<FactCategory>& categories, const Context& ctx, Timestamp now) {
    if (policies.empty())
        throw Error(Errc::InvariantViolation, "explain_conflict needs policies");
    std::vector<std::pair<std::string, Decision>> out;
    out.reserve(policies.size());
    for (const UsagePolicy& p : policies)
        out.emplace_back(p.policy_id, evaluate(p, action, categories, ctx, now));
    return out;
}

}  // namespace umgr
