#include "umgr/serialize.hpp"

#include <charconv>
#include <sstream>

namespace umgr {

namespace {

[[noreturn]] void bad(const std::string& what) {
    throw Error(Errc::SyntaxError, what);
}

template <typename T>
T enum_or_throw(std::optional<T> v, const std::string& what) {
    if (!v) bad("unknown " + what);
    return *v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            parts.push_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return parts;
}

std::string double_to_text(double d) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
    return ec == std::errc() ? std::string(buf, p) : std::string("0");
}

double double_from_text(const std::string& s) {
    double d = 0;
    std::from_chars(s.data(), s.data() + s.size(), d);
    return d;
}

}  // namespace

Json to_json(const Value& v) {
    const char* kind = v.kind == Value::Kind::Timestamp ? "ts"
                       : v.kind == Value::Kind::Number  ? "num"
                                                        : "tok";
    return Json{{"k", kind}, {"v", value_to_text(v)}};
}

Value value_from_json(const Json& j) {
    const std::string kind = j.at("k");
    const std::string text = j.at("v");
    if (kind == "ts") {
        auto t = parse_rfc3339(text);
        if (!t) bad("timestamp value '" + text + "'");
        return Value::timestamp(*t);
    }
    if (kind == "num") return Value::number(double_from_text(text));
    return Value::word(text);
}

Json to_json(const Fact& f) {
    Json j{
        {"fact_id", f.fact_id},
        {"category", to_string(f.category)},
        {"author_subject", f.author_subject},
        {"author_role", to_string(f.author_role)},
        {"recorded_at", f.recorded_at},
        {"body", f.body},
    };
    if (f.superseded_by) j["superseded_by"] = *f.superseded_by;
    return j;
}

Fact fact_from_json(const Json& j) {
    Fact f;
    f.fact_id = j.at("fact_id");
    f.category = enum_or_throw(category_from_string(j.at("category").get<std::string>()),
                               "category");
    f.author_subject = j.at("author_subject");
    f.author_role =
        enum_or_throw(role_from_string(j.at("author_role").get<std::string>()), "role");
    f.recorded_at = j.at("recorded_at");
    f.body = j.at("body");
    if (j.contains("superseded_by")) f.superseded_by = j.at("superseded_by");
    return f;
}

Json to_json(const Record& r) {
    Json facts = Json::array();
    for (const Fact& f : r.facts) facts.push_back(to_json(f));
    return Json{{"record_id", r.record_id},
                {"owner", r.owner},
                {"version", r.version},
                {"facts", std::move(facts)}};
}

Record record_from_json(const Json& j) {
    Record r;
    r.record_id = j.at("record_id");
    r.owner = j.at("owner");
    r.version = j.at("version");
    for (const Json& f : j.at("facts")) r.facts.push_back(fact_from_json(f));
    return r;
}

Json to_json(const Subject& s) {
    Json params = Json::object();
    for (const auto& [k, v] : s.parameters) params[k] = to_json(v);
    Json roles = Json::array();
    for (RoleKind r : s.verified_roles) roles.push_back(to_string(r));
    return Json{{"subject_id", s.subject_id},
                {"display_name", s.display_name},
                {"parameters", std::move(params)},
                {"verified_roles", std::move(roles)}};
}

Subject subject_from_json(const Json& j) {
    Subject s;
    s.subject_id = j.at("subject_id");
    s.display_name = j.value("display_name", "");
    if (j.contains("parameters"))
        for (const auto& [k, v] : j.at("parameters").items()) {
            if (v.is_object())
                s.parameters[k] = value_from_json(v);
            else if (v.is_number())
                s.parameters[k] = Value::number(v.get<double>());
            else
                s.parameters[k] = value_from_text(v.get<std::string>());
        }
    if (j.contains("verified_roles"))
        for (const Json& r : j.at("verified_roles"))
            s.verified_roles.insert(
                enum_or_throw(role_from_string(r.get<std::string>()), "role"));
    return s;
}

Json to_json(const Environment& e) {
    Json params = Json::object();
    for (const auto& [k, v] : e.parameters) params[k] = to_json(v);
    return Json{{"parameters", std::move(params)}};
}

Environment environment_from_json(const Json& j) {
    Environment e;
    // Accept both the tagged form and plain text values (fixture files).
    const Json& params = j.contains("parameters") ? j.at("parameters") : j;
    for (const auto& [k, v] : params.items()) {
        if (v.is_object())
            e.parameters[k] = value_from_json(v);
        else if (v.is_number())
            e.parameters[k] = Value::number(v.get<double>());
        else
            e.parameters[k] = value_from_text(v.get<std::string>());
    }
    validate_environment(e);
    return e;
}

Json to_json(const Context& c) {
    return Json{{"subject", to_json(c.subject)},
                {"role", to_string(c.role)},
                {"environment", to_json(c.environment)}};
}

Context context_from_json(const Json& j) {
    return make_context(
        subject_from_json(j.at("subject")),
        enum_or_throw(role_from_string(j.at("role").get<std::string>()), "role"),
        environment_from_json(j.at("environment")));
}

Json to_json(const UsagePolicy& p) {
    return Json{{"policy_id", p.policy_id}, {"issuer", p.issuer},
                {"text", render_policy(p)}};
}

UsagePolicy policy_from_json(const Json& j) {
    return parse_policy(j.at("text").get<std::string>(), j.at("policy_id"),
                        j.at("issuer"));
}

Json to_json(const Decision& d) {
    Json obligations{{"attribution", d.obligations.attribution}};
    if (d.obligations.price) obligations["price"] = to_string(*d.obligations.price);
    Json j{{"outcome", d.permitted() ? "permit" : "deny"},
           {"obligations", std::move(obligations)},
           {"reason", d.reason}};
    if (d.matched_clause) j["matched_clause"] = *d.matched_clause;
    return j;
}

Decision decision_from_json(const Json& j) {
    Decision d;
    d.outcome = j.at("outcome") == "permit" ? Outcome::permit : Outcome::deny;
    if (j.contains("matched_clause")) d.matched_clause = j.at("matched_clause");
    const Json& ob = j.at("obligations");
    d.obligations.attribution = ob.at("attribution");
    if (ob.contains("price")) {
        auto a = parse_amount(ob.at("price").get<std::string>());
        if (!a) bad("price amount");
        d.obligations.price = *a;
    }
    d.reason = j.at("reason");
    return d;
}

Json categories_to_json(const std::set<FactCategory>& cats) {
    Json j = Json::array();
    for (FactCategory c : cats) j.push_back(to_string(c));
    return j;
}

std::set<FactCategory> categories_from_json(const Json& j) {
    std::set<FactCategory> out;
    for (const Json& c : j)
        out.insert(enum_or_throw(category_from_string(c.get<std::string>()), "category"));
    return out;
}

Json to_json(const Proposal& p) {
    return Json{{"proposal_id", p.proposal_id},
                {"from_party", to_string(p.from_party)},
                {"requested_categories", categories_to_json(p.requested_categories)},
                {"policy", to_json(p.policy_terms)},
                {"price", to_string(p.price)},
                {"round", p.round}};
}

Proposal proposal_from_json(const Json& j) {
    Proposal p;
    p.proposal_id = j.at("proposal_id");
    p.from_party = enum_or_throw(
        party_from_string(j.at("from_party").get<std::string>()), "party");
    p.requested_categories = categories_from_json(j.at("requested_categories"));
    p.policy_terms = policy_from_json(j.at("policy"));
    auto a = parse_amount(j.at("price").get<std::string>());
    if (!a) bad("price amount");
    p.price = *a;
    p.round = j.at("round");
    return p;
}

Json to_json(const NegotiationSession& s) {
    Json history = Json::array();
    for (const Proposal& p : s.history) history.push_back(to_json(p));
    return Json{{"session_id", s.session_id},
                {"producer", s.producer},
                {"consumer", s.consumer},
                {"record_id", s.record_id},
                {"state", to_string(s.state)},
                {"max_rounds", s.max_rounds},
                {"history", std::move(history)}};
}

NegotiationSession session_from_json(const Json& j) {
    NegotiationSession s;
    s.session_id = j.at("session_id");
    s.producer = j.at("producer");
    s.consumer = j.at("consumer");
    s.record_id = j.at("record_id");
    s.state = enum_or_throw(
        session_state_from_string(j.at("state").get<std::string>()), "state");
    s.max_rounds = j.at("max_rounds");
    for (const Json& p : j.at("history")) s.history.push_back(proposal_from_json(p));
    return s;
}

Json to_json(const License& l) {
    Json prov = Json::array();
    for (const ProvenanceEntry& pe : l.provenance)
        prov.push_back(Json{{"record_id", pe.source_record_id},
                            {"owner", pe.owner_subject},
                            {"share", pe.share}});
    return Json{{"license_id", l.license_id},
                {"producer", l.producer},
                {"consumer", l.consumer},
                {"policy", to_json(l.policy)},
                {"issued_at", l.issued_at},
                {"provenance", std::move(prov)}};
}

License license_from_json(const Json& j) {
    License l;
    l.license_id = j.at("license_id");
    l.producer = j.at("producer");
    l.consumer = j.at("consumer");
    l.policy = policy_from_json(j.at("policy"));
    l.issued_at = j.at("issued_at");
    for (const Json& p : j.at("provenance"))
        l.provenance.push_back(
            {p.at("record_id"), p.at("owner"), p.at("share").get<double>()});
    return l;
}

Json to_json(const Bundle& b) {
    Json payload;
    if (const auto* fr = std::get_if<FilteredRecord>(&b.payload)) {
        Json facts = Json::array();
        for (const Fact& f : fr->facts) facts.push_back(to_json(f));
        payload = Json{{"kind", "filtered_record"},
                       {"source_record_id", fr->source_record_id},
                       {"source_version", fr->source_version},
                       {"filter_id", fr->filter_id},
                       {"facts", std::move(facts)}};
    } else {
        const auto& agg = std::get<AggregateSet>(b.payload);
        Json elements = Json::array();
        for (const auto& el : agg.elements) {
            Json facts = Json::array();
            for (const Fact& f : el.facts) facts.push_back(to_json(f));
            elements.push_back(Json{{"record_id", el.source_record_id},
                                    {"facts", std::move(facts)}});
        }
        Json licenses = Json::array();
        for (const License& l : agg.constituent_licenses)
            licenses.push_back(to_json(l));
        payload = Json{{"kind", "aggregate"},
                       {"elements", std::move(elements)},
                       {"licenses", std::move(licenses)}};
    }
    return Json{{"bundle_id", b.bundle_id},
                {"created_at", b.created_at},
                {"license", to_json(b.license)},
                {"payload", std::move(payload)}};
}

Bundle bundle_from_json(const Json& j) {
    Bundle b;
    b.bundle_id = j.at("bundle_id");
    b.created_at = j.at("created_at");
    b.license = license_from_json(j.at("license"));
    const Json& payload = j.at("payload");
    if (payload.at("kind") == "filtered_record") {
        FilteredRecord fr;
        fr.source_record_id = payload.at("source_record_id");
        fr.source_version = payload.at("source_version");
        fr.filter_id = payload.at("filter_id");
        for (const Json& f : payload.at("facts")) fr.facts.push_back(fact_from_json(f));
        b.payload = std::move(fr);
    } else {
        AggregateSet agg;
        for (const Json& el : payload.at("elements")) {
            AggregateSet::Element e;
            e.source_record_id = el.at("record_id");
            for (const Json& f : el.at("facts")) e.facts.push_back(fact_from_json(f));
            agg.elements.push_back(std::move(e));
        }
        for (const Json& l : payload.at("licenses"))
            agg.constituent_licenses.push_back(license_from_json(l));
        b.payload = std::move(agg);
    }
    return b;
}

Json to_json(const audit::AuditEntry& e) {
    return Json{{"sequence", e.sequence},   {"timestamp", e.timestamp},
                {"actor", e.actor},         {"kind", audit::to_string(e.kind)},
                {"detail", e.detail},       {"prev_hash", e.prev_hash},
                {"entry_hash", e.entry_hash}};
}

audit::AuditEntry audit_entry_from_json(const Json& j) {
    audit::AuditEntry e;
    e.sequence = j.at("sequence");
    e.timestamp = j.at("timestamp");
    e.actor = j.at("actor");
    e.kind = enum_or_throw(
        audit::event_kind_from_string(j.at("kind").get<std::string>()), "event kind");
    e.detail = j.at("detail");
    e.prev_hash = j.at("prev_hash");
    e.entry_hash = j.at("entry_hash");
    return e;
}

std::string tsv_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '\\': out += "\\\\"; break;
            case '\t': out += "\\t"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string tsv_unescape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '\\' || i + 1 == text.size()) {
            out.push_back(text[i]);
            continue;
        }
        switch (text[++i]) {
            case '\\': out.push_back('\\'); break;
            case 't': out.push_back('\t'); break;
            case 'n': out.push_back('\n'); break;
            case 'r': out.push_back('\r'); break;
            default: out.push_back(text[i]);
        }
    }
    return out;
}

std::string audit_entry_to_line(const audit::AuditEntry& e) {
    std::ostringstream out;
    out << e.sequence << '\t' << e.timestamp << '\t' << tsv_escape(e.actor) << '\t'
        << audit::to_string(e.kind) << '\t' << tsv_escape(e.detail) << '\t'
        << e.prev_hash << '\t' << e.entry_hash;
    return out.str();
}

audit::AuditEntry audit_entry_from_line(const std::string& line) {
    std::vector<std::string> f = split(line, '\t');
    if (f.size() != 7) bad("audit line needs 7 fields");
    audit::AuditEntry e;
    e.sequence = std::stoull(f[0]);
    e.timestamp = std::stoll(f[1]);
    e.actor = tsv_unescape(f[2]);
    e.kind = enum_or_throw(audit::event_kind_from_string(f[3]), "event kind");
    e.detail = tsv_unescape(f[4]);
    e.prev_hash = f[5];
    e.entry_hash = f[6];
    return e;
}

// ---------------------------------------------------------------------------
// Bundle document
// ---------------------------------------------------------------------------

namespace {

std::string fact_line(const std::string& record_id, const Fact& f) {
    std::ostringstream out;
    out << record_id << '\t' << f.fact_id << '\t' << to_string(f.category) << '\t'
        << f.author_subject << '\t' << to_string(f.author_role) << '\t'
        << f.recorded_at << '\t' << (f.superseded_by ? *f.superseded_by : "-") << '\t'
        << tsv_escape(f.body);
    return out.str();
}

Fact fact_from_line_fields(const std::vector<std::string>& f) {
    Fact fact;
    fact.fact_id = f[1];
    fact.category = enum_or_throw(category_from_string(f[2]), "category");
    fact.author_subject = f[3];
    fact.author_role = enum_or_throw(role_from_string(f[4]), "role");
    fact.recorded_at = std::stoll(f[5]);
    if (f[6] != "-") fact.superseded_by = f[6];
    fact.body = tsv_unescape(f[7]);
    return fact;
}

}  // namespace

std::string render_bundle_document(const Bundle& bundle) {
    std::ostringstream out;
    out << kBundleHeader << '\n';

    out << "[meta]\n";
    std::map<std::string, std::string> meta{
        {"bundle_id", bundle.bundle_id},
        {"consumer", bundle.license.consumer},
        {"created_at", std::to_string(bundle.created_at)},
        {"issued_at", std::to_string(bundle.license.issued_at)},
        {"license_id", bundle.license.license_id},
        {"policy_id", bundle.license.policy.policy_id},
        {"producer", bundle.license.producer},
    };
    if (const auto* fr = std::get_if<FilteredRecord>(&bundle.payload)) {
        meta["payload"] = "filtered_record";
        meta["filter_id"] = fr->filter_id;
        meta["source_record_id"] = fr->source_record_id;
        meta["source_version"] = std::to_string(fr->source_version);
    } else {
        meta["payload"] = "aggregate";
    }
    for (const auto& [k, v] : meta) out << k << '=' << tsv_escape(v) << '\n';

    out << "[facts]\n";
    if (const auto* fr = std::get_if<FilteredRecord>(&bundle.payload)) {
        for (const Fact& f : fr->facts) out << fact_line(fr->source_record_id, f) << '\n';
    } else {
        for (const auto& el : std::get<AggregateSet>(bundle.payload).elements)
            for (const Fact& f : el.facts) out << fact_line(el.source_record_id, f) << '\n';
    }

    out << "[policy]\n" << render_policy(bundle.license.policy);

    out << "[provenance]\n";
    for (const ProvenanceEntry& pe : bundle.license.provenance)
        out << pe.source_record_id << '\t' << pe.owner_subject << '\t'
            << double_to_text(pe.share) << '\n';
    return out.str();
}

std::string bundle_digest(const std::string& document) {
    return sha256_hex(document);
}

Bundle parse_bundle_document(const std::string& document) {
    std::istringstream in(document);
    std::string line;
    if (!std::getline(in, line)) bad("empty bundle document");
    if (line != kBundleHeader) {
        if (line.rfind("UMGR-BUNDLE", 0) == 0)
            throw Error(Errc::VersionMismatch, "unsupported bundle format: " + line);
        bad("not a bundle document");
    }

    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Fact>> facts;
    std::vector<std::string> policy_lines;
    std::vector<ProvenanceEntry> provenance;
    enum class Section { none, meta, facts, policy, provenance } section = Section::none;

    while (std::getline(in, line)) {
        if (line == "[meta]") { section = Section::meta; continue; }
        if (line == "[facts]") { section = Section::facts; continue; }
        if (line == "[policy]") { section = Section::policy; continue; }
        if (line == "[provenance]") { section = Section::provenance; continue; }
        switch (section) {
            case Section::meta: {
                auto eq = line.find('=');
                if (eq == std::string::npos) bad("meta line without '='");
                meta[line.substr(0, eq)] = tsv_unescape(line.substr(eq + 1));
                break;
            }
            case Section::facts: {
                auto f = split(line, '\t');
                if (f.size() != 8) bad("fact line needs 8 fields");
                facts.emplace_back(f[0], fact_from_line_fields(f));
                break;
            }
            case Section::policy:
                policy_lines.push_back(line);
                break;
            case Section::provenance: {
                auto f = split(line, '\t');
                if (f.size() != 3) bad("provenance line needs 3 fields");
                provenance.push_back({f[0], f[1], double_from_text(f[2])});
                break;
            }
            case Section::none:
                bad("content before first section");
        }
    }

    if (meta["payload"] != "filtered_record")
        throw Error(Errc::SyntaxError,
                    "only filtered-record documents reconstruct to bundles");

    Bundle b;
    b.bundle_id = meta["bundle_id"];
    b.created_at = std::stoll(meta["created_at"]);
    FilteredRecord fr;
    fr.source_record_id = meta["source_record_id"];
    fr.source_version = std::stoull(meta["source_version"]);
    fr.filter_id = meta["filter_id"];
    for (auto& [rid, fact] : facts) {
        if (rid != fr.source_record_id) bad("fact outside the source record");
        fr.facts.push_back(std::move(fact));
    }
    b.payload = std::move(fr);

    std::string policy_text;
    for (const std::string& pl : policy_lines) policy_text += pl + "\n";
    b.license.license_id = meta["license_id"];
    b.license.producer = meta["producer"];
    b.license.consumer = meta["consumer"];
    b.license.policy = parse_policy(policy_text, meta["policy_id"], meta["producer"]);
    b.license.issued_at = std::stoll(meta["issued_at"]);
    b.license.provenance = std::move(provenance);
    return b;
}

}  // namespace umgr
