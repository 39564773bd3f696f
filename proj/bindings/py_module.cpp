// Python bindings for the usage-management engine. Enumerations cross the
// boundary as strings; money as "8.00" strings; timestamps as UTC seconds.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "umgr/scenario.hpp"
#include "umgr/serialize.hpp"
#include "umgr/service.hpp"

namespace py = pybind11;
using namespace umgr;

namespace {

FactCategory category_arg(const std::string& s) {
    auto c = category_from_string(s);
    if (!c) throw py::value_error("unknown category '" + s + "'");
    return *c;
}

RoleKind role_arg(const std::string& s) {
    auto r = role_from_string(s);
    if (!r) throw py::value_error("unknown role '" + s + "'");
    return *r;
}

Action action_arg(const std::string& s) {
    auto a = action_from_string(s);
    if (!a) throw py::value_error("unknown action '" + s + "'");
    return *a;
}

DeviceType device_arg(const std::string& s) {
    auto d = device_from_string(s);
    if (!d) throw py::value_error("unknown device type '" + s + "'");
    return *d;
}

std::set<FactCategory> categories_arg(const std::vector<std::string>& names) {
    std::set<FactCategory> out;
    for (const std::string& n : names) out.insert(category_arg(n));
    return out;
}

std::vector<std::string> categories_out(const std::set<FactCategory>& cats) {
    std::vector<std::string> out;
    for (FactCategory c : cats) out.emplace_back(to_string(c));
    return out;
}

Amount amount_arg(const std::string& s) {
    auto a = parse_amount(s);
    if (!a) throw py::value_error("bad amount '" + s + "'");
    return *a;
}

py::dict decision_dict(const Decision& d) {
    py::dict out;
    out["outcome"] = d.permitted() ? "permit" : "deny";
    out["matched_clause"] =
        d.matched_clause ? py::cast(*d.matched_clause) : py::none();
    out["reason"] = d.reason;
    out["attribution"] = d.obligations.attribution;
    out["price"] = d.obligations.price ? py::cast(to_string(*d.obligations.price))
                                       : py::none();
    return out;
}

}  // namespace

PYBIND11_MODULE(umgr, m) {
    m.doc() = "usage-management engine for personal health records";

    py::register_exception<Error>(m, "UmgrError");

    // --- core model ---------------------------------------------------------
    py::class_<Fact>(m, "Fact")
        .def(py::init([](std::string fact_id, std::string category,
                         std::string author_subject, std::string author_role,
                         Timestamp recorded_at, std::string body) {
                 Fact f;
                 f.fact_id = std::move(fact_id);
                 f.category = category_arg(category);
                 f.author_subject = std::move(author_subject);
                 f.author_role = role_arg(author_role);
                 f.recorded_at = recorded_at;
                 f.body = std::move(body);
                 return f;
             }),
             py::arg("fact_id"), py::arg("category"), py::arg("author_subject"),
             py::arg("author_role"), py::arg("recorded_at"), py::arg("body"))
        .def_readonly("fact_id", &Fact::fact_id)
        .def_property_readonly(
            "category", [](const Fact& f) { return std::string(to_string(f.category)); })
        .def_readonly("author_subject", &Fact::author_subject)
        .def_readonly("recorded_at", &Fact::recorded_at)
        .def_readonly("body", &Fact::body)
        .def_property_readonly("superseded_by", [](const Fact& f) {
            return f.superseded_by ? py::cast(*f.superseded_by) : py::none();
        });

    py::class_<Record>(m, "Record")
        .def(py::init([](std::string record_id, std::string owner) {
                 Record r;
                 r.record_id = std::move(record_id);
                 r.owner = std::move(owner);
                 return r;
             }),
             py::arg("record_id"), py::arg("owner"))
        .def_readonly("record_id", &Record::record_id)
        .def_readonly("owner", &Record::owner)
        .def_readonly("version", &Record::version)
        .def_readonly("facts", &Record::facts);

    py::class_<Subject>(m, "Subject")
        .def(py::init([](std::string subject_id, std::string display_name,
                         const std::vector<std::string>& verified_roles) {
                 Subject s;
                 s.subject_id = std::move(subject_id);
                 s.display_name = std::move(display_name);
                 for (const std::string& r : verified_roles)
                     s.verified_roles.insert(role_arg(r));
                 return s;
             }),
             py::arg("subject_id"), py::arg("display_name") = "",
             py::arg("verified_roles") = std::vector<std::string>{})
        .def("set_parameter",
             [](Subject& s, const std::string& name, const std::string& text) {
                 s.parameters[name] = value_from_text(text);
             })
        .def_readonly("subject_id", &Subject::subject_id);

    py::class_<Context>(m, "Context")
        .def_property_readonly(
            "role", [](const Context& c) { return std::string(to_string(c.role)); });

    m.def(
        "make_context",
        [](const Subject& subject, const std::string& role, Timestamp date,
           const std::string& location, const std::string& device) {
            return make_context(subject, role_arg(role),
                                make_environment(date, location, device_arg(device)));
        },
        py::arg("subject"), py::arg("role"), py::arg("date"), py::arg("location"),
        py::arg("device"));

    py::class_<audit::Log>(m, "AuditLog")
        .def(py::init<>())
        .def("__len__", [](const audit::Log& log) { return log.size(); })
        .def("verify",
             [](const audit::Log& log) -> py::object {
                 auto r = audit::verify_chain(log);
                 if (std::holds_alternative<std::monostate>(r)) return py::none();
                 return py::cast(std::get<audit::Tampered>(r).first_bad_sequence);
             })
        .def("edit_history", [](const audit::Log& log, const std::string& record_id) {
            std::vector<std::string> lines;
            for (const audit::AuditEntry& e : audit::edit_history(log, record_id))
                lines.push_back(audit_entry_to_line(e));
            return lines;
        });

    m.def("append_fact", &append_fact, py::arg("record"), py::arg("fact"),
          py::arg("ctx"), py::arg("log"));
    m.def(
        "supersede_fact",
        [](const Record& r, const std::string& old_id, const Fact& f, const Context& c,
           audit::Log& log) { return supersede_fact(r, old_id, f, c, log); },
        py::arg("record"), py::arg("old_id"), py::arg("new_fact"), py::arg("ctx"),
        py::arg("log"));
    m.def("current_facts", &current_facts, py::arg("record"));

    // --- policy --------------------------------------------------------------
    py::class_<UsagePolicy>(m, "UsagePolicy")
        .def_readonly("policy_id", &UsagePolicy::policy_id)
        .def_readonly("issuer", &UsagePolicy::issuer)
        .def_property_readonly("text",
                               [](const UsagePolicy& p) { return render_policy(p); })
        .def("__len__", [](const UsagePolicy& p) { return p.clauses.size(); });

    m.def(
        "parse_policy",
        [](const std::string& text, const std::string& policy_id,
           const std::string& issuer) { return parse_policy(text, policy_id, issuer); },
        py::arg("text"), py::arg("policy_id") = "py", py::arg("issuer") = "py");
    m.def("render_policy", &render_policy);
    m.def(
        "evaluate",
        [](const UsagePolicy& p, const std::string& action,
           const std::vector<std::string>& categories, const Context& ctx,
           Timestamp now) {
            return decision_dict(
                evaluate(p, action_arg(action), categories_arg(categories), ctx, now));
        },
        py::arg("policy"), py::arg("action"), py::arg("categories"), py::arg("ctx"),
        py::arg("now"));
    m.def("classify_clauses", [](const UsagePolicy& p) {
        auto [statics, dynamics] = classify_clauses(p);
        std::vector<std::string> s, d;
        for (const Clause& c : statics) s.push_back(render_clause(c));
        for (const Clause& c : dynamics) d.push_back(render_clause(c));
        return py::make_tuple(s, d);
    });

    // --- artifact --------------------------------------------------------------
    py::class_<Filter>(m, "Filter")
        .def(py::init([](std::string filter_id, const std::vector<std::string>& cats) {
                 Filter f;
                 f.filter_id = std::move(filter_id);
                 f.allowed_categories = categories_arg(cats);
                 return f;
             }),
             py::arg("filter_id"), py::arg("allowed_categories"));

    py::class_<FilteredRecord>(m, "FilteredRecord")
        .def_readonly("source_record_id", &FilteredRecord::source_record_id)
        .def_readonly("facts", &FilteredRecord::facts)
        .def_property_readonly("categories", [](const FilteredRecord& fr) {
            return categories_out(fr.categories());
        });

    py::class_<Bundle>(m, "Bundle")
        .def_readonly("bundle_id", &Bundle::bundle_id)
        .def_property_readonly(
            "license_id", [](const Bundle& b) { return b.license.license_id; })
        .def_property_readonly("consumer",
                               [](const Bundle& b) { return b.license.consumer; })
        .def_property_readonly(
            "policy_text", [](const Bundle& b) { return render_policy(b.license.policy); })
        .def("document", [](const Bundle& b) { return render_bundle_document(b); })
        .def("digest",
             [](const Bundle& b) { return bundle_digest(render_bundle_document(b)); });

    py::class_<AggregateSet>(m, "AggregateSet")
        .def("__len__", [](const AggregateSet& a) { return a.elements.size(); })
        .def_property_readonly("license_ids", [](const AggregateSet& a) {
            std::vector<std::string> out;
            for (const License& l : a.constituent_licenses) out.push_back(l.license_id);
            return out;
        });

    m.def("apply_filter", &apply_filter, py::arg("record"), py::arg("filter"));
    m.def("issue_bundle", &issue_bundle, py::arg("filtered_record"), py::arg("policy"),
          py::arg("producer"), py::arg("consumer"), py::arg("now"), py::arg("log"));
    m.def(
        "request_use",
        [](const Bundle& b, const std::string& action,
           const std::vector<std::string>& categories, const Context& ctx, Timestamp now,
           audit::Log& log) {
            return decision_dict(request_use(b, action_arg(action),
                                             categories_arg(categories), ctx, now, log));
        },
        py::arg("bundle"), py::arg("action"), py::arg("categories"), py::arg("ctx"),
        py::arg("now"), py::arg("log"));
    m.def(
        "aggregate",
        [](const std::vector<Bundle>& bundles, const std::string& action,
           const Context& ctx, Timestamp now, audit::Log& log) {
            return aggregate(bundles, action_arg(action), ctx, now, log);
        },
        py::arg("bundles"), py::arg("requested_action"), py::arg("ctx"), py::arg("now"),
        py::arg("log"));
    m.def(
        "attribute_compensation",
        [](const AggregateSet& agg, const std::string& payment, audit::Log& log) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& [owner, amount] :
                 attribute_compensation(agg, amount_arg(payment), log))
                out.emplace_back(owner, to_string(amount));
            return out;
        },
        py::arg("aggregate"), py::arg("payment"), py::arg("log"));
    m.def(
        "redistribute_bundle",
        [](const AggregateSet& agg, const std::string& new_consumer, const Context& ctx,
           Timestamp now, audit::Log& log) {
            return redistribute_bundle(agg, new_consumer, ctx, now, log);
        },
        py::arg("aggregate"), py::arg("new_consumer"), py::arg("ctx"), py::arg("now"),
        py::arg("log"));

    // --- negotiation ------------------------------------------------------------
    py::class_<NegotiationSession>(m, "NegotiationSession")
        .def_readonly("session_id", &NegotiationSession::session_id)
        .def_property_readonly(
            "state",
            [](const NegotiationSession& s) { return std::string(to_string(s.state)); })
        .def_property_readonly(
            "rounds", [](const NegotiationSession& s) { return s.history.size(); })
        .def_property_readonly("agreed_price", [](const NegotiationSession& s) {
            return to_string(s.agreed_terms().price);
        });

    m.def(
        "open_session",
        [](const std::string& producer, const std::string& consumer,
           const std::string& record_id, const std::vector<std::string>& categories,
           const UsagePolicy& terms, const std::string& price, std::uint32_t max_rounds) {
            Proposal initial;
            initial.proposal_id = "P-1";
            initial.from_party = Party::consumer;
            initial.requested_categories = categories_arg(categories);
            initial.policy_terms = terms;
            initial.price = amount_arg(price);
            initial.round = 1;
            return open_session(producer, consumer, record_id, initial, max_rounds);
        },
        py::arg("producer"), py::arg("consumer"), py::arg("record_id"),
        py::arg("categories"), py::arg("policy_terms"), py::arg("price"),
        py::arg("max_rounds") = 16);
    m.def(
        "run_automated",
        [](const NegotiationSession& session, const std::string& reserve,
           const std::string& start, const std::string& step, const std::string& limit,
           std::uint64_t seed) {
            AcceptThresholdStrategy producer(Party::producer, amount_arg(reserve));
            LinearConcessionStrategy consumer(Party::consumer, amount_arg(start),
                                              amount_arg(step), amount_arg(limit));
            return run_automated(session, producer, consumer, seed);
        },
        py::arg("session"), py::arg("producer_reserve"), py::arg("consumer_start"),
        py::arg("consumer_step"), py::arg("consumer_limit"), py::arg("seed") = 1);
    m.def("conclude_to_bundle", &conclude_to_bundle, py::arg("session"),
          py::arg("record"), py::arg("now"), py::arg("log"));

    // --- scenarios ----------------------------------------------------------------
    m.def("scenario_names", [] { return scenario_names(); });
    m.def(
        "run_scenario",
        [](const std::string& name, const std::filesystem::path& fixtures_root,
           const std::filesystem::path& store, std::uint64_t seed, Timestamp start) {
            ScenarioSpec spec{name, fixtures_root / name, seed};
            return run_scenario(spec, StorePaths{store}, start);
        },
        py::arg("name"), py::arg("fixtures_root"), py::arg("store"), py::arg("seed") = 1,
        py::arg("start") = 1767225600);
}
