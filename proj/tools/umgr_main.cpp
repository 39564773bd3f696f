// umgr: operator CLI for the usage-management engine.
//
// Exit codes: 0 success/permit, 1 domain denial or failure, 2 usage or
// parse error.

#include <CLI11.hpp>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "umgr/scenario.hpp"
#include "umgr/serialize.hpp"
#include "umgr/service.hpp"

namespace {

constexpr int kExitPermit = 0;
constexpr int kExitDeny = 1;
constexpr int kExitError = 2;

std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw umgr::Error(umgr::Errc::UnknownEntity, "cannot read " + path);
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

umgr::Timestamp parse_now(const std::string& text) {
    auto t = umgr::parse_rfc3339(text);
    if (!t)
        throw umgr::Error(umgr::Errc::SyntaxError, "--now wants RFC 3339, got " + text);
    return *t;
}

std::set<umgr::FactCategory> parse_categories(const std::string& csv) {
    std::set<umgr::FactCategory> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        auto c = umgr::category_from_string(item);
        if (!c)
            throw umgr::Error(umgr::Errc::SyntaxError, "unknown category '" + item + "'");
        out.insert(*c);
    }
    if (out.empty())
        throw umgr::Error(umgr::Errc::SyntaxError, "no categories given");
    return out;
}

int cmd_parse(const std::string& policy_file) {
    umgr::UsagePolicy p = umgr::parse_policy(slurp_file(policy_file), "cli", "cli");
    std::cout << "ok: " << p.clauses.size() << " clause(s)\n";
    return kExitPermit;
}

int cmd_eval(const std::string& policy_file, const std::string& context_file,
             const std::string& action_name, const std::string& categories_csv,
             const std::string& now_text, bool grid) {
    auto action = umgr::action_from_string(action_name);
    if (!action)
        throw umgr::Error(umgr::Errc::SyntaxError, "unknown action '" + action_name + "'");
    auto categories = parse_categories(categories_csv);
    umgr::Timestamp now = parse_now(now_text);

    umgr::UsagePolicy policy =
        umgr::parse_policy(slurp_file(policy_file), "cli-policy", "cli");
    umgr::Context ctx =
        umgr::context_from_json(umgr::Json::parse(slurp_file(context_file)));

    if (grid) {
        // hypothetical contexts: vary role and device across the whole grid
        for (umgr::RoleKind role : umgr::kAllRoles) {
            for (umgr::DeviceType device : umgr::kAllDeviceTypes) {
                umgr::Context g = ctx;
                g.role = role;
                g.environment.parameters["DeviceType"] =
                    umgr::Value::word(std::string(to_string(device)));
                umgr::Decision d = umgr::evaluate(policy, *action, categories, g, now);
                std::cout << to_string(role) << '\t' << to_string(device) << '\t'
                          << (d.permitted() ? "permit" : "deny") << '\n';
            }
        }
        return kExitPermit;
    }

    umgr::Decision d = umgr::evaluate(policy, *action, categories, ctx, now);
    std::cout << "outcome: " << (d.permitted() ? "permit" : "deny") << '\n';
    if (d.matched_clause)
        std::cout << "matched_clause: " << *d.matched_clause << " ("
                  << umgr::render_clause(policy.clauses[*d.matched_clause]) << ")\n";
    std::cout << "reason: " << d.reason << '\n';
    if (d.obligations.price)
        std::cout << "price_owed: " << to_string(*d.obligations.price) << '\n';
    if (d.obligations.attribution) std::cout << "attribution: required\n";
    return d.permitted() ? kExitPermit : kExitDeny;
}

int cmd_scenario(const std::string& name, const std::string& fixtures_dir,
                 const std::string& store_dir, std::uint64_t seed,
                 const std::string& now_text) {
    const auto& names = umgr::scenario_names();
    if (std::find(names.begin(), names.end(), name) == names.end())
        throw umgr::Error(umgr::Errc::UnknownEntity, "unknown scenario '" + name + "'");

    std::filesystem::path store =
        store_dir.empty()
            ? std::filesystem::temp_directory_path() /
                  ("umgr-" + name + "-" + std::to_string(seed))
            : std::filesystem::path(store_dir);
    std::filesystem::remove_all(store);  // scenarios start from clean stores

    umgr::ScenarioSpec spec{name, std::filesystem::path(fixtures_dir) / name, seed};
    std::string transcript =
        umgr::run_scenario(spec, umgr::StorePaths{store}, parse_now(now_text));
    std::cout << transcript;
    return kExitPermit;
}

int cmd_audit_verify(const std::string& store_dir) {
    umgr::StorePaths paths{store_dir};
    auto result = umgr::verify_audit_store(paths);
    if (std::holds_alternative<std::monostate>(result)) {
        std::cout << "ok (" << umgr::load_audit_log(paths).size() << " entries)\n";
        return kExitPermit;
    }
    std::cout << "Tampered(" << std::get<umgr::audit::Tampered>(result).first_bad_sequence
              << ")\n";
    return kExitDeny;
}

int cmd_audit_history(const std::string& store_dir, const std::string& record_id) {
    umgr::audit::Log log = umgr::load_audit_log(umgr::StorePaths{store_dir});
    for (const umgr::audit::AuditEntry& e : umgr::audit::edit_history(log, record_id))
        std::cout << umgr::audit_entry_to_line(e) << '\n';
    return kExitPermit;
}

int cmd_serve(const std::string& store_dir, const std::string& bind) {
    auto colon = bind.rfind(':');
    if (colon == std::string::npos)
        throw umgr::Error(umgr::Errc::SyntaxError, "--bind wants host:port");
    const int port = std::stoi(bind.substr(colon + 1));

    umgr::Service service(umgr::StorePaths{store_dir},
                          static_cast<std::uint16_t>(port));
    std::cout << "listening on 127.0.0.1:" << service.port() << ", store " << store_dir
              << "\n";
    std::cout.flush();

    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    int sig = 0;
    sigwait(&set, &sig);
    std::cout << "shutting down\n";
    service.stop();
    return kExitPermit;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"usage-management engine for personal health records"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string store_dir;
    std::uint64_t seed = 1;
    std::string now_text = "2026-01-01T00:00:00Z";
    app.add_option("--store", store_dir, "store root directory");
    app.add_option("--seed", seed, "deterministic seed");
    app.add_option("--now", now_text, "evaluation time, RFC 3339");

    auto* parse = app.add_subcommand("parse", "syntax-check a policy file");
    std::string policy_file;
    parse->add_option("policy", policy_file, "policy file")->required();

    auto* eval = app.add_subcommand("eval", "evaluate a policy against a context");
    std::string context_file, action_name, categories_csv;
    bool grid = false;
    eval->add_option("policy", policy_file, "policy file")->required();
    eval->add_option("context", context_file, "context JSON file")->required();
    eval->add_option("--action", action_name, "action")->required();
    eval->add_option("--categories", categories_csv, "comma-separated categories")
        ->required();
    eval->add_flag("--grid", grid, "evaluate over all roles x device types");

    auto* scenario = app.add_subcommand("scenario", "run an end-to-end scenario");
    std::string scenario_name, fixtures_dir = "fixtures";
    scenario->add_option("name", scenario_name, "scenario name")->required();
    scenario->add_option("--fixtures", fixtures_dir, "fixtures root");

    auto* audit = app.add_subcommand("audit", "audit store tooling");
    audit->require_subcommand(1);
    auto* verify = audit->add_subcommand("verify", "verify the hash chain");
    auto* history = audit->add_subcommand("history", "edit history of one record");
    std::string record_id;
    history->add_option("record", record_id, "record id")->required();

    auto* serve = app.add_subcommand("serve", "run the marketplace service");
    std::string bind = "127.0.0.1:7070";
    serve->add_option("--bind", bind, "host:port (port 0 = ephemeral)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : kExitError;
    }

    try {
        if (parse->parsed()) return cmd_parse(policy_file);
        if (eval->parsed())
            return cmd_eval(policy_file, context_file, action_name, categories_csv,
                            now_text, grid);
        if (scenario->parsed())
            return cmd_scenario(scenario_name, fixtures_dir, store_dir, seed, now_text);
        if (audit->parsed()) {
            if (store_dir.empty())
                throw umgr::Error(umgr::Errc::SyntaxError, "audit needs --store");
            if (verify->parsed()) return cmd_audit_verify(store_dir);
            if (history->parsed()) return cmd_audit_history(store_dir, record_id);
        }
        if (serve->parsed()) {
            if (store_dir.empty())
                throw umgr::Error(umgr::Errc::SyntaxError, "serve needs --store");
            return cmd_serve(store_dir, bind);
        }
    } catch (const umgr::ParseError& e) {
        std::cerr << "error at " << e.line() << ":" << e.column() << ": " << e.what()
                  << '\n';
        return kExitError;
    } catch (const umgr::Error& e) {
        std::cerr << "error [" << umgr::errc_name(e.code()) << "]: " << e.what() << '\n';
        return e.code() == umgr::Errc::SyntaxError || e.code() == umgr::Errc::TypeError ||
                       e.code() == umgr::Errc::UnknownEntity
                   ? kExitError
                   : kExitDeny;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitError;
    }
    return kExitError;
}
