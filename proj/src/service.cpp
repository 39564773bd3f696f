#include "umgr/service.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/file.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <filesystem>

namespace umgr {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kMaxFrame = 64u << 20;

bool read_exact(int fd, void* buf, std::size_t n) {
    auto* p = static_cast<char*>(buf);
    while (n > 0) {
        ssize_t got = ::read(fd, p, n);
        if (got <= 0) return false;
        p += got;
        n -= static_cast<std::size_t>(got);
    }
    return true;
}

bool write_all(int fd, const void* buf, std::size_t n) {
    const auto* p = static_cast<const char*>(buf);
    while (n > 0) {
        ssize_t put = ::write(fd, p, n);
        if (put <= 0) return false;
        p += put;
        n -= static_cast<std::size_t>(put);
    }
    return true;
}

bool write_frame(int fd, const Json& j) {
    const std::string body = j.dump();
    std::uint32_t len = htonl(static_cast<std::uint32_t>(body.size()));
    return write_all(fd, &len, 4) && write_all(fd, body.data(), body.size());
}

std::optional<Json> read_frame(int fd) {
    std::uint32_t len_be = 0;
    if (!read_exact(fd, &len_be, 4)) return std::nullopt;
    std::uint32_t len = ntohl(len_be);
    if (len > kMaxFrame) return std::nullopt;
    std::string body(len, '\0');
    if (!read_exact(fd, body.data(), len)) return std::nullopt;
    Json j = Json::parse(body, nullptr, false);
    if (j.is_discarded()) return std::nullopt;
    return j;
}

bool store_initialized(const StorePaths& paths) {
    return fs::exists(paths.audit() / "log.txt");
}

}  // namespace

Service::Service(StorePaths paths, std::uint16_t port) : paths_(std::move(paths)) {
    fs::create_directories(paths_.root);

    // Exclusive store lock; a second service on the same root must refuse.
    fs::path lock_path = paths_.root / "lock";
    lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR, 0644);
    if (lock_fd_ < 0)
        throw Error(Errc::BindFailure, "cannot open store lock " + lock_path.string());
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(lock_fd_);
        lock_fd_ = -1;
        throw Error(Errc::BindFailure,
                    "store " + paths_.root.string() + " is locked by another service");
    }

    try {
        if (store_initialized(paths_)) {
            state_ = load(paths_);
            if (!std::holds_alternative<std::monostate>(verify_audit_store(paths_)))
                throw Error(Errc::StoreCorrupt,
                            "audit chain verification failed at startup");
        } else {
            persist(state_, paths_);
        }

        listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (listen_fd_ < 0) throw Error(Errc::BindFailure, "socket() failed");
        int one = 1;
        ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = htons(port);
        if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
            throw Error(Errc::BindFailure,
                        "cannot bind 127.0.0.1:" + std::to_string(port));
        if (::listen(listen_fd_, 16) != 0)
            throw Error(Errc::BindFailure, "listen() failed");

        socklen_t alen = sizeof addr;
        ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
        port_ = ntohs(addr.sin_port);

        if (::pipe(stop_pipe_) != 0) throw Error(Errc::BindFailure, "pipe() failed");
        acceptor_ = std::thread([this] { accept_loop(); });
    } catch (...) {
        if (listen_fd_ >= 0) ::close(listen_fd_);
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
        throw;
    }
}

Service::~Service() { stop(); }

void Service::stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;

    if (stop_pipe_[1] >= 0) [[likely]] {
        char b = 'x';
        (void)!::write(stop_pipe_[1], &b, 1);
    }
    if (listen_fd_ >= 0) ::shutdown(listen_fd_, SHUT_RDWR);
    {
        std::lock_guard lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    if (acceptor_.joinable()) acceptor_.join();
    {
        // catch connections that raced the first shutdown pass
        std::lock_guard lock(conn_mu_);
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        for (std::thread& t : conn_threads_)
            if (t.joinable()) t.join();
        conn_threads_.clear();
        conn_fds_.clear();
    }
    if (listen_fd_ >= 0) ::close(listen_fd_);
    listen_fd_ = -1;
    for (int& fd : stop_pipe_) {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    if (lock_fd_ >= 0) {
        ::flock(lock_fd_, LOCK_UN);
        ::close(lock_fd_);
        lock_fd_ = -1;
    }
}

void Service::accept_loop() {
    for (;;) {
        pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {stop_pipe_[0], POLLIN, 0}};
        if (::poll(fds, 2, -1) < 0) {
            if (errno == EINTR) continue;
            return;
        }
        if (fds[1].revents || stopping_) return;
        if (!(fds[0].revents & POLLIN)) continue;
        int conn = ::accept(listen_fd_, nullptr, nullptr);
        if (conn < 0) {
            if (stopping_) return;
            continue;
        }
        std::lock_guard lock(conn_mu_);
        conn_fds_.push_back(conn);
        conn_threads_.emplace_back([this, conn] { serve_connection(conn); });
    }
}

void Service::serve_connection(int fd) {
    while (!stopping_) {
        auto request = read_frame(fd);
        if (!request) break;
        if (!write_frame(fd, handle(*request))) break;
    }
    ::close(fd);
}

Json Service::handle(const Json& request) {
    Json request_id = request.value("request_id", Json());
    try {
        const std::string kind = request.at("kind");
        Json payload = dispatch(kind, request.value("payload", Json::object()));
        return Json{{"request_id", request_id}, {"ok", true},
                    {"payload", std::move(payload)}};
    } catch (const AggregationDenied& e) {
        Json conflicts = Json::array();
        for (const auto& [pid, d] : e.conflicts())
            conflicts.push_back(Json{{"policy_id", pid}, {"decision", to_json(d)}});
        return Json{{"request_id", request_id},
                    {"ok", false},
                    {"error", Json{{"code", errc_name(e.code())},
                                   {"message", e.what()},
                                   {"conflicts", std::move(conflicts)}}}};
    } catch (const Error& e) {
        return Json{{"request_id", request_id},
                    {"ok", false},
                    {"error", Json{{"code", errc_name(e.code())},
                                   {"message", e.what()}}}};
    } catch (const std::exception& e) {
        return Json{{"request_id", request_id},
                    {"ok", false},
                    {"error",
                     Json{{"code", "SyntaxError"}, {"message", e.what()}}}};
    }
}

void Service::persist_locked() { persist(state_, paths_); }

Json Service::dispatch(const std::string& kind, const Json& payload) {
    std::lock_guard lock(state_mu_);

    if (kind == "register_subject") {
        Subject s = subject_from_json(payload.at("subject"));
        state_.subjects[s.subject_id] = s;
        persist_locked();
        return Json{{"subject_id", s.subject_id}};
    }

    if (kind == "create_listing") {
        Listing l = create_listing(state_, payload.at("producer"),
                                   categories_from_json(payload.at("advertised_categories")),
                                   payload.value("blurb", ""),
                                   payload.value("contact", ""));
        state_.listings[l.listing_id] = l;
        persist_locked();
        Json j{{"listing_id", l.listing_id}, {"producer", l.producer},
               {"advertised_categories", categories_to_json(l.advertised_categories)},
               {"blurb", l.blurb}, {"contact", l.contact}};
        return Json{{"listing", std::move(j)}};
    }

    if (kind == "search") {
        std::vector<Listing> hits =
            search(state_, categories_from_json(payload.at("categories")));
        Json listings = Json::array();
        for (const Listing& l : hits)
            listings.push_back(
                Json{{"listing_id", l.listing_id},
                     {"producer", l.producer},
                     {"advertised_categories", categories_to_json(l.advertised_categories)},
                     {"blurb", l.blurb},
                     {"contact", l.contact}});
        return Json{{"listings", std::move(listings)}};
    }

    if (kind == "open_session") {
        const std::string producer = payload.at("producer");
        const std::string consumer = payload.at("consumer");
        const std::string record_id = payload.at("record_id");
        if (!state_.subjects.contains(producer) || !state_.subjects.contains(consumer))
            throw Error(Errc::UnknownEntity, "both parties must be registered");
        if (!state_.records.contains(record_id))
            throw Error(Errc::UnknownEntity, "unknown record '" + record_id + "'");
        Proposal initial = proposal_from_json(payload.at("initial"));
        NegotiationSession s = open_session(producer, consumer, record_id, initial,
                                            payload.value("max_rounds", 16u));
        state_.sessions[s.session_id] = s;
        state_.audit_log.append(audit::Event{
            payload.at("now").get<Timestamp>(),
            consumer,
            audit::EventKind::session_event,
            {
                {"session_id", s.session_id},
                {"event", "opened"},
                {"record_id", record_id},
                {"producer", producer},
                {"consumer", consumer},
            },
        });
        persist_locked();
        return Json{{"session", to_json(s)}};
    }

    if (kind == "respond") {
        const std::string session_id = payload.at("session_id");
        auto it = state_.sessions.find(session_id);
        if (it == state_.sessions.end())
            throw Error(Errc::UnknownEntity, "unknown session '" + session_id + "'");
        const Timestamp now = payload.at("now").get<Timestamp>();

        const Json& rj = payload.at("response");
        Response response;
        std::string event;
        const std::string type = rj.at("type");
        if (type == "accept") {
            response = Accept{*party_from_string(rj.at("by").get<std::string>())};
            event = "accept";
        } else if (type == "reject") {
            response = Reject{*party_from_string(rj.at("by").get<std::string>())};
            event = "reject";
        } else if (type == "counter") {
            response = proposal_from_json(rj.at("proposal"));
            event = "counter";
        } else {
            throw Error(Errc::MalformedProposal, "unknown response type '" + type + "'");
        }

        NegotiationSession before = it->second;
        NegotiationSession after = respond(before, response);
        it->second = after;

        const std::string actor = before.awaited() == Party::producer
                                      ? before.producer
                                      : before.consumer;
        state_.audit_log.append(audit::Event{
            now,
            actor,
            audit::EventKind::session_event,
            {
                {"session_id", session_id},
                {"event", event},
                {"state", std::string(to_string(after.state))},
                {"round", std::to_string(after.history.back().round)},
            },
        });

        Json out{{"session", to_json(after)}};
        if (after.state == SessionState::Agreed) {
            const Record& record = state_.records.at(after.record_id);
            Bundle bundle = conclude_to_bundle(after, record, now, state_.audit_log);
            state_.bundles[bundle.bundle_id] = bundle;
            out["bundle_id"] = bundle.bundle_id;
        }
        persist_locked();
        return out;
    }

    if (kind == "fetch_bundle") {
        const std::string bundle_id = payload.at("bundle_id");
        auto it = state_.bundles.find(bundle_id);
        if (it == state_.bundles.end())
            throw Error(Errc::UnknownEntity, "unknown bundle '" + bundle_id + "'");
        if (payload.at("requester") != it->second.license.consumer)
            throw Error(Errc::RoleNotAuthorized, "bundles deliver to their licensee");
        std::string document = render_bundle_document(it->second);
        std::string digest = bundle_digest(document);
        return Json{{"document", std::move(document)}, {"digest", std::move(digest)}};
    }

    if (kind == "request_use") {
        const std::string bundle_id = payload.at("bundle_id");
        auto it = state_.bundles.find(bundle_id);
        if (it == state_.bundles.end())
            throw Error(Errc::UnknownEntity, "unknown bundle '" + bundle_id + "'");
        Decision d = request_use(it->second,
                                 *action_from_string(payload.at("action").get<std::string>()),
                                 categories_from_json(payload.at("categories")),
                                 context_from_json(payload.at("context")),
                                 payload.at("now").get<Timestamp>(), state_.audit_log);
        persist_locked();
        return Json{{"decision", to_json(d)}};
    }

    if (kind == "aggregate") {
        std::vector<Bundle> bundles;
        for (const Json& bid : payload.at("bundle_ids")) {
            auto it = state_.bundles.find(bid.get<std::string>());
            if (it == state_.bundles.end())
                throw Error(Errc::UnknownEntity,
                            "unknown bundle '" + bid.get<std::string>() + "'");
            bundles.push_back(it->second);
        }
        auto action = action_from_string(payload.at("requested_action").get<std::string>());
        if (!action) throw Error(Errc::SyntaxError, "unknown action");
        Context ctx = context_from_json(payload.at("context"));
        const Timestamp now = payload.at("now").get<Timestamp>();
        AggregateSet agg;
        try {
            agg = aggregate(bundles, *action, ctx, now, state_.audit_log);
        } catch (...) {
            persist_locked();  // the denial is audited too
            throw;
        }
        Json elements = Json::array();
        for (const auto& el : agg.elements)
            elements.push_back(Json{{"record_id", el.source_record_id},
                                    {"fact_count", el.facts.size()}});
        Json license_ids = Json::array();
        for (const License& l : agg.constituent_licenses)
            license_ids.push_back(l.license_id);
        Json out{{"elements", std::move(elements)},
                 {"license_ids", std::move(license_ids)}};

        if (payload.contains("payment")) {
            auto payment = parse_amount(payload.at("payment").get<std::string>());
            if (!payment || payment->cents < 0)
                throw Error(Errc::SyntaxError, "bad payment amount");
            Json compensation = Json::array();
            for (const auto& [owner, amount] :
                 attribute_compensation(agg, *payment, state_.audit_log))
                compensation.push_back(
                    Json{{"owner", owner}, {"amount", to_string(amount)}});
            out["compensation"] = std::move(compensation);
        }
        persist_locked();
        return out;
    }

    if (kind == "audit_history") {
        Json entries = Json::array();
        for (const audit::AuditEntry& e :
             edit_history(state_.audit_log, payload.at("record_id").get<std::string>()))
            entries.push_back(to_json(e));
        return Json{{"entries", std::move(entries)}};
    }

    throw Error(Errc::UnknownEntity, "unknown request kind '" + kind + "'");
}

MarketplaceState Service::snapshot_state() const {
    std::lock_guard lock(state_mu_);
    return state_;
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

Client::Client(const std::string& host, std::uint16_t port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error(Errc::BindFailure, "socket() failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw Error(Errc::BindFailure, "bad address " + host);
    }
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd_);
        throw Error(Errc::BindFailure,
                    "cannot connect " + host + ":" + std::to_string(port));
    }
}

Client::~Client() {
    if (fd_ >= 0) ::close(fd_);
}

Json Client::call(const std::string& kind, Json payload) {
    Json request{{"kind", kind},
                 {"request_id", next_request_++},
                 {"payload", std::move(payload)}};
    if (!write_frame(fd_, request))
        throw Error(Errc::BindFailure, "connection lost while sending");
    auto response = read_frame(fd_);
    if (!response) throw Error(Errc::BindFailure, "connection lost while receiving");
    if (response->value("ok", false)) return response->value("payload", Json::object());

    const Json& err = response->at("error");
    const std::string code = err.value("code", "SyntaxError");
    const std::string message = err.value("message", "remote error");
    if (err.contains("conflicts")) {
        std::vector<std::pair<std::string, Decision>> conflicts;
        for (const Json& c : err.at("conflicts"))
            conflicts.emplace_back(c.at("policy_id"),
                                   decision_from_json(c.at("decision")));
        Errc cc = code == "RedistributionDenied" ? Errc::RedistributionDenied
                                                 : Errc::AggregationDenied;
        throw AggregationDenied(cc, message, std::move(conflicts));
    }
    for (Errc c : {Errc::RoleNotAuthorized, Errc::DuplicateFactId, Errc::NotOriginalAuthor,
                   Errc::AlreadySuperseded, Errc::UnknownFact, Errc::SyntaxError,
                   Errc::TypeError, Errc::StaticScopeMismatch, Errc::AggregationDenied,
                   Errc::RedistributionDenied, Errc::SelfNegotiation,
                   Errc::MalformedProposal, Errc::WrongTurn, Errc::SessionClosed,
                   Errc::StaleRound, Errc::NotAgreed, Errc::StrategyTimeout,
                   Errc::EmptyQuery, Errc::BindFailure, Errc::StoreCorrupt,
                   Errc::VersionMismatch, Errc::UnknownEntity, Errc::InvariantViolation})
        if (errc_name(c) == code) throw Error(c, message);
    throw Error(Errc::SyntaxError, message);
}

}  // namespace umgr
