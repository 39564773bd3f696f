#pragma once

// Marketplace service: length-prefixed JSON request/response over a local
// socket, backed by the three partitioned stores.
//
// Frame: 4-byte big-endian payload length, then UTF-8 JSON.
// Request  {"kind": ..., "request_id": ..., "payload": {...}}
// Response {"request_id": ..., "ok": true, "payload": {...}}
//          {"request_id": ..., "ok": false, "error": {"code", "message"}}
//
// One writer: every mutating request is applied and persisted under a single
// state lock; the store root carries an exclusive advisory lock so a second
// service cannot attach to the same stores.

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "umgr/marketplace.hpp"
#include "umgr/serialize.hpp"

namespace umgr {

class Service {
  public:
    // Binds 127.0.0.1:port (0 picks an ephemeral port), acquires the store
    // lock, loads or initializes the stores, and verifies the audit chain.
    // Throws Error{BindFailure} (socket or lock) and Error{StoreCorrupt}.
    Service(StorePaths paths, std::uint16_t port);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    void stop();
    std::uint16_t port() const { return port_; }

    MarketplaceState snapshot_state() const;

  private:
    void accept_loop();
    void serve_connection(int fd);
    Json handle(const Json& request);
    Json dispatch(const std::string& kind, const Json& payload);
    void persist_locked();

    StorePaths paths_;
    MarketplaceState state_;
    mutable std::mutex state_mu_;

    int listen_fd_ = -1;
    int lock_fd_ = -1;
    int stop_pipe_[2] = {-1, -1};
    std::uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::mutex conn_mu_;
    std::vector<int> conn_fds_;
    std::vector<std::thread> conn_threads_;
};

class Client {
  public:
    Client(const std::string& host, std::uint16_t port);
    ~Client();

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    // Sends one request and waits for the response. Server-side failures
    // re-throw as Error with the reported code.
    Json call(const std::string& kind, Json payload);

  private:
    int fd_ = -1;
    std::uint64_t next_request_ = 1;
};

}  // namespace umgr
