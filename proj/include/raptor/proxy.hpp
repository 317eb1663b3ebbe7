#ifndef RAPTOR_PROXY_HPP
#define RAPTOR_PROXY_HPP

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>

#include "raptor/context.hpp"
#include "raptor/executor.hpp"
#include "raptor/flight.hpp"
#include "raptor/manifest.hpp"
#include "raptor/tcp.hpp"

namespace raptor {

struct ProxyConfig {
    std::string listen_host = "0.0.0.0";
    uint16_t listen_port = 8080;
    // address peers and forked followers use to reach this instance
    std::string advertise_host = "127.0.0.1";
    uint16_t peer_port = 0; // 0 picks a free port
    std::optional<Endpoint> controller;
    std::string controller_invoke_path = "/invoke";
    ExecutorConfig executor;
    std::chrono::milliseconds activation_timeout{60000};
    std::chrono::milliseconds peering_timeout{1000};
    bool allow_reinit = true;
};

struct ActivationEvent {
    double t_ms = 0.0;
    std::string kind;
    std::string task;
    Json detail;
};

struct ActivationRecord {
    std::string activation_id;
    unsigned offset = 0;
    std::vector<ActivationEvent> events;
    Json response;
};

// The action-proxy-compatible face: POST /init takes code plus manifest,
// POST /run drives one activation's flight to completion and answers with
// the sink outputs. The fork client issues the N-1 follower invocations.
class ProxyService {
public:
    explicit ProxyService(ProxyConfig cfg);
    ~ProxyService();

    // Starts the peer listener and the HTTP server. Throws BindFailure.
    void start();
    void stop();

    uint16_t http_port() const { return http_port_; }
    uint16_t peer_port() const;
    Endpoint advertised_peer_endpoint() const;

    // Route bodies, also callable directly (tests, CLI).
    Json handle_init(const Json& payload);
    Json handle_run(const Json& payload);

    bool initialized() const;

    struct Stats {
        long peer_messages = 0; // state updates + membership + peering sent
        long forks = 0;
        long activations = 0;
    };
    Stats stats() const;

    std::optional<ActivationRecord> activation_record(const std::string& activation_id) const;

private:
    struct LoopEvent {
        enum class Kind { Message, LocalDone } kind = Kind::Message;
        WireMessage msg;
        std::string task;
        uint64_t gen = 0;
        Json result;
        bool failed = false;
    };

    // queue guarded by the service-wide queue_mu_; engine owned by the
    // driver thread
    struct ActivationRuntime {
        std::deque<LoopEvent> queue;
        std::unique_ptr<FlightEngine> engine;
    };

    class CountingTransport : public Transport {
    public:
        CountingTransport(TcpTransport& inner, std::atomic<long>& counter)
            : inner_(inner), counter_(counter) {}
        void send(const Endpoint& to, const WireMessage& msg) override {
            ++counter_;
            inner_.send(to, msg);
        }

    private:
        TcpTransport& inner_;
        std::atomic<long>& counter_;
    };

    Json run_activation(const ExecutionContext& ctx, const Json& user_value);
    void fork_followers(const std::vector<ExecutionContext>& followers, const Json& user_value);
    void on_peer_message(WireMessage msg);
    void record_event(ActivationRecord& rec, std::chrono::steady_clock::time_point t0,
                      const std::string& kind, const std::string& task, Json detail);

    ProxyConfig cfg_;
    TcpTransport transport_;
    std::unique_ptr<CountingTransport> counting_transport_;
    PeerServer peer_server_;
    std::atomic<bool> stopping_{false};

    // pack state, /init serialized against /run
    mutable std::shared_mutex init_mu_;
    bool initialized_ = false;
    bool legacy_pack_ = false;
    ActionManifest manifest_;
    TaskDag dag_;
    std::filesystem::path code_root_;
    std::vector<std::string> interpreter_;
    uint64_t init_serial_ = 0;

    mutable std::mutex registry_mu_;
    std::map<std::string, std::shared_ptr<ActivationRuntime>> registry_;

    mutable std::mutex records_mu_;
    std::map<std::string, ActivationRecord> records_;
    std::deque<std::string> record_order_;

    std::atomic<long> peer_messages_{0};
    std::atomic<long> forks_{0};
    std::atomic<long> activations_{0};

    // one service-lifetime lock/cv pair serializes every activation queue
    // and the in-flight run count stop() drains
    mutable std::mutex queue_mu_;
    std::condition_variable queue_cv_;
    int active_runs_ = 0;

    std::unique_ptr<struct HttpServerState> http_;
    uint16_t http_port_ = 0;

    std::mutex fork_threads_mu_;
    std::vector<std::thread> fork_threads_;
};

} // namespace raptor

#endif
