#ifndef RAPTOR_TCP_HPP
#define RAPTOR_TCP_HPP

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "raptor/flight.hpp"
#include "raptor/wire.hpp"

namespace raptor {

// Best-effort outgoing side of the peer mesh: sends are queued and drained
// by one worker with a short connect timeout; failures are logged and
// dropped. Lost updates only cost redundant work.
class TcpTransport : public Transport {
public:
    explicit TcpTransport(std::chrono::milliseconds connect_timeout = std::chrono::milliseconds(1000));
    ~TcpTransport() override;

    void send(const Endpoint& to, const WireMessage& msg) override;

    long sent_count() const { return sent_.load(); }
    long failed_count() const { return failed_.load(); }

    // Blocks until queued messages at call time have been attempted.
    void flush();

private:
    void worker();

    std::chrono::milliseconds connect_timeout_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::pair<Endpoint, std::string>> queue_;
    uint64_t drained_ = 0;
    uint64_t enqueued_ = 0;
    bool stop_ = false;
    std::atomic<long> sent_{0};
    std::atomic<long> failed_{0};
    std::thread thread_;
};

// Listener for the length-prefixed peer protocol. Each accepted connection
// is drained on a small thread; decoded messages go to the handler.
class PeerServer {
public:
    using Handler = std::function<void(WireMessage)>;

    PeerServer() = default;
    ~PeerServer();

    // Binds and starts accepting. port 0 picks a free port. Throws
    // Error(BindFailure).
    void start(const std::string& host, uint16_t port, Handler handler);
    void stop();

    uint16_t port() const { return port_; }

private:
    void accept_loop();

    int listen_fd_ = -1;
    uint16_t port_ = 0;
    Handler handler_;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex conn_mu_;
    std::vector<std::thread> conn_threads_;
};

// One-shot fire-and-forget HTTP POST: connect, write the request, close
// without reading the response. Returns false when the write could not be
// completed (logged by callers); never throws.
bool http_post_and_forget(const Endpoint& ep, const std::string& path, const std::string& body,
                          std::chrono::milliseconds connect_timeout);

} // namespace raptor

#endif
