#include "raptor/tcp.hpp"

#include <cstring>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "raptor/errors.hpp"
#include "raptor/log.hpp"

namespace raptor {

namespace {

int connect_with_timeout(const Endpoint& ep, std::chrono::milliseconds timeout) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    std::string port = std::to_string(ep.port);
    if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0 || !res) return -1;

    int fd = -1;
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        ::fcntl(fd, F_SETFL, O_NONBLOCK);
        int rc = ::connect(fd, ai->ai_addr, ai->ai_addrlen);
        if (rc == 0) break;
        if (errno == EINPROGRESS) {
            struct pollfd pfd {fd, POLLOUT, 0};
            rc = ::poll(&pfd, 1, int(timeout.count()));
            int err = 0;
            socklen_t len = sizeof err;
            if (rc > 0 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0)
                break;
        }
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd >= 0) {
        int flags = ::fcntl(fd, F_GETFL);
        ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
    }
    return fd;
}

bool write_all(int fd, const char* data, size_t len) {
    size_t off = 0;
    while (off < len) {
        ssize_t n = ::send(fd, data + off, len - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        off += size_t(n);
    }
    return true;
}

} // namespace

TcpTransport::TcpTransport(std::chrono::milliseconds connect_timeout)
    : connect_timeout_(connect_timeout), thread_([this] { worker(); }) {}

TcpTransport::~TcpTransport() {
    {
        std::scoped_lock lock(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
}

void TcpTransport::send(const Endpoint& to, const WireMessage& msg) {
    {
        std::scoped_lock lock(mu_);
        queue_.emplace_back(to, frame_message(msg));
        ++enqueued_;
    }
    cv_.notify_all();
}

void TcpTransport::flush() {
    std::unique_lock lock(mu_);
    uint64_t target = enqueued_;
    cv_.wait(lock, [&] { return drained_ >= target || stop_; });
}

void TcpTransport::worker() {
    for (;;) {
        std::pair<Endpoint, std::string> item;
        {
            std::unique_lock lock(mu_);
            cv_.wait(lock, [&] { return stop_ || !queue_.empty(); });
            if (queue_.empty()) {
                if (stop_) return;
                continue;
            }
            item = std::move(queue_.front());
            queue_.pop_front();
        }
        int fd = connect_with_timeout(item.first, connect_timeout_);
        if (fd >= 0) {
            if (write_all(fd, item.second.data(), item.second.size())) {
                ++sent_;
            } else {
                ++failed_;
                log::debug("peer send to " + item.first.str() + " failed mid-write");
            }
            ::close(fd);
        } else {
            ++failed_;
            log::debug("peer " + item.first.str() + " unreachable");
        }
        {
            std::scoped_lock lock(mu_);
            ++drained_;
        }
        cv_.notify_all();
    }
}

PeerServer::~PeerServer() { stop(); }

void PeerServer::start(const std::string& host, uint16_t port, Handler handler) {
    handler_ = std::move(handler);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd_ < 0) throw Error(Errc::BindFailure, "socket: " + std::string(strerror(errno)));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (host.empty() || host == "0.0.0.0") {
        addr.sin_addr.s_addr = INADDR_ANY;
    } else if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        // resolve names like "localhost"
        addrinfo hints{};
        hints.ai_family = AF_INET;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo* res = nullptr;
        if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) {
            ::close(listen_fd_);
            listen_fd_ = -1;
            throw Error(Errc::BindFailure, "cannot resolve listen host '" + host + "'");
        }
        addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
        ::freeaddrinfo(res);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
        std::string err = strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw Error(Errc::BindFailure, "bind/listen on " + host + ":" + std::to_string(port) +
                                           ": " + err);
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof bound;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
    stopping_ = false;
    accept_thread_ = std::thread([this] { accept_loop(); });
}

void PeerServer::stop() {
    if (listen_fd_ < 0) return;
    stopping_ = true;
    ::shutdown(listen_fd_, SHUT_RDWR); // wakes the blocked accept
    if (accept_thread_.joinable()) accept_thread_.join();
    ::close(listen_fd_);
    listen_fd_ = -1;
    std::vector<std::thread> conns;
    {
        std::scoped_lock lock(conn_mu_);
        conns.swap(conn_threads_);
    }
    for (auto& t : conns)
        if (t.joinable()) t.join();
}

void PeerServer::accept_loop() {
    while (!stopping_) {
        int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
        if (fd < 0) {
            if (stopping_) break;
            if (errno == EINTR) continue;
            break;
        }
        timeval tv{1, 0};
        ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
        std::scoped_lock lock(conn_mu_);
        // connections are one-shot and short-lived; sweep finished threads
        if (conn_threads_.size() > 64) {
            for (auto& t : conn_threads_)
                if (t.joinable()) t.join();
            conn_threads_.clear();
        }
        conn_threads_.emplace_back([this, fd] {
            FrameReader reader;
            char buf[4096];
            while (!stopping_) {
                ssize_t n = ::recv(fd, buf, sizeof buf, 0);
                if (n == 0) break;
                if (n < 0) {
                    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR) continue;
                    break;
                }
                reader.feed(buf, size_t(n));
                while (auto msg = reader.next()) handler_(std::move(*msg));
                if (reader.failed()) {
                    log::warn("malformed peer frame; dropping connection");
                    break;
                }
            }
            ::close(fd);
        });
    }
}

bool http_post_and_forget(const Endpoint& ep, const std::string& path, const std::string& body,
                          std::chrono::milliseconds connect_timeout) {
    int fd = connect_with_timeout(ep, connect_timeout);
    if (fd < 0) return false;
    std::string req = "POST " + path + " HTTP/1.1\r\n" +
                      "Host: " + ep.str() + "\r\n" +
                      "Content-Type: application/json\r\n" +
                      "Content-Length: " + std::to_string(body.size()) + "\r\n" +
                      "Connection: close\r\n\r\n" + body;
    bool ok = write_all(fd, req.data(), req.size());
    ::shutdown(fd, SHUT_WR); // we never read the response
    ::close(fd);
    return ok;
}

} // namespace raptor
