#include "raptor/executor.hpp"

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include "raptor/errors.hpp"
#include "raptor/log.hpp"
#include "raptor/util.hpp"

extern char** environ;

namespace raptor {

namespace fs = std::filesystem;

namespace {

std::once_flag g_sigpipe_once;

void ignore_sigpipe() {
    std::call_once(g_sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

std::atomic<uint64_t> g_spawn_counter{0};

void close_high_fds() {
    // parent-side fds are CLOEXEC, this catches anything a library leaked
    for (int fd = 5; fd < 256; ++fd) ::close(fd);
}

} // namespace

std::vector<std::string> interpreter_for_runtime(const std::string& runtime_hint) {
    if (runtime_hint == "sh" || runtime_hint.empty()) return {"/bin/sh"};
    if (runtime_hint == "bash") return {"/bin/bash"};
    if (runtime_hint == "python3" || runtime_hint == "python") return {"/usr/bin/env", "python3"};
    if (runtime_hint == "node" || runtime_hint == "nodejs") return {"/usr/bin/env", "node"};
    if (runtime_hint == "bin" || runtime_hint == "native") return {};
    // unknown hints fall back to the shell
    log::warn("unknown runtime hint '" + runtime_hint + "', using /bin/sh");
    return {"/bin/sh"};
}

TaskProcess::~TaskProcess() {
    if (!reaped_ && pid_ > 0) {
        ::kill(-pid_, SIGKILL);
        int ws = 0;
        while (::waitpid(pid_, &ws, 0) < 0 && errno == EINTR) {
        }
        reaped_ = true;
    }
    if (input_fd_ >= 0) ::close(input_fd_);
    if (output_fd_ >= 0) ::close(output_fd_);
}

TaskProcess::TaskProcess(TaskProcess&& other) noexcept { *this = std::move(other); }

TaskProcess& TaskProcess::operator=(TaskProcess&& other) noexcept {
    if (this == &other) return *this;
    task_ = std::move(other.task_);
    pid_ = other.pid_;
    workdir_ = std::move(other.workdir_);
    output_fd_ = other.output_fd_;
    input_fd_ = other.input_fd_;
    pending_input_ = std::move(other.pending_input_);
    input_written_ = other.input_written_;
    state_ = other.state_;
    exit_code_ = other.exit_code_;
    reaped_ = other.reaped_;
    other.pid_ = -1;
    other.output_fd_ = -1;
    other.input_fd_ = -1;
    other.reaped_ = true;
    return *this;
}

ProcessState TaskProcess::state() const {
    std::scoped_lock lock(mu_);
    return state_;
}

bool TaskProcess::reaped() const {
    std::scoped_lock lock(mu_);
    return reaped_;
}

void TaskProcess::record_exit(int wstatus, bool after_kill) {
    if (WIFEXITED(wstatus)) {
        state_ = after_kill ? ProcessState::Killed : ProcessState::Exited;
        exit_code_ = WEXITSTATUS(wstatus);
    } else if (WIFSIGNALED(wstatus)) {
        state_ = after_kill ? ProcessState::Killed : ProcessState::Signaled;
        exit_code_ = -WTERMSIG(wstatus);
    }
    reaped_ = true;
}

bool TaskProcess::try_reap(std::optional<std::chrono::steady_clock::time_point> deadline) {
    for (;;) {
        {
            std::scoped_lock lock(mu_);
            if (reaped_) return true;
            int ws = 0;
            pid_t r = ::waitpid(pid_, &ws, WNOHANG);
            if (r == pid_) {
                record_exit(ws, false);
                return true;
            }
            if (r < 0 && errno != EINTR) {
                // lost to a concurrent reaper; treat as gone
                reaped_ = true;
                return true;
            }
        }
        if (!deadline || std::chrono::steady_clock::now() >= *deadline) return false;
        std::this_thread::sleep_for(std::chrono::milliseconds(4));
    }
}

ProcessState TaskProcess::preempt(const ExecutorConfig& cfg) {
    {
        std::scoped_lock lock(mu_);
        if (reaped_ || state_ != ProcessState::Spawned)
            throw Error(Errc::AlreadyExited, "task '" + task_ + "' already terminal");
    }
    ::kill(-pid_, SIGTERM);
    auto deadline = std::chrono::steady_clock::now() + cfg.term_to_kill_delay;
    bool graceful = try_reap(deadline);
    if (!graceful) {
        ::kill(-pid_, SIGKILL);
        try_reap(std::chrono::steady_clock::now() + std::chrono::seconds(10));
    }
    // catch group stragglers the direct child left behind
    ::kill(-pid_, SIGKILL);
    {
        std::scoped_lock lock(mu_);
        state_ = graceful ? ProcessState::Signaled : ProcessState::Killed;
    }
    cleanup_workdir();
    std::scoped_lock lock(mu_);
    return state_;
}

std::pair<Json, bool> TaskProcess::collect_result(const ExecutorConfig& cfg) {
    const auto deadline = std::chrono::steady_clock::now() + cfg.collect_timeout;
    std::string output;
    bool timed_out = false;

    while (true) {
        struct pollfd fds[2];
        nfds_t nfds = 0;
        int out_slot = -1;
        int in_slot = -1;
        if (output_fd_ >= 0) {
            out_slot = static_cast<int>(nfds);
            fds[nfds++] = {output_fd_, POLLIN, 0};
        }
        if (input_fd_ >= 0) {
            in_slot = static_cast<int>(nfds);
            fds[nfds++] = {input_fd_, POLLOUT, 0};
        }
        if (nfds == 0) break;

        auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
            deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) {
            timed_out = true;
            break;
        }
        int rc = ::poll(fds, nfds, static_cast<int>(std::min<int64_t>(remaining.count(), 200)));
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (rc == 0) continue;

        if (in_slot >= 0 && (fds[in_slot].revents & (POLLOUT | POLLERR | POLLHUP))) {
            if (fds[in_slot].revents & (POLLERR | POLLHUP)) {
                ::close(input_fd_);
                input_fd_ = -1;
            } else {
                ssize_t n = ::write(input_fd_, pending_input_.data() + input_written_,
                                    pending_input_.size() - input_written_);
                if (n > 0) {
                    input_written_ += static_cast<size_t>(n);
                } else if (n < 0 && errno != EAGAIN && errno != EINTR) {
                    ::close(input_fd_);
                    input_fd_ = -1;
                }
                if (input_fd_ >= 0 && input_written_ == pending_input_.size()) {
                    ::close(input_fd_);
                    input_fd_ = -1;
                }
            }
        }
        if (out_slot >= 0 && (fds[out_slot].revents & (POLLIN | POLLERR | POLLHUP))) {
            char buf[4096];
            ssize_t n = ::read(output_fd_, buf, sizeof buf);
            if (n > 0) {
                output.append(buf, static_cast<size_t>(n));
            } else if (n == 0 || (n < 0 && errno != EAGAIN && errno != EINTR)) {
                ::close(output_fd_);
                output_fd_ = -1;
                if (input_fd_ >= 0) {
                    ::close(input_fd_);
                    input_fd_ = -1;
                }
                break; // output stream closed; stop collecting
            }
        }
    }

    if (timed_out) {
        log::warn("task '" + task_ + "' hit the collection watchdog; killing group");
        ::kill(-pid_, SIGKILL);
    }
    bool reaped_ok = try_reap(std::chrono::steady_clock::now() + std::chrono::seconds(10));
    if (!reaped_ok) {
        ::kill(-pid_, SIGKILL);
        try_reap(std::chrono::steady_clock::now() + std::chrono::seconds(10));
    }
    if (input_fd_ >= 0) {
        ::close(input_fd_);
        input_fd_ = -1;
    }
    if (output_fd_ >= 0) {
        ::close(output_fd_);
        output_fd_ = -1;
    }

    bool clean_exit;
    {
        std::scoped_lock lock(mu_);
        clean_exit = state_ == ProcessState::Exited && exit_code_ == 0;
    }
    if (timed_out || !clean_exit) return {Json(), true};
    Json doc = Json::parse(output, nullptr, false);
    if (doc.is_discarded()) return {Json(), true};
    return {doc, false};
}

void TaskProcess::cleanup_workdir() {
    if (workdir_.empty()) return;
    std::error_code ec;
    fs::remove_all(workdir_, ec);
    if (ec) {
        log::warn("CleanupFailure for '" + workdir_.string() + "': " + ec.message() +
                  "; retrying once");
        fs::remove_all(workdir_, ec);
        if (ec) log::error("CleanupFailure persists for '" + workdir_.string() + "'");
    }
}

TaskProcess spawn_task(const FunctionEntry& entry, const Json& input,
                       const ExecutionContext& ctx, const ExecutorConfig& cfg) {
    ignore_sigpipe();

    fs::path code_path = cfg.code_root / entry.location;
    std::error_code ec;
    if (!fs::exists(code_path, ec) || ec)
        throw Error(Errc::MissingEntrypoint,
                    "entry location '" + entry.location + "' not found under code root");

    uint64_t serial = g_spawn_counter.fetch_add(1);
    fs::path workdir = cfg.workdir_root / sanitize_path_component(ctx.member_id()) /
                       (sanitize_path_component(entry.name) + "-" + std::to_string(serial));
    fs::create_directories(workdir, ec);
    if (ec) throw Error(Errc::SpawnFailure, "cannot create workdir: " + ec.message());

    int in_pipe[2];  // parent writes -> child fd 3
    int out_pipe[2]; // child fd 4 -> parent reads
    if (::pipe2(in_pipe, O_CLOEXEC) != 0)
        throw Error(Errc::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
    if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw Error(Errc::SpawnFailure, std::string("pipe: ") + std::strerror(errno));
    }

    // argv / envp assembled before fork
    std::vector<std::string> argv_store = cfg.interpreter;
    argv_store.push_back(code_path.string());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    argv.push_back(nullptr);

    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e) {
        std::string_view kv(*e);
        if (kv.starts_with("RAPTOR_")) continue;
        env_store.emplace_back(kv);
    }
    env_store.push_back("RAPTOR_ACTIVATION_ID=" + ctx.activation_id);
    env_store.push_back("RAPTOR_TASK=" + entry.name);
    env_store.push_back("RAPTOR_WORKDIR=" + workdir.string());
    std::vector<char*> envp;
    for (auto& e : env_store) envp.push_back(e.data());
    envp.push_back(nullptr);

    std::string workdir_str = workdir.string();
    std::optional<int> niceness = cfg.niceness;

    pid_t pid = ::fork();
    if (pid < 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        throw Error(Errc::SpawnFailure, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        if (niceness) ::setpriority(PRIO_PROCESS, 0, *niceness); // best effort
        int devnull = ::open("/dev/null", O_RDONLY);
        if (devnull >= 0) ::dup2(devnull, 0);
        // move pipe ends clear of fds 3/4 before landing them
        int in_fd = ::fcntl(in_pipe[0], F_DUPFD, 10);
        int out_fd = ::fcntl(out_pipe[1], F_DUPFD, 10);
        ::dup2(in_fd, 3);
        ::dup2(out_fd, 4);
        close_high_fds();
        if (::chdir(workdir_str.c_str()) != 0) _exit(126);
        ::execve(argv[0], argv.data(), envp.data());
        _exit(127);
    }

    // parent
    ::setpgid(pid, pid); // either side may win the race; both set the same group
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);

    ::fcntl(in_pipe[1], F_SETFL, O_NONBLOCK);
    ::fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);

    TaskProcess p;
    p.task_ = entry.name;
    p.pid_ = pid;
    p.workdir_ = workdir;
    p.input_fd_ = in_pipe[1];
    p.output_fd_ = out_pipe[0];
    p.pending_input_ = input.dump();
    p.state_ = ProcessState::Spawned;
    p.exit_code_ = -1;
    p.reaped_ = false;
    return p;
}

std::vector<pid_t> pids_in_group(pid_t pgid) {
    std::vector<pid_t> out;
    std::error_code ec;
    for (const auto& de : fs::directory_iterator("/proc", ec)) {
        const std::string name = de.path().filename().string();
        if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
        std::ifstream stat(de.path() / "stat");
        std::string line;
        if (!std::getline(stat, line)) continue;
        auto rparen = line.rfind(')');
        if (rparen == std::string::npos) continue;
        // fields after comm: state ppid pgrp ...
        std::istringstream rest(line.substr(rparen + 1));
        std::string state;
        long ppid = 0, pgrp = 0;
        rest >> state >> ppid >> pgrp;
        if (state == "Z" || state == "X") continue; // awaiting reaping, not alive
        if (pgrp == pgid) out.push_back(static_cast<pid_t>(std::stol(name)));
    }
    return out;
}

} // namespace raptor
