#ifndef RAPTOR_EXECUTOR_HPP
#define RAPTOR_EXECUTOR_HPP

#include <chrono>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>

#include "raptor/context.hpp"
#include "raptor/manifest.hpp"

namespace raptor {

struct ExecutorConfig {
    std::chrono::milliseconds term_to_kill_delay{2000};
    std::optional<int> niceness;
    std::filesystem::path workdir_root = std::filesystem::temp_directory_path() / "raptor-work";
    std::filesystem::path code_root;
    // interpreter prefix for spawned entries; empty means exec the file itself
    std::vector<std::string> interpreter{"/bin/sh"};
    // watchdog on output collection; hangs become (null, true)
    std::chrono::milliseconds collect_timeout{60000};
};

std::vector<std::string> interpreter_for_runtime(const std::string& runtime_hint);

enum class ProcessState { Spawned, Exited, Signaled, Killed };

// One supervised task subprocess: its own process group, an ephemeral
// working directory, input on fd 3 and output on fd 4.
class TaskProcess {
public:
    TaskProcess() = default;
    ~TaskProcess();
    TaskProcess(const TaskProcess&) = delete;
    TaskProcess& operator=(const TaskProcess&) = delete;
    TaskProcess(TaskProcess&& other) noexcept;
    TaskProcess& operator=(TaskProcess&& other) noexcept;

    const std::string& task() const { return task_; }
    pid_t pid() const { return pid_; }
    const std::filesystem::path& workdir() const { return workdir_; }
    ProcessState state() const;
    int exit_code() const { return exit_code_; }

    // Graceful-then-forced stop of the whole process group, then workdir
    // cleanup. Returns the terminal state. Throws AlreadyExited if the
    // process was already reaped.
    ProcessState preempt(const ExecutorConfig& cfg);

    // Reads the output document (watchdog applies), reaps the child.
    // Clean exit + well-formed document -> (doc, false); anything else
    // -> (null, true).
    std::pair<Json, bool> collect_result(const ExecutorConfig& cfg);

    // Recursive removal of the ephemeral directory; idempotent. Logs and
    // swallows CleanupFailure after one retry.
    void cleanup_workdir();

    // True once the child has been reaped.
    bool reaped() const;

private:
    friend TaskProcess spawn_task(const FunctionEntry&, const Json&, const ExecutionContext&,
                                  const ExecutorConfig&);

    // waits (non-blocking unless deadline set) and updates state
    bool try_reap(std::optional<std::chrono::steady_clock::time_point> deadline);
    void record_exit(int wstatus, bool after_kill);

    std::string task_;
    pid_t pid_ = -1;
    std::filesystem::path workdir_;
    int output_fd_ = -1;
    int input_fd_ = -1;
    std::string pending_input_;
    size_t input_written_ = 0;
    mutable std::mutex mu_;
    ProcessState state_ = ProcessState::Exited;
    int exit_code_ = -1;
    bool reaped_ = true;
};

// Forks a child in a fresh process group with a fresh working directory
// scoped to (activation, offset, task). The input document is written to
// fd 3; the output document is read from fd 4 by collect_result. Throws
// MissingEntrypoint / SpawnFailure.
TaskProcess spawn_task(const FunctionEntry& entry, const Json& input,
                       const ExecutionContext& ctx, const ExecutorConfig& cfg);

// Pids in the given process group (via /proc); test and shutdown helper.
std::vector<pid_t> pids_in_group(pid_t pgid);

} // namespace raptor

#endif
