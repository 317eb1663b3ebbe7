#ifndef RAPTOR_ERRORS_HPP
#define RAPTOR_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace raptor {

enum class Errc {
    // manifest
    MalformedDocument,
    DuplicateName,
    UnknownDependency,
    CyclicDependency,
    PathTraversal,
    UnknownFunction,
    // listsched
    MismatchedTaskSets,
    // context
    InvalidOffset,
    UnknownMaskedFunction,
    NotALeader,
    // flight
    WrongActivation,
    DuplicatePeer,
    NotRunning,
    // executor
    SpawnFailure,
    MissingEntrypoint,
    AlreadyExited,
    CleanupFailure,
    // proxy
    InvalidArchive,
    NotInitialized,
    InvalidContext,
    ActivationTimeout,
    // cli
    BindFailure,
    ConfigError,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

} // namespace raptor

#endif
