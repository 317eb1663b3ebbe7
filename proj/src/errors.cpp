#include "raptor/errors.hpp"

namespace raptor {

const char* errc_name(Errc c) {
    switch (c) {
    case Errc::MalformedDocument: return "MalformedDocument";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::UnknownDependency: return "UnknownDependency";
    case Errc::CyclicDependency: return "CyclicDependency";
    case Errc::PathTraversal: return "PathTraversal";
    case Errc::UnknownFunction: return "UnknownFunction";
    case Errc::MismatchedTaskSets: return "MismatchedTaskSets";
    case Errc::InvalidOffset: return "InvalidOffset";
    case Errc::UnknownMaskedFunction: return "UnknownMaskedFunction";
    case Errc::NotALeader: return "NotALeader";
    case Errc::WrongActivation: return "WrongActivation";
    case Errc::DuplicatePeer: return "DuplicatePeer";
    case Errc::NotRunning: return "NotRunning";
    case Errc::SpawnFailure: return "SpawnFailure";
    case Errc::MissingEntrypoint: return "MissingEntrypoint";
    case Errc::AlreadyExited: return "AlreadyExited";
    case Errc::CleanupFailure: return "CleanupFailure";
    case Errc::InvalidArchive: return "InvalidArchive";
    case Errc::NotInitialized: return "NotInitialized";
    case Errc::InvalidContext: return "InvalidContext";
    case Errc::ActivationTimeout: return "ActivationTimeout";
    case Errc::BindFailure: return "BindFailure";
    case Errc::ConfigError: return "ConfigError";
    }
    return "UnknownError";
}

} // namespace raptor
