#pragma once

#include <stdexcept>
#include <string>

namespace idl {

// Error categories map onto CLI exit codes: ValidationError -> 1,
// IoError / BackendError -> 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct BackendError : Error {
    using Error::Error;
};

struct DimMismatch : ValidationError {
    DimMismatch(std::size_t a, std::size_t b)
        : ValidationError("vector dimension mismatch: " + std::to_string(a) + " vs " + std::to_string(b)) {}
};

struct RemoteUnavailable : BackendError {
    using BackendError::BackendError;
};

struct ClusterTooSmall : ValidationError {
    using ValidationError::ValidationError;
};

struct TooManyReferences : ValidationError {
    using ValidationError::ValidationError;
};

struct MissingCandidates : ValidationError {
    using ValidationError::ValidationError;
};

struct EmptyBatch : ValidationError {
    using ValidationError::ValidationError;
};

struct UnresolvedId : ValidationError {
    explicit UnresolvedId(const std::string& id) : ValidationError("unresolved dialogue_id: " + id) {}
};

}  // namespace idl
