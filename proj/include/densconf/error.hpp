#pragma once

#include <stdexcept>
#include <string>

namespace densconf {

// Caller violated a documented precondition (bad argument, bad config value).
struct UsageError : std::invalid_argument {
    explicit UsageError(const std::string& what) : std::invalid_argument(what) {}
};

// A file or stream does not match its declared format.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Training produced a non-finite loss and was aborted.
struct TrainingDiverged : std::runtime_error {
    explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

} // namespace densconf
