#pragma once

#include <stdexcept>
#include <string>

namespace rudra {

/// Dimension or length mismatch in a linear-algebra or model operation.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// A gradient carried a timestamp newer than the server's weights.
/// Signals a transport or bookkeeping bug, never a legal protocol state.
struct ClockViolation : std::runtime_error {
    explicit ClockViolation(const std::string& what) : std::runtime_error(what) {}
};

/// A synchronization-protocol rule was broken (duplicate hardsync
/// contribution, malformed tree relay, ...).
struct ProtocolError : std::runtime_error {
    explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

/// Weights or velocity turned non-finite during an update. Training aborts.
struct NumericOverflow : std::runtime_error {
    explicit NumericOverflow(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid run configuration; message enumerates the offending fields.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (dataset CSV, config file, checkpoint).
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

/// Precondition violation on an operation argument.
struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rudra
