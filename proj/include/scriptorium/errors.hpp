#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace scriptorium {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid UTF-8 or unreadable corpus input.
struct IngestionError : Error {
    IngestionError(const std::string& what, std::size_t byte_offset)
        : Error(what + " at byte " + std::to_string(byte_offset)), byte_offset(byte_offset) {}
    std::size_t byte_offset;
};

// A configuration value failed validation; `field` is a dotted path.
struct ConfigError : Error {
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field(std::move(field)) {}
    std::string field;
};

// Remote scorer unreachable or returned a malformed response.
struct TransportError : Error {
    using Error::Error;
};

// Context longer than the backend's window; the caller must window it.
struct TruncationError : Error {
    using Error::Error;
};

// Backend lacks an optional capability (e.g. attention export).
struct CapabilityError : Error {
    using Error::Error;
};

// Review protocol violation. `status` mirrors the HTTP status the API returns.
struct ProtocolError : Error {
    ProtocolError(int status, const std::string& what) : Error(what), status(status) {}
    int status;
};

}  // namespace scriptorium
