#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace treplay {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input data (bad magic, bad header, unsupported link type).
struct FormatError : Error {
    using Error::Error;
};

// A capture file ended in the middle of a record.
struct TruncationError : Error {
    std::size_t record_index;
    TruncationError(std::size_t index, const std::string& msg)
        : Error(msg), record_index(index) {}
};

struct IoError : Error {
    using Error::Error;
};

// Unparseable names, mapping files, CSV, addresses.
struct ParseError : Error {
    using Error::Error;
};

// An IP without a node assignment.
struct MappingError : Error {
    using Error::Error;
};

// Port space or similar resource exhausted.
struct CapacityError : Error {
    using Error::Error;
};

// Operation called in the wrong order (e.g. a second rebase).
struct StateError : Error {
    using Error::Error;
};

struct TransportError : Error {
    using Error::Error;
};

// Violation of the controller/agent message contract.
struct ProtocolError : Error {
    using Error::Error;
};

}  // namespace treplay
