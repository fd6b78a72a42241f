#pragma once

#include <stdexcept>
#include <string>

namespace scanrl {

// Error channels used across the toolkit. Catch scanrl::Error for anything
// raised here; the subclasses keep failure categories distinguishable.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Tensor extents do not line up (names both shapes in the message).
struct DimensionError : Error {
    using Error::Error;
};

// A setting or argument is outside its valid domain.
struct ConfigError : Error {
    using Error::Error;
};

// An API was driven out of order (incomplete episode, loss not on tape, ...).
struct UsageError : Error {
    using Error::Error;
};

// A caller-supplied value violates a documented precondition.
struct ContractError : Error {
    using Error::Error;
};

// Malformed bytes in an on-disk artifact; message carries the byte offset.
struct FormatError : Error {
    using Error::Error;
};

// Valid container, unusable payload (non-finite pixels and the like).
struct DataError : Error {
    using Error::Error;
};

}  // namespace scanrl
