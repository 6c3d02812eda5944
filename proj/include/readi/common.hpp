#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace readi {

// Config/usage errors map to CLI exit code 2, everything else to 3.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated API precondition (non-scalar loss, zero-norm embedding, ...).
class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool is_finite(float v) { return std::isfinite(v); }

} // namespace readi
