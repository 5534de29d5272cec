#pragma once

#include <stdexcept>
#include <string>

namespace isfp {

// Thrown on malformed input files (bad record, truncated section, ...).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when structurally valid input violates a model requirement
// (unknown node id, disconnected required pair, index mismatch, ...).
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown on out-of-domain arguments (negative flow, zero probability, ...).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace isfp
