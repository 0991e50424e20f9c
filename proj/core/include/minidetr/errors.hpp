#pragma once

#include <stdexcept>
#include <string>

namespace minidetr {

// Bad input from the caller or from a file: maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Anything that went wrong at runtime despite valid input: CLI exit code 1.
class RuntimeFailure : public std::runtime_error {
public:
    explicit RuntimeFailure(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace minidetr
