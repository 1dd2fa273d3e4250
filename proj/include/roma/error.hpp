#pragma once

#include <stdexcept>
#include <string>

namespace roma {

// Violated precondition or malformed input data.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A linear system or fit could not be solved reliably.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(what) {}
};

// Malformed or truncated file content.
class FormatError : public Error {
public:
    explicit FormatError(const std::string& what) : Error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

}  // namespace roma
