#pragma once

#include <stdexcept>
#include <string>

namespace kwmatch {

/// Raised for every contract violation and malformed input in the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parse failure in a line-oriented file; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(what + ", line " + std::to_string(line)), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace kwmatch
