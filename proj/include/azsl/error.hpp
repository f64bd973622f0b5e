#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace azsl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension or shape disagreement between operands.
class ShapeError : public Error {
public:
    using Error::Error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class ConfigError : public ParseError {
public:
    using ParseError::ParseError;
};

// Wire-level failure. `code` is the value carried in an AZSP error frame.
class ProtocolError : public Error {
public:
    ProtocolError(std::uint16_t code, const std::string& what) : Error(what), code_(code) {}

    std::uint16_t code() const noexcept { return code_; }

private:
    std::uint16_t code_;
};

}  // namespace azsl
