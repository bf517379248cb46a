#pragma once

#include <stdexcept>
#include <string>

namespace tamtrl {

struct UnknownToken : std::runtime_error {
    explicit UnknownToken(const std::string& word)
        : std::runtime_error("unknown token: " + word) {}
};

struct InvalidId : std::runtime_error {
    explicit InvalidId(int id)
        : std::runtime_error("token id out of range: " + std::to_string(id)) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SpanError : std::runtime_error {
    explicit SpanError(const std::string& what) : std::runtime_error(what) {}
};

struct ContextOverflow : std::runtime_error {
    explicit ContextOverflow(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyDocument : std::runtime_error {
    EmptyDocument() : std::runtime_error("document is empty") {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct ModeError : std::runtime_error {
    explicit ModeError(const std::string& what) : std::runtime_error(what) {}
};

struct SupportError : std::runtime_error {
    explicit SupportError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace tamtrl
