#pragma once

#include <stdexcept>
#include <string>

namespace attendseg {

/// Base of every error the engine raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or layer wiring that do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed or unreadable files, configs and arguments.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Non-finite values produced during a computation.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::string layer)
        : Error(what), layer_(std::move(layer)) {}
    explicit NumericError(const std::string& what) : Error(what) {}

    const std::string& layer() const noexcept { return layer_; }

private:
    std::string layer_;
};

}  // namespace attendseg
