#pragma once

#include <stdexcept>
#include <string>

namespace textpix {

enum class ErrorKind { shape, config, data, io, numeric, contract };

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error(ErrorKind::shape, m) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorKind::config, m) {}
};

struct DataError : Error {
    explicit DataError(const std::string& m) : Error(ErrorKind::data, m) {}
};

struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorKind::io, m) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error(ErrorKind::numeric, m) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& m) : Error(ErrorKind::contract, m) {}
};

}  // namespace textpix
