#pragma once

#include <stdexcept>
#include <string>

namespace roda {

// Error taxonomy mirrored by the CLI exit codes:
//   Config  -> exit 2  (bad config, bad usage, bad file paths)
//   Numeric -> exit 3  (non-finite values, failed factorizations)
//   Data    -> exit 4  (malformed payloads, label problems, size violations)
enum class ErrorKind { Config, Numeric, Data };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return Error(ErrorKind::Config, msg); }
inline Error numeric_error(const std::string& msg) { return Error(ErrorKind::Numeric, msg); }
inline Error data_error(const std::string& msg) { return Error(ErrorKind::Data, msg); }

}  // namespace roda
