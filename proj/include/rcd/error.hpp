#pragma once

#include <stdexcept>
#include <string>

namespace rcd {

/// Failure classes; each maps onto one CLI exit code.
enum class ErrorKind { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error config_error(const std::string& msg) { return {ErrorKind::config, msg}; }
inline Error data_error(const std::string& msg) { return {ErrorKind::data, msg}; }
inline Error numeric_error(const std::string& msg) { return {ErrorKind::numeric, msg}; }

}  // namespace rcd
