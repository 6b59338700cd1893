#pragma once

#include <stdexcept>
#include <string>

namespace coreselect {

// Every failure surfaced by the library derives from Error. The CLI maps the
// kind onto a process exit code.
enum class ErrorKind { config, numeric, protocol, bounds, format, state, data, io };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define CORESELECT_DEFINE_ERROR(Name, Kind)                                 \
  class Name : public Error {                                               \
   public:                                                                  \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

CORESELECT_DEFINE_ERROR(ConfigError, config)
CORESELECT_DEFINE_ERROR(NumericError, numeric)
CORESELECT_DEFINE_ERROR(ProtocolError, protocol)
CORESELECT_DEFINE_ERROR(BoundsError, bounds)
CORESELECT_DEFINE_ERROR(FormatError, format)
CORESELECT_DEFINE_ERROR(StateError, state)
CORESELECT_DEFINE_ERROR(DataError, data)
CORESELECT_DEFINE_ERROR(IoError, io)

#undef CORESELECT_DEFINE_ERROR

// 0 success, 2 configuration/validation, 3 numeric failure, 4 I/O/format.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::numeric:
      return 3;
    case ErrorKind::format:
    case ErrorKind::data:
    case ErrorKind::io:
      return 4;
    default:
      return 2;
  }
}

}  // namespace coreselect
