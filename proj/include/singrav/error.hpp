#pragma once

#include <stdexcept>
#include <string>

namespace singrav {

enum class Errc {
  kInvalidArgument,
  kPrecondition,
  kUnsupportedConfig,
  kNotFound,
  kIo,
  kFormat,
  kConflict,
  kNumerical,
};

const char* errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool ok, Errc code, const std::string& message) {
  if (!ok) fail(code, message);
}

}  // namespace singrav
