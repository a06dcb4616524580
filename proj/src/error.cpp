#include "singrav/error.hpp"

namespace singrav {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::kInvalidArgument: return "invalid_argument";
    case Errc::kPrecondition: return "precondition_violation";
    case Errc::kUnsupportedConfig: return "unsupported_config";
    case Errc::kNotFound: return "not_found";
    case Errc::kIo: return "io_error";
    case Errc::kFormat: return "format_error";
    case Errc::kConflict: return "conflict";
    case Errc::kNumerical: return "numerical_error";
  }
  return "unknown";
}

}  // namespace singrav
