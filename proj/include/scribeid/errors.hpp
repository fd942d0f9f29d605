#pragma once

#include <stdexcept>
#include <string>

namespace scribeid {

// Every error carries a short machine-readable code used by the CLI and the
// HTTP layer ("dimension_error", "unsupported_letter", ...).
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

#define SCRIBEID_DEFINE_ERROR(Name, code_string)                       \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(code_string, message) {} \
  };

SCRIBEID_DEFINE_ERROR(DimensionError, "dimension_error")
SCRIBEID_DEFINE_ERROR(UsageError, "usage_error")
SCRIBEID_DEFINE_ERROR(StatisticsError, "statistics_error")
SCRIBEID_DEFINE_ERROR(ConfigurationError, "configuration_error")
SCRIBEID_DEFINE_ERROR(UnsupportedLetterError, "unsupported_letter")
SCRIBEID_DEFINE_ERROR(DegenerateInputError, "degenerate_input")
SCRIBEID_DEFINE_ERROR(TooShortError, "too_short")
SCRIBEID_DEFINE_ERROR(ProtocolError, "protocol_error")
SCRIBEID_DEFINE_ERROR(ParseError, "parse_error")
SCRIBEID_DEFINE_ERROR(SchemaError, "schema_error")
SCRIBEID_DEFINE_ERROR(NormalizationError, "normalization_error")
SCRIBEID_DEFINE_ERROR(DivergenceError, "divergence")
SCRIBEID_DEFINE_ERROR(IoError, "io_error")

#undef SCRIBEID_DEFINE_ERROR

}  // namespace scribeid
