#pragma once

#include <stdexcept>
#include <string>

namespace cbae {

// Base class for every error raised by the library. kind() is a stable,
// machine-readable tag used by the CLI's one-line error output.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CBAE_DEFINE_ERROR(Name, tag)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& message) : Error(tag, message) {} \
  };

CBAE_DEFINE_ERROR(ShapeError, "shape")
CBAE_DEFINE_ERROR(IndexError, "index")
CBAE_DEFINE_ERROR(ValidationError, "validation")
CBAE_DEFINE_ERROR(ContractError, "contract")
CBAE_DEFINE_ERROR(ConfigError, "config")
CBAE_DEFINE_ERROR(ParseError, "parse")
CBAE_DEFINE_ERROR(DataError, "data")
CBAE_DEFINE_ERROR(NumericalError, "numerical")
CBAE_DEFINE_ERROR(IoError, "io")
CBAE_DEFINE_ERROR(UsageError, "usage")
CBAE_DEFINE_ERROR(UndefinedCorrelation, "undefined_correlation")

#undef CBAE_DEFINE_ERROR

}  // namespace cbae
