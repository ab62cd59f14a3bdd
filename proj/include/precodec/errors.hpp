#pragma once

#include <stdexcept>
#include <string>

namespace precodec {

// Base class of every error raised by the library. Each subclass maps to one
// failure kind so callers (and the CLI exit-code table) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PRECODEC_DEFINE_ERROR(Name)          \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

PRECODEC_DEFINE_ERROR(InvalidShape)
PRECODEC_DEFINE_ERROR(InvalidArgument)
PRECODEC_DEFINE_ERROR(NumericError)
PRECODEC_DEFINE_ERROR(TapeConsumed)
PRECODEC_DEFINE_ERROR(UnsupportedFormat)
PRECODEC_DEFINE_ERROR(CorruptStream)
PRECODEC_DEFINE_ERROR(IoError)
PRECODEC_DEFINE_ERROR(ConfigError)
PRECODEC_DEFINE_ERROR(ModelError)
PRECODEC_DEFINE_ERROR(CodecProcessError)
PRECODEC_DEFINE_ERROR(CodecContractError)
PRECODEC_DEFINE_ERROR(NoOverlap)
PRECODEC_DEFINE_ERROR(InsufficientPoints)

#undef PRECODEC_DEFINE_ERROR

}  // namespace precodec
