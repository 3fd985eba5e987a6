#pragma once

#include <stdexcept>
#include <string>

namespace cbr {

// Every failure the library raises derives from Error so callers (the CLI,
// the HTTP gateway) can map kinds onto exit codes or status codes.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define CBR_DEFINE_ERROR(Name)            \
  class Name : public Error {             \
  public:                                 \
    using Error::Error;                   \
  };

CBR_DEFINE_ERROR(ShapeError)
CBR_DEFINE_ERROR(ParseError)
CBR_DEFINE_ERROR(SchemaError)
CBR_DEFINE_ERROR(IntegrityError)
CBR_DEFINE_ERROR(ConfigError)
CBR_DEFINE_ERROR(ValueError)
CBR_DEFINE_ERROR(SizeError)
CBR_DEFINE_ERROR(TrainingError)
CBR_DEFINE_ERROR(StateError)
CBR_DEFINE_ERROR(ContractError)
CBR_DEFINE_ERROR(StatisticalError)
CBR_DEFINE_ERROR(UpstreamError)

#undef CBR_DEFINE_ERROR

}  // namespace cbr
