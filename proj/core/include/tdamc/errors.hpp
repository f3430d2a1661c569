#pragma once

#include <stdexcept>
#include <string>

namespace tdamc {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define TDAMC_DEFINE_ERROR(Name)                \
  class Name : public Error {                   \
   public:                                      \
    using Error::Error;                         \
  }

TDAMC_DEFINE_ERROR(ConfigError);
TDAMC_DEFINE_ERROR(LookupError);
TDAMC_DEFINE_ERROR(SchemaError);
TDAMC_DEFINE_ERROR(ParameterError);
TDAMC_DEFINE_ERROR(QueryError);
TDAMC_DEFINE_ERROR(DataError);
TDAMC_DEFINE_ERROR(IntegrityError);
TDAMC_DEFINE_ERROR(InsufficientReplicates);
TDAMC_DEFINE_ERROR(InternalError);

#undef TDAMC_DEFINE_ERROR

}  // namespace tdamc
