#pragma once

#include <stdexcept>
#include <string>

namespace citytrack {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CITYTRACK_DEFINE_ERROR(Name)            \
  class Name : public Error {                   \
   public:                                      \
    explicit Name(const std::string& what)      \
        : Error(std::string(#Name ": ") + what) {} \
  }

// geo
CITYTRACK_DEFINE_ERROR(DegenerateConfiguration);
CITYTRACK_DEFINE_ERROR(HorizonPoint);
CITYTRACK_DEFINE_ERROR(UnknownCamera);
CITYTRACK_DEFINE_ERROR(InvalidTopology);

// ingest
CITYTRACK_DEFINE_ERROR(DuplicateCamera);
CITYTRACK_DEFINE_ERROR(ParseError);

// sct
CITYTRACK_DEFINE_ERROR(SingularInnovation);
CITYTRACK_DEFINE_ERROR(EmptyGallery);
CITYTRACK_DEFINE_ERROR(OutOfOrderFrame);

// reid
CITYTRACK_DEFINE_ERROR(ZeroVector);
CITYTRACK_DEFINE_ERROR(InsufficientGallery);
CITYTRACK_DEFINE_ERROR(NoValidGallery);
CITYTRACK_DEFINE_ERROR(DimensionMismatch);

// mct
CITYTRACK_DEFINE_ERROR(NonPositiveDt);

// losses
CITYTRACK_DEFINE_ERROR(DegenerateBatch);
CITYTRACK_DEFINE_ERROR(OutOfRange);
CITYTRACK_DEFINE_ERROR(InsufficientIdentities);

// simkit
CITYTRACK_DEFINE_ERROR(InvalidLayout);
CITYTRACK_DEFINE_ERROR(UnknownIdentity);

// pipeline
CITYTRACK_DEFINE_ERROR(ConfigError);
CITYTRACK_DEFINE_ERROR(SourceMissing);

#undef CITYTRACK_DEFINE_ERROR

}  // namespace citytrack
