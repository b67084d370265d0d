#pragma once

#include <stdexcept>
#include <string>

namespace mpiv {

// Error taxonomy shared by every module. `kind()` is a stable machine-readable
// tag; the CLI maps it into the error JSON emitted on stderr.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define MPIV_ERROR_TYPE(Name)                                  \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& m) : Error(#Name, m) {}   \
  }

MPIV_ERROR_TYPE(NonPositiveDepth);
MPIV_ERROR_TYPE(InvalidRange);
MPIV_ERROR_TYPE(InvalidT);
MPIV_ERROR_TYPE(InvalidPose);
MPIV_ERROR_TYPE(DegenerateHomography);
MPIV_ERROR_TYPE(SingularHomography);
MPIV_ERROR_TYPE(ShapeMismatch);
MPIV_ERROR_TYPE(IndexOutOfRange);
MPIV_ERROR_TYPE(StepOutOfRange);
MPIV_ERROR_TYPE(IncompatibleClips);
MPIV_ERROR_TYPE(IoError);
MPIV_ERROR_TYPE(BadMagic);
MPIV_ERROR_TYPE(UnsupportedVersion);
MPIV_ERROR_TYPE(CorruptHeader);
MPIV_ERROR_TYPE(ConfigInvalid);

#undef MPIV_ERROR_TYPE

}  // namespace mpiv
