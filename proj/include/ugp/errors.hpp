#pragma once

#include <stdexcept>
#include <string>

namespace ugp {

/// Base class for every error raised by the library. The CLI maps any
/// `ugp::Error` escaping a subcommand to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define UGP_DEFINE_ERROR(Name)                     \
  class Name : public Error {                      \
   public:                                         \
    explicit Name(const std::string& what)         \
        : Error(std::string(#Name ": ") + what) {} \
  }

UGP_DEFINE_ERROR(NotFound);
UGP_DEFINE_ERROR(FormatError);
UGP_DEFINE_ERROR(IOError);
UGP_DEFINE_ERROR(EmptyDataset);
UGP_DEFINE_ERROR(InvalidArgument);
UGP_DEFINE_ERROR(ShapeError);
UGP_DEFINE_ERROR(Conflict);
UGP_DEFINE_ERROR(NumericError);
UGP_DEFINE_ERROR(PrerequisiteError);

#undef UGP_DEFINE_ERROR

}  // namespace ugp
