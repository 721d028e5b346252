#pragma once

#include <stdexcept>
#include <string>

namespace evfuse {

/// Base of every error raised by the library. The CLI maps subclasses to
/// process exit codes (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EVFUSE_DEFINE_ERROR(Name)                 \
  class Name : public Error {                     \
   public:                                        \
    explicit Name(const std::string& what_arg)    \
        : Error(#Name ": " + what_arg) {}         \
  };

EVFUSE_DEFINE_ERROR(InvalidEvidence)
EVFUSE_DEFINE_ERROR(DegenerateOpinion)
EVFUSE_DEFINE_ERROR(TotalConflict)
EVFUSE_DEFINE_ERROR(EmptyFusion)
EVFUSE_DEFINE_ERROR(DomainError)
EVFUSE_DEFINE_ERROR(ShapeError)
EVFUSE_DEFINE_ERROR(GraphError)
EVFUSE_DEFINE_ERROR(ConfigError)
EVFUSE_DEFINE_ERROR(IOError)
EVFUSE_DEFINE_ERROR(ParseError)
EVFUSE_DEFINE_ERROR(EmptyInput)
EVFUSE_DEFINE_ERROR(DegenerateCorrelation)

#undef EVFUSE_DEFINE_ERROR

}  // namespace evfuse
