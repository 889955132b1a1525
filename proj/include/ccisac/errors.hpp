#pragma once

#include <stdexcept>
#include <string>

namespace ccisac {

// Every failure raised by the library derives from Error so callers (the CLI in
// particular) can report a stable machine-readable kind().
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define CCISAC_DEFINE_ERROR(Name)                                     \
  class Name : public Error {                                         \
   public:                                                            \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  };

CCISAC_DEFINE_ERROR(PreconditionViolation)
CCISAC_DEFINE_ERROR(OutOfCoverage)
CCISAC_DEFINE_ERROR(ConfigError)
CCISAC_DEFINE_ERROR(NoPeak)
CCISAC_DEFINE_ERROR(DegenerateCovariance)
CCISAC_DEFINE_ERROR(InvalidDistribution)
CCISAC_DEFINE_ERROR(ExhaustedTree)
CCISAC_DEFINE_ERROR(ShapeMismatch)
CCISAC_DEFINE_ERROR(NoGraph)
CCISAC_DEFINE_ERROR(HistoryTooShort)
CCISAC_DEFINE_ERROR(NoDataAvailable)
CCISAC_DEFINE_ERROR(EmptyCrop)
CCISAC_DEFINE_ERROR(EmptyInput)
CCISAC_DEFINE_ERROR(DivergenceDetected)
CCISAC_DEFINE_ERROR(FormatError)

#undef CCISAC_DEFINE_ERROR

}  // namespace ccisac
