#pragma once

#include <stdexcept>
#include <string>

namespace bwlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BWLAB_DEFINE_ERROR(Name)              \
  class Name : public Error {                 \
   public:                                    \
    explicit Name(const std::string& what)    \
        : Error(#Name ": " + what) {}         \
  };

BWLAB_DEFINE_ERROR(DomainError)
BWLAB_DEFINE_ERROR(NonErgodicChain)
BWLAB_DEFINE_ERROR(ZeroTransition)
BWLAB_DEFINE_ERROR(NumericalUnderflow)
BWLAB_DEFINE_ERROR(TooLarge)
BWLAB_DEFINE_ERROR(MissingExtension)
BWLAB_DEFINE_ERROR(EmptyState)
BWLAB_DEFINE_ERROR(ConcavityViolation)
BWLAB_DEFINE_ERROR(BoundViolation)
BWLAB_DEFINE_ERROR(FitFailure)
BWLAB_DEFINE_ERROR(IoError)
BWLAB_DEFINE_ERROR(ValidationError)

#undef BWLAB_DEFINE_ERROR

/// Config syntax error; carries the offending line (1-based, 0 if unknown) and key.
class ParseError : public Error {
 public:
  ParseError(int line, std::string key, const std::string& what)
      : Error("ParseError: line " + std::to_string(line) + (key.empty() ? "" : " key '" + key + "'") +
              ": " + what),
        line_(line),
        key_(std::move(key)) {}

  int line() const noexcept { return line_; }
  const std::string& key() const noexcept { return key_; }

 private:
  int line_;
  std::string key_;
};

}  // namespace bwlab
