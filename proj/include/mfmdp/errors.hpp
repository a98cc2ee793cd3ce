#pragma once

#include <stdexcept>
#include <string>

namespace mfmdp {

// Base class for all domain errors. The CLI maps these to exit code 1;
// anything else escaping main is a bug.
struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

struct EmptyWindow : Error {
  using Error::Error;
};
struct MissingLabel : Error {
  using Error::Error;
};
struct UnknownLabel : Error {
  using Error::Error;
};
struct LengthMismatch : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct SchemaError : Error {
  using Error::Error;
};
struct ValidationError : Error {
  using Error::Error;
};
struct SpecError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct HorizonError : Error {
  using Error::Error;
};
struct MissingGroundTruth : Error {
  using Error::Error;
};
struct RateError : Error {
  using Error::Error;
};
struct ServiceError : Error {
  using Error::Error;
};
struct BackendError : Error {
  using Error::Error;
};
struct PoolError : Error {
  using Error::Error;
};
struct EnumerationError : Error {
  using Error::Error;
};
struct EmptySeries : Error {
  using Error::Error;
};

}  // namespace mfmdp
