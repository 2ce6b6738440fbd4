#pragma once

#include <stdexcept>
#include <string>

namespace bnn {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};
struct InvalidValue : Error {
  using Error::Error;
};
struct RealWeightsInBinaryPath : Error {
  using Error::Error;
};
struct DegenerateBN : Error {
  using Error::Error;
};
struct ModeError : Error {
  using Error::Error;
};
struct RangeError : Error {
  using Error::Error;
};
struct CapacityError : Error {
  using Error::Error;
};
struct UnknownModel : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};
struct CorruptModel : Error {
  using Error::Error;
};
struct UnsupportedVersion : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct TrainingDiverged : Error {
  TrainingDiverged(const std::string& msg, std::size_t epoch_index)
      : Error(msg), epoch(epoch_index) {}
  std::size_t epoch;
};

}  // namespace bnn
