#pragma once

#include <stdexcept>
#include <string>

namespace sdcnet {

// Every error raised by the library derives from Error so callers can
// catch the whole family in one place (the CLI maps them to exit codes).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct IndexError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct TapeError : Error {
  using Error::Error;
};

struct DegenerateBatchError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

struct NotFoundError : Error {
  using Error::Error;
};

struct CheckpointError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  using Error::Error;
};

struct BookkeepingError : Error {
  using Error::Error;
};

}  // namespace sdcnet
