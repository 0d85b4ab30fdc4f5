#pragma once

#include <stdexcept>
#include <string>

namespace densforge {

// Base of every error the library raises. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or out-of-contract input data (bad coordinates, wrong shapes, bad ratios).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Unknown names or inconsistent configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  IoError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Neighbor boosting ran out of free ring positions.
class SaturationError : public Error {
 public:
  SaturationError(std::size_t shortfall, const std::string& what)
      : Error(what), shortfall_(shortfall) {}
  std::size_t shortfall() const { return shortfall_; }

 private:
  std::size_t shortfall_;
};

// Scene synthesis could not place the requested heads.
class GenerationError : public Error {
 public:
  GenerationError(std::size_t achieved, const std::string& what)
      : Error(what), achieved_(achieved) {}
  std::size_t achieved() const { return achieved_; }

 private:
  std::size_t achieved_;
};

// Loss became NaN/inf during an optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace densforge
