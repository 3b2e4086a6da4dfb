#pragma once

#include <stdexcept>
#include <string>

namespace semdepth {

// Shape/contract violations between tensors or configs.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed files, bad configs, missing or inconsistent data.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values, failed gradient checks, diverged optimization.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace semdepth
