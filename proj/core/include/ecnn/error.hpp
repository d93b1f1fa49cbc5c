#ifndef ECNN_ERROR_HPP
#define ECNN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace ecnn {

/// Base class for all engine errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor/graph extent mismatches and structurally invalid models.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments: unknown names, out-of-range ratios, illegal drops.
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint and file problems.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, int epoch) : Error(msg), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace ecnn

#endif
