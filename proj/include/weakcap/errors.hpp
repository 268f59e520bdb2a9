#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace weakcap {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class VocabError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class TrainError : public Error {
 public:
  using Error::Error;
};

class EvalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Non-finite loss. Carries where in the optimisation it happened.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t iteration, std::size_t epoch,
                  std::size_t step)
      : Error(what + " (iteration " + std::to_string(iteration) + ", epoch " +
              std::to_string(epoch) + ", step " + std::to_string(step) + ")"),
        iteration_(iteration),
        epoch_(epoch),
        step_(step) {}

  std::size_t iteration() const noexcept { return iteration_; }
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t iteration_;
  std::size_t epoch_;
  std::size_t step_;
};

inline void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace weakcap
