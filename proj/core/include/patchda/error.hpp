#pragma once

#include <stdexcept>
#include <string>

namespace patchda {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto process exit codes (usage = 1, data = 2, training = 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed arguments to an operation (shape mismatch, non-finite values).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A configuration that cannot be realized (bad patch size, unknown key).
class InvalidConfig : public Error {
 public:
  using Error::Error;
};

// File system failures and corrupted on-disk artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

class CorruptData : public IoError {
 public:
  using IoError::IoError;
};

// Precomputed feature ingestion failed; message always names the clip.
class IngestionError : public IoError {
 public:
  using IoError::IoError;
};

// A caller broke a usage contract, e.g. fed target labels to a training loss.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

// Training diverged; carries the epoch and the offending loss component.
class TrainingAbort : public Error {
 public:
  TrainingAbort(int epoch, std::string component)
      : Error("training aborted at epoch " + std::to_string(epoch) +
              ": non-finite " + component),
        epoch_(epoch),
        component_(std::move(component)) {}

  int epoch() const noexcept { return epoch_; }
  const std::string& component() const noexcept { return component_; }

 private:
  int epoch_;
  std::string component_;
};

}  // namespace patchda
