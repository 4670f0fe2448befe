#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace atriamap {

enum class ErrorKind {
  InvalidInput,
  OutOfFov,
  BadMagic,
  BadVersion,
  TruncatedPayload,
  LengthMismatch,
  EmptyVolume,
  InvalidSpec,
  DegenerateInput,
  ShapeMismatch,
  IndexOutOfRange,
  UndefinedMetric,
  Numeric,
  BudgetExceeded,
  EmptySurface,
  NotFound,
  Conflict,
  Io,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library. `stage` names the pipeline stage
// that raised it (volume, geometry, rbm, vae, eval, ...); `detail` carries a
// machine-readable qualifier such as the offending axis or degeneracy class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, std::string message, std::string detail = {})
      : std::runtime_error(std::string(stage) + ": " + message),
        kind_(kind),
        stage_(std::move(stage)),
        detail_(std::move(detail)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string stage_;
  std::string detail_;
};

}  // namespace atriamap
