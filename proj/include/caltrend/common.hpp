#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace caltrend {

/// Error raised by any caltrend module. Carries the module and stage so the
/// CLI can surface actionable messages ("module: stage: what went wrong").
class Error : public std::runtime_error {
 public:
  Error(std::string module, std::string stage, const std::string& what)
      : std::runtime_error(module + ": " + stage + ": " + what),
        module_(std::move(module)),
        stage_(std::move(stage)) {}

  const std::string& module() const { return module_; }
  const std::string& stage() const { return stage_; }

 private:
  std::string module_;
  std::string stage_;
};

/// Non-fatal findings accumulated while a routine runs (empty arms,
/// degenerate trials, coerced rows). Owned by result types.
using Warnings = std::vector<std::string>;

}  // namespace caltrend
