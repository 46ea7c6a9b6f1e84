#pragma once

#include <stdexcept>
#include <string>

namespace graft {

// Error taxonomy shared by the library and the CLI. Each category carries a
// distinct label and process exit code so pipelines can tell failures apart.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* category() const noexcept { return "error"; }
  virtual int exit_code() const noexcept { return 1; }
};

// Bad configuration: unknown keys, invalid values, unknown preset names.
class config_error : public error {
 public:
  using error::error;
  const char* category() const noexcept override { return "config-error"; }
  int exit_code() const noexcept override { return 2; }
};

// Malformed or inconsistent data: schema validation, bad records, bad ids.
class data_error : public error {
 public:
  using error::error;
  const char* category() const noexcept override { return "data-error"; }
  int exit_code() const noexcept override { return 3; }
};

// Sequence budget violations (n_max and friends).
class sizing_error : public error {
 public:
  using error::error;
  const char* category() const noexcept override { return "sizing-error"; }
  int exit_code() const noexcept override { return 4; }
};

// Filesystem and stream failures.
class io_error : public error {
 public:
  using error::error;
  const char* category() const noexcept override { return "io-error"; }
  int exit_code() const noexcept override { return 5; }
};

}  // namespace graft
