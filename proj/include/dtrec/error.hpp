#pragma once

#include <stdexcept>
#include <string>

namespace dtrec {

// All library failures surface as dtrec::Error. `code` is a short stable
// identifier used by the CLI's machine-readable error output.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace dtrec
