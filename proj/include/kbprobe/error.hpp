// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace kbprobe {

enum class ErrorCode {
  InvalidArgument,  // caller passed something malformed (bad shape, bad option)
  Io,               // file could not be opened, read or written
  Format,           // file contents do not follow the expected layout
  Validation,       // data violates a domain invariant
  Numeric,          // non-finite values or a failed factorization
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace kbprobe
