// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "kbprobe/error.hpp"

namespace kbprobe {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Io: return "I/O error";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Validation: return "validation error";
    case ErrorCode::Numeric: return "numeric error";
  }
  return "unknown error";
}

}  // namespace kbprobe
