// Copyright 2026 The kbprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "kbprobe/error.hpp"

namespace kbprobe::detail {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchemaVersion = "1";

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  try {
    return Json::parse(buffer.str());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, path.string() + ": invalid JSON: " + e.what());
  }
}

inline std::string dump(const Json& json) { return json.dump(2) + "\n"; }

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) fail(ErrorCode::Io, "write failed: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const Json& json) {
  write_text_file(path, dump(json));
}

// Runs a JSON access block and converts nlohmann type/key errors into Format errors.
template <typename F>
auto with_format_errors(const std::string& what, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Format, what + ": " + e.what());
  }
}

}  // namespace kbprobe::detail
