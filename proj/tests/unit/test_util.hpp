#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <doctest.h>

namespace testutil {

/// Fresh per-test scratch directory under NOTEASSIGN_TEST_TMP (or the
/// system temp dir).
inline std::filesystem::path scratch(const std::string& name) {
  const char* root = std::getenv("NOTEASSIGN_TEST_TMP");
  const std::filesystem::path base = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "noteassign_tests";
  const auto dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
