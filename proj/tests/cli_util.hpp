#pragma once

// Runs the geoalign binary through the shell and captures stdout.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

namespace cliutil {

struct RunResult {
  int code = -1;
  std::string out;
};

inline std::string binary() { return GEOALIGN_BIN; }

/// `args` is appended verbatim; stderr is discarded unless `keep_stderr`.
inline RunResult run(const std::string& args, bool keep_stderr = false) {
  const std::string cmd = "'" + binary() + "' " + args + (keep_stderr ? " 2>&1" : " 2>/dev/null");
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto d = std::filesystem::temp_directory_path() / ("geoalign_cli_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace cliutil
