#pragma once

#include <string>
#include <vector>

namespace hsi {

inline constexpr const char* kToolVersion = "0.1.0";

// Runs one subcommand (synth | dictlearn | inpaint | ablate | certify |
// metrics). `args` excludes the program name. Returns the process exit code:
// 0 success, 2 usage or input error, 3 certification failure, 4 numerical abort.
int run_cli(const std::vector<std::string>& args);
int run_cli(int argc, char** argv);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::string& path);

}  // namespace hsi
