#pragma once

namespace nast {

// Full command-line surface: synth / train / translate / evaluate /
// gradcheck / oracle. Returns the process exit code: 0 success, 1 runtime
// failure, 2 usage error.
int run_command(int argc, const char* const* argv);

}  // namespace nast
