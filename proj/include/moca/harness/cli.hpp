#pragma once

namespace moca::harness {

/// Exit codes: 0 suite passed, 1 a check failed, 2 usage or config error.
inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitUsage = 2;

int run_cli(int argc, char** argv);

}  // namespace moca::harness
