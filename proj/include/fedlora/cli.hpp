#pragma once

namespace fedlora::cli {

// Entry point behind the fedlora binary. Exit codes: 0 success, 1 usage,
// 2 configuration error, 3 data error, 4 runtime failure.
int run(int argc, const char* const* argv);

}  // namespace fedlora::cli
