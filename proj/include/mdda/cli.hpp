#pragma once

namespace mdda {

// Entry point for the `mdda` tool. Exit codes: 0 success, 1 usage/config
// error, 2 runtime error (I/O, aborted training, ...).
int cmd_dispatch(int argc, const char* const* argv);

}  // namespace mdda
