#pragma once

namespace atriamap::cli {

/// Entry point for the `atriamap` command. Returns the process exit code:
/// 0 on success, 1 on operation failure, 2 on usage errors.
int run(int argc, char** argv);

}  // namespace atriamap::cli
