#pragma once

namespace lrco::cli {

// Process exit codes, one per error class.
enum ExitCode : int {
    kOk = 0,
    kUsage = 2,           // unknown subcommand, flag or malformed argument
    kMissingFile = 3,     // a named input cannot be opened
    kInvalidConfig = 4,   // unknown key, bad value, failed validation
    kRuntime = 5,         // training diverged or another runtime failure
    kGradcheckFailed = 6,
    kInvalidData = 7,     // malformed dataset or checkpoint file
};

/// Name of the environment variable holding the output root.
inline constexpr const char* kOutDirEnv = "LRCO_OUT_DIR";

int run(int argc, char** argv);

}  // namespace lrco::cli
