#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "ssd/config.hpp"
#include "ssd/real.hpp"

namespace ssd {

/// Process exit codes shared by the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,      // runtime error
  kExitUsage = 2,        // bad flags or config
  kExitCheckFailed = 3,  // a verification or invariant check failed
};

inline namespace SSD_PRECISION_NS {

/// Trains every configured seed and prints per-seed and mean accuracy.
int command_run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// The {none, D, D+S, D+S+P} component table over the configured seeds.
int command_ablate(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Writes the memory images stored in a run checkpoint as PPM files plus a
/// manifest. Returns kExitOk and prints the image count.
int command_dump(const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir, std::ostream& out,
                 std::ostream& err);

/// Runs the numeric self-checks; meaningful in 64-bit precision only.
int command_verify(std::uint64_t seed, std::ostream& out, std::ostream& err);

}  // namespace SSD_PRECISION_NS
}  // namespace ssd
