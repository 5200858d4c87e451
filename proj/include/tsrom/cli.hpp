#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace tsrom {

// Process exit codes.
namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int config = 2;
inline constexpr int io = 3;
inline constexpr int divergence = 4;
inline constexpr int digest = 5;
inline constexpr int dimension = 6;
}  // namespace exit_code

// Verbs: generate, train, predict, evaluate, export-plots. `args` excludes the program name.
// Outputs go to --out, or to $TSROM_RUN_ROOT (default "runs") / <verb>-<name>.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tsrom
