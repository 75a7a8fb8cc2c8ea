#ifndef IPIRM_CLI_HPP
#define IPIRM_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace ipirm {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitRuntime = 4;

/// Verbs: generate | train | eval | inspect | compare. `args` excludes the
/// program name. Returns the process exit code; never throws.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ipirm

#endif  // IPIRM_CLI_HPP
