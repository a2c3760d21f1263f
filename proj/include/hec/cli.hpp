/**
 * @file cli.hpp
 * @brief Command-line front end (`hecctl`). Exposed as a function so tests
 *        can drive it without spawning processes.
 */

#ifndef HEC_CLI_HPP
#define HEC_CLI_HPP

#include "hec/federation.hpp"

#include <memory>
#include <ostream>
#include <string>
#include <vector>

namespace hec {

/// Exit statuses of run_cli.
inline constexpr int exit_ok = 0;
inline constexpr int exit_domain_error = 1;
inline constexpr int exit_usage_error = 2;

/**
 * Runs one command. `args` excludes the program name. Rows go to `out`,
 * diagnostics to `err` as `error: <Code>: <message>`.
 */
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// The three-node gateway behind `fed demo`: nodes node-a (global uris),
/// node-b and node-c (local vocabularies mapped by label), all sharing one
/// registry with cardiac MRI, tumour assessment and X-ray event types.
std::unique_ptr<Gateway> demo_gateway();

/// The query `fed demo` runs when none is given.
inline constexpr const char* demo_query = "FIND events WHERE concept = \"hec:Jaw\"";

} // namespace hec

#endif // HEC_CLI_HPP
