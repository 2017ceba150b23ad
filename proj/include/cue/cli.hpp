#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace cue {

/// "0,3,5" and ranges "0-19" (inclusive), mixed freely.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);
/// Comma-separated concept ids; an empty string gives an empty list.
std::vector<int> parse_id_list(const std::string& text);

/// Runs one subcommand and returns the process exit code; errors are reported
/// on `err` as a single JSON object {code, message}.
int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace cue
