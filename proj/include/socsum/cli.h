#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace socsum::cli {

// Runs one subcommand: preprocess, build-vocab, train, summarize, evaluate or
// characterize. `args` excludes the program name. Returns 0 on success, 2 on
// usage errors (unknown command or flag, missing required flag) and 1 when
// the pipeline fails. Errors are written to `err` as one "error: ..." line.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Reads "key=value" lines ('#' comments, blank lines allowed) and turns them
// into "--key=value" arguments.
std::vector<std::string> config_file_args(const std::string& path);

}  // namespace socsum::cli
