#pragma once

#include <iosfwd>
#include <span>
#include <string>

namespace dermnet {

/// Runs one subcommand: prepare, eda, augment, train, evaluate, predict,
/// serve or summary. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors, 1 on operational failures; every
/// failure prints one diagnostic line to `err`.
int cli_dispatch(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace dermnet
