#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace pbts {

/// Byte count with an optional binary suffix: 512, 256KB, 2MiB, 1G.
/// Throws Error on anything else.
std::uint64_t parse_size(std::string_view text);

/// The pbts command line. args excludes the program name. Returns the exit
/// code: 0 on success, 1 for a failed run or game, 2 for a usage error.
int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace pbts
