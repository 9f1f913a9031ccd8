#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace imagine {

/// Lowercase ASCII, strip leading/trailing whitespace, collapse internal
/// whitespace runs to single spaces. Idempotent.
std::string normalize_text(std::string_view t);

/// Whitespace-delimited split (no empty tokens).
std::vector<std::string> split_words(std::string_view t);

}  // namespace imagine
