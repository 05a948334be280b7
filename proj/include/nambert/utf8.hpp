#pragma once

#include <string>
#include <string_view>

namespace nambert::utf8 {

// Throws InputError on malformed sequences.
std::u32string decode(std::string_view s);
std::string encode(std::u32string_view s);
std::string encode(char32_t c);

// "U+4E2D" style label, used in diagnostics.
std::string codepoint_label(char32_t c);

}  // namespace nambert::utf8
