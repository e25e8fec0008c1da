#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace halluc {

/// Thrown when a byte sequence is not well-formed UTF-8.
class Utf8Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All offsets in the toolkit index Unicode scalar values, not bytes.
std::u32string decode_utf8(std::string_view bytes);
std::string encode_utf8(std::u32string_view text);

/// Number of scalar values in `bytes`; throws Utf8Error on malformed input.
std::size_t scalar_length(std::string_view bytes);

bool is_space(char32_t c);

}  // namespace halluc
