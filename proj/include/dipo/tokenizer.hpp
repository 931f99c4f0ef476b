#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace dipo::evalio {

enum class TokenizerMode { whitespace_punct, precomputed };

/// Byte range [begin, end) of one token inside the tokenized text.
struct Token {
  std::size_t begin = 0;
  std::size_t end = 0;
};

/// ASCII punctuation; every such character is a token of its own.
constexpr bool is_punct(char c) noexcept {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
         (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

constexpr bool is_space(char c) noexcept {
  return c == ' ' || c == '\t' || c == '\n' || c == '\v' || c == '\f' ||
         c == '\r';
}

// Whitespace separates tokens; inside a non-space run each punctuation
// character is split off and the remaining maximal runs are word tokens.
// Bytes >= 0x80 count as word characters so UTF-8 never splits mid-sequence.
std::vector<Token> tokenize(std::string_view text);

std::size_t count_tokens(std::string_view text);

std::vector<std::string> token_strings(std::string_view text);

/// Joins tokens, inserting one space only between two word tokens.
/// The result of the first k tokens is always a prefix of the full result.
std::string detokenize(std::span<const std::string> tokens);

TokenizerMode parse_tokenizer_mode(std::string_view name);
std::string_view to_string(TokenizerMode mode);

}  // namespace dipo::evalio
