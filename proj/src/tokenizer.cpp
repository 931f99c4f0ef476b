#include "dipo/tokenizer.hpp"

#include "dipo/error.hpp"

namespace dipo::evalio {

namespace {

template <typename Visit>
void scan_tokens(std::string_view text, Visit&& visit) {
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    const char c = text[i];
    if (is_space(c)) {
      ++i;
    } else if (is_punct(c)) {
      visit(i, i + 1);
      ++i;
    } else {
      const std::size_t start = i;
      while (i < n && !is_space(text[i]) && !is_punct(text[i])) ++i;
      visit(start, i);
    }
  }
}

bool is_word_token(const std::string& token) {
  return !token.empty() && !is_punct(token.front());
}

}  // namespace

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  scan_tokens(text, [&](std::size_t b, std::size_t e) {
    tokens.push_back({b, e});
  });
  return tokens;
}

std::size_t count_tokens(std::string_view text) {
  std::size_t count = 0;
  scan_tokens(text, [&](std::size_t, std::size_t) { ++count; });
  return count;
}

std::vector<std::string> token_strings(std::string_view text) {
  std::vector<std::string> out;
  scan_tokens(text, [&](std::size_t b, std::size_t e) {
    out.emplace_back(text.substr(b, e - b));
  });
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && is_word_token(tokens[i - 1]) && is_word_token(tokens[i])) {
      out.push_back(' ');
    }
    out += tokens[i];
  }
  return out;
}

TokenizerMode parse_tokenizer_mode(std::string_view name) {
  if (name == "whitespace_punct") return TokenizerMode::whitespace_punct;
  if (name == "precomputed") return TokenizerMode::precomputed;
  throw InputError("unknown tokenizer mode '" + std::string(name) + "'");
}

std::string_view to_string(TokenizerMode mode) {
  return mode == TokenizerMode::precomputed ? "precomputed"
                                            : "whitespace_punct";
}

}  // namespace dipo::evalio
