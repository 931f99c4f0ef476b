#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace dipo::grading {

/// Byte range of a balanced `{...}` group, braces included.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

struct ExtractionResult {
  std::string raw;  // group contents, untrimmed
  bool found = false;
  std::optional<CharSpan> char_span;
};

struct GradeOutcome {
  int delta = 1;  // 0 correct, 1 incorrect
  ExtractionResult extracted;
  std::string canonical_extracted;
  std::string canonical_reference;

  bool correct() const noexcept { return delta == 0; }
};

struct GradeOptions {
  // Relative tolerance for decimal-vs-decimal comparison; 0 means exact.
  double relative_tolerance = 0.0;
};

/// Contents of the last `\boxed{...}` or `\box{...}` region.
///
/// The last marker by position decides the result. Brace depth is counted
/// with backslash escapes (`\{`, `\}`) skipped; when the last marker's group
/// never closes the result is `found = false`, even if an earlier group was
/// complete, so that truncated outputs are never credited with a draft answer.
ExtractionResult extract_final_answer(std::string_view text);

/// Normalized comparison form of an answer.
///
/// Trims whitespace, strips one outer `\text{...}` or `$...$`, removes
/// thousands separators from grouped numerals, and renders numbers (decimals,
/// `a/b`, `\frac{a}{b}`) exactly: terminating values as decimals without
/// trailing zeros, others as `a/b` in lowest terms. Anything else is returned
/// trimmed.
std::string canonicalize_answer(std::string_view raw);

/// Throws InputError when the reference is blank.
GradeOutcome grade(std::string_view response, std::string_view reference,
                   const GradeOptions& options = {});

/// 0-based index of the token whose inclusion first makes the detokenized
/// prefix grade as correct, or nullopt when no prefix does.
std::optional<std::size_t> first_correct_token_index(
    std::span<const std::string> tokens, std::string_view reference,
    const GradeOptions& options = {});

/// Convenience overload tokenizing `response` with the default tokenizer.
std::optional<std::size_t> first_correct_token_index(
    std::string_view response, std::string_view reference,
    const GradeOptions& options = {});

/// True when two canonical forms denote the same answer under `options`.
bool canonical_equal(std::string_view a, std::string_view b,
                     const GradeOptions& options = {});

}  // namespace dipo::grading
