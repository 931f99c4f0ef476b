#include "dipo/grading.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "dipo/error.hpp"
#include "dipo/tokenizer.hpp"

namespace dipo::grading {

namespace {

constexpr std::size_t npos = std::string_view::npos;

std::string_view trim(std::string_view s) {
  while (!s.empty() && evalio::is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && evalio::is_space(s.back())) s.remove_suffix(1);
  return s;
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Index of the brace closing the group opened at `open`, or npos.
std::size_t match_brace(std::string_view text, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\\') {
      ++i;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) return i;
    }
  }
  return npos;
}

// Opening brace position if a box marker starts at `pos`, else npos.
std::size_t marker_open(std::string_view text, std::size_t pos) {
  constexpr std::string_view stem = "\\box";
  if (text.compare(pos, stem.size(), stem) != 0) return npos;
  const std::size_t after = pos + stem.size();
  if (after < text.size() && text[after] == '{') return after;
  if (text.compare(after, 3, "ed{") == 0) return after + 2;
  return npos;
}

struct Marker {
  std::size_t open;
  std::size_t close;  // npos when unclosed
};

std::vector<Marker> find_markers(std::string_view text) {
  std::vector<Marker> markers;
  for (std::size_t pos = text.find("\\box"); pos != npos;
       pos = text.find("\\box", pos + 1)) {
    const std::size_t open = marker_open(text, pos);
    if (open != npos) markers.push_back({open, match_brace(text, open)});
  }
  return markers;
}

// --- exact rationals -------------------------------------------------------

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;
};

std::optional<Rational> normalized(std::int64_t num, std::int64_t den) {
  if (den == 0 || num == INT64_MIN || den == INT64_MIN) return std::nullopt;
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return Rational{num, den};
}

std::optional<Rational> divide(Rational a, Rational b) {
  if (b.num == 0) return std::nullopt;
  // (a.num/a.den) / (b.num/b.den), cross-reduced before multiplying.
  const std::int64_t g1 = std::gcd(a.num, b.num);
  const std::int64_t g2 = std::gcd(a.den, b.den);
  const std::int64_t an = g1 ? a.num / g1 : a.num;
  const std::int64_t bn = g1 ? b.num / g1 : b.num;
  std::int64_t num = 0;
  std::int64_t den = 0;
  if (__builtin_mul_overflow(an, b.den / g2, &num)) return std::nullopt;
  if (__builtin_mul_overflow(a.den / g2, bn, &den)) return std::nullopt;
  return normalized(num, den);
}

bool terminates(std::int64_t den) {
  while (den % 2 == 0) den /= 2;
  while (den % 5 == 0) den /= 5;
  return den == 1;
}

std::string render(Rational r) {
  const bool negative = r.num < 0;
  // normalized() never lets INT64_MIN through, so negation is safe.
  const std::uint64_t mag = negative ? static_cast<std::uint64_t>(-r.num)
                                     : static_cast<std::uint64_t>(r.num);
  const auto den = static_cast<std::uint64_t>(r.den);
  std::string out = negative && mag != 0 ? "-" : "";
  if (!terminates(r.den)) {
    out += std::to_string(mag) + "/" + std::to_string(den);
    return out;
  }
  out += std::to_string(mag / den);
  std::uint64_t rem = mag % den;
  if (rem != 0) {
    out.push_back('.');
    while (rem != 0) {
      rem *= 10;
      out.push_back(static_cast<char>('0' + rem / den));
      rem %= den;
    }
  }
  return out;
}

// Signed decimal literal split into its parts; digits only, no exponent.
struct DecimalParts {
  bool negative = false;
  std::string_view int_digits;
  std::string_view frac_digits;
};

std::optional<DecimalParts> split_decimal(std::string_view s) {
  DecimalParts parts;
  if (!s.empty() && (s.front() == '+' || s.front() == '-')) {
    parts.negative = s.front() == '-';
    s.remove_prefix(1);
  }
  const std::size_t dot = s.find('.');
  parts.int_digits = s.substr(0, dot);
  if (dot != npos) parts.frac_digits = s.substr(dot + 1);
  if (parts.int_digits.empty() && parts.frac_digits.empty()) return std::nullopt;
  if (dot != npos && parts.frac_digits.empty() && parts.int_digits.empty()) {
    return std::nullopt;
  }
  for (char c : parts.int_digits)
    if (!is_digit(c)) return std::nullopt;
  for (char c : parts.frac_digits)
    if (!is_digit(c)) return std::nullopt;
  return parts;
}

// Decimal normalization on the digit string itself; works at any length.
std::string render_decimal(const DecimalParts& parts) {
  std::string_view ip = parts.int_digits;
  std::string_view fp = parts.frac_digits;
  while (ip.size() > 1 && ip.front() == '0') ip.remove_prefix(1);
  if (ip.empty()) ip = "0";
  while (!fp.empty() && fp.back() == '0') fp.remove_suffix(1);
  std::string out;
  if (parts.negative && !(ip == "0" && fp.empty())) out.push_back('-');
  out += ip;
  if (!fp.empty()) {
    out.push_back('.');
    out += fp;
  }
  return out;
}

std::optional<Rational> to_rational(const DecimalParts& parts) {
  std::int64_t num = 0;
  std::int64_t den = 1;
  for (char c : parts.int_digits) {
    if (__builtin_mul_overflow(num, 10, &num) ||
        __builtin_add_overflow(num, c - '0', &num))
      return std::nullopt;
  }
  for (char c : parts.frac_digits) {
    if (__builtin_mul_overflow(num, 10, &num) ||
        __builtin_add_overflow(num, c - '0', &num) ||
        __builtin_mul_overflow(den, 10, &den))
      return std::nullopt;
  }
  return normalized(parts.negative ? -num : num, den);
}

std::optional<Rational> parse_rational_operand(std::string_view s) {
  const auto parts = split_decimal(trim(s));
  if (!parts) return std::nullopt;
  return to_rational(*parts);
}

// `\frac{a}{b}` (also \dfrac, \tfrac), optionally preceded by a sign.
std::optional<Rational> parse_latex_fraction(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s.front() == '-' || s.front() == '+')) {
    negative = s.front() == '-';
    s = trim(s.substr(1));
  }
  std::size_t head = 0;
  for (std::string_view cmd : {"\\frac", "\\dfrac", "\\tfrac"}) {
    if (s.substr(0, cmd.size()) == cmd) head = cmd.size();
  }
  if (head == 0 || head >= s.size() || s[head] != '{') return std::nullopt;
  const std::size_t close1 = match_brace(s, head);
  if (close1 == npos || close1 + 1 >= s.size() || s[close1 + 1] != '{')
    return std::nullopt;
  const std::size_t close2 = match_brace(s, close1 + 1);
  if (close2 != s.size() - 1) return std::nullopt;
  const auto num = parse_rational_operand(s.substr(head + 1, close1 - head - 1));
  const auto den =
      parse_rational_operand(s.substr(close1 + 2, close2 - close1 - 2));
  if (!num || !den) return std::nullopt;
  auto q = divide(*num, *den);
  if (q && negative) q->num = -q->num;
  return q;
}

std::optional<std::string> canonical_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (auto parts = split_decimal(s)) {
    return render_decimal(*parts);
  }
  if (auto frac = parse_latex_fraction(s)) return render(*frac);
  const std::size_t slash = s.find('/');
  if (slash != npos && s.find('/', slash + 1) == npos) {
    const auto num = parse_rational_operand(s.substr(0, slash));
    const auto den = parse_rational_operand(s.substr(slash + 1));
    if (num && den) {
      if (auto q = divide(*num, *den)) return render(*q);
    }
  }
  return std::nullopt;
}

// `1,234,567.5` style grouping (also LaTeX `{,}`); other commas are kept.
std::string strip_thousands(std::string_view s) {
  std::string plain;
  plain.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.compare(i, 3, "{,}") == 0) {
      plain.push_back(',');
      i += 2;
    } else {
      plain.push_back(s[i]);
    }
  }
  std::string_view body = plain;
  std::size_t pos = 0;
  if (!body.empty() && (body[0] == '+' || body[0] == '-')) pos = 1;
  const std::size_t dot = body.find('.');
  const std::string_view int_part = body.substr(pos, dot == npos ? npos : dot - pos);
  if (int_part.find(',') == npos) return std::string(s);
  // Leading group of 1-3 digits, then ",ddd" groups.
  std::size_t first = int_part.find(',');
  if (first == 0 || first > 3) return std::string(s);
  for (std::size_t i = 0; i < first; ++i)
    if (!is_digit(int_part[i])) return std::string(s);
  for (std::size_t i = first; i < int_part.size(); i += 4) {
    if (int_part[i] != ',' || i + 4 > int_part.size()) return std::string(s);
    for (std::size_t j = i + 1; j < i + 4; ++j)
      if (!is_digit(int_part[j])) return std::string(s);
  }
  std::string out;
  for (char c : plain)
    if (c != ',') out.push_back(c);
  return out;
}

std::string_view strip_wrapper(std::string_view s) {
  constexpr std::string_view text_cmd = "\\text{";
  if (s.substr(0, text_cmd.size()) == text_cmd) {
    const std::size_t open = text_cmd.size() - 1;
    if (match_brace(s, open) == s.size() - 1) {
      return s.substr(open + 1, s.size() - open - 2);
    }
  }
  if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::optional<double> numeric_value(std::string_view canonical) {
  auto parse = [](std::string_view t) -> std::optional<double> {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc{} || ptr != t.data() + t.size()) return std::nullopt;
    return v;
  };
  const std::size_t slash = canonical.find('/');
  if (slash == npos) {
    if (!split_decimal(canonical)) return std::nullopt;
    return parse(canonical);
  }
  const auto a = parse(canonical.substr(0, slash));
  const auto b = parse(canonical.substr(slash + 1));
  if (!a || !b || *b == 0.0) return std::nullopt;
  return *a / *b;
}

}  // namespace

ExtractionResult extract_final_answer(std::string_view text) {
  ExtractionResult result;
  std::size_t pos = text.rfind("\\box");
  while (pos != npos) {
    const std::size_t open = marker_open(text, pos);
    if (open != npos) {
      const std::size_t close = match_brace(text, open);
      if (close == npos) return result;
      result.found = true;
      result.raw = std::string(text.substr(open + 1, close - open - 1));
      result.char_span = CharSpan{open, close + 1};
      return result;
    }
    if (pos == 0) break;
    pos = text.rfind("\\box", pos - 1);
  }
  return result;
}

std::string canonicalize_answer(std::string_view raw) {
  std::string_view s = trim(strip_wrapper(trim(raw)));
  const std::string grouped = strip_thousands(s);
  if (auto number = canonical_number(grouped)) return *number;
  return std::string(s);
}

bool canonical_equal(std::string_view a, std::string_view b,
                     const GradeOptions& options) {
  if (a == b) return true;
  if (options.relative_tolerance <= 0.0) return false;
  const auto x = numeric_value(a);
  const auto y = numeric_value(b);
  if (!x || !y) return false;
  const double scale = std::max(std::abs(*x), std::abs(*y));
  return std::abs(*x - *y) <= options.relative_tolerance * scale;
}

GradeOutcome grade(std::string_view response, std::string_view reference,
                   const GradeOptions& options) {
  if (trim(reference).empty()) {
    throw InputError("grade: reference answer is empty");
  }
  GradeOutcome outcome;
  outcome.extracted = extract_final_answer(response);
  outcome.canonical_reference = canonicalize_answer(reference);
  if (!outcome.extracted.found) return outcome;
  outcome.canonical_extracted = canonicalize_answer(outcome.extracted.raw);
  outcome.delta = canonical_equal(outcome.canonical_extracted,
                                  outcome.canonical_reference, options)
                      ? 0
                      : 1;
  return outcome;
}

std::optional<std::size_t> first_correct_token_index(
    std::span<const std::string> tokens, std::string_view reference,
    const GradeOptions& options) {
  if (trim(reference).empty()) {
    throw InputError("first_correct_token_index: reference answer is empty");
  }
  const std::string text = evalio::detokenize(tokens);
  // Detokenization is prefix-consistent, so prefix k ends at ends[k-1].
  std::vector<std::size_t> ends;
  ends.reserve(tokens.size());
  {
    std::size_t offset = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i > 0 && !tokens[i - 1].empty() && !evalio::is_punct(tokens[i - 1][0]) &&
          !tokens[i].empty() && !evalio::is_punct(tokens[i][0])) {
        ++offset;
      }
      offset += tokens[i].size();
      ends.push_back(offset);
    }
  }
  const std::vector<Marker> markers = find_markers(text);
  const std::string canonical_reference = canonicalize_answer(reference);
  std::vector<char> marker_correct(markers.size(), 0);
  for (std::size_t m = 0; m < markers.size(); ++m) {
    if (markers[m].close == npos) continue;
    const auto raw = std::string_view(text).substr(
        markers[m].open + 1, markers[m].close - markers[m].open - 1);
    marker_correct[m] =
        canonical_equal(canonicalize_answer(raw), canonical_reference, options);
  }
  std::size_t next = 0;  // markers[0, next) have their brace inside the prefix
  for (std::size_t k = 0; k < ends.size(); ++k) {
    const std::size_t end = ends[k];
    while (next < markers.size() && markers[next].open < end) ++next;
    if (next == 0) continue;
    const Marker& last = markers[next - 1];
    if (last.close != npos && last.close < end && marker_correct[next - 1]) {
      return k;
    }
  }
  return std::nullopt;
}

std::optional<std::size_t> first_correct_token_index(
    std::string_view response, std::string_view reference,
    const GradeOptions& options) {
  const auto tokens = evalio::token_strings(response);
  return first_correct_token_index(std::span<const std::string>(tokens),
                                   reference, options);
}

}  // namespace dipo::grading
