#include "pacer/extraction.h"

#include <cctype>

#include "pacer/error.h"

namespace pacer {
namespace {

constexpr std::string_view kBoxed = "\\boxed{";

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

std::string trim_collapse(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(c);
  }
  return out;
}

bool is_plain_integer(std::string_view s) {
  size_t i = (!s.empty() && s[0] == '-') ? 1 : 0;
  if (i == s.size()) return false;
  for (; i < s.size(); ++i) {
    if (!is_digit(s[i])) return false;
  }
  return true;
}

std::string strip_leading_zeros(std::string_view s) {
  const bool negative = s[0] == '-';
  std::string_view digits = negative ? s.substr(1) : s;
  size_t first = digits.find_first_not_of('0');
  if (first == std::string_view::npos) return "0";
  std::string out(negative ? "-" : "");
  out.append(digits.substr(first));
  return out;
}

}  // namespace

std::optional<std::string> extract_boxed(std::string_view text) {
  const size_t open = text.rfind(kBoxed);
  if (open == std::string_view::npos) return std::nullopt;

  const size_t begin = open + kBoxed.size();
  int depth = 1;
  for (size_t i = begin; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\\') {
      ++i;  // escaped character never changes depth
      continue;
    }
    if (c == '{') {
      ++depth;
    } else if (c == '}') {
      if (--depth == 0) {
        return std::string(text.substr(begin, i - begin));
      }
    }
  }
  return std::nullopt;
}

std::optional<std::string> fallback_numeric(std::string_view text) {
  // Scan backwards for the last digit, then grow the span left over
  // digits and at most one '.' or '/' joining two digit runs.
  size_t end = text.size();
  while (end > 0 && !is_digit(text[end - 1])) --end;
  if (end == 0) return std::nullopt;

  size_t begin = end;
  while (begin > 0 && is_digit(text[begin - 1])) --begin;

  if (begin >= 2 && (text[begin - 1] == '.' || text[begin - 1] == '/') &&
      is_digit(text[begin - 2])) {
    size_t left = begin - 1;
    while (left > 0 && is_digit(text[left - 1])) --left;
    begin = left;
  }
  if (begin > 0 && text[begin - 1] == '-' &&
      (begin == 1 || !std::isalnum(static_cast<unsigned char>(text[begin - 2])))) {
    --begin;
  }
  return std::string(text.substr(begin, end - begin));
}

CanonicalAnswer canonicalize(std::string_view raw) {
  std::string s = trim_collapse(raw);
  // Peel $...$ layers until none remain so the result is a fixed point.
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
    s = trim_collapse(std::string_view(s).substr(1, s.size() - 2));
  }
  if (s.empty()) {
    throw Error(ErrorKind::kExtractionFailure,
                "answer is empty after normalization");
  }
  if (is_plain_integer(s)) {
    s = strip_leading_zeros(s);
  }
  return CanonicalAnswer{std::string(raw), std::move(s)};
}

std::optional<CanonicalAnswer> extract_answer(std::string_view text) {
  std::optional<std::string> raw = extract_boxed(text);
  if (raw) {
    try {
      return canonicalize(*raw);
    } catch (const Error&) {
      // empty box: fall through to the numeric heuristic
    }
  }
  raw = fallback_numeric(text);
  if (!raw) return std::nullopt;
  return canonicalize(*raw);
}

}  // namespace pacer
