#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace pacer {

struct CanonicalAnswer {
  std::string raw;
  std::string canonical;

  friend bool operator==(const CanonicalAnswer& a, const CanonicalAnswer& b) {
    return a.canonical == b.canonical;
  }
};

// Content of the last `\boxed{...}` group. Braces nest; a backslash escapes
// the character after it. Absent when there is no `\boxed{` or the last one
// never closes.
std::optional<std::string> extract_boxed(std::string_view text);

// Last maximal integer / decimal / digits-slash-digits span, with an optional
// leading minus sign.
std::optional<std::string> fallback_numeric(std::string_view text);

// Trim, collapse whitespace runs, peel outer $...$ delimiters, drop leading
// zeros of plain integers. Throws kExtractionFailure if nothing remains.
CanonicalAnswer canonicalize(std::string_view raw);

// extract_boxed, then fallback_numeric, then canonicalize. Absent when no
// answer can be recovered.
std::optional<CanonicalAnswer> extract_answer(std::string_view text);

}  // namespace pacer
