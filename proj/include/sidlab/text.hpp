#pragma once

// UTF-8 handling backed by ICU: validation, code point decoding and
// full (multi-character) Unicode case folding.

#include <unicode/uchar.h>
#include <unicode/ustring.h>
#include <unicode/utf16.h>

#include <string>
#include <string_view>
#include <vector>

#include "sidlab/error.hpp"

namespace sidlab::text {

namespace detail {

inline std::u16string to_utf16(std::string_view s) {
  if (s.empty()) return {};
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  u_strFromUTF8(nullptr, 0, &needed, s.data(), static_cast<int32_t>(s.size()), &status);
  if (status != U_BUFFER_OVERFLOW_ERROR && U_FAILURE(status)) {
    throw Error(Errc::InvalidEncoding, "invalid UTF-8 byte sequence");
  }
  std::u16string out(static_cast<std::size_t>(needed), u'\0');
  status = U_ZERO_ERROR;
  u_strFromUTF8(reinterpret_cast<UChar*>(out.data()), needed, nullptr, s.data(),
                static_cast<int32_t>(s.size()), &status);
  if (U_FAILURE(status)) throw Error(Errc::InvalidEncoding, "invalid UTF-8 byte sequence");
  return out;
}

inline std::string to_utf8(std::u16string_view s) {
  if (s.empty()) return {};
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  u_strToUTF8(nullptr, 0, &needed, reinterpret_cast<const UChar*>(s.data()),
              static_cast<int32_t>(s.size()), &status);
  std::string out(static_cast<std::size_t>(needed), '\0');
  status = U_ZERO_ERROR;
  u_strToUTF8(out.data(), needed, nullptr, reinterpret_cast<const UChar*>(s.data()),
              static_cast<int32_t>(s.size()), &status);
  if (U_FAILURE(status)) throw Error(Errc::InvalidEncoding, "UTF-16 to UTF-8 conversion failed");
  return out;
}

}  // namespace detail

inline bool is_valid_utf8(std::string_view s) {
  if (s.empty()) return true;
  UErrorCode status = U_ZERO_ERROR;
  int32_t needed = 0;
  u_strFromUTF8(nullptr, 0, &needed, s.data(), static_cast<int32_t>(s.size()), &status);
  return status == U_BUFFER_OVERFLOW_ERROR || U_SUCCESS(status);
}

inline std::u32string code_points(std::string_view s) {
  std::u16string u16 = detail::to_utf16(s);
  std::u32string out;
  out.reserve(u16.size());
  int32_t i = 0;
  const auto n = static_cast<int32_t>(u16.size());
  while (i < n) {
    UChar32 c;
    U16_NEXT(u16.data(), i, n, c);
    out.push_back(static_cast<char32_t>(c));
  }
  return out;
}

// Full case folding (e.g. "Straße" folds to "strasse").
inline std::string fold_case(std::string_view s) {
  std::u16string u16 = detail::to_utf16(s);
  if (u16.empty()) return {};
  UErrorCode status = U_ZERO_ERROR;
  const auto len = static_cast<int32_t>(u16.size());
  int32_t needed = u_strFoldCase(nullptr, 0, reinterpret_cast<const UChar*>(u16.data()), len,
                                 U_FOLD_CASE_DEFAULT, &status);
  std::u16string folded(static_cast<std::size_t>(needed), u'\0');
  status = U_ZERO_ERROR;
  u_strFoldCase(reinterpret_cast<UChar*>(folded.data()), needed,
                reinterpret_cast<const UChar*>(u16.data()), len, U_FOLD_CASE_DEFAULT, &status);
  if (U_FAILURE(status)) throw Error(Errc::InvalidEncoding, "case folding failed");
  return detail::to_utf8(folded);
}

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '\f' || c == '\v'; };
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    std::size_t j = i;
    while (j < line.size() && !is_space(line[j])) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string_view trim(std::string_view s) {
  auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

}  // namespace sidlab::text
