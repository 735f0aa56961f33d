#pragma once

// Shared, dependency-free text helpers: ASCII case folding, the word
// tokenizer, and whole-word phrase matching with hyphen/space equivalence.
// Bytes >= 0x80 are treated as word characters so UTF-8 text is never split
// inside a code point.

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace biastest::text {

inline bool is_word_char(char c) {
  const auto u = static_cast<unsigned char>(c);
  return u >= 0x80 || (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') || (u >= 'A' && u <= 'Z');
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline char to_lower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline char to_upper(char c) {
  return (c >= 'a' && c <= 'z') ? static_cast<char>(c - 'a' + 'A') : c;
}

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = to_lower(c);
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

inline bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (to_lower(a[i]) != to_lower(b[i])) return false;
  }
  return true;
}

inline bool icontains(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return true;
  if (needle.size() > haystack.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (iequals(haystack.substr(i, needle.size()), needle)) return true;
  }
  return false;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

/// Splits on whitespace and punctuation, keeping apostrophes and hyphens that
/// sit between two word characters, and lowercases every token.
inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::string current;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (is_word_char(c)) {
      current += to_lower(c);
      continue;
    }
    const bool joiner = (c == '\'' || c == '-');
    if (joiner && !current.empty() && i + 1 < s.size() && is_word_char(s[i + 1])) {
      current += c;
      continue;
    }
    if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

/// A half-open byte range [begin, end) inside some text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const Span&) const = default;
};

/// Words of a term phrase; spaces and hyphens both separate words.
inline std::vector<std::string> phrase_words(std::string_view phrase) {
  std::vector<std::string> words;
  std::string current;
  for (char c : phrase) {
    if (is_space(c) || c == '-') {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

namespace detail {

// Attempts to match `words` starting exactly at `pos`; returns the end offset
// or npos. Between words, one or more spaces or a single hyphen are accepted.
inline std::size_t match_at(std::string_view s, std::size_t pos, const std::vector<std::string>& words) {
  std::size_t i = pos;
  for (std::size_t w = 0; w < words.size(); ++w) {
    const auto& word = words[w];
    if (i + word.size() > s.size() || !iequals(s.substr(i, word.size()), word)) {
      return std::string_view::npos;
    }
    i += word.size();
    if (w + 1 == words.size()) break;
    std::size_t j = i;
    if (j < s.size() && s[j] == '-') {
      ++j;
    } else {
      while (j < s.size() && is_space(s[j])) ++j;
    }
    if (j == i) return std::string_view::npos;
    i = j;
  }
  return i;
}

}  // namespace detail

/// All non-overlapping, case-insensitive whole-word occurrences of `phrase`.
/// A match may not be preceded or followed by a word character.
inline std::vector<Span> find_phrase(std::string_view s, std::string_view phrase) {
  std::vector<Span> spans;
  const auto words = phrase_words(phrase);
  if (words.empty()) return spans;
  const bool phrase_starts_with_word = is_word_char(words.front().front());
  const bool phrase_ends_with_word = is_word_char(words.back().back());
  std::size_t pos = 0;
  while (pos < s.size()) {
    const bool left_ok = pos == 0 || !phrase_starts_with_word || !is_word_char(s[pos - 1]);
    if (left_ok) {
      const std::size_t end = detail::match_at(s, pos, words);
      if (end != std::string_view::npos &&
          (end == s.size() || !phrase_ends_with_word || !is_word_char(s[end]))) {
        spans.push_back({pos, end});
        pos = end;
        continue;
      }
    }
    ++pos;
  }
  return spans;
}

inline bool contains_phrase(std::string_view s, std::string_view phrase) {
  return !find_phrase(s, phrase).empty();
}

/// Applies the casing of `original` to `replacement`: all-caps originals
/// (two or more letters) give an all-caps replacement, a capitalised original
/// capitalises the first letter, anything else keeps the replacement as is.
inline std::string match_case(std::string_view original, std::string_view replacement) {
  std::string out(replacement);
  std::size_t letters = 0;
  bool all_upper = true;
  for (char c : original) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      ++letters;
      if (c >= 'a' && c <= 'z') all_upper = false;
    }
  }
  if (letters >= 2 && all_upper) {
    for (auto& c : out) c = to_upper(c);
  } else if (!original.empty() && original.front() >= 'A' && original.front() <= 'Z' && !out.empty()) {
    out.front() = to_upper(out.front());
  }
  return out;
}

/// Replaces every whole-word occurrence of `phrase` with `replacement`,
/// carrying over each occurrence's capitalisation.
inline std::string replace_phrase(std::string_view s, std::string_view phrase, std::string_view replacement) {
  const auto spans = find_phrase(s, phrase);
  std::string out;
  std::size_t last = 0;
  for (const auto& span : spans) {
    out.append(s.substr(last, span.begin - last));
    out += match_case(s.substr(span.begin, span.end - span.begin), replacement);
    last = span.end;
  }
  out.append(s.substr(last));
  return out;
}

}  // namespace biastest::text
