#include "imagine/text.hpp"

#include <cctype>

namespace imagine {

namespace {
inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
}  // namespace

std::string normalize_text(std::string_view t) {
  std::string out;
  out.reserve(t.size());
  bool pending_space = false;
  for (char c : t) {
    if (is_space(c)) {
      if (!out.empty()) pending_space = true;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> split_words(std::string_view t) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : t) {
    if (is_space(c)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

}  // namespace imagine
