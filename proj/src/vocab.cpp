#include "cinetraj/vocab.hpp"

#include <algorithm>
#include <cctype>

namespace cinetraj {

const Vocabulary& Vocabulary::captions() {
  static const Vocabulary v({
      "<pad>", "<unk>", ",",       ".",       "the",     "camera",  "character", "while",
      "then",  "and",   "remains", "stays",   "static",  "trucks",  "booms",     "pushes",
      "pulls", "moves", "left",    "right",   "bottom",  "top",     "in",        "out",
      "up",    "down",  "forward", "backward",
  });
  return v;
}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {}

int Vocabulary::id(std::string_view w) const {
  const auto it = std::find(words_.begin(), words_.end(), w);
  return it == words_.end() ? unk_id() : static_cast<int>(it - words_.begin());
}

bool Vocabulary::contains(std::string_view w) const {
  return std::find(words_.begin(), words_.end(), w) != words_.end();
}

std::vector<std::string> Vocabulary::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (ch == ',' || ch == '.') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) ids.push_back(id(w));
  return ids;
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& w : words_) {
    for (char c : w) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    h ^= static_cast<unsigned char>('\n');
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace cinetraj
