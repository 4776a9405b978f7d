#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cinetraj {

/// Closed word list used by rule-based captions and the text encoders.
class Vocabulary {
 public:
  static const Vocabulary& captions();

  explicit Vocabulary(std::vector<std::string> words);

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  /// Id of `w`, or the unknown-token id.
  int id(std::string_view w) const;
  bool contains(std::string_view w) const;
  int unk_id() const { return 1; }

  /// Lower-cases, splits off ',' and '.', maps words to ids.
  std::vector<int> encode(std::string_view text) const;
  static std::vector<std::string> split_words(std::string_view text);

  /// FNV-1a over the newline-joined word list.
  std::uint64_t hash() const;

 private:
  std::vector<std::string> words_;
};

}  // namespace cinetraj
