#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace rcnn {

// Lowercases valid UTF-8 (Unicode full case mapping, root locale) and does
// nothing else. Throws EncodingError on malformed input.
std::string normalize(std::string_view text);

// Splits normalized text into pre-tokens at whitespace boundaries. Every
// whitespace byte starts a new piece and stays attached to the text that
// follows it ("a b" -> "a", " b"), so concatenating the pieces gives the
// input back.
std::vector<std::string> pre_tokenize(std::string_view text);

struct EncodedSequence {
  std::vector<int> ids;
  std::vector<bool> attention_mask;
  // Unpadded length, cls and sep included.
  std::size_t length = 0;
};

// Byte-level BPE. Ids are dense: the four specials first, then the 256 single
// bytes, then one id per learned merge.
class Tokenizer {
 public:
  static constexpr int kCls = 0;
  static constexpr int kPad = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kNumSpecials = 4;
  static constexpr int kFirstByte = kNumSpecials;

  // Untrained tokenizer: specials and bytes only.
  Tokenizer();

  // Normalizes the corpus, then greedily merges the most frequent adjacent
  // pair (ties: lexicographically smallest byte strings) until vocab_size ids
  // exist or no pair occurs at least twice.
  static Tokenizer train(std::span<const std::string> corpus, std::size_t vocab_size);

  // normalize -> BPE -> [cls] ... [sep], truncated to max_seq_len keeping the
  // head, right-padded with pad.
  EncodedSequence encode(std::string_view text, std::size_t max_seq_len) const;
  // BPE ids of already normalized text, no specials.
  std::vector<int> tokenize(std::string_view normalized) const;
  // Concatenated bytes of non-special ids. Throws VocabularyError on ids
  // outside the vocabulary.
  std::string decode(std::span<const int> ids) const;

  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<std::pair<int, int>>& merges() const { return merges_; }
  const std::string& token_bytes(int id) const;
  std::optional<int> token_id(std::string_view bytes) const;
  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  std::string to_json() const;
  static Tokenizer from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  void add_merge(int left, int right);
  static std::uint64_t pair_key(int left, int right) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
  }

  std::vector<std::string> tokens_;  // id -> bytes (specials hold their display string)
  std::unordered_map<std::string, int> ids_;  // bytes -> id, non-special tokens only
  std::vector<std::pair<int, int>> merges_;
  std::unordered_map<std::uint64_t, std::pair<int, int>> merge_rank_;  // pair -> (rank, merged id)
};

}  // namespace rcnn
