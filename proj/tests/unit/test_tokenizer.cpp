#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <random>

#include "rcnn/checkpoint.hpp"
#include "rcnn/errors.hpp"
#include "rcnn/tokenizer.hpp"

using namespace rcnn;

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

void append_cp(std::string& s, char32_t cp) {
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    s.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Random valid UTF-8 mixing ASCII, whitespace, Latin, Greek, Cyrillic, CJK,
// emoji and arbitrary scalar values.
std::string random_utf8(std::mt19937_64& rng) {
  static const std::vector<std::pair<char32_t, char32_t>> ranges{
      {0x20, 0x7E}, {0x09, 0x0D}, {0xC0, 0x24F}, {0x370, 0x3FF}, {0x400, 0x4FF},
      {0x4E00, 0x4FFF}, {0x1F600, 0x1F64F}, {0x1, 0xD7FF}, {0xE000, 0x10FFFF}};
  std::uniform_int_distribution<int> len_dist(0, 40);
  std::uniform_int_distribution<std::size_t> range_dist(0, ranges.size() - 1);
  std::string s;
  const int len = len_dist(rng);
  for (int i = 0; i < len; ++i) {
    const auto& [lo, hi] = ranges[range_dist(rng)];
    std::uniform_int_distribution<std::uint32_t> cp_dist(lo, hi);
    append_cp(s, cp_dist(rng));
  }
  return s;
}

}  // namespace

TEST_CASE("normalize lowercases and nothing else") {
  CHECK(normalize("SARCASM!!! #NoT") == "sarcasm!!! #not");
  CHECK(normalize("") == "");
  CHECK(normalize("Γεια ΣΟΥ") == "γεια σου");
  CHECK(normalize("  <b>Running</b> 😀 ") == "  <b>running</b> 😀 ");
  CHECK_THROWS_AS(normalize("bad \xC3\x28 byte"), EncodingError);
  CHECK_THROWS_AS(normalize("\xED\xA0\x80"), EncodingError);  // surrogate
}

TEST_CASE("pre_tokenize keeps a leading space on each word") {
  CHECK(pre_tokenize("abab abab") == std::vector<std::string>{"abab", " abab"});
  CHECK(pre_tokenize("a  b") == std::vector<std::string>{"a", " ", " b"});
  CHECK(pre_tokenize(" x") == std::vector<std::string>{" x"});
  CHECK(pre_tokenize("").empty());
}

TEST_CASE("bpe on 'aaaa' learns (a,a) first") {
  std::vector<std::string> corpus{"aaaa"};
  Tokenizer tok = Tokenizer::train(corpus, 262);
  REQUIRE(!tok.merges().empty());
  const auto [l, r] = tok.merges()[0];
  CHECK(tok.token_bytes(l) == "a");
  CHECK(tok.token_bytes(r) == "a");
  // [aa, aa] occurs once, so training stops after one merge.
  CHECK(tok.merges().size() == 1);
  CHECK(tok.vocab_size() == 261);
}

TEST_CASE("bpe with no repeated pair keeps bytes and specials only") {
  std::vector<std::string> corpus{"abcdefg"};
  Tokenizer tok = Tokenizer::train(corpus, 1000);
  CHECK(tok.merges().empty());
  CHECK(tok.vocab_size() == 260);
}

TEST_CASE("bpe on 'abab abab' matches the hand-traced merge table") {
  // Pieces "abab" and " abab": (a,b) x4, (b,a) x2, (' ',a) x1 -> merge ab.
  // Then [ab,ab] and [' ',ab,ab]: (ab,ab) x2, (' ',ab) x1 -> merge abab.
  std::vector<std::string> corpus{"abab abab"};
  Tokenizer tok = Tokenizer::train(corpus, 262);
  REQUIRE(tok.merges().size() == 2);
  CHECK(tok.token_bytes(tok.merges()[0].first) == "a");
  CHECK(tok.token_bytes(tok.merges()[0].second) == "b");
  CHECK(tok.token_bytes(tok.merges()[1].first) == "ab");
  CHECK(tok.token_bytes(tok.merges()[1].second) == "ab");
  CHECK(*tok.token_id("ab") == 260);
  CHECK(*tok.token_id("abab") == 261);

  auto seq = tok.encode("abab", 8);
  CHECK(seq.ids == std::vector<int>{Tokenizer::kCls, 261, Tokenizer::kSep, 1, 1, 1, 1, 1});
  CHECK(seq.length == 3);
  // " abab" -> [' ', abab]; "aba" -> [ab, a]
  CHECK(tok.tokenize(" abab") == std::vector<int>{Tokenizer::kFirstByte + ' ', 261});
  CHECK(tok.tokenize("aba") == std::vector<int>{260, Tokenizer::kFirstByte + 'a'});
}

TEST_CASE("bpe training errors") {
  std::vector<std::string> empty;
  CHECK_THROWS_AS(Tokenizer::train(empty, 300), DataError);
  std::vector<std::string> blank{"", ""};
  CHECK_THROWS_AS(Tokenizer::train(blank, 300), DataError);
  std::vector<std::string> corpus{"aaaa"};
  CHECK_THROWS_AS(Tokenizer::train(corpus, 260), ConfigError);
}

TEST_CASE("encode contracts") {
  auto corpus = read_lines(RCNN_TEST_DATA "/toy_corpus.txt");
  Tokenizer tok = Tokenizer::train(corpus, 400);

  auto empty = tok.encode("", 6);
  CHECK(empty.ids == std::vector<int>{Tokenizer::kCls, Tokenizer::kSep, 1, 1, 1, 1});
  CHECK(empty.attention_mask == std::vector<bool>{true, true, false, false, false, false});

  const std::string text = "Oh GREAT, the weather is broken again";
  const auto n = tok.tokenize(normalize(text)).size();
  const std::size_t max_len = n + 2 - 5;
  auto cut = tok.encode(text, max_len);
  CHECK(cut.ids.size() == max_len);
  CHECK(cut.length == max_len);
  CHECK(cut.ids.front() == Tokenizer::kCls);
  CHECK(cut.ids.back() == Tokenizer::kSep);

  CHECK_THROWS_AS(tok.encode("x", 1), ConfigError);
}

TEST_CASE("decode") {
  Tokenizer tok;
  std::vector<int> specials{Tokenizer::kCls, Tokenizer::kSep};
  CHECK(tok.decode(specials) == "");
  std::vector<int> bad{99999};
  CHECK_THROWS_AS(tok.decode(bad), VocabularyError);
  std::vector<int> neg{-1};
  CHECK_THROWS_AS(tok.decode(neg), VocabularyError);
}

TEST_CASE("round trip over 1000 random UTF-8 strings, prefix masks") {
  std::mt19937_64 rng(77);
  std::vector<std::string> corpus;
  for (int i = 0; i < 200; ++i) corpus.push_back(random_utf8(rng));
  corpus.push_back("the quick brown fox jumps over the lazy dog the quick brown fox");
  Tokenizer tok = Tokenizer::train(corpus, 600);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_utf8(rng);
    const std::string norm = normalize(s);
    CAPTURE(s);
    CHECK(normalize(norm) == norm);
    auto seq = tok.encode(norm, 4096);
    CHECK(tok.decode(seq.ids) == norm);
    // prefix of trues then falses
    bool seen_false = false;
    for (bool m : seq.attention_mask) {
      if (!m) seen_false = true;
      CHECK(!(seen_false && m));
    }
    CHECK(seq.ids[seq.length - 1] == Tokenizer::kSep);
  }
}

TEST_CASE("training is deterministic and serialization reloads byte-exact") {
  auto corpus = read_lines(RCNN_TEST_DATA "/toy_corpus.txt");
  Tokenizer a = Tokenizer::train(corpus, 500);
  Tokenizer b = Tokenizer::train(corpus, 500);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.merges() == b.merges());

  const auto dir = std::filesystem::temp_directory_path() / "rcnn_tok_test";
  std::filesystem::create_directories(dir);
  a.save(dir / "tokenizer.json");
  Tokenizer c = Tokenizer::load(dir / "tokenizer.json");
  c.save(dir / "tokenizer2.json");
  CHECK(read_file(dir / "tokenizer.json") == read_file(dir / "tokenizer2.json"));
  CHECK(c.vocab_size() == a.vocab_size());
  CHECK(c.encode("yeah right, my boss will totally fix it", 64).ids ==
        a.encode("yeah right, my boss will totally fix it", 64).ids);
  std::filesystem::remove_all(dir);
}
