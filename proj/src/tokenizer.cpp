#include "rcnn/tokenizer.hpp"

#include <unicode/uchar.h>
#include <unicode/ustring.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <array>
#include <limits>
#include <map>

#include "rcnn/checkpoint.hpp"
#include "rcnn/config.hpp"
#include "rcnn/errors.hpp"

namespace rcnn {

namespace {

constexpr int kFormatVersion = 1;

struct SpecialInfo {
  const char* name;
  const char* token;
  int id;
};
constexpr std::array<SpecialInfo, 4> kSpecials{{
    {"cls", "<s>", Tokenizer::kCls},
    {"pad", "<pad>", Tokenizer::kPad},
    {"sep", "</s>", Tokenizer::kSep},
    {"mask", "<mask>", Tokenizer::kMask},
}};

bool is_ascii_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

void append_utf8(std::string& out, UChar32 cp) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  [[maybe_unused]] UBool err = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, cp, err);
  out.append(buf, static_cast<std::size_t>(len));
}

// Printable stand-ins for raw bytes so every vocabulary entry is valid UTF-8
// text: printable Latin-1 bytes map to themselves, the rest to U+0100 onwards
// (space becomes U+0120 'Ġ').
struct ByteMapping {
  std::array<UChar32, 256> to_cp{};
  std::map<UChar32, unsigned char> from_cp;

  ByteMapping() {
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    int next = 0;
    for (int b = 0; b < 256; ++b) {
      to_cp[b] = direct[b] ? b : 256 + next++;
      from_cp[to_cp[b]] = static_cast<unsigned char>(b);
    }
  }

  std::string display(const std::string& bytes) const {
    std::string out;
    for (unsigned char c : bytes) append_utf8(out, to_cp[c]);
    return out;
  }

  std::string bytes(std::string_view display) const {
    std::string out;
    int32_t i = 0;
    const auto* s = reinterpret_cast<const uint8_t*>(display.data());
    const auto n = static_cast<int32_t>(display.size());
    while (i < n) {
      UChar32 cp = 0;
      U8_NEXT(s, i, n, cp);
      auto it = from_cp.find(cp);
      if (cp < 0 || it == from_cp.end()) throw DataError("tokenizer file: token '" + std::string(display) + "' is not byte-mapped");
      out.push_back(static_cast<char>(it->second));
    }
    return out;
  }
};

const ByteMapping& byte_mapping() {
  static const ByteMapping m;
  return m;
}

}  // namespace

std::string normalize(std::string_view text) {
  const auto* s = reinterpret_cast<const uint8_t*>(text.data());
  if (text.size() > static_cast<std::size_t>(std::numeric_limits<int32_t>::max())) {
    throw EncodingError("text too long to normalize");
  }
  const auto n = static_cast<int32_t>(text.size());
  for (int32_t i = 0; i < n;) {
    const int32_t start = i;
    UChar32 cp = 0;
    U8_NEXT(s, i, n, cp);
    if (cp < 0) throw EncodingError("invalid UTF-8 at byte offset " + std::to_string(start));
  }
  if (n == 0) return {};

  UErrorCode status = U_ZERO_ERROR;
  int32_t wide_len = 0;
  u_strFromUTF8(nullptr, 0, &wide_len, text.data(), n, &status);
  status = U_ZERO_ERROR;
  std::u16string wide(static_cast<std::size_t>(wide_len), u'\0');
  u_strFromUTF8(wide.data(), wide_len, nullptr, text.data(), n, &status);
  if (U_FAILURE(status)) throw EncodingError(std::string("UTF-8 decode failed: ") + u_errorName(status));

  std::u16string lower(static_cast<std::size_t>(wide_len) + 16, u'\0');
  status = U_ZERO_ERROR;
  int32_t lower_len = u_strToLower(lower.data(), static_cast<int32_t>(lower.size()), wide.data(), wide_len, "", &status);
  if (status == U_BUFFER_OVERFLOW_ERROR) {
    lower.assign(static_cast<std::size_t>(lower_len), u'\0');
    status = U_ZERO_ERROR;
    lower_len = u_strToLower(lower.data(), lower_len, wide.data(), wide_len, "", &status);
  }
  if (U_FAILURE(status)) throw EncodingError(std::string("lowercasing failed: ") + u_errorName(status));

  int32_t out_len = 0;
  status = U_ZERO_ERROR;
  u_strToUTF8(nullptr, 0, &out_len, lower.data(), lower_len, &status);
  std::string out(static_cast<std::size_t>(out_len), '\0');
  status = U_ZERO_ERROR;
  u_strToUTF8(out.data(), out_len, nullptr, lower.data(), lower_len, &status);
  if (U_FAILURE(status)) throw EncodingError(std::string("UTF-8 encode failed: ") + u_errorName(status));
  return out;
}

std::vector<std::string> pre_tokenize(std::string_view text) {
  std::vector<std::string> pieces;
  std::string current;
  for (char c : text) {
    if (is_ascii_space(static_cast<unsigned char>(c)) && !current.empty()) {
      pieces.push_back(std::move(current));
      current.clear();
    }
    current.push_back(c);
  }
  if (!current.empty()) pieces.push_back(std::move(current));
  return pieces;
}

Tokenizer::Tokenizer() {
  for (const auto& sp : kSpecials) tokens_.emplace_back(sp.token);
  for (int b = 0; b < 256; ++b) {
    std::string bytes(1, static_cast<char>(b));
    ids_.emplace(bytes, static_cast<int>(tokens_.size()));
    tokens_.push_back(std::move(bytes));
  }
}

void Tokenizer::add_merge(int left, int right) {
  std::string bytes = tokens_[static_cast<std::size_t>(left)] + tokens_[static_cast<std::size_t>(right)];
  int id = 0;
  if (auto it = ids_.find(bytes); it != ids_.end()) {
    id = it->second;
  } else {
    id = static_cast<int>(tokens_.size());
    ids_.emplace(bytes, id);
    tokens_.push_back(std::move(bytes));
  }
  merge_rank_[pair_key(left, right)] = {static_cast<int>(merges_.size()), id};
  merges_.emplace_back(left, right);
}

Tokenizer Tokenizer::train(std::span<const std::string> corpus, std::size_t vocab_size) {
  if (vocab_size <= 256 + kNumSpecials) {
    throw ConfigError("vocab_size must exceed " + std::to_string(256 + kNumSpecials) + " (bytes + specials), got " +
                      std::to_string(vocab_size));
  }
  std::map<std::string, long> piece_counts;
  for (const auto& line : corpus) {
    for (auto& piece : pre_tokenize(normalize(line))) ++piece_counts[piece];
  }
  if (piece_counts.empty()) throw DataError("cannot train a tokenizer on an empty corpus");

  Tokenizer tok;
  std::vector<std::pair<std::vector<int>, long>> words;
  words.reserve(piece_counts.size());
  for (const auto& [piece, count] : piece_counts) {
    std::vector<int> ids;
    for (unsigned char c : piece) ids.push_back(kFirstByte + c);
    words.emplace_back(std::move(ids), count);
  }

  while (tok.vocab_size() < vocab_size) {
    std::unordered_map<std::uint64_t, long> pair_counts;
    for (const auto& [ids, count] : words) {
      for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[pair_key(ids[i], ids[i + 1])] += count;
    }
    std::uint64_t best = 0;
    long best_count = 0;
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      const auto& l = tok.tokens_[key >> 32];
      const auto& r = tok.tokens_[key & 0xFFFFFFFFu];
      const auto& bl = tok.tokens_[best >> 32];
      const auto& br = tok.tokens_[best & 0xFFFFFFFFu];
      if (std::tie(l, r) < std::tie(bl, br)) best = key;
    }
    if (best_count < 2) break;

    const int left = static_cast<int>(best >> 32);
    const int right = static_cast<int>(best & 0xFFFFFFFFu);
    tok.add_merge(left, right);
    const int merged = tok.merge_rank_.at(best).second;
    for (auto& [ids, count] : words) {
      std::vector<int> next;
      next.reserve(ids.size());
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i + 1 < ids.size() && ids[i] == left && ids[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(ids[i]);
        }
      }
      ids = std::move(next);
    }
  }
  return tok;
}

std::vector<int> Tokenizer::tokenize(std::string_view normalized) const {
  std::vector<int> out;
  for (const auto& piece : pre_tokenize(normalized)) {
    std::vector<int> symbols;
    symbols.reserve(piece.size());
    for (unsigned char c : piece) symbols.push_back(kFirstByte + c);
    while (symbols.size() > 1) {
      int best_rank = std::numeric_limits<int>::max();
      std::uint64_t best_key = 0;
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
        auto it = merge_rank_.find(pair_key(symbols[i], symbols[i + 1]));
        if (it != merge_rank_.end() && it->second.first < best_rank) {
          best_rank = it->second.first;
          best_key = it->first;
        }
      }
      if (best_rank == std::numeric_limits<int>::max()) break;
      const int left = static_cast<int>(best_key >> 32);
      const int right = static_cast<int>(best_key & 0xFFFFFFFFu);
      const int merged = merge_rank_.at(best_key).second;
      std::vector<int> next;
      next.reserve(symbols.size());
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
          next.push_back(merged);
          ++i;
        } else {
          next.push_back(symbols[i]);
        }
      }
      symbols = std::move(next);
    }
    out.insert(out.end(), symbols.begin(), symbols.end());
  }
  return out;
}

EncodedSequence Tokenizer::encode(std::string_view text, std::size_t max_seq_len) const {
  if (max_seq_len < 2) {
    throw ConfigError("max_seq_len must be at least 2 to hold cls and sep, got " + std::to_string(max_seq_len));
  }
  const auto tokens = tokenize(normalize(text));
  const std::size_t keep = std::min(tokens.size(), max_seq_len - 2);
  EncodedSequence seq;
  seq.ids.reserve(max_seq_len);
  seq.ids.push_back(kCls);
  seq.ids.insert(seq.ids.end(), tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep));
  seq.ids.push_back(kSep);
  seq.length = seq.ids.size();
  seq.attention_mask.assign(seq.length, true);
  seq.ids.resize(max_seq_len, kPad);
  seq.attention_mask.resize(max_seq_len, false);
  return seq;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
      throw VocabularyError("unknown token id " + std::to_string(id) + " (vocabulary has " +
                            std::to_string(tokens_.size()) + " ids)");
    }
    if (is_special(id)) continue;
    out += tokens_[static_cast<std::size_t>(id)];
  }
  return out;
}

const std::string& Tokenizer::token_bytes(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw VocabularyError("unknown token id " + std::to_string(id));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Tokenizer::token_id(std::string_view bytes) const {
  auto it = ids_.find(std::string(bytes));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

std::string Tokenizer::to_json() const {
  const auto& bm = byte_mapping();
  Json j;
  j["version"] = kFormatVersion;
  j["normalizer"] = "lowercase";
  Json specials;
  for (const auto& sp : kSpecials) specials[sp.name] = Json{{"id", sp.id}, {"token", sp.token}};
  j["specials"] = std::move(specials);
  Json vocab = Json::object();
  for (std::size_t id = kNumSpecials; id < tokens_.size(); ++id) vocab[bm.display(tokens_[id])] = id;
  j["vocab"] = std::move(vocab);
  Json merges = Json::array();
  for (const auto& [l, r] : merges_) {
    merges.push_back(bm.display(tokens_[static_cast<std::size_t>(l)]) + " " +
                     bm.display(tokens_[static_cast<std::size_t>(r)]));
  }
  j["merges"] = std::move(merges);
  return j.dump(2) + "\n";
}

Tokenizer Tokenizer::from_json(std::string_view text) {
  const auto& bm = byte_mapping();
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed tokenizer file: " + std::string(e.what()));
  }
  if (j.value("version", 0) != kFormatVersion) throw DataError("unsupported tokenizer file version");
  if (j.value("normalizer", std::string()) != "lowercase") throw DataError("unsupported tokenizer normalizer");
  for (const auto& sp : kSpecials) {
    if (j.at("specials").at(sp.name).at("id").get<int>() != sp.id) {
      throw DataError(std::string("tokenizer file: special '") + sp.name + "' has an unexpected id");
    }
  }
  Tokenizer tok;
  for (const auto& m : j.at("merges")) {
    const auto s = m.get<std::string>();
    const auto space = s.find(' ');
    if (space == std::string::npos) throw DataError("tokenizer file: malformed merge '" + s + "'");
    auto l = tok.token_id(bm.bytes(std::string_view(s).substr(0, space)));
    auto r = tok.token_id(bm.bytes(std::string_view(s).substr(space + 1)));
    if (!l || !r) throw DataError("tokenizer file: merge '" + s + "' uses a token not yet in the vocabulary");
    tok.add_merge(*l, *r);
  }
  const auto& vocab = j.at("vocab");
  if (vocab.size() + kNumSpecials != tok.vocab_size()) throw DataError("tokenizer file: vocab disagrees with merges");
  for (const auto& [display, id] : vocab.items()) {
    auto found = tok.token_id(bm.bytes(display));
    if (!found || *found != id.get<int>()) throw DataError("tokenizer file: vocab entry '" + display + "' disagrees with merges");
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

Tokenizer Tokenizer::load(const std::filesystem::path& path) { return from_json(read_file(path)); }

}  // namespace rcnn
