#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace museli {

struct Metadata {
  std::string title;
  std::string description;
  std::string location;

  bool operator==(const Metadata&) const = default;
};

// Byte-level vocabulary: id 0 = PAD (batch padding only, never emitted),
// id 1 = SEP, ids 2..257 = byte value + 2.
inline constexpr int kPadId = 0;
inline constexpr int kSepId = 1;
inline constexpr int kVocabSize = 258;

inline constexpr char32_t kDefaultSentinel = U'␟';

std::string utf8_encode(char32_t cp);

class Tokenizer {
 public:
  explicit Tokenizer(char32_t sentinel = kDefaultSentinel);

  char32_t sentinel() const { return sentinel_; }
  const std::string& sentinel_utf8() const { return sentinel_utf8_; }

  // title [SEP] description [SEP] location, fixed field order, always
  // exactly two sentinels. Throws std::invalid_argument if a field
  // contains the sentinel code point.
  std::string serialize_metadata(const Metadata& m) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(const std::vector<int>& ids) const;

 private:
  char32_t sentinel_;
  std::string sentinel_utf8_;
};

// Keeps the first max_len ids; shorter sequences pass through unchanged.
std::vector<int> trim_tokens(std::vector<int> ids, int max_len);

}  // namespace museli
