#include "museli/tokenizer.hpp"

#include <stdexcept>

namespace museli {

std::string utf8_encode(char32_t cp) {
  std::string out;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
  return out;
}

Tokenizer::Tokenizer(char32_t sentinel)
    : sentinel_(sentinel), sentinel_utf8_(utf8_encode(sentinel)) {}

std::string Tokenizer::serialize_metadata(const Metadata& m) const {
  for (const std::string* field : {&m.title, &m.description, &m.location}) {
    if (field->find(sentinel_utf8_) != std::string::npos) {
      throw std::invalid_argument(
          "metadata field contains the separator sentinel code point");
    }
  }
  return m.title + sentinel_utf8_ + m.description + sentinel_utf8_ + m.location;
}

std::vector<int> Tokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  ids.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, sentinel_utf8_.size(), sentinel_utf8_) == 0) {
      ids.push_back(kSepId);
      i += sentinel_utf8_.size();
    } else {
      ids.push_back(static_cast<int>(static_cast<unsigned char>(text[i])) + 2);
      ++i;
    }
  }
  return ids;
}

std::string Tokenizer::decode(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == kSepId) {
      out += sentinel_utf8_;
    } else if (id >= 2 && id < kVocabSize) {
      out.push_back(static_cast<char>(id - 2));
    } else {
      throw std::invalid_argument("token id out of range: " +
                                  std::to_string(id));
    }
  }
  return out;
}

std::vector<int> trim_tokens(std::vector<int> ids, int max_len) {
  if (max_len < 0) throw std::invalid_argument("max_len must be >= 0");
  if (static_cast<int>(ids.size()) > max_len) ids.resize(max_len);
  return ids;
}

}  // namespace museli
