#pragma once

// Canonical message framing. Every signed message in the library is built
// with Encoder so that field boundaries are unambiguous:
//
//   u32be field_count || { u8 tag || u32be length || bytes }*
//
// Encoding is injective over (tag, bytes) sequences.

#include <cstdint>
#include <string_view>
#include <vector>

#include "pbts/bytes.hpp"

namespace pbts {

enum class FieldTag : std::uint8_t {
  raw = 0x01,
  text = 0x02,
  u64 = 0x03,
  digest = 0x04,
  public_key = 0x05,
  session_key = 0x06,
  address = 0x07,
  signature = 0x08,
};

struct Field {
  FieldTag tag;
  Bytes value;
  bool operator==(const Field&) const = default;
};

/// Throws Error for lengths that do not fit the 4-byte length prefix.
void ensure_encodable_length(std::size_t length);

/// Throws Error if any field exceeds 2^32-1 bytes.
Bytes canonical_encode(const std::vector<Field>& fields);
/// Throws Error on truncated or trailing input.
std::vector<Field> canonical_decode(ByteView encoded);

class Encoder {
 public:
  Encoder& raw(ByteView v) { return push(FieldTag::raw, v); }
  Encoder& text(std::string_view s) { return push(FieldTag::text, as_bytes(s)); }
  Encoder& u64(std::uint64_t v);
  template <std::size_t N, class Tag>
  Encoder& blob(FieldTag tag, const Blob<N, Tag>& b) {
    return push(tag, b.view());
  }
  Encoder& push(FieldTag tag, ByteView v) {
    fields_.push_back({tag, Bytes(v.begin(), v.end())});
    return *this;
  }

  const std::vector<Field>& fields() const { return fields_; }
  Bytes finish() const { return canonical_encode(fields_); }

 private:
  std::vector<Field> fields_;
};

/// Reads fields back in order; every accessor throws Error on tag mismatch.
class Decoder {
 public:
  explicit Decoder(ByteView encoded) : fields_(canonical_decode(encoded)) {}

  std::size_t remaining() const { return fields_.size() - pos_; }
  const Field& next(FieldTag expected);
  std::string text();
  std::uint64_t u64();
  Bytes raw() { return next(FieldTag::raw).value; }
  template <class B>
  B blob(FieldTag tag) {
    auto b = B::from_view(next(tag).value);
    if (!b) throw Error("decoder: wrong blob length");
    return *b;
  }

 private:
  std::vector<Field> fields_;
  std::size_t pos_ = 0;
};

}  // namespace pbts
