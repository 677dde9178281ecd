#include "pbts/encoding.hpp"

#include <limits>

namespace pbts {
namespace {

void put_u32(Bytes& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) {
    out.push_back(static_cast<std::uint8_t>(v >> shift));
  }
}

std::uint32_t get_u32(ByteView in, std::size_t& pos) {
  if (in.size() - pos < 4) throw Error("canonical_decode: truncated length");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | in[pos++];
  return v;
}

}  // namespace

void ensure_encodable_length(std::size_t length) {
  if (length > std::numeric_limits<std::uint32_t>::max()) {
    throw Error("canonical_encode: field longer than 2^32-1 bytes");
  }
}

Bytes canonical_encode(const std::vector<Field>& fields) {
  ensure_encodable_length(fields.size());
  std::size_t total = 4;
  for (const auto& f : fields) {
    ensure_encodable_length(f.value.size());
    total += 5 + f.value.size();
  }
  Bytes out;
  out.reserve(total);
  put_u32(out, static_cast<std::uint32_t>(fields.size()));
  for (const auto& f : fields) {
    out.push_back(static_cast<std::uint8_t>(f.tag));
    put_u32(out, static_cast<std::uint32_t>(f.value.size()));
    out.insert(out.end(), f.value.begin(), f.value.end());
  }
  return out;
}

std::vector<Field> canonical_decode(ByteView in) {
  std::size_t pos = 0;
  const std::uint32_t count = get_u32(in, pos);
  std::vector<Field> fields;
  fields.reserve(std::min<std::size_t>(count, in.size() / 5));
  for (std::uint32_t i = 0; i < count; ++i) {
    if (pos >= in.size()) throw Error("canonical_decode: truncated tag");
    const auto tag = static_cast<FieldTag>(in[pos++]);
    const std::uint32_t len = get_u32(in, pos);
    if (in.size() - pos < len) throw Error("canonical_decode: truncated field");
    fields.push_back({tag, Bytes(in.begin() + pos, in.begin() + pos + len)});
    pos += len;
  }
  if (pos != in.size()) throw Error("canonical_decode: trailing bytes");
  return fields;
}

Encoder& Encoder::u64(std::uint64_t v) {
  std::array<std::uint8_t, 8> be{};
  for (int i = 7; i >= 0; --i, v >>= 8) be[i] = static_cast<std::uint8_t>(v);
  return push(FieldTag::u64, be);
}

const Field& Decoder::next(FieldTag expected) {
  if (pos_ >= fields_.size()) throw Error("decoder: no more fields");
  const Field& f = fields_[pos_++];
  if (f.tag != expected) throw Error("decoder: unexpected field tag");
  return f;
}

std::string Decoder::text() {
  const auto& v = next(FieldTag::text).value;
  return {v.begin(), v.end()};
}

std::uint64_t Decoder::u64() {
  const auto& v = next(FieldTag::u64).value;
  if (v.size() != 8) throw Error("decoder: u64 field must be 8 bytes");
  std::uint64_t out = 0;
  for (auto b : v) out = (out << 8) | b;
  return out;
}

}  // namespace pbts
