#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pbts {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

/// Base for every error raised by this library for invalid input or misuse.
/// Domain failures (a rejected report, an unknown uid) are return values, not
/// exceptions.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_hex(ByteView data);
/// Accepts lower or upper case; returns nullopt on odd length or bad digits.
std::optional<Bytes> from_hex(std::string_view hex);

inline ByteView as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

inline Bytes to_bytes(std::string_view s) {
  auto v = as_bytes(s);
  return {v.begin(), v.end()};
}

/// Fixed-length byte string with a phantom tag so that a digest, a public key
/// and a contract address never convert into one another.
template <std::size_t N, class Tag>
struct Blob {
  static constexpr std::size_t size = N;
  std::array<std::uint8_t, N> data{};

  auto operator<=>(const Blob&) const = default;

  ByteView view() const { return {data.data(), N}; }
  std::string hex() const { return to_hex(view()); }

  static std::optional<Blob> from_view(ByteView v) {
    if (v.size() != N) return std::nullopt;
    Blob b;
    std::copy(v.begin(), v.end(), b.data.begin());
    return b;
  }
  static std::optional<Blob> from_hex(std::string_view h) {
    auto raw = pbts::from_hex(h);
    if (!raw) return std::nullopt;
    return from_view(*raw);
  }
};

}  // namespace pbts
