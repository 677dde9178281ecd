#include <doctest.h>

#include <chrono>
#include <map>
#include <random>
#include <type_traits>

#include "pbts/crypto.hpp"
#include "pbts/encoding.hpp"

using namespace pbts;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

// A 96-byte string that decodes to a curve point but was not produced by any
// signer. Found by sampling until decompression succeeds.
Signature random_point_signature(std::mt19937_64& rng) {
  for (;;) {
    Signature s;
    for (auto& b : s.data) b = static_cast<std::uint8_t>(rng());
    // compressed flag set, infinity clear, both Fp coordinates below p
    s.data[0] = static_cast<std::uint8_t>(0x80 | (s.data[0] & 0x20) | (s.data[0] & 0x0f));
    s.data[48] &= 0x0f;
    try {
      std::array<Signature, 1> one{s};
      (void)aggregate(std::span<const Signature>(one));
      return s;
    } catch (const Error&) {
    }
  }
}

template <class F>
double time_ms(F&& f) {
  const auto start = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - start)
      .count();
}

}  // namespace

TEST_CASE("keygen is deterministic per seed") {
  const auto a = keygen(0);
  const auto b = keygen(0);
  CHECK(a.sk == b.sk);
  CHECK(a.pk == b.pk);
  CHECK(keygen(0).pk != keygen(1).pk);
  CHECK(a.sk.public_key() == a.pk);
}

TEST_CASE("sign and verify") {
  const auto kp = keygen(0);
  const auto other = keygen(1);
  const auto m = as_bytes("m");
  const auto sig = sign(kp.sk, m);

  CHECK(verify(kp.pk, m, sig));
  CHECK_FALSE(verify(other.pk, m, sig));
  CHECK(sign(kp.sk, m) == sig);

  SUBCASE("every single-bit flip of the first byte rejects") {
    Bytes msg = to_bytes("payload");
    const auto s = sign(kp.sk, msg);
    for (int bit = 0; bit < 8; ++bit) {
      Bytes flipped = msg;
      flipped[0] ^= static_cast<std::uint8_t>(1u << bit);
      CHECK_FALSE(verify(kp.pk, flipped, s));
    }
  }

  SUBCASE("empty message") {
    const auto s = sign(kp.sk, ByteView{});
    CHECK(verify(kp.pk, ByteView{}, s));
  }

  SUBCASE("malformed inputs verify false") {
    PublicKey junk_pk;
    junk_pk.data.fill(0xab);
    CHECK_FALSE(verify(junk_pk, m, sig));
    Signature junk_sig;
    junk_sig.data.fill(0x11);
    CHECK_FALSE(verify(kp.pk, m, junk_sig));
  }

  SUBCASE("malformed secret keys are rejected") {
    std::array<std::uint8_t, 32> zero{};
    CHECK_THROWS_AS(SecretKey::from_bytes(zero), Error);
    std::array<std::uint8_t, 32> big;
    big.fill(0xff);
    CHECK_THROWS_AS(SecretKey::from_bytes(big), Error);
    CHECK_THROWS_AS(SecretKey::from_bytes(ByteView(big).first(16)), Error);
    const auto bytes = kp.sk.to_bytes();
    CHECK(SecretKey::from_bytes(bytes) == kp.sk);
  }
}

TEST_CASE("proof of possession") {
  const auto kp = keygen(5);
  const auto pop = prove_possession(kp.sk);
  CHECK(verify_possession(kp.pk, pop));
  CHECK_FALSE(verify_possession(keygen(6).pk, pop));
  // A plain signature over the key bytes is not a proof (separate domain).
  CHECK_FALSE(verify_possession(kp.pk, sign(kp.sk, kp.pk.view())));
}

TEST_CASE("aggregate signatures") {
  std::vector<SignedMessage> items;
  std::vector<KeyedMessage> pairs;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const auto kp = keygen(10 + i);
    Bytes msg = Encoder().text("receipt").u64(i).finish();
    items.push_back({kp.pk, msg, sign(kp.sk, msg)});
    pairs.push_back({kp.pk, msg});
  }
  const auto agg = aggregate(items);
  CHECK(agg.count == 3);
  CHECK(aggregate_verify(pairs, agg));

  SUBCASE("order independent") {
    std::vector<KeyedMessage> reversed(pairs.rbegin(), pairs.rend());
    CHECK(aggregate_verify(reversed, agg));
    std::vector<SignedMessage> items_rev(items.rbegin(), items.rend());
    CHECK(aggregate(items_rev) == agg);
  }

  SUBCASE("one altered message rejects") {
    auto altered = pairs;
    altered[1].message.back() ^= 1;
    CHECK_FALSE(aggregate_verify(altered, agg));
  }

  SUBCASE("count mismatch rejects") {
    auto fewer = pairs;
    fewer.pop_back();
    CHECK_FALSE(aggregate_verify(fewer, agg));
    CHECK_FALSE(aggregate_verify(std::span<const KeyedMessage>{}, agg));
  }

  SUBCASE("single element behaves like plain verify") {
    const auto one = aggregate(std::span<const SignedMessage>(items).first(1));
    CHECK(aggregate_verify(std::span<const KeyedMessage>(pairs).first(1), one));
    CHECK(one.bytes == items[0].sig);
  }

  SUBCASE("forged element rejects") {
    std::mt19937_64 rng(3);
    auto forged = items;
    forged[2].sig = random_point_signature(rng);
    CHECK_FALSE(aggregate_verify(pairs, aggregate(forged)));
  }

  SUBCASE("repeated message under different keys") {
    std::vector<SignedMessage> same;
    std::vector<KeyedMessage> same_pairs;
    const Bytes msg = to_bytes("identical");
    for (std::uint64_t i = 0; i < 4; ++i) {
      const auto kp = keygen(40 + i);
      same.push_back({kp.pk, msg, sign(kp.sk, msg)});
      same_pairs.push_back({kp.pk, msg});
    }
    CHECK(aggregate_verify(same_pairs, aggregate(same)));
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(aggregate(std::span<const SignedMessage>{}), Error);
    auto bad = items;
    bad[0].sig.data.fill(0);
    CHECK_THROWS_AS(aggregate(bad), Error);
  }
}

TEST_CASE("session scheme") {
  const auto s = session_keygen(1);
  const auto m = as_bytes("piece");
  const auto sig = session_sign(s.sk, m);
  CHECK(session_verify(s.pk, m, sig));
  CHECK(session_sign(s.sk, m) == sig);
  CHECK_FALSE(session_verify(session_keygen(2).pk, m, sig));
  CHECK(session_keygen(1).pk == s.pk);

  SUBCASE("schemes are separated") {
    static_assert(!std::is_invocable_v<decltype(&verify), const PublicKey&,
                                       ByteView, const SessionSignature&>);
    static_assert(!std::is_convertible_v<SessionSignature, Signature>);

    const auto lt = keygen(1);
    Signature widened;
    std::copy(sig.data.begin(), sig.data.end(), widened.data.begin());
    CHECK_FALSE(verify(lt.pk, m, widened));

    const auto bls = sign(lt.sk, m);
    SessionSignature narrowed;
    std::copy_n(bls.data.begin(), narrowed.data.size(), narrowed.data.begin());
    CHECK_FALSE(session_verify(s.pk, m, narrowed));
  }
}

TEST_CASE("session signing is faster than long-term signing") {
  const auto lt = keygen(7);
  const auto s = session_keygen(7);
  const Bytes msg(96, 0x42);
  constexpr int kReps = 1000;
  const double lt_ms = time_ms([&] {
    for (int i = 0; i < kReps; ++i) (void)sign(lt.sk, msg);
  });
  const double s_ms = time_ms([&] {
    for (int i = 0; i < kReps; ++i) (void)session_sign(s.sk, msg);
  });
  MESSAGE("long-term/session sign ratio: " << lt_ms / s_ms);
  CHECK(lt_ms / s_ms > 1.0);
}

TEST_CASE("hash") {
  CHECK(hash(ByteView{}).hex() ==
        "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(hash("abc").hex() ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  Bytes p = to_bytes("piece bytes");
  CHECK(hash(p) == hash(p));
  p[3] ^= 0x10;
  CHECK(hash(p) != hash(to_bytes("piece bytes")));
}

TEST_CASE("canonical encoding") {
  CHECK(canonical_encode({}) == Bytes{0, 0, 0, 0});

  const auto ab_c = Encoder().text("ab").text("c").finish();
  const auto a_bc = Encoder().text("a").text("bc").finish();
  CHECK(ab_c != a_bc);

  const std::vector<Field> fields{{FieldTag::text, to_bytes("x")},
                                  {FieldTag::u64, Bytes(8, 1)},
                                  {FieldTag::raw, {}}};
  CHECK(canonical_decode(canonical_encode(fields)) == fields);

  Decoder d(Encoder().text("hi").u64(0x0102030405060708ull).finish());
  CHECK(d.text() == "hi");
  CHECK(d.u64() == 0x0102030405060708ull);
  CHECK(d.remaining() == 0);

  CHECK_THROWS_AS(ensure_encodable_length(std::size_t{1} << 32), Error);
  CHECK_NOTHROW(ensure_encodable_length((std::size_t{1} << 32) - 1));

  auto enc = canonical_encode(fields);
  enc.pop_back();
  CHECK_THROWS_AS(canonical_decode(enc), Error);
  auto extra = canonical_encode(fields);
  extra.push_back(0);
  CHECK_THROWS_AS(canonical_decode(extra), Error);
}

TEST_CASE("property: sign/verify correctness over random keys and messages") {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto kp = keygen(rng());
    const auto msg = random_bytes(rng, rng() % 80);
    REQUIRE(verify(kp.pk, msg, sign(kp.sk, msg)));
  }
}

TEST_CASE("property: aggregate correctness and single-element corruption") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 1 + rng() % 64;
    std::vector<SignedMessage> items;
    std::vector<KeyedMessage> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      const auto kp = keygen(rng());
      auto msg = random_bytes(rng, 1 + rng() % 40);
      items.push_back({kp.pk, msg, sign(kp.sk, msg)});
      pairs.push_back({kp.pk, msg});
    }
    REQUIRE(aggregate_verify(pairs, aggregate(items)));

    const std::size_t victim = rng() % n;
    switch (trial % 3) {
      case 0: {
        auto p = pairs;
        p[victim].message.push_back(0);
        CHECK_FALSE(aggregate_verify(p, aggregate(items)));
        break;
      }
      case 1: {
        auto p = pairs;
        p[victim].pk = keygen(rng()).pk;
        CHECK_FALSE(aggregate_verify(p, aggregate(items)));
        break;
      }
      default: {
        auto it = items;
        it[victim].sig = sign(keygen(rng()).sk, it[victim].message);
        CHECK_FALSE(aggregate_verify(pairs, aggregate(it)));
      }
    }
  }
}

TEST_CASE("property: canonical encoding is injective on small inputs") {
  std::mt19937_64 rng(5);
  std::map<Bytes, std::vector<Field>> seen;
  std::size_t collisions = 0;
  for (int i = 0; i < 100000; ++i) {
    std::vector<Field> fields(rng() % 4);
    for (auto& f : fields) {
      f.tag = static_cast<FieldTag>(1 + rng() % 3);
      f.value = random_bytes(rng, rng() % 3);
      for (auto& b : f.value) b &= 0x01;
    }
    auto [it, inserted] = seen.emplace(canonical_encode(fields), fields);
    if (!inserted && it->second != fields) ++collisions;
  }
  CHECK(collisions == 0);
  CHECK(seen.size() > 1000);
}
