#include <doctest.h>

#include <filesystem>
#include <random>

#include "pbts/enclave.hpp"

using namespace pbts;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

template <class B>
B random_blob(std::mt19937_64& rng) {
  B b;
  for (auto& x : b.data) x = static_cast<std::uint8_t>(rng());
  return b;
}

}  // namespace

TEST_CASE("measure") {
  const Bytes prog = to_bytes("tracker-v1");
  const Bytes cfg = to_bytes("window=3600");
  CHECK(measure(prog, cfg) == measure(prog, cfg));

  Bytes cfg2 = cfg;
  cfg2.back() ^= 1;
  CHECK(measure(prog, cfg) != measure(prog, cfg2));

  CHECK(measure(prog, {}) != measure(prog, cfg));
  // field boundaries matter
  CHECK(measure(to_bytes("ab"), to_bytes("c")) != measure(to_bytes("a"), to_bytes("bc")));
}

TEST_CASE("quotes") {
  const auto m = measure(to_bytes("tracker"), to_bytes("cfg"));
  const QuoteNonce nonce{};
  const auto q = attest_quote(m, nonce);
  const Allowlist allow{m};

  CHECK(verify_quote(q, allow));
  CHECK_FALSE(verify_quote(q, Allowlist{}));

  SUBCASE("altered measurement") {
    auto bad = q;
    bad.measurement.data[0] ^= 1;
    Allowlist both{m, bad.measurement};
    CHECK_FALSE(verify_quote(bad, both));
  }
  SUBCASE("allowlist gatekeeping") {
    const auto other = measure(to_bytes("tracker"), to_bytes("cfg2"));
    CHECK_FALSE(verify_quote(attest_quote(other, nonce), allow));
  }
  SUBCASE("nonce is bound") {
    auto bad = q;
    bad.nonce.data[15] ^= 1;
    CHECK_FALSE(verify_quote(bad, allow));
    QuoteNonce n2{};
    n2.data[0] = 7;
    CHECK(attest_quote(m, n2).nonce != q.nonce);
    CHECK(attest_quote(m, nonce).nonce == q.nonce);
  }
  SUBCASE("encoding round trip") {
    CHECK(AttestationQuote::decode(q.encode()) == q);
    Bytes trailing = q.encode();
    CHECK_THROWS_AS(AttestationQuote::decode(ByteView(trailing).first(trailing.size() - 1)),
                    Error);
  }
}

TEST_CASE("kms derivation") {
  const auto m = measure(to_bytes("tracker"), to_bytes("cfg"));
  const Allowlist allow{m};
  QuoteNonce n1{}, n2{};
  n2.data.fill(0xaa);

  const auto k1 = kms_derive(attest_quote(m, n1), allow);
  const auto k2 = kms_derive(attest_quote(m, n2), allow);
  REQUIRE(k1);
  REQUIRE(k2);
  CHECK(k1->key.pk == k2->key.pk);
  CHECK(k1->key.sk == k2->key.sk);
  CHECK(k1->measurement == m);

  const auto m2 = measure(to_bytes("tracker"), to_bytes("cfg-b"));
  Allowlist allow2{m, m2};
  const auto k3 = kms_derive(attest_quote(m2, n1), allow2);
  REQUIRE(k3);
  CHECK(k3->key.pk != k1->key.pk);

  CHECK_FALSE(kms_derive(attest_quote(m2, n1), allow));
  auto forged = attest_quote(m, n1);
  forged.sig.data[5] ^= 0x10;
  CHECK_FALSE(kms_derive(forged, allow));
}

TEST_CASE("enclave launch and authorize") {
  const Bytes prog = to_bytes("tracker");
  const Bytes cfg = to_bytes("gen-0");
  const auto m = measure(prog, cfg);
  const QuoteNonce nonce{};

  CHECK_FALSE(Enclave::launch(prog, cfg, Allowlist{}, nonce));

  const auto e = Enclave::launch(prog, cfg, Allowlist{m}, nonce);
  REQUIRE(e);
  CHECK(e->quote().measurement == m);
  const Bytes payload = to_bytes("write something");
  const auto tok = e->authorize(payload);
  CHECK(tok.quote == e->quote());
  CHECK(verify(e->public_key(), payload, tok.sig));
  CHECK(tok.fingerprint() == e->authorize(payload).fingerprint());
  CHECK(tok.fingerprint() != e->authorize(to_bytes("other")).fingerprint());
}

TEST_CASE("allowlist file") {
  Allowlist a{measure(to_bytes("a"), {}), measure(to_bytes("b"), {})};
  const auto round = Allowlist::from_json(a.to_json());
  CHECK(round.entries() == a.entries());

  const auto path = std::filesystem::temp_directory_path() / "pbts_allowlist_test.json";
  a.save(path);
  CHECK(Allowlist::load(path).entries() == a.entries());
  std::filesystem::remove(path);

  CHECK(Allowlist::from_json("[]").empty());
  CHECK_THROWS_AS(Allowlist::from_json("{}"), Error);
  CHECK_THROWS_AS(Allowlist::from_json("[\"zz\"]"), Error);
  CHECK_THROWS_AS(Allowlist::load("/nonexistent/allow.json"), Error);
}

TEST_CASE("property: derivation is a pure function of the measurement") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 1000; ++i) {
    const auto m = measure(random_bytes(rng, rng() % 40), random_bytes(rng, rng() % 40));
    const Allowlist allow{m};
    const auto a = kms_derive(attest_quote(m, random_blob<QuoteNonce>(rng)), allow);
    const auto b = kms_derive(attest_quote(m, random_blob<QuoteNonce>(rng)), allow);
    REQUIRE(a);
    REQUIRE(b);
    CHECK(a->key.pk == b->key.pk);
    // never for a measurement outside the allowlist
    const auto outside = measure(random_bytes(rng, 8), to_bytes("x"));
    CHECK_FALSE(kms_derive(attest_quote(outside, QuoteNonce{}), allow));
  }
}

TEST_CASE("property: quotes built without the root secret never verify") {
  std::mt19937_64 rng(12);
  const auto m = measure(to_bytes("tracker"), to_bytes("cfg"));
  const Allowlist allow{m};
  const auto impostor = keygen(99);
  int accepted = 0;
  for (int i = 0; i < 10000; ++i) {
    AttestationQuote q{m, random_blob<QuoteNonce>(rng), random_blob<Signature>(rng)};
    if (i % 10 == 0) {
      // well-formed signature, wrong signer
      q.sig = sign(impostor.sk, q.nonce.view());
    }
    accepted += verify_quote(q, allow);
  }
  CHECK(accepted == 0);
}
