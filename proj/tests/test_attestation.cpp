#include <doctest.h>

#include <random>
#include <set>

#include "pbts/attestation.hpp"
#include "pbts/encoding.hpp"

using namespace pbts;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(rng());
  return out;
}

struct Fixture {
  Bytes content;
  TorrentMeta t;
  KeyPair sender = keygen(1);
  KeyPair receiver = keygen(2);

  explicit Fixture(std::size_t len = 10 * 64 + 17, std::uint64_t piece = 64,
                   std::uint64_t seed = 5)
      : content(make(len, seed)), t(TorrentMeta::from_content(content, piece)) {}

  static Bytes make(std::size_t len, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return random_bytes(rng, len);
  }
  ByteView piece(std::uint64_t i) const { return t.piece_of(content, i); }
};

// Membership rule written independently of adaptive_indices.
std::vector<std::uint64_t> adaptive_oracle(std::uint64_t n, const Adaptive& p) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t i = 1; i <= n; ++i) {
    const bool head = i <= p.head;
    const bool tail = i + p.tail > n;
    const bool middle = i > p.head && (i - p.head - 1) % p.stride == 0;
    if (head || tail || middle) out.push_back(i);
  }
  return out;
}

Digest merkle_oracle(std::span<const Digest> xs) {
  // Recursive split at the largest power of two strictly below the size
  // reproduces the level-by-level pairing with promotion.
  if (xs.size() == 1) return xs[0];
  std::size_t split = 1;
  while (split * 2 < xs.size()) split *= 2;
  const Digest l = merkle_oracle(xs.first(split));
  const Digest r = merkle_oracle(xs.subspan(split));
  return hash(canonical_encode({{FieldTag::digest, Bytes(l.data.begin(), l.data.end())},
                                {FieldTag::digest, Bytes(r.data.begin(), r.data.end())}}));
}

}  // namespace

TEST_CASE("torrent metadata") {
  Fixture f;
  CHECK(f.t.piece_count() == 11);
  CHECK(f.t.piece_length(1) == 64);
  CHECK(f.t.piece_length(11) == 17);
  CHECK(f.t.hash_at(11) == hash(ByteView(f.content).subspan(640)));
  CHECK_THROWS_AS(f.t.hash_at(0), Error);
  CHECK_THROWS_AS(f.t.hash_at(12), Error);

  Encoder e;
  for (const auto& h : f.t.piece_hashes()) e.blob(FieldTag::digest, h);
  CHECK(f.t.infohash() == hash(e.u64(64).u64(f.content.size()).finish()));

  SUBCASE("json round trip") {
    Bootstrap b{{{"10.0.0.1", 6881}, {"node.example", 6882}}, ContractAddress{}};
    TorrentMeta t2(f.t.piece_hashes(), 64, f.content.size(), b);
    const auto back = TorrentMeta::from_json(t2.to_json());
    CHECK(back == t2);
    CHECK(back.bootstrap().nodes.size() == 2);
    CHECK(back.infohash() == f.t.infohash());
  }
  SUBCASE("invalid") {
    CHECK_THROWS_AS(TorrentMeta({}, 64, 0), Error);
    CHECK_THROWS_AS(TorrentMeta(f.t.piece_hashes(), 0, 100), Error);
    CHECK_THROWS_AS(TorrentMeta(f.t.piece_hashes(), 64, 640), Error);
    CHECK_THROWS_AS(TorrentMeta(f.t.piece_hashes(), 64, 705), Error);
    CHECK_THROWS_AS(TorrentMeta::from_content({}, 64), Error);
  }
}

TEST_CASE("epoch_of") {
  const EpochParams p{3600, 2};
  CHECK(epoch_of(0, p) == 0);
  CHECK(epoch_of(7200, p) == 2);
  CHECK(epoch_of(3599, p) == 0);
  CHECK(epoch_of(3600, p) == 1);
}

TEST_CASE("attest and verify") {
  Fixture f;
  const auto r = attest(f.receiver, f.sender.pk, f.piece(3), f.t, 3, 7);
  REQUIRE(r);
  CHECK(verify_receipt(r->pk_receiver, f.sender.pk, f.piece(3), f.t, 3, 7, r->sig));
  CHECK(verify_receipt(*r, f.t));
  CHECK(r->pk_receiver == f.receiver.pk);

  Bytes flipped(f.piece(3).begin(), f.piece(3).end());
  flipped[10] ^= 0x04;
  CHECK_FALSE(attest(f.receiver, f.sender.pk, flipped, f.t, 3, 7));
  CHECK_FALSE(attest(f.receiver, f.sender.pk, f.piece(3), f.t, 4, 7));
  CHECK_FALSE(attest(f.receiver, f.sender.pk, f.piece(11), f.t, 12, 7));
  CHECK_FALSE(attest(f.receiver, f.sender.pk, f.piece(1), f.t, 0, 7));

  CHECK_FALSE(verify_receipt(f.receiver.pk, keygen(3).pk, f.piece(3), f.t, 3, 7, r->sig));
  CHECK_FALSE(verify_receipt(f.receiver.pk, f.sender.pk, f.piece(3), f.t, 3, 8, r->sig));
  CHECK_FALSE(verify_receipt(f.receiver.pk, f.sender.pk, flipped, f.t, 3, 7, r->sig));

  CHECK(verify_receipt_hash_only(f.receiver.pk, f.sender.pk, f.t.hash_at(3), 3, f.t, 7, r->sig));
  CHECK_FALSE(verify_receipt_hash_only(f.receiver.pk, f.sender.pk, f.t.hash_at(4), 3, f.t, 7, r->sig));
  CHECK_FALSE(verify_receipt_hash_only(f.receiver.pk, f.sender.pk, f.t.hash_at(3), 99, f.t, 7, r->sig));

  CHECK(Receipt::decode(r->encode()) == *r);
}

TEST_CASE("receipt identity") {
  Fixture f;
  const auto a = *attest(f.receiver, f.sender.pk, f.piece(2), f.t, 2, 5);
  const auto b = *attest(f.receiver, f.sender.pk, f.piece(2), f.t, 2, 6);
  const auto c = *attest(keygen(9), f.sender.pk, f.piece(2), f.t, 2, 5);
  CHECK(receipt_id(a) == receipt_id(a));
  CHECK(receipt_id(a) != receipt_id(b));
  CHECK(receipt_id(a) != receipt_id(c));
  CHECK(receipt_id(a).encode() != receipt_id(c).encode());
}

TEST_CASE("binding: each signed field matters") {
  Fixture f;
  const auto r = *attest(f.receiver, f.sender.pk, f.piece(4), f.t, 4, 9);
  REQUIRE(verify(f.receiver.pk, r.message(), r.sig));

  auto mutate = [&](auto&& change) {
    Receipt m = r;
    change(m);
    return verify(f.receiver.pk, m.message(), r.sig);
  };
  CHECK_FALSE(mutate([](Receipt& m) { m.infohash.data[0] ^= 1; }));
  CHECK_FALSE(mutate([](Receipt& m) { m.pk_sender = keygen(77).pk; }));
  CHECK_FALSE(mutate([](Receipt& m) { m.piece_hash.data[31] ^= 1; }));
  CHECK_FALSE(mutate([](Receipt& m) { m.piece_index += 1; }));
  CHECK_FALSE(mutate([](Receipt& m) { m.epoch += 1; }));
  // pk_receiver is not in the message; it selects the verification key
  CHECK(mutate([](Receipt& m) { m.pk_receiver = keygen(78).pk; }));
}

TEST_CASE("adaptive indices") {
  const Adaptive p;
  const auto big = adaptive_indices(2560, p);
  CHECK(big.size() == 436);
  CHECK(big.size() == 200 + (2360 + 9) / 10);
  CHECK(big == adaptive_oracle(2560, p));

  CHECK(adaptive_indices(150, p).size() == 150);
  const auto n201 = adaptive_indices(201, p);
  CHECK(n201.size() == 201);
  CHECK(std::set<std::uint64_t>(n201.begin(), n201.end()).size() == 201);

  CHECK(adaptive_indices(1, p) == std::vector<std::uint64_t>{1});
  CHECK(adaptive_indices(202, p).size() == 201);
}

TEST_CASE("signature counts") {
  CHECK(signature_count(PerPieceBls{}, 2560).total() == 2560);
  CHECK(signature_count(Batch{10}, 2560).total() == 256);
  CHECK(signature_count(Adaptive{}, 2560).total() == 436);
  CHECK(signature_count(Session{}, 2560) == SignatureCount{1, 2560});
  CHECK(signature_count(Session{}, 2560, 4).long_term == 4);
  CHECK(signature_count(Batch{10}, 2561).total() == 257);
}

TEST_CASE("policy names") {
  for (const SigningPolicy& p : {SigningPolicy{PerPieceBls{}}, SigningPolicy{Adaptive{}},
                                 SigningPolicy{Adaptive{5, 3, 7}}, SigningPolicy{Batch{4}},
                                 SigningPolicy{Session{}}}) {
    CHECK(parse_policy(policy_name(p)) == p);
  }
  CHECK(parse_policy("batch") == SigningPolicy{Batch{10}});
  CHECK_THROWS_AS(parse_policy("batch:0"), Error);
  CHECK_THROWS_AS(parse_policy("adaptive:1:0:1"), Error);
  CHECK_THROWS_AS(parse_policy("ecdsa"), Error);
  CHECK_THROWS_AS(parse_policy("batch:x"), Error);
}

TEST_CASE("merkle root") {
  std::mt19937_64 rng(4);
  std::vector<Digest> leaves;
  for (int i = 0; i < 10; ++i) leaves.push_back(hash(random_bytes(rng, 8)));

  CHECK(merkle_root(std::span(leaves).first(1)) == leaves[0]);
  CHECK(merkle_root(std::span(leaves).first(2)) ==
        hash(Encoder().blob(FieldTag::digest, leaves[0]).blob(FieldTag::digest, leaves[1]).finish()));
  CHECK_THROWS_AS(merkle_root({}), Error);

  for (std::size_t n = 1; n <= leaves.size(); ++n) {
    CHECK(merkle_root(std::span(leaves).first(n)) == merkle_oracle(std::span(leaves).first(n)));
  }

  const Digest root = merkle_root(leaves);
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    for (int bit = 0; bit < 8; ++bit) {
      auto copy = leaves;
      copy[i].data[bit * 4] ^= static_cast<std::uint8_t>(1u << bit);
      CHECK(merkle_root(copy) != root);
    }
  }
  // no duplicate-last ambiguity: [a,b,c] differs from [a,b,c,c]
  auto three = std::vector<Digest>(leaves.begin(), leaves.begin() + 3);
  auto four = three;
  four.push_back(three.back());
  CHECK(merkle_root(three) != merkle_root(four));
}

TEST_CASE("batch commitments") {
  Fixture f;
  std::vector<ByteView> pieces;
  for (std::uint64_t i = 1; i <= 10; ++i) pieces.push_back(f.piece(i));

  const auto c = batch_attest(f.receiver, f.sender.pk, pieces, f.t, 1, 3);
  REQUIRE(c);
  CHECK(verify_batch(*c, f.t));
  CHECK(batch_bytes(*c, f.t) == 640);

  Bytes bad(pieces[4].begin(), pieces[4].end());
  bad[0] ^= 1;
  auto tampered = pieces;
  tampered[4] = bad;
  CHECK_FALSE(batch_attest(f.receiver, f.sender.pk, tampered, f.t, 1, 3));
  CHECK_FALSE(batch_attest(f.receiver, f.sender.pk, pieces, f.t, 3, 3));
  CHECK_FALSE(batch_attest(f.receiver, f.sender.pk, {}, f.t, 1, 3));

  SUBCASE("tail batch covers the short last piece") {
    std::vector<ByteView> tail{f.piece(10), f.piece(11)};
    const auto ct = batch_attest(f.receiver, f.sender.pk, tail, f.t, 10, 3);
    REQUIRE(ct);
    CHECK(verify_batch(*ct, f.t));
    CHECK(batch_bytes(*ct, f.t) == 64 + 17);
  }
  SUBCASE("altered fields") {
    auto m = *c;
    m.first = 2;
    CHECK_FALSE(verify_batch(m, f.t));
    m = *c;
    m.epoch = 4;
    CHECK_FALSE(verify_batch(m, f.t));
    m = *c;
    m.pk_sender = keygen(50).pk;
    CHECK_FALSE(verify_batch(m, f.t));
  }
  SUBCASE("k = 1 covers one piece like a per-piece receipt") {
    std::array<ByteView, 1> one{f.piece(5)};
    const auto c1 = batch_attest(f.receiver, f.sender.pk, one, f.t, 5, 3);
    REQUIRE(c1);
    CHECK(c1->root == f.t.hash_at(5));
    CHECK(verify_batch(*c1, f.t));
    CHECK(batch_bytes(*c1, f.t) == f.t.piece_length(5));
  }
}

TEST_CASE("session certificates and signatures") {
  Fixture f;
  std::mt19937_64 rng(17);
  auto [cert, session] = open_session(f.receiver, f.sender.pk, f.t, rng);
  CHECK(verify_cert(cert));

  auto swapped = cert;
  swapped.pk_session = session_keygen(4).pk;
  CHECK_FALSE(verify_cert(swapped));

  auto [cert2, session2] = open_session(f.receiver, f.sender.pk, f.t, rng);
  CHECK(cert2.sid != cert.sid);

  const auto sig = session_attest(session, cert, f.t, 3, 7);
  CHECK(session_verify(cert, f.t, 3, 7, sig));
  CHECK_FALSE(session_verify(cert, f.t, 3, 8, sig));
  CHECK_FALSE(session_verify(cert, f.t, 4, 7, sig));
  CHECK_FALSE(session_verify(cert2, f.t, 3, 7, sig));
  CHECK_FALSE(session_verify(cert, f.t, 12, 7, sig));
  CHECK_THROWS_AS(session_attest(session, cert, f.t, 12, 7), Error);

  SUBCASE("aggregated certificates across peers") {
    std::vector<SessionCert> certs;
    for (int j = 0; j < 3; ++j) {
      certs.push_back(open_session(keygen(100 + j), f.sender.pk, f.t, rng).first);
    }
    const auto agg = aggregate_session_certs(certs);
    CHECK(verify_session_certs(certs, agg));
    certs[1].sid.data[0] ^= 1;
    CHECK_FALSE(verify_session_certs(certs, agg));

    std::array<SessionCert, 1> single{cert};
    const auto one = aggregate_session_certs(single);
    CHECK(verify_session_certs(single, one) == verify_cert(cert));
    CHECK(one.bytes == cert.sig0);
    CHECK_THROWS_AS(aggregate_session_certs({}), Error);
  }
}

TEST_CASE("property: receipt round trip over random torrents") {
  std::mt19937_64 rng(41);
  const auto sender = keygen(1);
  const auto receiver = keygen(2);
  for (int trial = 0; trial < 40; ++trial) {
    const std::uint64_t piece = 1 + rng() % 32;
    const std::size_t len = 1 + rng() % (piece * 64);
    const Bytes content = random_bytes(rng, len);
    const auto t = TorrentMeta::from_content(content, piece);
    REQUIRE(t.piece_count() <= 64);
    const std::uint64_t i = 1 + rng() % t.piece_count();
    const std::uint64_t epoch = rng() % 1000;
    const auto r = attest(receiver, sender.pk, t.piece_of(content, i), t, i, epoch);
    REQUIRE(r);
    CHECK(verify_receipt(receiver.pk, sender.pk, t.piece_of(content, i), t, i, epoch, r->sig));

    Bytes wrong(t.piece_of(content, i).begin(), t.piece_of(content, i).end());
    wrong[rng() % wrong.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
    CHECK_FALSE(attest(receiver, sender.pk, wrong, t, i, epoch));
  }
}

TEST_CASE("property: hash-only verification agrees with full verification") {
  std::mt19937_64 rng(42);
  Fixture f(20 * 32, 32, 6);
  const auto r0 = *attest(f.receiver, f.sender.pk, f.piece(1), f.t, 1, 0);
  int agreed = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::uint64_t i = 1 + rng() % f.t.piece_count();
    const std::uint64_t epoch = rng() % 4;
    Signature sig = attest(f.receiver, f.sender.pk, f.piece(i), f.t, i, epoch)->sig;
    std::uint64_t claimed_i = i;
    std::uint64_t claimed_epoch = epoch;
    Bytes piece(f.piece(i).begin(), f.piece(i).end());
    switch (rng() % 5) {
      case 0: break;
      case 1: claimed_epoch ^= 1; break;
      case 2: piece[0] ^= 1; break;
      case 3: claimed_i = 1 + rng() % (f.t.piece_count() + 2); break;
      default: sig = r0.sig;
    }
    const bool full = verify_receipt(f.receiver.pk, f.sender.pk, piece, f.t, claimed_i,
                                     claimed_epoch, sig);
    const bool hashed = verify_receipt_hash_only(f.receiver.pk, f.sender.pk, hash(piece),
                                                 claimed_i, f.t, claimed_epoch, sig);
    agreed += full == hashed;
  }
  CHECK(agreed == 1000);
}

TEST_CASE("property: adaptive count algebra") {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 2000; ++trial) {
    const Adaptive p{1 + rng() % 20, 1 + rng() % 12, 1 + rng() % 20};
    const std::uint64_t n = 1 + rng() % 200;
    const auto got = adaptive_indices(n, p);
    REQUIRE(got == adaptive_oracle(n, p));
    CHECK(signature_count(p, n).total() == got.size());
    CHECK(got.size() <= n);
    // Equality holds up to head + tail + 1 pieces: one middle piece is always
    // signed, so only a middle of two or more lets the stride skip anything.
    const bool all = got.size() == n;
    const bool expected = n <= p.head + p.tail + 1 || p.stride == 1;
    CHECK(all == expected);
    CHECK(signature_count(Batch{1}, n) == signature_count(PerPieceBls{}, n));
  }
}
