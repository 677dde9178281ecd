#pragma once

// Hashing plus the two signature schemes used throughout:
//
//  * long-term: BLS over BLS12-381 (public keys in G1, signatures in G2),
//    proof-of-possession ciphersuite, so aggregates over repeated messages
//    are safe once every key has proven possession;
//  * session: Ed25519, fast and deterministic, never aggregated.
//
// Key material is immutable after construction and every function here is
// safe to call concurrently.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pbts/bytes.hpp"

namespace pbts {

using Digest = Blob<32, struct DigestTag>;
using PublicKey = Blob<48, struct PublicKeyTag>;
using Signature = Blob<96, struct SignatureTag>;
using SessionPublicKey = Blob<32, struct SessionPublicKeyTag>;
using SessionSignature = Blob<64, struct SessionSignatureTag>;

/// SHA-256.
Digest hash(ByteView data);
inline Digest hash(std::string_view s) { return hash(as_bytes(s)); }

class SecretKey {
 public:
  /// Throws Error unless bytes are a canonical non-zero scalar below the
  /// group order.
  static SecretKey from_bytes(ByteView bytes);

  std::array<std::uint8_t, 32> to_bytes() const { return scalar_; }
  PublicKey public_key() const;

  bool operator==(const SecretKey&) const = default;

 private:
  SecretKey() = default;
  friend struct KeyPair;
  std::array<std::uint8_t, 32> scalar_{};
};

struct KeyPair {
  SecretKey sk;
  PublicKey pk;

  /// Derives from input keying material (at least 32 bytes).
  static KeyPair from_ikm(ByteView ikm);
  /// Reproducible keys for tests and simulations.
  static KeyPair from_seed(std::uint64_t seed);
  /// Fresh keys from the operating system's entropy source.
  static KeyPair generate();
  template <class Rng>
  static KeyPair generate(Rng& rng) {
    std::array<std::uint8_t, 32> ikm{};
    for (auto& b : ikm) b = static_cast<std::uint8_t>(rng());
    return from_ikm(ikm);
  }
};

inline KeyPair keygen(std::uint64_t seed) { return KeyPair::from_seed(seed); }

Signature sign(const SecretKey& sk, ByteView message);
/// Never throws: malformed keys or signatures verify as false.
bool verify(const PublicKey& pk, ByteView message, const Signature& sig);

/// Proof of possession: a signature over the public key under a separate
/// domain tag. Registration requires one to rule out rogue-key aggregates.
Signature prove_possession(const SecretKey& sk);
bool verify_possession(const PublicKey& pk, const Signature& proof);

/// Returns true if the bytes decode to a point in the signature group.
bool is_valid_signature_encoding(const Signature& sig);

struct AggregateSignature {
  Signature bytes;
  std::size_t count = 0;
  bool operator==(const AggregateSignature&) const = default;
};

struct SignedMessage {
  PublicKey pk;
  Bytes message;
  Signature sig;
};

struct KeyedMessage {
  PublicKey pk;
  Bytes message;
};

/// Sums the signatures. Throws Error on an empty list or a signature that does
/// not decode to a curve point; validity of each signature is not checked.
AggregateSignature aggregate(std::span<const SignedMessage> items);
AggregateSignature aggregate(std::span<const Signature> sigs);

/// True iff agg covers every (pk, message) pair. The aggregate is a group sum,
/// so the order of the pairs does not matter. Count mismatch or an empty list
/// verify as false.
bool aggregate_verify(std::span<const KeyedMessage> pairs,
                      const AggregateSignature& agg);

// Session scheme.

class SessionSecretKey {
 public:
  static SessionSecretKey from_seed(const std::array<std::uint8_t, 32>& seed);
  const std::array<std::uint8_t, 64>& expanded() const { return expanded_; }

 private:
  std::array<std::uint8_t, 64> expanded_{};
};

struct SessionKeyPair {
  SessionSecretKey sk;
  SessionPublicKey pk;

  static SessionKeyPair from_seed(const std::array<std::uint8_t, 32>& seed);
  static SessionKeyPair from_seed(std::uint64_t seed);
  template <class Rng>
  static SessionKeyPair generate(Rng& rng) {
    std::array<std::uint8_t, 32> seed{};
    for (auto& b : seed) b = static_cast<std::uint8_t>(rng());
    return from_seed(seed);
  }
};

inline SessionKeyPair session_keygen(std::uint64_t seed) {
  return SessionKeyPair::from_seed(seed);
}
SessionSignature session_sign(const SessionSecretKey& sk, ByteView message);
bool session_verify(const SessionPublicKey& pk, ByteView message,
                    const SessionSignature& sig);

}  // namespace pbts
