#include "pbts/crypto.hpp"

#include <blst.h>
#include <sodium.h>

#include <cstring>
#include <memory>
#include <mutex>

#include "pbts/encoding.hpp"

namespace pbts {
namespace {

constexpr std::string_view kSigDst = "BLS_SIG_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_";
constexpr std::string_view kPopDst = "BLS_POP_BLS12381G2_XMD:SHA-256_SSWU_RO_POP_";

void ensure_sodium() {
  static std::once_flag once;
  std::call_once(once, [] {
    if (sodium_init() < 0) throw Error("libsodium initialisation failed");
  });
}

const byte* dst_ptr(std::string_view dst) {
  return reinterpret_cast<const byte*>(dst.data());
}

blst_scalar to_scalar(const std::array<std::uint8_t, 32>& be) {
  blst_scalar s;
  blst_scalar_from_bendian(&s, be.data());
  return s;
}

bool decode_pk(const PublicKey& pk, blst_p1_affine& out) {
  return blst_p1_uncompress(&out, pk.data.data()) == BLST_SUCCESS &&
         !blst_p1_affine_is_inf(&out) && blst_p1_affine_in_g1(&out);
}

bool decode_sig(const Signature& sig, blst_p2_affine& out) {
  return blst_p2_uncompress(&out, sig.data.data()) == BLST_SUCCESS &&
         blst_p2_affine_in_g2(&out);
}

Signature sign_with_dst(const SecretKey& sk, ByteView message,
                        std::string_view dst) {
  const blst_scalar scalar = to_scalar(sk.to_bytes());
  blst_p2 point;
  blst_hash_to_g2(&point, message.data(), message.size(), dst_ptr(dst),
                  dst.size(), nullptr, 0);
  blst_sign_pk_in_g1(&point, &point, &scalar);
  Signature out;
  blst_p2_compress(out.data.data(), &point);
  return out;
}

bool verify_with_dst(const PublicKey& pk, ByteView message,
                     const Signature& sig, std::string_view dst) {
  blst_p1_affine pk_aff;
  blst_p2_affine sig_aff;
  if (!decode_pk(pk, pk_aff) || !decode_sig(sig, sig_aff)) return false;
  return blst_core_verify_pk_in_g1(&pk_aff, &sig_aff, true, message.data(),
                                   message.size(), dst_ptr(dst), dst.size(),
                                   nullptr, 0) == BLST_SUCCESS;
}

}  // namespace

Digest hash(ByteView data) {
  ensure_sodium();
  Digest out;
  crypto_hash_sha256(out.data.data(), data.data(), data.size());
  return out;
}

SecretKey SecretKey::from_bytes(ByteView bytes) {
  if (bytes.size() != 32) throw Error("secret key must be 32 bytes");
  SecretKey sk;
  std::copy(bytes.begin(), bytes.end(), sk.scalar_.begin());
  const blst_scalar s = to_scalar(sk.scalar_);
  if (!blst_sk_check(&s)) throw Error("secret key is not a valid scalar");
  return sk;
}

PublicKey SecretKey::public_key() const {
  const blst_scalar s = to_scalar(scalar_);
  blst_p1 point;
  blst_sk_to_pk_in_g1(&point, &s);
  PublicKey pk;
  blst_p1_compress(pk.data.data(), &point);
  return pk;
}

KeyPair KeyPair::from_ikm(ByteView ikm) {
  if (ikm.size() < 32) throw Error("key material must be at least 32 bytes");
  blst_scalar s;
  blst_keygen(&s, ikm.data(), ikm.size(), nullptr, 0);
  SecretKey sk;
  blst_bendian_from_scalar(sk.scalar_.data(), &s);
  return KeyPair{sk, sk.public_key()};
}

KeyPair KeyPair::from_seed(std::uint64_t seed) {
  const Digest ikm = hash(Encoder().text("pbts-keygen").u64(seed).finish());
  return from_ikm(ikm.view());
}

KeyPair KeyPair::generate() {
  ensure_sodium();
  std::array<std::uint8_t, 32> ikm{};
  randombytes_buf(ikm.data(), ikm.size());
  return from_ikm(ikm);
}

Signature sign(const SecretKey& sk, ByteView message) {
  return sign_with_dst(sk, message, kSigDst);
}

bool verify(const PublicKey& pk, ByteView message, const Signature& sig) {
  return verify_with_dst(pk, message, sig, kSigDst);
}

Signature prove_possession(const SecretKey& sk) {
  return sign_with_dst(sk, sk.public_key().view(), kPopDst);
}

bool verify_possession(const PublicKey& pk, const Signature& proof) {
  return verify_with_dst(pk, pk.view(), proof, kPopDst);
}

bool is_valid_signature_encoding(const Signature& sig) {
  blst_p2_affine aff;
  return decode_sig(sig, aff);
}

AggregateSignature aggregate(std::span<const Signature> sigs) {
  if (sigs.empty()) throw Error("aggregate: empty signature list");
  blst_p2 acc;
  for (std::size_t i = 0; i < sigs.size(); ++i) {
    blst_p2_affine aff;
    if (blst_p2_uncompress(&aff, sigs[i].data.data()) != BLST_SUCCESS) {
      throw Error("aggregate: signature is not a curve point");
    }
    if (i == 0) {
      blst_p2_from_affine(&acc, &aff);
    } else {
      blst_p2_add_or_double_affine(&acc, &acc, &aff);
    }
  }
  AggregateSignature out;
  blst_p2_compress(out.bytes.data.data(), &acc);
  out.count = sigs.size();
  return out;
}

AggregateSignature aggregate(std::span<const SignedMessage> items) {
  std::vector<Signature> sigs;
  sigs.reserve(items.size());
  for (const auto& item : items) sigs.push_back(item.sig);
  return aggregate(std::span<const Signature>(sigs));
}

bool aggregate_verify(std::span<const KeyedMessage> pairs,
                      const AggregateSignature& agg) {
  if (pairs.empty() || agg.count != pairs.size()) return false;
  blst_p2_affine sig_aff;
  if (!decode_sig(agg.bytes, sig_aff)) return false;

  auto buffer = std::make_unique<std::uint8_t[]>(blst_pairing_sizeof());
  auto* ctx = reinterpret_cast<blst_pairing*>(buffer.get());
  blst_pairing_init(ctx, true, dst_ptr(kSigDst), kSigDst.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    blst_p1_affine pk_aff;
    if (!decode_pk(pairs[i].pk, pk_aff)) return false;
    const auto& msg = pairs[i].message;
    const blst_p2_affine* sig = i == 0 ? &sig_aff : nullptr;
    if (blst_pairing_aggregate_pk_in_g1(ctx, &pk_aff, sig, msg.data(),
                                        msg.size(), nullptr,
                                        0) != BLST_SUCCESS) {
      return false;
    }
  }
  blst_pairing_commit(ctx);
  return blst_pairing_finalverify(ctx, nullptr);
}

SessionSecretKey SessionSecretKey::from_seed(
    const std::array<std::uint8_t, 32>& seed) {
  ensure_sodium();
  SessionSecretKey sk;
  std::array<std::uint8_t, crypto_sign_PUBLICKEYBYTES> pk{};
  crypto_sign_seed_keypair(pk.data(), sk.expanded_.data(), seed.data());
  return sk;
}

SessionKeyPair SessionKeyPair::from_seed(
    const std::array<std::uint8_t, 32>& seed) {
  SessionKeyPair kp{SessionSecretKey::from_seed(seed), {}};
  crypto_sign_ed25519_sk_to_pk(kp.pk.data.data(), kp.sk.expanded().data());
  return kp;
}

SessionKeyPair SessionKeyPair::from_seed(std::uint64_t seed) {
  const Digest d = hash(Encoder().text("pbts-session-keygen").u64(seed).finish());
  return from_seed(d.data);
}

SessionSignature session_sign(const SessionSecretKey& sk, ByteView message) {
  ensure_sodium();
  SessionSignature sig;
  crypto_sign_detached(sig.data.data(), nullptr, message.data(),
                       message.size(), sk.expanded().data());
  return sig;
}

bool session_verify(const SessionPublicKey& pk, ByteView message,
                    const SessionSignature& sig) {
  ensure_sodium();
  return crypto_sign_verify_detached(sig.data.data(), message.data(),
                                     message.size(), pk.data.data()) == 0;
}

}  // namespace pbts
