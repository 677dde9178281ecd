#pragma once

// Piece-transfer receipts and the cheaper signing policies built on them:
// adaptive frequency, Merkle-root batches, and session keys certified by the
// receiver's long-term key.
//
// Piece indices are 1-based throughout.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "pbts/contract.hpp"
#include "pbts/crypto.hpp"

namespace pbts {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  auto operator<=>(const Endpoint&) const = default;
};

struct Bootstrap {
  std::vector<Endpoint> nodes;
  std::optional<ContractAddress> contract;
  bool operator==(const Bootstrap&) const = default;
};

class TorrentMeta {
 public:
  /// Throws Error unless hashes is nonempty, piece_size > 0 and file_length
  /// spans exactly hashes.size() pieces.
  TorrentMeta(std::vector<Digest> hashes, std::uint64_t piece_size,
              std::uint64_t file_length, Bootstrap bootstrap = {});

  static TorrentMeta from_content(ByteView content, std::uint64_t piece_size,
                                  Bootstrap bootstrap = {});

  /// hash(canonical(h_1..h_n, piece_size, file_length)); bootstrap data is
  /// not covered.
  const Digest& infohash() const { return infohash_; }
  const std::vector<Digest>& piece_hashes() const { return hashes_; }
  std::uint64_t piece_size() const { return piece_size_; }
  std::uint64_t file_length() const { return file_length_; }
  std::uint64_t piece_count() const { return hashes_.size(); }
  const Bootstrap& bootstrap() const { return bootstrap_; }

  bool valid_index(std::uint64_t i) const { return i >= 1 && i <= hashes_.size(); }
  /// Throw Error for an index outside [1, n].
  const Digest& hash_at(std::uint64_t i) const;
  std::uint64_t piece_length(std::uint64_t i) const;
  /// Byte range of piece i within the full content.
  ByteView piece_of(ByteView content, std::uint64_t i) const;

  std::string to_json() const;
  static TorrentMeta from_json(std::string_view text);

  bool operator==(const TorrentMeta& o) const {
    return infohash_ == o.infohash_ && bootstrap_ == o.bootstrap_;
  }

 private:
  std::vector<Digest> hashes_;
  std::uint64_t piece_size_;
  std::uint64_t file_length_;
  Bootstrap bootstrap_;
  Digest infohash_;
};

struct EpochParams {
  std::uint64_t width = 3600;  // seconds
  std::uint64_t delta = 2;     // epochs
};

inline std::uint64_t epoch_of(std::uint64_t t_seconds, const EpochParams& p) {
  return t_seconds / p.width;
}

/// The message a receiver signs for one piece.
Bytes receipt_message(const Digest& infohash, const PublicKey& pk_sender,
                      const Digest& piece_hash, std::uint64_t index,
                      std::uint64_t epoch);

struct ReceiptID {
  Digest infohash;
  PublicKey pk_sender;
  PublicKey pk_receiver;
  Digest piece_hash;
  std::uint64_t piece_index = 0;
  std::uint64_t epoch = 0;

  auto operator<=>(const ReceiptID&) const = default;
  Bytes encode() const;
};

struct Receipt {
  Digest infohash;
  PublicKey pk_sender;
  PublicKey pk_receiver;
  Digest piece_hash;
  std::uint64_t piece_index = 0;
  std::uint64_t epoch = 0;
  Signature sig;

  bool operator==(const Receipt&) const = default;
  Bytes message() const {
    return receipt_message(infohash, pk_sender, piece_hash, piece_index, epoch);
  }
  Bytes encode() const;
  static Receipt decode(ByteView bytes);
};

ReceiptID receipt_id(const Receipt& r);

/// nullopt if i is out of range or the piece does not hash to h_i.
std::optional<Receipt> attest(const KeyPair& receiver, const PublicKey& pk_sender,
                              ByteView piece, const TorrentMeta& t,
                              std::uint64_t i, std::uint64_t epoch);

bool verify_receipt(const PublicKey& pk_receiver, const PublicKey& pk_sender,
                    ByteView piece, const TorrentMeta& t, std::uint64_t i,
                    std::uint64_t epoch, const Signature& sig);
/// As verify_receipt, given h_i instead of the piece bytes.
bool verify_receipt_hash_only(const PublicKey& pk_receiver,
                              const PublicKey& pk_sender, const Digest& h_i,
                              std::uint64_t i, const TorrentMeta& t,
                              std::uint64_t epoch, const Signature& sig);
bool verify_receipt(const Receipt& r, const TorrentMeta& t);

AggregateSignature aggregate_receipts(std::span<const Receipt> receipts);

// Signing policies.

struct PerPieceBls {
  bool operator==(const PerPieceBls&) const = default;
};
struct Adaptive {
  std::uint64_t head = 100;
  std::uint64_t stride = 10;
  std::uint64_t tail = 100;
  bool operator==(const Adaptive&) const = default;
};
struct Batch {
  std::uint64_t k = 10;
  bool operator==(const Batch&) const = default;
};
struct Session {
  bool operator==(const Session&) const = default;
};
using SigningPolicy = std::variant<PerPieceBls, Adaptive, Batch, Session>;

/// "per-piece", "adaptive", "adaptive:H:S:T", "batch", "batch:K", "session".
SigningPolicy parse_policy(std::string_view text);
std::string policy_name(const SigningPolicy& p);

/// Indices signed under the adaptive policy, ascending and without duplicates.
std::vector<std::uint64_t> adaptive_indices(std::uint64_t n, const Adaptive& p);

struct SignatureCount {
  std::uint64_t long_term = 0;
  std::uint64_t session = 0;
  std::uint64_t total() const { return long_term + session; }
  bool operator==(const SignatureCount&) const = default;
};

/// Signatures a receiver produces for n pieces. Session pays one long-term
/// certificate per peer plus n session signatures.
SignatureCount signature_count(const SigningPolicy& p, std::uint64_t n,
                               std::uint64_t peers = 1);

// Merkle batches.

/// Parent = hash(canonical(left, right)); an odd node is promoted unchanged.
/// Throws Error on an empty list.
Digest merkle_root(std::span<const Digest> leaves);

Bytes batch_message(const Digest& infohash, const PublicKey& pk_sender,
                    const Digest& root, std::uint64_t first, std::uint64_t k,
                    std::uint64_t epoch);

struct BatchCommitment {
  Digest infohash;
  PublicKey pk_sender;
  PublicKey pk_receiver;
  Digest root;
  std::uint64_t first = 0;
  std::uint64_t k = 0;
  std::uint64_t epoch = 0;
  Signature sig;

  bool operator==(const BatchCommitment&) const = default;
  Bytes message() const {
    return batch_message(infohash, pk_sender, root, first, k, epoch);
  }
};

/// nullopt if the range leaves [1, n] or any piece mismatches its hash.
std::optional<BatchCommitment> batch_attest(const KeyPair& receiver,
                                            const PublicKey& pk_sender,
                                            std::span<const ByteView> pieces,
                                            const TorrentMeta& t,
                                            std::uint64_t first,
                                            std::uint64_t epoch);
/// Recomputes the root from t and checks the signature.
bool verify_batch(const BatchCommitment& c, const TorrentMeta& t);
/// Bytes covered by the commitment's range.
std::uint64_t batch_bytes(const BatchCommitment& c, const TorrentMeta& t);

// Session keys.

using SessionId = Blob<32, struct SessionIdTag>;

Bytes cert_message(const SessionId& sid, const Digest& infohash,
                   const PublicKey& pk_sender, const SessionPublicKey& pk_session);

struct SessionCert {
  SessionId sid;
  Digest infohash;
  PublicKey pk_sender;
  PublicKey pk_receiver;
  SessionPublicKey pk_session;
  Signature sig0;

  bool operator==(const SessionCert&) const = default;
  Bytes message() const { return cert_message(sid, infohash, pk_sender, pk_session); }
};

std::pair<SessionCert, SessionKeyPair> open_session(const KeyPair& receiver,
                                                    const PublicKey& pk_sender,
                                                    const TorrentMeta& t,
                                                    const SessionId& sid,
                                                    SessionKeyPair session);
template <class Rng>
std::pair<SessionCert, SessionKeyPair> open_session(const KeyPair& receiver,
                                                    const PublicKey& pk_sender,
                                                    const TorrentMeta& t, Rng& rng) {
  SessionId sid;
  for (auto& b : sid.data) b = static_cast<std::uint8_t>(rng());
  return open_session(receiver, pk_sender, t, sid, SessionKeyPair::generate(rng));
}

bool verify_cert(const SessionCert& cert);

/// Throws Error for an index outside [1, n].
SessionSignature session_attest(const SessionKeyPair& session,
                                const SessionCert& cert, const TorrentMeta& t,
                                std::uint64_t i, std::uint64_t epoch);
bool session_verify(const SessionCert& cert, const TorrentMeta& t,
                    std::uint64_t i, std::uint64_t epoch,
                    const SessionSignature& sig);

/// Throws Error on an empty list.
AggregateSignature aggregate_session_certs(std::span<const SessionCert> certs);
bool verify_session_certs(std::span<const SessionCert> certs,
                          const AggregateSignature& agg);

}  // namespace pbts
