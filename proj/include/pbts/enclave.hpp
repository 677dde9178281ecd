#pragma once

// Mock trusted-execution layer. A process-wide "hardware root" keypair stands
// in for vendor attestation infrastructure; a process-wide KMS secret stands in
// for the attested key-management service that hands tracker root keys to
// allowlisted builds.

#include <filesystem>
#include <optional>
#include <set>
#include <string>

#include "pbts/crypto.hpp"

namespace pbts {

using Measurement = Blob<32, struct MeasurementTag>;
using QuoteNonce = Blob<16, struct QuoteNonceTag>;

struct AttestationQuote {
  Measurement measurement;
  QuoteNonce nonce;
  Signature sig;

  bool operator==(const AttestationQuote&) const = default;
  Bytes encode() const;
  static AttestationQuote decode(ByteView bytes);
};

/// Digest of the program identity and its configuration.
Measurement measure(ByteView program_id, ByteView config);

const PublicKey& hardware_root_public_key();

/// Signed by the simulated hardware root.
AttestationQuote attest_quote(const Measurement& m, const QuoteNonce& nonce);

class Allowlist {
 public:
  Allowlist() = default;
  Allowlist(std::initializer_list<Measurement> ms) : entries_(ms) {}

  void insert(const Measurement& m) { entries_.insert(m); }
  bool contains(const Measurement& m) const { return entries_.count(m) != 0; }
  bool empty() const { return entries_.empty(); }
  const std::set<Measurement>& entries() const { return entries_; }

  /// JSON list of hex measurements.
  std::string to_json() const;
  static Allowlist from_json(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Allowlist load(const std::filesystem::path& path);

 private:
  std::set<Measurement> entries_;
};

bool verify_quote(const AttestationQuote& quote, const Allowlist& allowlist);

struct TrackerRootKey {
  KeyPair key;
  Measurement measurement;
};

/// nullopt unless the quote verifies. Same measurement, same key, on any
/// instance.
std::optional<TrackerRootKey> kms_derive(const AttestationQuote& quote,
                                         const Allowlist& allowlist);

/// The credential an enclave attaches to contract calls: its quote plus a
/// signature over the call payload under the derived tracker root key.
struct AuthToken {
  AttestationQuote quote;
  Signature sig;

  Bytes encode() const;
  Digest fingerprint() const { return hash(encode()); }
};

/// A running enclave instance: attested, holding its derived root key.
class Enclave {
 public:
  /// nullopt if the build is not allowlisted.
  static std::optional<Enclave> launch(ByteView program_id, ByteView config,
                                       const Allowlist& allowlist,
                                       const QuoteNonce& nonce);

  const AttestationQuote& quote() const { return quote_; }
  const TrackerRootKey& root_key() const { return root_; }
  const PublicKey& public_key() const { return root_.key.pk; }
  AuthToken authorize(ByteView payload) const;

 private:
  Enclave(AttestationQuote q, TrackerRootKey k)
      : quote_(std::move(q)), root_(std::move(k)) {}
  AttestationQuote quote_;
  TrackerRootKey root_;
};

}  // namespace pbts
