#pragma once

// The tracker state machine as it runs inside the enclave: registration,
// reputation-gated announces, receipt-backed reports with epoch-windowed
// deduplication, and migration to a successor contract.
//
// Every mutating entry point is all-or-nothing: a rejected call leaves both
// the tracker and the chain exactly as they were.

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pbts/attestation.hpp"
#include "pbts/contract.hpp"
#include "pbts/enclave.hpp"

namespace pbts {

/// Non-negative rational num/den.
struct Ratio {
  std::uint64_t num = 0;
  std::uint64_t den = 1;
};

/// Sharing ratio up/down, infinite when down is zero.
struct Reputation {
  std::int64_t up = 0;
  std::int64_t down = 0;

  bool infinite() const { return down == 0; }
  double value() const;
  /// Exact comparison against a threshold.
  bool at_least(const Ratio& r) const;
};

Reputation rep(std::int64_t up, std::int64_t down);

struct PublicParams {
  unsigned lambda = 128;
  Bytes iid;
  Ratio min_rep;
  std::int64_t init_credit = 0;
};

/// Throws Error unless lambda is 128 or 256.
PublicParams setup(unsigned lambda, Ratio min_rep, std::int64_t init_credit,
                   std::mt19937_64& rng);

enum class Event { started, stopped, completed, none };
std::string_view to_string(Event e);
Event parse_event(std::string_view s);

Bytes register_message(ByteView iid, std::string_view uid);
Bytes announce_message(std::string_view uid, const Digest& tid, Event e);

struct PeerEntry {
  PublicKey pk;
  std::string ip;
  std::uint16_t port = 0;
  bool operator==(const PeerEntry&) const = default;
};

struct RegisterParams {
  /// Proof of possession for pk; required.
  std::optional<Signature> pop;
};

/// One per-piece receipt as carried in a report; the reporter is the sender.
struct ReceiptClaim {
  PublicKey pk_receiver;
  Digest piece_hash;
  std::uint64_t piece_index = 0;
  std::uint64_t epoch = 0;
};

struct ReportPayload {
  std::string uid;
  PublicKey pk;
  TorrentMeta torrent;
  std::vector<ReceiptClaim> receipts;
  AggregateSignature agg;
  std::int64_t delta_up = 0;
  std::int64_t delta_down = 0;
};

struct BatchReport {
  std::string uid;
  PublicKey pk;
  TorrentMeta torrent;
  std::vector<BatchCommitment> commitments;
  AggregateSignature agg;
  std::int64_t delta_up = 0;
  std::int64_t delta_down = 0;
};

struct SessionPieceSig {
  std::uint64_t piece_index = 0;
  std::uint64_t epoch = 0;
  SessionSignature sig;
};

struct SessionReport {
  std::string uid;
  PublicKey pk;
  TorrentMeta torrent;
  std::vector<SessionCert> certs;
  /// pieces[j] are signed under certs[j].
  std::vector<std::vector<SessionPieceSig>> pieces;
  AggregateSignature agg;
  std::int64_t delta_up = 0;
  std::int64_t delta_down = 0;
};

/// Builds a ready-to-submit report from receipts the reporter holds.
ReportPayload make_report(std::string uid, const PublicKey& pk, const TorrentMeta& t,
                          std::span<const Receipt> receipts, std::int64_t delta_down = 0);

struct TrackerConfig {
  EpochParams epochs;
  std::size_t sample_cap = 50;
  /// Receipts up to this many epochs ahead of the tracker clock are accepted.
  std::uint64_t skew = 1;
};

struct MigrationProof {
  Bytes iid;
  PublicKey pk;
  AuthToken auth;
};

/// Proof that the enclave may take over addr_old under a fresh instance id.
MigrationProof migration_proof(const Enclave& enclave, ByteView iid_new,
                               const ContractAddress& addr_old);

/// nullopt if the proof's quote does not verify against allowlist or the
/// chain refuses the deployment. Throws UnknownContract for a missing addr_old.
std::optional<ContractAddress> migrate(Chain& chain, const ContractAddress& addr_old,
                                       const MigrationProof& proof,
                                       const Allowlist& allowlist);

class Tracker {
 public:
  /// Deploys a fresh contract (no referrer) owned by the enclave. nullopt if
  /// the chain rejects the enclave.
  static std::optional<Tracker> deploy(Chain& chain, Enclave enclave, PublicParams pp,
                                       TrackerConfig cfg = {});
  /// Attaches to an existing contract the enclave owns, rebuilding the pk
  /// index from the chain.
  Tracker(Chain& chain, Enclave enclave, ContractAddress addr, PublicParams pp,
          TrackerConfig cfg = {});

  bool register_user(std::string_view uid, const PublicKey& pk, const Signature& sig,
                     const RegisterParams& params);

  std::vector<PeerEntry> announce(std::string_view uid, const PublicKey& pk,
                                  const Signature& sig, const Digest& tid, Event event,
                                  std::string_view ip, std::uint16_t port,
                                  std::mt19937_64& rng);

  bool report(const ReportPayload& p, std::uint64_t now_seconds);
  bool report_batch(const BatchReport& p, std::uint64_t now_seconds);
  bool report_session(const SessionReport& p, std::uint64_t now_seconds);

  /// Drops dedup entries inserted before epoch(now) - delta - 1.
  void gc_recent(std::uint64_t now_seconds);

  std::optional<ReputationRecord> lookup(std::string_view uid) const;
  std::optional<std::string> uid_of(const PublicKey& pk) const;
  std::vector<PeerEntry> swarm(const Digest& tid) const;

  const ContractAddress& address() const { return addr_; }
  const PublicParams& params() const { return pp_; }
  const TrackerConfig& config() const { return cfg_; }
  const Enclave& enclave() const { return enclave_; }
  Chain& chain() const { return *chain_; }

  std::size_t recent_size() const { return recent_.size(); }
  /// (key, insertion epoch) pairs, for snapshots.
  const std::map<Bytes, std::uint64_t>& recent() const { return recent_; }

 private:
  bool in_window(std::uint64_t epoch, std::uint64_t now_epoch) const;
  bool reporter_ok(std::string_view uid, const PublicKey& pk,
                   ReputationRecord& out) const;
  bool commit(const std::string& reporter_uid, ReputationRecord reporter,
              std::int64_t delta_up, std::int64_t delta_down,
              const std::map<std::string, std::int64_t>& downloads,
              const std::vector<Bytes>& keys, std::uint64_t now_epoch);
  bool write(std::span<const ReputationRecord> records);
  void index_from_chain();

  Chain* chain_;
  Enclave enclave_;
  ContractAddress addr_;
  PublicParams pp_;
  TrackerConfig cfg_;
  std::map<PublicKey, std::string> pk_index_;
  std::map<Digest, std::map<PublicKey, PeerEntry>> swarms_;
  std::map<Bytes, std::uint64_t> recent_;
};

}  // namespace pbts
