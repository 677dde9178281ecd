#pragma once

// Simulated chain hosting RepFactory-deployed reputation contracts.
//
// Reads are public. Writes must carry an AuthToken whose quote names the
// owner's measurement and whose signature, under the owner key, covers the
// write payload including the contract's write nonce. Every accepted mutation
// is appended to a JSON-lines log; a chain opened on an existing log rebuilds
// its state by replay.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "pbts/crypto.hpp"
#include "pbts/enclave.hpp"

namespace pbts {

using ContractAddress = Blob<20, struct ContractAddressTag>;

struct ReputationRecord {
  std::string uid;
  PublicKey pk;
  std::int64_t up = 0;
  std::int64_t down = 0;

  bool operator==(const ReputationRecord&) const = default;
};

struct InitParams {
  Bytes iid;
  std::optional<ContractAddress> referrer;
  PublicKey pk;
  AuthToken auth;
};

struct LogEntry {
  std::uint64_t seq = 0;
  std::string op;
  ContractAddress addr;
  Bytes payload;
  Digest auth_fp;

  /// One line of the chain log, without the trailing newline. Field order is
  /// fixed: seq, op, addr, payload, auth_fp.
  std::string to_json_line() const;
};

class UnknownContract : public Error {
 public:
  explicit UnknownContract(const ContractAddress& a)
      : Error("unknown contract " + a.hex()) {}
};

class ChainLogError : public Error {
 public:
  ChainLogError(std::uint64_t seq, const std::string& what)
      : Error("chain log corrupt at seq " + std::to_string(seq) + ": " + what),
        seq_(seq) {}
  std::uint64_t seq() const { return seq_; }

 private:
  std::uint64_t seq_;
};

class Chain {
 public:
  /// In-memory chain, or one persisted at log_path. An existing log is
  /// replayed; ChainLogError names the first bad sequence number.
  explicit Chain(Allowlist factory_allowlist,
                 std::optional<std::filesystem::path> log_path = std::nullopt);

  Chain(const Chain&) = delete;
  Chain& operator=(const Chain&) = delete;

  /// Deploys a contract. nullopt when the auth does not match pk or its quote
  /// is not allowlisted. Throws UnknownContract for a missing referrer.
  std::optional<ContractAddress> sc_init(const InitParams& params);

  /// Local record, else the referrer's local record, else nullopt. Never
  /// follows more than one referrer hop. Throws UnknownContract.
  std::optional<ReputationRecord> sc_read(const ContractAddress& addr,
                                          std::string_view uid) const;
  /// As sc_read, but against the state as of log sequence number max_seq.
  std::optional<ReputationRecord> sc_read_at(const ContractAddress& addr,
                                             std::string_view uid,
                                             std::uint64_t max_seq) const;

  /// false (no state change) when auth is not the owner's. Throws Error for
  /// negative counters, UnknownContract for a missing address.
  bool sc_write(const ContractAddress& addr, const ReputationRecord& value,
                const AuthToken& auth);
  /// All records land in one log entry, or none do.
  bool sc_write_batch(const ContractAddress& addr,
                      std::span<const ReputationRecord> values,
                      const AuthToken& auth);

  std::optional<ContractAddress> get_referrer(const ContractAddress& addr) const;
  bool contains(const ContractAddress& addr) const;
  std::size_t contract_count() const;
  std::uint64_t write_nonce(const ContractAddress& addr) const;
  /// uids with a record stored locally in addr (no inheritance).
  std::vector<std::string> local_uids(const ContractAddress& addr) const;
  /// Sequence number of the last log entry (0 when empty).
  std::uint64_t head_seq() const;

  std::vector<LogEntry> log() const;
  /// Deterministic JSON rendering of every contract's current state.
  std::string state_json() const;
  /// Writes the full log to path.
  void save(const std::filesystem::path& path) const;

  static Bytes init_payload(ByteView iid,
                            const std::optional<ContractAddress>& referrer,
                            const PublicKey& pk);
  static Bytes write_payload(const ContractAddress& addr, std::uint64_t nonce,
                             std::span<const ReputationRecord> values);

 private:
  struct Contract {
    PublicKey owner_pk;
    Measurement owner_measurement;
    std::optional<ContractAddress> referrer;
    std::uint64_t created_seq = 0;
    std::uint64_t write_nonce = 0;
    // Every version of each record, by log sequence number.
    std::map<std::string, std::vector<std::pair<std::uint64_t, ReputationRecord>>,
             std::less<>>
        data;
  };

  const Contract& get(const ContractAddress& addr) const;
  static std::optional<ReputationRecord> local_at(const Contract& c,
                                                  std::string_view uid,
                                                  std::uint64_t max_seq);
  std::optional<ReputationRecord> read_locked(const ContractAddress& addr,
                                              std::string_view uid,
                                              std::uint64_t max_seq) const;
  void append(LogEntry entry);
  void apply(const LogEntry& entry);
  void replay(const std::filesystem::path& path);

  Allowlist allowlist_;
  std::map<ContractAddress, Contract> contracts_;
  std::vector<LogEntry> log_;
  std::optional<std::ofstream> sink_;
  mutable std::shared_mutex mutex_;
};

}  // namespace pbts
