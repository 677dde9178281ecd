#pragma once

// Deterministic swarm simulator, cost model, crypto benchmarks and the
// scripted security games.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pbts/attestation.hpp"
#include "pbts/dht.hpp"
#include "pbts/tracker.hpp"

namespace pbts {

using Json = nlohmann::ordered_json;

/// Per-operation latencies in milliseconds and link bandwidth in bytes/s.
struct CostModel {
  double sign_ms = 134.19;
  double verify_ms = 340.92;
  /// Aggregate verification cost per covered signature.
  double agg_verify_per_sig_ms = 129.318;
  double session_sign_ms = 0.1;
  double session_verify_ms = 0.1;
  double bandwidth = 1024.0 * 1024.0;

  double agg_verify_ms(std::size_t batch) const { return agg_verify_per_sig_ms * batch; }
  /// Throws Error unless every field is positive and finite.
  void validate() const;
  Json to_json() const;
  static CostModel from_json(const Json& j);
};

/// Latencies from the prototype's micro-benchmark table.
CostModel reference_cost_model();
/// Sign + verify = 2 ms for BLS and 0.2 ms for the session scheme.
CostModel table1_cost_model();

/// Signing time over baseline transfer time.
double overhead_fraction(double baseline_s, const SignatureCount& count, const CostModel& cost);
/// Slowdown of a download caused by the downloader signing receipts.
double throughput_overhead(std::uint64_t file_size, double bandwidth, std::uint64_t piece_size,
                           const SigningPolicy& policy, const CostModel& cost);

/// Report bytes: 32 per attested item plus one 96-byte aggregate, or 64 per
/// session signature plus the aggregate.
std::uint64_t report_bytes_model(const SigningPolicy& policy, std::uint64_t n);

struct Table1Row {
  std::string approach;
  SigningPolicy policy;
  SignatureCount signatures;
  double time_s = 0;
  std::uint64_t report_bytes = 0;
  /// Figures printed in the original comparison table, for side-by-side output.
  std::string reference_signatures;
  double reference_time_s = 0;
  std::string reference_size;
  std::string note;
};

std::vector<Table1Row> table1_projection(std::uint64_t n = 2560,
                                         std::uint64_t piece_size = 2 * 1024 * 1024,
                                         const CostModel& cost = table1_cost_model());

struct BenchResult {
  std::size_t reps = 0;
  CostModel cost;
  /// batch size -> (individual verify time) / (aggregate verify time)
  std::map<std::size_t, double> agg_speedup;
  std::map<std::size_t, double> agg_verify_ms;

  double session_sign_speedup() const { return cost.sign_ms / cost.session_sign_ms; }
  double verify_over_sign() const { return cost.verify_ms / cost.sign_ms; }
  Json to_json() const;
};

/// Wall-clock means on this host. Throws Error for reps < 100.
BenchResult bench_crypto(std::size_t reps, const std::vector<std::size_t>& batches = {10, 25, 50, 100});

enum class AdversaryKind { inflate, replay, forge, freeride };
std::string_view to_string(AdversaryKind k);
AdversaryKind parse_adversary(std::string_view s);

struct AdversarySpec {
  AdversaryKind kind = AdversaryKind::inflate;
  std::size_t peer = 0;
};

struct Interval {
  std::uint64_t start_s = 0;
  std::uint64_t end_s = 0;
};

struct Scenario {
  std::uint64_t seed = 1;
  std::size_t peers = 4;
  /// Peers [0, seeders) start with the whole file.
  std::size_t seeders = 1;
  std::uint64_t file_size = 1024 * 1024;
  std::uint64_t piece_size = 64 * 1024;
  SigningPolicy policy = PerPieceBls{};
  EpochParams epochs{60, 2};
  Ratio min_rep{1, 2};
  std::int64_t init_credit = 1024 * 1024;
  CostModel cost = reference_cost_model();
  /// Peer i starts at i * join_spread_ms.
  std::uint64_t join_spread_ms = 0;
  std::uint64_t report_interval_s = 30;
  std::uint64_t announce_interval_s = 60;
  std::vector<Interval> tracker_down;
  /// Tracker instance killed and migrated to a successor at these times.
  std::vector<std::uint64_t> migrate_at_s;
  std::vector<AdversarySpec> adversaries;
  std::uint64_t max_time_s = 7 * 24 * 3600;
  DhtConfig dht{8, 3, 2, 0.0, 2, 0};

  std::uint64_t piece_count() const;
  /// Throws Error describing the first problem found.
  void validate() const;
  Json to_json() const;
  static Scenario from_json(const Json& j);
  static Scenario load(const std::filesystem::path& p);
};

struct Transfer {
  std::size_t sender = 0;
  std::size_t receiver = 0;
  std::uint64_t piece = 0;
  std::uint64_t bytes = 0;
  std::uint64_t epoch = 0;
  std::uint64_t time_ms = 0;
  /// The receiver produced a signature covering this piece.
  bool attested = false;
};

/// What actually moved. Only the simulator core appends.
class GroundTruthLog {
 public:
  const std::vector<Transfer>& entries() const { return entries_; }
  std::uint64_t uploaded(std::size_t peer) const;
  std::uint64_t downloaded(std::size_t peer) const;
  std::uint64_t attested_upload(std::size_t peer) const;

 private:
  friend class Swarm;
  void append(const Transfer& t) { entries_.push_back(t); }
  std::vector<Transfer> entries_;
};

struct PeerMetrics {
  std::string uid;
  std::string role;
  bool seeder = false;
  std::uint64_t true_up = 0;
  std::uint64_t true_down = 0;
  std::uint64_t attested_up = 0;
  std::int64_t chain_up = 0;
  std::int64_t chain_down = 0;
  std::uint64_t receipts_issued = 0;
  std::optional<std::uint64_t> completed_ms;
};

struct Metrics {
  std::vector<PeerMetrics> peers;
  std::uint64_t transfers = 0;
  std::uint64_t receipts_issued = 0;
  std::uint64_t items_verified = 0;
  SignatureCount signatures;
  std::uint64_t report_bytes = 0;
  std::uint64_t reports_accepted = 0;
  std::uint64_t reports_rejected = 0;
  std::uint64_t receipts_expired = 0;
  std::uint64_t sim_time_ms = 0;
  std::uint64_t transfer_ms = 0;
  double crypto_ms = 0;
  double overhead = 0;
  std::uint64_t dht_lookups = 0;
  std::uint64_t dht_messages = 0;
  std::vector<std::string> contracts;
  bool all_complete = false;

  Json to_json() const;
  std::string dump() const { return to_json().dump(2); }
};

struct SwarmRun {
  Metrics metrics;
  GroundTruthLog truth;
};

/// Throws Error for an invalid scenario. The chain log is written to
/// chain_log when given.
Metrics run_swarm(const Scenario& s, const std::optional<std::filesystem::path>& chain_log = {});
SwarmRun run_swarm_detailed(const Scenario& s,
                            const std::optional<std::filesystem::path>& chain_log = {});

struct GameResult {
  std::string name;
  bool pass = false;
  std::uint64_t trials = 0;
  std::uint64_t wins = 0;
  std::string witness;
  Json to_json() const;
};

GameResult game_registration(std::uint64_t seed, std::size_t trials = 10000);
GameResult game_nonrepudiation(std::uint64_t seed, std::size_t trials = 1000);
GameResult game_soundness(std::uint64_t seed, std::size_t swarms = 50);
GameResult game_reuse(std::uint64_t seed, std::uint64_t max_delta = 3);

}  // namespace pbts
