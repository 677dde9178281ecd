#pragma once

// Authenticated Kademlia over an in-process message bus. Node identities are
// bound to registered public keys and the reputation contract doubles as the
// PKI that gates what storage nodes accept.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "pbts/attestation.hpp"
#include "pbts/contract.hpp"
#include "pbts/tracker.hpp"

namespace pbts {

struct NodeIdTag;
using NodeId = Blob<20, NodeIdTag>;
using Distance = std::array<std::uint8_t, 20>;

NodeId node_id(const PublicKey& pk);
/// Lookup key for a torrent: the first 160 bits of its infohash.
NodeId dht_key(const Digest& infohash);
Distance xor_distance(const NodeId& a, const NodeId& b);
/// Length of the common prefix of a and b in bits (160 when equal).
int shared_prefix(const NodeId& a, const NodeId& b);

struct Contact {
  NodeId id;
  Endpoint ep;
  bool operator==(const Contact&) const = default;
};

/// Orders contacts by xor distance to target.
std::vector<Contact> sort_by_distance(std::vector<Contact> v, const NodeId& target);

class RoutingTable {
 public:
  RoutingTable(NodeId self, std::size_t k);

  /// Refreshes c if known. Otherwise adds it when its bucket has room and
  /// returns false if the bucket is full; self is ignored.
  bool insert(const Contact& c);
  void remove(const NodeId& id);
  /// Least recently seen entry of the bucket c would go into.
  std::optional<Contact> oldest_in_bucket_of(const NodeId& id) const;

  std::vector<Contact> closest(const NodeId& target, std::size_t count) const;
  bool contains(const NodeId& id) const;
  std::size_t size() const;
  std::size_t bucket_size(int index) const { return buckets_[index].size(); }
  const NodeId& self() const { return self_; }
  std::size_t k() const { return k_; }

 private:
  NodeId self_;
  std::size_t k_;
  // buckets_[i] holds ids sharing exactly i prefix bits with self, most
  // recently seen at the back.
  std::vector<std::vector<Contact>> buckets_;
};

Bytes dht_announce_message(const Digest& infohash, const PublicKey& pk, std::string_view ip,
                           std::uint16_t port);

struct AnnounceRecord {
  /// Needed for the chain lookup; not covered by sig.
  std::string uid;
  PublicKey pk;
  std::string ip;
  std::uint16_t port = 0;
  Digest infohash;
  Signature sig;
  std::uint64_t stored_epoch = 0;
};

AnnounceRecord make_announce_record(std::string uid, const KeyPair& kp, const Digest& infohash,
                                    std::string ip, std::uint16_t port);

enum class StoreResult { accepted, bad_sig, unknown_uid, pk_mismatch, low_rep, over_budget };
std::string_view to_string(StoreResult r);

/// Registration and reputation checks only.
StoreResult check_standing(std::string_view uid, const PublicKey& pk, const Chain& chain,
                           const ContractAddress& addr_rep, Ratio min_rep,
                           std::uint64_t max_seq = UINT64_MAX);
/// Registration, reputation and then signature checks, reading the chain as
/// of log position max_seq.
StoreResult check_record(const AnnounceRecord& r, const Chain& chain,
                         const ContractAddress& addr_rep, Ratio min_rep,
                         std::uint64_t max_seq = UINT64_MAX);

struct DhtConfig {
  std::size_t k = 20;
  std::size_t alpha = 3;
  /// Records live this many epochs unless refreshed.
  std::uint64_t ttl_epochs = 2;
  double drop_rate = 0.0;
  /// Extra attempts per request before the peer counts as unresponsive.
  std::size_t retries = 2;
  std::uint64_t latency_ms = 0;
};

struct NodeKnobs {
  /// This node sees the chain this many log entries behind the head.
  std::uint64_t read_lag = 0;
  /// Chain reads allowed; unlimited when empty.
  std::optional<std::uint64_t> read_budget;
};

class DhtNetwork;

class DhtNode {
 public:
  DhtNode(const PublicKey& pk, Endpoint ep, std::size_t k, NodeKnobs knobs = {});

  const NodeId& id() const { return table_.self(); }
  Contact contact() const { return {id(), ep_}; }
  const RoutingTable& table() const { return table_; }
  RoutingTable& table() { return table_; }

  using Store = std::map<Digest, std::map<PublicKey, AnnounceRecord>>;
  const Store& store() const { return store_; }

  StoreResult handle_store(AnnounceRecord r, const Chain& chain, const ContractAddress& addr_rep,
                           Ratio min_rep, std::uint64_t now_epoch);
  /// A Byzantine node storing whatever it likes.
  void inject_unchecked(AnnounceRecord r);
  std::vector<AnnounceRecord> records(const Digest& infohash) const;
  /// Evicts records at least ttl epochs old.
  void sweep(std::uint64_t now_epoch, std::uint64_t ttl);

  void cache_bootstrap(const Endpoint& ep) { cached_.insert(ep); }
  const std::set<Endpoint>& cached_bootstrap() const { return cached_; }

  NodeKnobs knobs;
  std::uint64_t reads = 0;

 private:
  Endpoint ep_;
  RoutingTable table_;
  Store store_;
  std::set<Endpoint> cached_;
};

struct LookupResult {
  std::vector<Contact> closest;
  std::size_t hops = 0;
  std::size_t messages = 0;
};

/// The simulated network: every node plus a lossy, latency-charging bus.
/// Deterministic for a given seed.
class DhtNetwork {
 public:
  DhtNetwork(DhtConfig cfg, const Chain& chain, ContractAddress addr_rep, Ratio min_rep,
             std::uint64_t seed);

  /// Creates a node; it is live but knows nobody until it joins.
  DhtNode& add_node(const PublicKey& pk, Endpoint ep, NodeKnobs knobs = {});
  DhtNode* node(const NodeId& id);
  const DhtNode* node(const NodeId& id) const;
  DhtNode* node_at(const Endpoint& ep);

  void set_alive(const NodeId& id, bool alive);
  bool alive(const NodeId& id) const;
  std::vector<NodeId> live_ids() const;
  std::size_t size() const { return nodes_.size(); }

  /// Joins through the first reachable entry of bootstrap, then self's cache,
  /// and refreshes. False when none answers.
  bool join(const NodeId& self, const std::vector<Endpoint>& bootstrap);
  /// Self-lookup plus a lookup in every bucket farther than the nearest
  /// neighbour; unresponsive contacts met on the way are dropped.
  void refresh(const NodeId& self);

  /// Iterative alpha-parallel lookup of the k live nodes closest to target.
  /// self is included as a candidate.
  LookupResult find_closest(const NodeId& self, const NodeId& target);

  /// Offers the record to the k closest nodes; returns how many stored it.
  std::size_t announce(const NodeId& self, const AnnounceRecord& r);
  /// Union of re-verified records held by the k closest nodes, one per pk.
  std::vector<PeerEntry> get_peers(const NodeId& self, const Digest& infohash);

  void set_epoch(std::uint64_t e);
  std::uint64_t epoch() const { return epoch_; }
  /// Points storage checks at a successor contract after a migration.
  void set_contract(const ContractAddress& addr) { addr_rep_ = addr; }
  const ContractAddress& contract() const { return addr_rep_; }

  const DhtConfig& config() const { return cfg_; }
  std::uint64_t messages() const { return messages_; }
  std::uint64_t elapsed_ms() const { return elapsed_ms_; }

  /// Every node, for invariant checks.
  std::vector<const DhtNode*> nodes() const;

 private:
  // Delivers one request, retrying dropped messages. On success both ends
  // learn about each other; on failure the caller forgets the callee.
  bool reach(DhtNode& from, const Contact& to);
  std::vector<Contact> rpc_find_node(DhtNode& from, const Contact& to, const NodeId& target,
                                     bool& ok);
  void learn(DhtNode& n, const Contact& c);

  DhtConfig cfg_;
  const Chain* chain_;
  ContractAddress addr_rep_;
  Ratio min_rep_;
  std::mt19937_64 rng_;
  std::map<NodeId, std::unique_ptr<DhtNode>> nodes_;
  std::map<NodeId, bool> alive_;
  std::map<Endpoint, NodeId> by_endpoint_;
  std::uint64_t epoch_ = 0;
  std::uint64_t messages_ = 0;
  std::uint64_t elapsed_ms_ = 0;
};

/// A peer's verified view of one torrent's swarm, used when the tracker is down.
class LocalView {
 public:
  /// Mirrors Tracker::announce against this view and the chain.
  std::vector<PeerEntry> peer_announce(std::string_view uid, const PublicKey& pk,
                                       const Signature& sig, const Digest& tid, Event event,
                                       std::string_view ip, std::uint16_t port,
                                       const Chain& chain, const ContractAddress& addr_rep,
                                       Ratio min_rep, std::mt19937_64& rng,
                                       std::size_t sample_cap = 50);
  /// Adds a DHT record after full re-verification.
  bool admit(const AnnounceRecord& r, const Chain& chain, const ContractAddress& addr_rep,
             Ratio min_rep);
  void remove(const Digest& tid, const PublicKey& pk);

  std::vector<PeerEntry> members(const Digest& tid) const;
  bool contains(const Digest& tid, const PublicKey& pk) const;

 private:
  std::map<Digest, std::map<PublicKey, PeerEntry>> views_;
};

}  // namespace pbts
