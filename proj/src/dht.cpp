#include "pbts/dht.hpp"

#include <algorithm>
#include <bit>

#include "pbts/encoding.hpp"

namespace pbts {

NodeId node_id(const PublicKey& pk) {
  const Digest d = hash(pk.view());
  NodeId id;
  std::copy_n(d.data.begin(), NodeId::size, id.data.begin());
  return id;
}

NodeId dht_key(const Digest& infohash) {
  NodeId id;
  std::copy_n(infohash.data.begin(), NodeId::size, id.data.begin());
  return id;
}

Distance xor_distance(const NodeId& a, const NodeId& b) {
  Distance d;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = a.data[i] ^ b.data[i];
  return d;
}

int shared_prefix(const NodeId& a, const NodeId& b) {
  for (std::size_t i = 0; i < NodeId::size; ++i) {
    const std::uint8_t x = a.data[i] ^ b.data[i];
    if (x != 0) return static_cast<int>(i * 8) + std::countl_zero(x);
  }
  return static_cast<int>(NodeId::size * 8);
}

std::vector<Contact> sort_by_distance(std::vector<Contact> v, const NodeId& target) {
  std::sort(v.begin(), v.end(), [&](const Contact& a, const Contact& b) {
    return xor_distance(a.id, target) < xor_distance(b.id, target);
  });
  return v;
}

RoutingTable::RoutingTable(NodeId self, std::size_t k)
    : self_(self), k_(k), buckets_(NodeId::size * 8) {
  if (k == 0) throw Error("routing table: k must be positive");
}

bool RoutingTable::insert(const Contact& c) {
  if (c.id == self_) return true;
  auto& b = buckets_[shared_prefix(self_, c.id)];
  auto it = std::find_if(b.begin(), b.end(), [&](const Contact& x) { return x.id == c.id; });
  if (it != b.end()) {
    b.erase(it);
    b.push_back(c);
    return true;
  }
  if (b.size() >= k_) return false;
  b.push_back(c);
  return true;
}

void RoutingTable::remove(const NodeId& id) {
  if (id == self_) return;
  auto& b = buckets_[shared_prefix(self_, id)];
  std::erase_if(b, [&](const Contact& x) { return x.id == id; });
}

std::optional<Contact> RoutingTable::oldest_in_bucket_of(const NodeId& id) const {
  if (id == self_) return std::nullopt;
  const auto& b = buckets_[shared_prefix(self_, id)];
  if (b.empty()) return std::nullopt;
  return b.front();
}

std::vector<Contact> RoutingTable::closest(const NodeId& target, std::size_t count) const {
  std::vector<Contact> all;
  for (const auto& b : buckets_) all.insert(all.end(), b.begin(), b.end());
  all = sort_by_distance(std::move(all), target);
  if (all.size() > count) all.resize(count);
  return all;
}

bool RoutingTable::contains(const NodeId& id) const {
  if (id == self_) return false;
  const auto& b = buckets_[shared_prefix(self_, id)];
  return std::any_of(b.begin(), b.end(), [&](const Contact& x) { return x.id == id; });
}

std::size_t RoutingTable::size() const {
  std::size_t n = 0;
  for (const auto& b : buckets_) n += b.size();
  return n;
}

Bytes dht_announce_message(const Digest& infohash, const PublicKey& pk, std::string_view ip,
                           std::uint16_t port) {
  return Encoder()
      .text("announce")
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk)
      .text(ip)
      .u64(port)
      .finish();
}

AnnounceRecord make_announce_record(std::string uid, const KeyPair& kp, const Digest& infohash,
                                    std::string ip, std::uint16_t port) {
  AnnounceRecord r{std::move(uid), kp.pk, std::move(ip), port, infohash, {}, 0};
  r.sig = sign(kp.sk, dht_announce_message(infohash, kp.pk, r.ip, port));
  return r;
}

std::string_view to_string(StoreResult r) {
  switch (r) {
    case StoreResult::accepted: return "accepted";
    case StoreResult::bad_sig: return "bad_sig";
    case StoreResult::unknown_uid: return "unknown_uid";
    case StoreResult::pk_mismatch: return "pk_mismatch";
    case StoreResult::low_rep: return "low_rep";
    case StoreResult::over_budget: return "over_budget";
  }
  return "?";
}

StoreResult check_standing(std::string_view uid, const PublicKey& pk, const Chain& chain,
                           const ContractAddress& addr_rep, Ratio min_rep, std::uint64_t max_seq) {
  std::optional<ReputationRecord> rec;
  try {
    rec = chain.sc_read_at(addr_rep, uid, max_seq);
  } catch (const UnknownContract&) {
    return StoreResult::unknown_uid;
  }
  if (!rec) return StoreResult::unknown_uid;
  if (rec->pk != pk) return StoreResult::pk_mismatch;
  if (!rep(rec->up, rec->down).at_least(min_rep)) return StoreResult::low_rep;
  return StoreResult::accepted;
}

StoreResult check_record(const AnnounceRecord& r, const Chain& chain,
                         const ContractAddress& addr_rep, Ratio min_rep, std::uint64_t max_seq) {
  // chain reads are cheap; the pairing check runs last
  const auto standing = check_standing(r.uid, r.pk, chain, addr_rep, min_rep, max_seq);
  if (standing != StoreResult::accepted) return standing;
  if (!verify(r.pk, dht_announce_message(r.infohash, r.pk, r.ip, r.port), r.sig)) {
    return StoreResult::bad_sig;
  }
  return StoreResult::accepted;
}

DhtNode::DhtNode(const PublicKey& pk, Endpoint ep, std::size_t k, NodeKnobs kn)
    : knobs(kn), ep_(std::move(ep)), table_(node_id(pk), k) {}

StoreResult DhtNode::handle_store(AnnounceRecord r, const Chain& chain,
                                  const ContractAddress& addr_rep, Ratio min_rep,
                                  std::uint64_t now_epoch) {
  if (knobs.read_budget && reads >= *knobs.read_budget) return StoreResult::over_budget;
  ++reads;
  const std::uint64_t head = chain.head_seq();
  const std::uint64_t seen = head > knobs.read_lag ? head - knobs.read_lag : 0;

  auto& held = store_[r.infohash];
  const auto it = held.find(r.pk);
  const bool same = it != held.end() && it->second.sig == r.sig && it->second.uid == r.uid &&
                    it->second.ip == r.ip && it->second.port == r.port;
  const auto res = same ? check_standing(r.uid, r.pk, chain, addr_rep, min_rep, seen)
                        : check_record(r, chain, addr_rep, min_rep, seen);
  if (res != StoreResult::accepted) {
    if (held.empty()) store_.erase(r.infohash);
    return res;
  }
  r.stored_epoch = now_epoch;
  const PublicKey pk = r.pk;
  held.insert_or_assign(pk, std::move(r));
  return res;
}

void DhtNode::inject_unchecked(AnnounceRecord r) {
  const Digest tid = r.infohash;
  const PublicKey pk = r.pk;
  store_[tid].insert_or_assign(pk, std::move(r));
}

std::vector<AnnounceRecord> DhtNode::records(const Digest& infohash) const {
  std::vector<AnnounceRecord> out;
  if (auto it = store_.find(infohash); it != store_.end()) {
    for (const auto& [pk, r] : it->second) out.push_back(r);
  }
  return out;
}

void DhtNode::sweep(std::uint64_t now_epoch, std::uint64_t ttl) {
  for (auto it = store_.begin(); it != store_.end();) {
    std::erase_if(it->second, [&](const auto& kv) { return kv.second.stored_epoch + ttl <= now_epoch; });
    it = it->second.empty() ? store_.erase(it) : std::next(it);
  }
}

DhtNetwork::DhtNetwork(DhtConfig cfg, const Chain& chain, ContractAddress addr_rep,
                       Ratio min_rep, std::uint64_t seed)
    : cfg_(cfg), chain_(&chain), addr_rep_(addr_rep), min_rep_(min_rep), rng_(seed) {
  if (cfg_.k == 0 || cfg_.alpha == 0) throw Error("dht: k and alpha must be positive");
  if (cfg_.drop_rate < 0.0 || cfg_.drop_rate >= 1.0) throw Error("dht: drop rate out of range");
}

DhtNode& DhtNetwork::add_node(const PublicKey& pk, Endpoint ep, NodeKnobs knobs) {
  const NodeId id = node_id(pk);
  if (nodes_.count(id)) throw Error("dht: node already present");
  if (by_endpoint_.count(ep)) throw Error("dht: endpoint already in use");
  auto n = std::make_unique<DhtNode>(pk, ep, cfg_.k, knobs);
  by_endpoint_[ep] = id;
  alive_[id] = true;
  return *nodes_.emplace(id, std::move(n)).first->second;
}

DhtNode* DhtNetwork::node(const NodeId& id) {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.get();
}

const DhtNode* DhtNetwork::node(const NodeId& id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : it->second.get();
}

DhtNode* DhtNetwork::node_at(const Endpoint& ep) {
  auto it = by_endpoint_.find(ep);
  return it == by_endpoint_.end() ? nullptr : node(it->second);
}

void DhtNetwork::set_alive(const NodeId& id, bool a) {
  if (!nodes_.count(id)) throw Error("dht: unknown node");
  alive_[id] = a;
}

bool DhtNetwork::alive(const NodeId& id) const {
  auto it = alive_.find(id);
  return it != alive_.end() && it->second;
}

std::vector<NodeId> DhtNetwork::live_ids() const {
  std::vector<NodeId> out;
  for (const auto& [id, a] : alive_) {
    if (a) out.push_back(id);
  }
  return out;
}

std::vector<const DhtNode*> DhtNetwork::nodes() const {
  std::vector<const DhtNode*> out;
  for (const auto& [id, n] : nodes_) out.push_back(n.get());
  return out;
}

bool DhtNetwork::reach(DhtNode& from, const Contact& to) {
  bool ok = false;
  for (std::size_t attempt = 0; attempt <= cfg_.retries && !ok; ++attempt) {
    ++messages_;
    if (!alive(to.id) || !node(to.id)) continue;
    ok = cfg_.drop_rate == 0.0 ||
         std::uniform_real_distribution<double>(0.0, 1.0)(rng_) >= cfg_.drop_rate;
  }
  if (!ok) {
    from.table().remove(to.id);
    return false;
  }
  learn(*node(to.id), from.contact());
  learn(from, to);
  return true;
}

void DhtNetwork::learn(DhtNode& n, const Contact& c) {
  if (n.table().insert(c)) return;
  // Full bucket: keep the oldest entry if it still answers a ping.
  const auto oldest = n.table().oldest_in_bucket_of(c.id);
  ++messages_;
  if (oldest && alive(oldest->id)) {
    n.table().insert(*oldest);
    return;
  }
  if (oldest) n.table().remove(oldest->id);
  n.table().insert(c);
}

std::vector<Contact> DhtNetwork::rpc_find_node(DhtNode& from, const Contact& to,
                                               const NodeId& target, bool& ok) {
  ok = reach(from, to);
  if (!ok) return {};
  return node(to.id)->table().closest(target, cfg_.k);
}

bool DhtNetwork::join(const NodeId& self, const std::vector<Endpoint>& bootstrap) {
  DhtNode* me = node(self);
  if (!me) throw Error("dht: unknown node");
  std::vector<Endpoint> candidates = bootstrap;
  candidates.insert(candidates.end(), me->cached_bootstrap().begin(),
                    me->cached_bootstrap().end());
  bool joined = false;
  for (const auto& ep : candidates) {
    DhtNode* b = node_at(ep);
    if (!b || b == me) continue;
    if (reach(*me, b->contact())) {
      joined = true;
      break;
    }
  }
  if (!joined) return false;
  refresh(self);
  return true;
}

void DhtNetwork::refresh(const NodeId& self) {
  const auto near = find_closest(self, self).closest;
  // refresh every bucket farther than the nearest neighbour
  const int depth = near.size() > 1 ? shared_prefix(self, near[1].id) : 0;
  for (int bit = 0; bit < depth; ++bit) {
    NodeId target = self;
    const int byte = bit / 8;
    target.data[byte] ^= static_cast<std::uint8_t>(0x80u >> (bit % 8));
    for (int b = bit + 1; b < 160; ++b) {
      const auto mask = static_cast<std::uint8_t>(0x80u >> (b % 8));
      if (rng_() & 1) target.data[b / 8] ^= mask;
    }
    find_closest(self, target);
  }
}

LookupResult DhtNetwork::find_closest(const NodeId& self, const NodeId& target) {
  DhtNode* me = node(self);
  if (!me) throw Error("dht: unknown node");
  LookupResult res;
  const std::uint64_t msgs_before = messages_;

  std::map<Distance, Contact> shortlist;
  std::set<NodeId> queried{self};
  std::set<NodeId> failed;
  shortlist.emplace(xor_distance(self, target), me->contact());
  for (const auto& c : me->table().closest(target, cfg_.k)) {
    shortlist.emplace(xor_distance(c.id, target), c);
  }

  auto top = [&] {
    std::vector<Contact> out;
    for (const auto& [d, c] : shortlist) {
      if (failed.count(c.id)) continue;
      out.push_back(c);
      if (out.size() == cfg_.k) break;
    }
    return out;
  };

  bool improved = true;
  while (true) {
    const auto best = top();
    std::vector<Contact> batch;
    for (const auto& c : best) {
      if (!queried.count(c.id)) batch.push_back(c);
    }
    if (batch.empty()) break;
    if (improved && batch.size() > cfg_.alpha) batch.resize(cfg_.alpha);
    const Distance before = xor_distance(best.front().id, target);

    ++res.hops;
    for (const auto& c : batch) {
      queried.insert(c.id);
      bool ok = false;
      const auto found = rpc_find_node(*me, c, target, ok);
      if (!ok) {
        failed.insert(c.id);
        continue;
      }
      for (const auto& f : found) {
        if (!failed.count(f.id)) shortlist.emplace(xor_distance(f.id, target), f);
      }
    }
    const auto after = top();
    improved = !after.empty() && xor_distance(after.front().id, target) < before;
  }

  res.closest = top();
  res.messages = messages_ - msgs_before;
  elapsed_ms_ += 2 * cfg_.latency_ms * res.hops;
  return res;
}

std::size_t DhtNetwork::announce(const NodeId& self, const AnnounceRecord& r) {
  DhtNode* me = node(self);
  if (!me) throw Error("dht: unknown node");
  const auto targets = find_closest(self, dht_key(r.infohash)).closest;
  std::size_t stored = 0;
  for (const auto& c : targets) {
    if (c.id != self && !reach(*me, c)) continue;
    if (node(c.id)->handle_store(r, *chain_, addr_rep_, min_rep_, epoch_) ==
        StoreResult::accepted) {
      ++stored;
    }
  }
  return stored;
}

std::vector<PeerEntry> DhtNetwork::get_peers(const NodeId& self, const Digest& infohash) {
  DhtNode* me = node(self);
  if (!me) throw Error("dht: unknown node");
  const auto targets = find_closest(self, dht_key(infohash)).closest;
  std::map<PublicKey, PeerEntry> found;
  for (const auto& c : targets) {
    if (c.id != self && !reach(*me, c)) continue;
    for (const auto& r : node(c.id)->records(infohash)) {
      if (found.count(r.pk) || r.infohash != infohash) continue;
      if (r.stored_epoch + cfg_.ttl_epochs <= epoch_) continue;
      if (check_record(r, *chain_, addr_rep_, min_rep_) != StoreResult::accepted) continue;
      found.emplace(r.pk, PeerEntry{r.pk, r.ip, r.port});
    }
  }
  std::vector<PeerEntry> out;
  for (auto& [pk, e] : found) out.push_back(std::move(e));
  return out;
}

void DhtNetwork::set_epoch(std::uint64_t e) {
  epoch_ = e;
  for (auto& [id, n] : nodes_) n->sweep(e, cfg_.ttl_epochs);
}

std::vector<PeerEntry> LocalView::peer_announce(std::string_view uid, const PublicKey& pk,
                                                const Signature& sig, const Digest& tid,
                                                Event event, std::string_view ip,
                                                std::uint16_t port, const Chain& chain,
                                                const ContractAddress& addr_rep, Ratio min_rep,
                                                std::mt19937_64& rng, std::size_t sample_cap) {
  std::optional<ReputationRecord> r;
  try {
    r = chain.sc_read(addr_rep, uid);
  } catch (const UnknownContract&) {
    return {};
  }
  if (!r || r->pk != pk) return {};
  if (!verify(pk, announce_message(uid, tid, event), sig)) return {};
  if (event == Event::started && !rep(r->up, r->down).at_least(min_rep)) return {};

  auto& members = views_[tid];
  if (event == Event::stopped) {
    members.erase(pk);
  } else {
    members[pk] = PeerEntry{pk, std::string(ip), port};
  }
  std::vector<PeerEntry> candidates;
  for (const auto& [key, entry] : members) {
    if (key != pk) candidates.push_back(entry);
  }
  if (members.empty()) views_.erase(tid);

  std::vector<PeerEntry> out;
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(out), sample_cap, rng);
  return out;
}

bool LocalView::admit(const AnnounceRecord& r, const Chain& chain,
                      const ContractAddress& addr_rep, Ratio min_rep) {
  if (check_record(r, chain, addr_rep, min_rep) != StoreResult::accepted) return false;
  views_[r.infohash][r.pk] = PeerEntry{r.pk, r.ip, r.port};
  return true;
}

void LocalView::remove(const Digest& tid, const PublicKey& pk) {
  auto it = views_.find(tid);
  if (it == views_.end()) return;
  it->second.erase(pk);
  if (it->second.empty()) views_.erase(it);
}

std::vector<PeerEntry> LocalView::members(const Digest& tid) const {
  std::vector<PeerEntry> out;
  if (auto it = views_.find(tid); it != views_.end()) {
    for (const auto& [pk, e] : it->second) out.push_back(e);
  }
  return out;
}

bool LocalView::contains(const Digest& tid, const PublicKey& pk) const {
  auto it = views_.find(tid);
  return it != views_.end() && it->second.count(pk) != 0;
}

}  // namespace pbts
