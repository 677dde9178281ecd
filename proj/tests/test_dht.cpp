#include <doctest.h>

#include <cmath>
#include <random>

#include "pbts/dht.hpp"
#include "support.hpp"

using namespace pbts;
using pbts::testing::Community;
using pbts::testing::Member;

namespace {

PublicKey random_pk(std::mt19937_64& rng) {
  PublicKey pk;
  for (auto& b : pk.data) b = static_cast<std::uint8_t>(rng());
  return pk;
}

NodeId random_id(std::mt19937_64& rng) {
  NodeId id;
  for (auto& b : id.data) b = static_cast<std::uint8_t>(rng());
  return id;
}

Endpoint endpoint(std::size_t i) {
  return {"10." + std::to_string(i / 65536) + "." + std::to_string(i / 256 % 256) + "." +
              std::to_string(i % 256),
          6881};
}

// Big-endian bytes as an integer comparison, computed bit by bit.
bool closer(const NodeId& a, const NodeId& b, const NodeId& target) {
  for (int bit = 0; bit < 160; ++bit) {
    const int byte = bit / 8;
    const int shift = 7 - bit % 8;
    const int da = ((a.data[byte] ^ target.data[byte]) >> shift) & 1;
    const int db = ((b.data[byte] ^ target.data[byte]) >> shift) & 1;
    if (da != db) return da < db;
  }
  return false;
}

std::vector<NodeId> brute_force(std::vector<NodeId> ids, const NodeId& target, std::size_t k) {
  std::sort(ids.begin(), ids.end(),
            [&](const NodeId& a, const NodeId& b) { return closer(a, b, target); });
  if (ids.size() > k) ids.resize(k);
  return ids;
}

std::vector<NodeId> ids_of(const std::vector<Contact>& cs) {
  std::vector<NodeId> out;
  for (const auto& c : cs) out.push_back(c.id);
  return out;
}

struct LookupNet {
  Chain chain{Allowlist{}};
  DhtNetwork net;
  std::vector<NodeId> ids;

  LookupNet(std::size_t n, std::uint64_t seed, DhtConfig cfg = {})
      : net(cfg, chain, ContractAddress{}, Ratio{0, 1}, seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      ids.push_back(net.add_node(random_pk(rng), endpoint(i)).id());
    }
    for (std::size_t i = 1; i < n; ++i) REQUIRE(net.join(ids[i], {endpoint(0)}));
    // a second self-lookup round lets early joiners learn late ones
    for (std::size_t i = 0; i < n; ++i) net.find_closest(ids[i], ids[i]);
  }
};

}  // namespace

TEST_CASE("node ids") {
  std::mt19937_64 rng(1);
  const auto pk = random_pk(rng);
  CHECK(node_id(pk) == node_id(pk));
  CHECK(NodeId::size * 8 == 160);
  std::set<NodeId> seen;
  for (int i = 0; i < 10000; ++i) seen.insert(node_id(random_pk(rng)));
  CHECK(seen.size() == 10000);
  // the id is the hash prefix
  const auto d = hash(pk.view());
  CHECK(std::equal(d.data.begin(), d.data.begin() + 20, node_id(pk).data.begin()));
  CHECK(dht_key(d) == node_id(pk));
}

TEST_CASE("xor metric") {
  std::mt19937_64 rng(2);
  const auto x = random_id(rng);
  const auto y = random_id(rng);
  CHECK(xor_distance(x, x) == Distance{});
  CHECK(xor_distance(x, y) == xor_distance(y, x));
  CHECK(shared_prefix(x, x) == 160);

  // toy ids varying only in the last byte: each distance is hit exactly once
  for (int a = 0; a < 256; ++a) {
    NodeId xa;
    xa.data[19] = static_cast<std::uint8_t>(a);
    std::map<int, int> per_distance;
    for (int b = 0; b < 256; ++b) {
      NodeId yb;
      yb.data[19] = static_cast<std::uint8_t>(b);
      ++per_distance[xor_distance(xa, yb)[19]];
      int expected_prefix = 152;
      for (int bit = 7; bit >= 0 && !(((a ^ b) >> bit) & 1); --bit) ++expected_prefix;
      CHECK(shared_prefix(xa, yb) == expected_prefix);
    }
    CHECK(per_distance.size() == 256);
    for (const auto& [dist, n] : per_distance) CHECK(n == 1);
  }
}

TEST_CASE("routing table") {
  std::mt19937_64 rng(3);
  const auto self = random_id(rng);
  RoutingTable t(self, 4);
  t.insert({self, endpoint(0)});
  CHECK(t.size() == 0);
  CHECK_FALSE(t.contains(self));

  std::size_t added = 0;
  for (int i = 0; i < 2000; ++i) {
    const Contact c{random_id(rng), endpoint(i + 1)};
    if (t.insert(c)) {
      ++added;
      CHECK(t.contains(c.id));
    } else {
      CHECK_FALSE(t.contains(c.id));
    }
  }
  CHECK(t.size() == added);
  for (int b = 0; b < 160; ++b) CHECK(t.bucket_size(b) <= 4);
  // half of random ids land in bucket 0
  CHECK(t.bucket_size(0) == 4);

  SUBCASE("refresh moves an entry to the back") {
    const auto first = *t.oldest_in_bucket_of(t.closest(self, 200).back().id);
    CHECK(t.insert(first));
    CHECK(t.oldest_in_bucket_of(first.id)->id != first.id);
    t.remove(first.id);
    CHECK_FALSE(t.contains(first.id));
  }
  SUBCASE("closest is sorted and bounded") {
    const auto target = random_id(rng);
    const auto c = t.closest(target, 7);
    REQUIRE(c.size() == 7);
    for (std::size_t i = 1; i < c.size(); ++i) CHECK(closer(c[i - 1].id, c[i].id, target));
  }
}

TEST_CASE("lookup on trivial networks") {
  Chain chain{Allowlist{}};
  DhtNetwork net({}, chain, ContractAddress{}, Ratio{0, 1}, 1);
  std::mt19937_64 rng(4);
  const auto a = net.add_node(random_pk(rng), endpoint(0)).id();
  const auto r = net.find_closest(a, random_id(rng));
  REQUIRE(r.closest.size() == 1);
  CHECK(r.closest[0].id == a);
  CHECK(r.hops == 0);
  CHECK_THROWS_AS(net.find_closest(random_id(rng), a), Error);
}

TEST_CASE("lookup matches brute force") {
  std::map<std::size_t, double> mean_hops;
  for (const std::size_t n : {10, 100, 1000}) {
    LookupNet ln(n, 100 + n);
    std::mt19937_64 rng(n);
    std::size_t total_hops = 0;
    std::size_t max_hops = 0;
    for (int q = 0; q < 100; ++q) {
      const auto key = random_id(rng);
      const auto& from = ln.ids[rng() % n];
      const auto got = ln.net.find_closest(from, key);
      CHECK(ids_of(got.closest) == brute_force(ln.ids, key, 20));
      total_hops += got.hops;
      max_hops = std::max(max_hops, got.hops);
    }
    mean_hops[n] = static_cast<double>(total_hops) / 100.0;
    if (n >= 100) CHECK(static_cast<double>(max_hops) <= 4.0 * std::log2(static_cast<double>(n)));
    MESSAGE("n=" << n << " mean hops " << mean_hops[n] << " max " << max_hops);
  }
  CHECK(mean_hops[1000] / mean_hops[100] < 2.0);
}

TEST_CASE("lookup skips dead nodes") {
  LookupNet ln(200, 7);
  std::mt19937_64 rng(7);
  std::vector<NodeId> live;
  for (std::size_t i = 0; i < ln.ids.size(); ++i) {
    if (i % 5 == 3) {
      ln.net.set_alive(ln.ids[i], false);
    } else {
      live.push_back(ln.ids[i]);
    }
  }
  for (int q = 0; q < 30; ++q) {
    const auto got = ln.net.find_closest(live[rng() % live.size()], random_id(rng));
    CHECK(got.closest.size() >= 10);
    for (const auto& c : got.closest) CHECK(ln.net.alive(c.id));
  }
  // after one maintenance round the tables are consistent again
  for (const auto& id : live) ln.net.refresh(id);
  for (int q = 0; q < 30; ++q) {
    const auto key = random_id(rng);
    const auto got = ln.net.find_closest(live[rng() % live.size()], key);
    CHECK(ids_of(got.closest) == brute_force(live, key, 20));
  }
}

TEST_CASE("lossy bus is deterministic") {
  DhtConfig cfg;
  cfg.drop_rate = 0.2;
  cfg.latency_ms = 30;
  auto run = [&] {
    LookupNet ln(60, 9, cfg);
    std::mt19937_64 rng(9);
    std::size_t found = 0;
    for (int q = 0; q < 20; ++q) found += ln.net.find_closest(ln.ids[q], random_id(rng)).closest.size();
    return std::tuple{ln.net.messages(), ln.net.elapsed_ms(), found};
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(std::get<1>(a) > 0);
  CHECK(std::get<2>(a) > 0);
}

TEST_CASE("bootstrap") {
  Chain chain{Allowlist{}};
  DhtNetwork net({}, chain, ContractAddress{}, Ratio{0, 1}, 5);
  std::mt19937_64 rng(5);
  std::vector<NodeId> ids;
  for (std::size_t i = 0; i < 100; ++i) ids.push_back(net.add_node(random_pk(rng), endpoint(i)).id());
  for (std::size_t i = 1; i < 100; ++i) REQUIRE(net.join(ids[i], {endpoint(0)}));
  for (auto& id : ids) net.find_closest(id, id);

  auto& late = net.add_node(random_pk(rng), endpoint(500));
  std::vector<NodeId> all = ids;
  all.push_back(late.id());

  SUBCASE("one live bootstrap among dead ones") {
    for (std::size_t i = 1; i <= 3; ++i) net.set_alive(ids[i], false);
    std::erase_if(all, [&](const NodeId& x) { return !net.alive(x); });
    REQUIRE(net.join(late.id(), {endpoint(1), endpoint(2), endpoint(3), endpoint(4)}));
    for (int q = 0; q < 20; ++q) {
      const auto key = random_id(rng);
      CHECK(ids_of(net.find_closest(late.id(), key).closest) == brute_force(all, key, 20));
    }
  }
  SUBCASE("cached contacts when the list is empty") {
    late.cache_bootstrap(endpoint(42));
    REQUIRE(net.join(late.id(), {}));
    const auto key = random_id(rng);
    CHECK(ids_of(net.find_closest(late.id(), key).closest) == brute_force(all, key, 20));
  }
  SUBCASE("nobody answers") {
    net.set_alive(ids[0], false);
    CHECK_FALSE(net.join(late.id(), {endpoint(0), endpoint(999)}));
    CHECK_FALSE(net.join(late.id(), {}));
    CHECK(late.table().size() == 0);
  }
}

namespace {

struct AuthNet {
  Community com;
  DhtNetwork net;
  std::vector<NodeId> ids;
  Digest tid = hash(std::string_view("torrent"));

  explicit AuthNet(std::size_t n, DhtConfig cfg = {}, std::uint64_t seed = 1)
      : net(cfg, com.chain, com.addr(), com.min_rep(), seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(net.add_node(random_pk(rng), endpoint(i)).id());
    for (std::size_t i = 1; i < n; ++i) REQUIRE(net.join(ids[i], {endpoint(0)}));
    for (auto& id : ids) net.find_closest(id, id);
  }

  StoreResult store(const AnnounceRecord& r, std::size_t at = 0) {
    return net.node(ids[at])->handle_store(r, com.chain, com.addr(), com.min_rep(), net.epoch());
  }
};

}  // namespace

TEST_CASE("storage gate") {
  AuthNet an(30);
  const auto alice = an.com.join("alice", 1);
  const auto bob = an.com.join("bob", 2);
  const auto rec = make_announce_record("alice", alice.kp, an.tid, "1.2.3.4", 7000);

  CHECK(an.store(rec) == StoreResult::accepted);
  CHECK(an.net.node(an.ids[0])->records(an.tid).size() == 1);

  auto forged = rec;
  forged.port = 7001;
  CHECK(an.store(forged) == StoreResult::bad_sig);

  const Member mallory{"mallory", keygen(3)};
  CHECK(an.store(make_announce_record("mallory", mallory.kp, an.tid, "6.6.6.6", 1)) ==
        StoreResult::unknown_uid);
  // bob's key claiming alice's account
  CHECK(an.store(make_announce_record("alice", bob.kp, an.tid, "6.6.6.6", 1)) ==
        StoreResult::pk_mismatch);

  an.com.set_counters(bob, 10, 100);
  CHECK(an.store(make_announce_record("bob", bob.kp, an.tid, "2.2.2.2", 1)) ==
        StoreResult::low_rep);
  CHECK(an.net.node(an.ids[0])->records(an.tid).size() == 1);

  SUBCASE("ttl") {
    an.net.set_epoch(1);
    CHECK(an.net.node(an.ids[0])->records(an.tid).size() == 1);
    an.net.set_epoch(2);
    CHECK(an.net.node(an.ids[0])->records(an.tid).empty());
  }
  SUBCASE("lagging chain view") {
    NodeKnobs lag;
    lag.read_lag = 1;
    auto& slow = an.net.add_node(keygen(90).pk, endpoint(900), lag);
    const auto carol = an.com.join("carol", 4);
    const auto r = make_announce_record("carol", carol.kp, an.tid, "3.3.3.3", 1);
    CHECK(slow.handle_store(r, an.com.chain, an.com.addr(), an.com.min_rep(), 0) ==
          StoreResult::unknown_uid);
    CHECK(an.store(r) == StoreResult::accepted);
    an.com.join("dave", 5);
    CHECK(slow.handle_store(r, an.com.chain, an.com.addr(), an.com.min_rep(), 0) ==
          StoreResult::accepted);
  }
  SUBCASE("read budget") {
    NodeKnobs b;
    b.read_budget = 1;
    auto& thrifty = an.net.add_node(keygen(91).pk, endpoint(901), b);
    CHECK(thrifty.handle_store(rec, an.com.chain, an.com.addr(), an.com.min_rep(), 0) ==
          StoreResult::accepted);
    CHECK(thrifty.handle_store(rec, an.com.chain, an.com.addr(), an.com.min_rep(), 0) ==
          StoreResult::over_budget);
  }
}

TEST_CASE("announce and get_peers") {
  AuthNet an(40);
  const auto alice = an.com.join("alice", 1);
  const auto bob = an.com.join("bob", 2);
  const auto rec = make_announce_record("alice", alice.kp, an.tid, "1.2.3.4", 7000);

  CHECK(an.net.announce(an.ids[5], rec) == 20);
  const auto peers = an.net.get_peers(an.ids[17], an.tid);
  REQUIRE(peers.size() == 1);
  CHECK(peers[0] == PeerEntry{alice.kp.pk, "1.2.3.4", 7000});

  const Member ghost{"ghost", keygen(9)};
  CHECK(an.net.announce(an.ids[6], make_announce_record("ghost", ghost.kp, an.tid, "9.9.9.9", 1)) == 0);
  an.com.set_counters(bob, 1, 100);
  CHECK(an.net.announce(an.ids[7], make_announce_record("bob", bob.kp, an.tid, "2.2.2.2", 1)) == 0);
  CHECK(an.net.get_peers(an.ids[8], an.tid).size() == 1);

  SUBCASE("peer stops re-announcing") {
    an.net.set_epoch(1);
    CHECK(an.net.get_peers(an.ids[3], an.tid).size() == 1);
    an.net.set_epoch(2);
    CHECK(an.net.get_peers(an.ids[3], an.tid).empty());
  }
  SUBCASE("re-announce refreshes") {
    an.net.set_epoch(1);
    CHECK(an.net.announce(an.ids[5], rec) == 20);
    an.net.set_epoch(2);
    CHECK(an.net.get_peers(an.ids[3], an.tid).size() == 1);
  }
  SUBCASE("tampered records are filtered on retrieval") {
    const auto closest = an.net.find_closest(an.ids[0], dht_key(an.tid)).closest;
    for (const auto& c : closest) {
      auto bad = rec;
      bad.ip = "6.6.6.6";
      an.net.node(c.id)->inject_unchecked(bad);
      an.net.node(c.id)->inject_unchecked(make_announce_record("ghost", ghost.kp, an.tid, "9.9.9.9", 1));
      an.net.node(c.id)->inject_unchecked(make_announce_record("bob", bob.kp, an.tid, "2.2.2.2", 1));
    }
    CHECK(an.net.get_peers(an.ids[1], an.tid).empty());
  }
  SUBCASE("reputation loss after storage") {
    an.com.set_counters(alice, 0, 100);
    CHECK(an.net.get_peers(an.ids[1], an.tid).empty());
  }
}

TEST_CASE("local views") {
  Community com;
  const auto a = com.join("a", 1);
  const auto b = com.join("b", 2);
  const auto low = com.join("low", 3);
  com.set_counters(low, 1, 100);
  const auto tid = hash(std::string_view("t"));
  std::mt19937_64 rng(1);
  LocalView va, vb;

  auto send = [&](LocalView& to, const Member& from, Event e, std::uint16_t port) {
    const auto sig = sign(from.kp.sk, announce_message(from.uid, tid, e));
    return to.peer_announce(from.uid, from.kp.pk, sig, tid, e, "10.0.0.1", port, com.chain,
                            com.addr(), com.min_rep(), rng);
  };

  // each peer announces itself locally, then to the other
  send(va, a, Event::started, 1);
  send(vb, b, Event::started, 2);
  const auto from_b = send(vb, a, Event::started, 1);
  const auto from_a = send(va, b, Event::started, 2);
  REQUIRE(from_b.size() == 1);
  CHECK(from_b[0].pk == b.kp.pk);
  REQUIRE(from_a.size() == 1);
  CHECK(from_a[0].pk == a.kp.pk);
  CHECK(va.members(tid) == vb.members(tid));
  CHECK(va.members(tid).size() == 2);

  const auto before = va.members(tid);
  CHECK(send(va, low, Event::started, 3).empty());
  CHECK(va.members(tid) == before);

  auto forged = sign(b.kp.sk, announce_message("a", tid, Event::none));
  CHECK(va.peer_announce("a", a.kp.pk, forged, tid, Event::none, "x", 1, com.chain, com.addr(),
                         com.min_rep(), rng)
            .empty());

  for (int i = 0; i < 20; ++i) {
    for (const auto& p : send(va, a, Event::none, 1)) CHECK(p.pk != a.kp.pk);
  }
  send(va, b, Event::stopped, 2);
  CHECK_FALSE(va.contains(tid, b.kp.pk));
}

TEST_CASE("local views converge through the dht") {
  DhtConfig cfg;
  cfg.k = 8;
  AuthNet an(24, cfg, 3);
  std::vector<Member> peers;
  for (int i = 0; i < 8; ++i) peers.push_back(an.com.join("p" + std::to_string(i), 40 + i));
  std::vector<LocalView> views(peers.size());
  const std::uint64_t period = 2;

  std::optional<std::uint64_t> converged_at;
  for (std::uint64_t e = 0; e <= 3 * period; ++e) {
    an.net.set_epoch(e);
    // staggered schedule: peer i re-announces on epochs congruent to -i mod period,
    // then looks up the swarm once the epoch's announces are out
    auto due = [&](std::size_t i) { return (e + i) % period == 0; };
    for (std::size_t i = 0; i < peers.size(); ++i) {
      if (!due(i)) continue;
      const auto& p = peers[i];
      an.net.announce(an.ids[i], make_announce_record(p.uid, p.kp, an.tid, endpoint(i).host, 6881));
    }
    for (std::size_t i = 0; i < peers.size(); ++i) {
      if (!due(i)) continue;
      for (const auto& pe : an.net.get_peers(an.ids[i], an.tid)) {
        const auto it = std::find_if(peers.begin(), peers.end(),
                                     [&](const Member& m) { return m.kp.pk == pe.pk; });
        REQUIRE(it != peers.end());
        CHECK(views[i].admit(make_announce_record(it->uid, it->kp, an.tid, pe.ip, pe.port),
                             an.com.chain, an.com.addr(), an.com.min_rep()));
      }
    }
    bool equal = views[0].members(an.tid).size() == peers.size();
    for (const auto& v : views) equal = equal && v.members(an.tid) == views[0].members(an.tid);
    if (equal && !converged_at) converged_at = e;
  }
  REQUIRE(converged_at);
  CHECK(*converged_at <= 3 * period);
}

// Gate soundness: scripted random operations, including Byzantine announce
// attempts, never leave a record from an unregistered or sub-threshold peer
// in any honest node's store. The oracle tracks registrations and counters
// on its own and compares with doubles on small integers.
TEST_CASE("property: storage gate soundness") {
  struct Model {
    PublicKey pk;
    std::int64_t up, down;
  };
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    DhtConfig cfg;
    cfg.k = 4;
    AuthNet an(12, cfg, seed);
    std::mt19937_64 rng(seed * 7919);
    std::map<std::string, Model> model;
    const std::array<KeyPair, 3> outsiders{keygen(seed * 1000 + 501), keygen(seed * 1000 + 502),
                                           keygen(seed * 1000 + 503)};
    std::vector<Member> members;
    const double num = 1.0, den = 2.0;
    auto passes = [&](const AnnounceRecord& r) {
      auto it = model.find(r.uid);
      if (it == model.end() || it->second.pk != r.pk) return false;
      return static_cast<double>(it->second.up) * den >= num * static_cast<double>(it->second.down);
    };
    using Key = std::tuple<NodeId, Digest, PublicKey>;
    auto snapshot = [&] {
      std::map<Key, std::tuple<std::string, std::string, std::uint16_t, Signature, std::uint64_t>> out;
      for (const auto* n : an.net.nodes()) {
        for (const auto& [tid, recs] : n->store()) {
          for (const auto& [pk, r] : recs) {
            out[{n->id(), tid, pk}] = {r.uid, r.ip, r.port, r.sig, r.stored_epoch};
          }
        }
      }
      return out;
    };
    std::uint64_t epoch = 0;
    std::size_t stored = 0;
    std::map<std::string, AnnounceRecord> signed_by_member;
    auto record_of = [&](const Member& m) -> const AnnounceRecord& {
      auto it = signed_by_member.find(m.uid);
      if (it == signed_by_member.end()) {
        it = signed_by_member.emplace(m.uid, make_announce_record(m.uid, m.kp, an.tid, "1.1.1.1", 1)).first;
      }
      return it->second;
    };
    auto announce = [&](const NodeId& from, const AnnounceRecord& r) {
      const auto n = an.net.announce(from, r);
      // an accepted store of an identical record leaves no visible diff
      if (n > 0) CHECK(passes(r));
      stored += n;
    };

    for (int op = 0; op < 200; ++op) {
      const auto before = snapshot();
      const auto pick = rng() % 10;
      const auto node = an.ids[rng() % an.ids.size()];
      if (pick == 0 || members.empty()) {
        const auto m = an.com.join("m" + std::to_string(members.size()), seed * 1000 + members.size());
        model[m.uid] = {m.kp.pk, 1000, 0};
        members.push_back(m);
      } else if (pick <= 3) {
        announce(node, record_of(members[rng() % members.size()]));
      } else if (pick == 4) {
        const auto& k = outsiders[rng() % outsiders.size()];
        announce(node, make_announce_record("x" + std::to_string(op % 5), k, an.tid, "6.6.6.6", 1));
      } else if (pick == 5) {
        // key swap: a member's uid with someone else's key
        const auto& m = members[rng() % members.size()];
        const auto& k = outsiders[rng() % outsiders.size()];
        announce(node, make_announce_record(m.uid, k, an.tid, "6.6.6.6", 1));
      } else if (pick == 6) {
        auto& m = members[rng() % members.size()];
        const std::int64_t up = static_cast<std::int64_t>(rng() % 100);
        const std::int64_t down = static_cast<std::int64_t>(rng() % 300);
        an.com.set_counters(m, up, down);
        model[m.uid].up = up;
        model[m.uid].down = down;
      } else if (pick == 7) {
        an.net.set_epoch(++epoch);
      } else if (pick == 8) {
        an.net.set_alive(node, !an.net.alive(node) || an.net.live_ids().size() < 6);
      } else {
        // forged signature for a member
        auto r = record_of(members[rng() % members.size()]);
        r.ip = "7.7.7.7";
        announce(node, r);
      }

      for (const auto* n : an.net.nodes()) {
        for (const auto& [tid, recs] : n->store()) {
          for (const auto& [pk, r] : recs) {
            const auto it = before.find({n->id(), tid, pk});
            const bool changed =
                it == before.end() ||
                it->second != std::tuple{r.uid, r.ip, r.port, r.sig, r.stored_epoch};
            if (changed) CHECK(passes(r));
          }
        }
      }
    }
    CHECK(stored > 0);
  }
}
