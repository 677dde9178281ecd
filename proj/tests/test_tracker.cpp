#include <doctest.h>

#include <random>

#include "pbts/tracker.hpp"

using namespace pbts;

namespace {

struct User {
  std::string uid;
  KeyPair kp;
};

struct World {
  Allowlist allow;
  Chain chain;
  Tracker tracker;
  Bytes content;
  TorrentMeta torrent;
  std::mt19937_64 rng{99};

  static Enclave enclave(std::string_view cfg, Allowlist& allow) {
    const Bytes prog = to_bytes("pbts-tracker");
    allow.insert(measure(prog, to_bytes(cfg)));
    return *Enclave::launch(prog, to_bytes(cfg), allow, QuoteNonce{});
  }

  static Allowlist initial_allowlist() {
    Allowlist a;
    for (const char* g : {"gen-0", "gen-1", "gen-2"}) enclave(g, a);
    return a;
  }

  explicit World(TrackerConfig cfg = {}, Ratio min_rep = {1, 2}, std::int64_t credit = 1000)
      : allow(initial_allowlist()),
        chain(allow),
        tracker(*Tracker::deploy(chain, enclave("gen-0", allow), params(min_rep, credit), cfg)),
        content(make_content()),
        torrent(TorrentMeta::from_content(content, 100)) {}

  static PublicParams params(Ratio min_rep, std::int64_t credit) {
    std::mt19937_64 r(1);
    return setup(128, min_rep, credit, r);
  }

  static Bytes make_content() {
    std::mt19937_64 r(2);
    Bytes c(1050);
    for (auto& b : c) b = static_cast<std::uint8_t>(r());
    return c;
  }

  ByteView piece(std::uint64_t i) const { return torrent.piece_of(content, i); }

  User join(std::string uid, std::uint64_t seed) {
    User u{std::move(uid), keygen(seed)};
    const auto sig = sign(u.kp.sk, register_message(tracker.params().iid, u.uid));
    REQUIRE(tracker.register_user(u.uid, u.kp.pk, sig, {prove_possession(u.kp.sk)}));
    return u;
  }

  // Direct owner write, bypassing the protocol, to stage counters.
  void set_counters(const User& u, std::int64_t up, std::int64_t down) {
    const ReputationRecord r{u.uid, u.kp.pk, up, down};
    const auto addr = tracker.address();
    const auto auth = tracker.enclave().authorize(
        Chain::write_payload(addr, chain.write_nonce(addr), std::span(&r, 1)));
    REQUIRE(chain.sc_write(addr, r, auth));
  }

  std::vector<PeerEntry> announce(const User& u, Event e, std::uint16_t port = 6881) {
    const auto sig = sign(u.kp.sk, announce_message(u.uid, torrent.infohash(), e));
    return tracker.announce(u.uid, u.kp.pk, sig, torrent.infohash(), e, "10.0.0.1", port, rng);
  }

  Receipt receipt(const User& sender, const User& receiver, std::uint64_t i,
                  std::uint64_t epoch) const {
    return *attest(receiver.kp, sender.kp.pk, piece(i), torrent, i, epoch);
  }

  std::uint64_t at(std::uint64_t epoch) const {
    return epoch * tracker.config().epochs.width + 17;
  }

  struct Snapshot {
    std::string state;
    std::uint64_t seq;
    std::map<Bytes, std::uint64_t> recent;
    bool operator==(const Snapshot&) const = default;
  };
  Snapshot snapshot() const { return {chain.state_json(), chain.head_seq(), tracker.recent()}; }
};

}  // namespace

TEST_CASE("setup") {
  std::mt19937_64 a(1), b(1), c(2);
  const auto p1 = setup(128, {1, 2}, 500, a);
  const auto p2 = setup(128, {1, 2}, 500, b);
  const auto p3 = setup(128, {1, 2}, 500, c);
  CHECK(p1.iid == p2.iid);
  CHECK(p1.iid != p3.iid);
  CHECK(p1.iid.size() == 16);
  CHECK(setup(256, {0, 1}, 0, c).iid.size() == 32);
  CHECK(p1.min_rep.num == 1);
  CHECK(p1.min_rep.den == 2);
  CHECK(p1.init_credit == 500);
  CHECK_THROWS_AS(setup(64, {1, 2}, 0, c), Error);
}

TEST_CASE("reputation") {
  CHECK(rep(0, 0).infinite());
  CHECK(rep(0, 0).value() == std::numeric_limits<double>::infinity());
  CHECK(rep(10, 20).value() == 0.5);
  CHECK(rep(1000, 0).at_least({1000000, 1}));
  CHECK(rep(10, 20).at_least({1, 2}));
  CHECK_FALSE(rep(10, 21).at_least({1, 2}));
  CHECK(rep(0, 5).at_least({0, 1}));
  CHECK_THROWS_AS(rep(-1, 0), Error);
  // exact at magnitudes where doubles round
  const std::int64_t big = (std::int64_t{1} << 62) + 1;
  CHECK_FALSE(rep(big - 1, big).at_least({1, 1}));
  CHECK(rep(big, big).at_least({1, 1}));
}

TEST_CASE("register") {
  World w;
  const auto alice = w.join("alice", 10);
  const auto rec = w.tracker.lookup("alice");
  REQUIRE(rec);
  CHECK(rec->up == 1000);
  CHECK(rec->down == 0);
  CHECK(rec->pk == alice.kp.pk);
  CHECK(w.tracker.uid_of(alice.kp.pk) == "alice");

  const auto iid = w.tracker.params().iid;
  const auto other = keygen(11);
  const auto pop = RegisterParams{prove_possession(other.sk)};

  SUBCASE("duplicate uid") {
    const auto sig = sign(other.sk, register_message(iid, "alice"));
    CHECK_FALSE(w.tracker.register_user("alice", other.pk, sig, pop));
  }
  SUBCASE("signature by a different key") {
    const auto sig = sign(keygen(12).sk, register_message(iid, "bob"));
    CHECK_FALSE(w.tracker.register_user("bob", other.pk, sig, pop));
  }
  SUBCASE("signature for another instance") {
    const auto sig = sign(other.sk, register_message(to_bytes("another-instance"), "bob"));
    CHECK_FALSE(w.tracker.register_user("bob", other.pk, sig, pop));
  }
  SUBCASE("missing or wrong proof of possession") {
    const auto sig = sign(other.sk, register_message(iid, "bob"));
    CHECK_FALSE(w.tracker.register_user("bob", other.pk, sig, {}));
    CHECK_FALSE(w.tracker.register_user("bob", other.pk, sig, {prove_possession(keygen(13).sk)}));
    CHECK(w.tracker.register_user("bob", other.pk, sig, pop));
  }
  SUBCASE("a key can back only one uid") {
    const auto sig = sign(alice.kp.sk, register_message(iid, "alice2"));
    CHECK_FALSE(w.tracker.register_user("alice2", alice.kp.pk, sig,
                                        {prove_possession(alice.kp.sk)}));
  }
  CHECK(w.tracker.lookup("alice") == rec);
}

TEST_CASE("announce") {
  World w;
  const auto a = w.join("a", 1);
  const auto b = w.join("b", 2);
  const auto c = w.join("c", 3);

  CHECK(w.announce(a, Event::started, 1).empty());
  const auto seen_by_b = w.announce(b, Event::started, 2);
  REQUIRE(seen_by_b.size() == 1);
  CHECK(seen_by_b[0] == PeerEntry{a.kp.pk, "10.0.0.1", 1});
  CHECK(w.announce(c, Event::started, 3).size() == 2);

  SUBCASE("never returns the requester") {
    for (int i = 0; i < 20; ++i) {
      for (const auto& p : w.announce(a, Event::none)) CHECK(p.pk != a.kp.pk);
    }
  }
  SUBCASE("stopped peers disappear") {
    w.announce(a, Event::stopped);
    for (int i = 0; i < 20; ++i) {
      for (const auto& p : w.announce(b, Event::none)) CHECK(p.pk != a.kp.pk);
      for (const auto& p : w.announce(c, Event::none)) CHECK(p.pk != a.kp.pk);
    }
    CHECK(w.tracker.swarm(w.torrent.infohash()).size() == 2);
  }
  SUBCASE("low reputation cannot start") {
    const auto d = w.join("d", 4);
    w.set_counters(d, 1, 100);
    const auto before = w.tracker.swarm(w.torrent.infohash());
    CHECK(w.announce(d, Event::started).empty());
    CHECK(w.tracker.swarm(w.torrent.infohash()) == before);
    // other events are not gated
    CHECK(w.announce(d, Event::completed).size() == 3);
  }
  SUBCASE("authentication") {
    const auto tid = w.torrent.infohash();
    const auto sig = sign(a.kp.sk, announce_message("a", tid, Event::none));
    CHECK(w.tracker.announce("a", a.kp.pk, sig, tid, Event::none, "x", 1, w.rng).size() == 2);
    CHECK(w.tracker.announce("a", a.kp.pk, sig, tid, Event::started, "x", 1, w.rng).empty());
    CHECK(w.tracker.announce("b", a.kp.pk, sig, tid, Event::none, "x", 1, w.rng).empty());
    CHECK(w.tracker.announce("nobody", a.kp.pk, sig, tid, Event::none, "x", 1, w.rng).empty());
    const auto forged = sign(keygen(50).sk, announce_message("a", tid, Event::none));
    CHECK(w.tracker.announce("a", a.kp.pk, forged, tid, Event::none, "x", 1, w.rng).empty());
  }
}

TEST_CASE("announce sample is capped and uniform") {
  TrackerConfig cfg;
  cfg.sample_cap = 5;
  World w(cfg);
  std::vector<User> users;
  for (int i = 0; i < 12; ++i) users.push_back(w.join("u" + std::to_string(i), 100 + i));
  for (const auto& u : users) w.announce(u, Event::started);

  std::map<PublicKey, int> hits;
  const int rounds = 2200;
  for (int r = 0; r < rounds; ++r) {
    const auto got = w.announce(users[0], Event::none);
    REQUIRE(got.size() == 5);
    std::set<PublicKey> distinct;
    for (const auto& p : got) {
      CHECK(p.pk != users[0].kp.pk);
      distinct.insert(p.pk);
      ++hits[p.pk];
    }
    CHECK(distinct.size() == 5);
  }
  // each of the 11 others expected rounds * 5/11 = 1000 times
  for (const auto& [pk, n] : hits) CHECK(std::abs(n - 1000) < 150);
  CHECK(hits.size() == 11);
}

TEST_CASE("report") {
  World w;
  const auto s = w.join("sender", 1);
  const auto r1 = w.join("r1", 2);
  const auto r2 = w.join("r2", 3);
  const auto r3 = w.join("r3", 4);
  const std::uint64_t e = 5;
  const std::vector<Receipt> rs{w.receipt(s, r1, 1, e), w.receipt(s, r2, 2, e),
                                w.receipt(s, r3, 3, e)};
  const auto payload = make_report("sender", s.kp.pk, w.torrent, rs);
  CHECK(payload.delta_up == 300);

  SUBCASE("valid report credits both sides") {
    REQUIRE(w.tracker.report(payload, w.at(e)));
    CHECK(w.tracker.lookup("sender")->up == 1300);
    CHECK(w.tracker.lookup("sender")->down == 0);
    for (const auto* u : {&r1, &r2, &r3}) {
      CHECK(w.tracker.lookup(u->uid)->down == 100);
      CHECK(w.tracker.lookup(u->uid)->up == 1000);
    }
    CHECK(w.tracker.recent_size() == 3);
    CHECK_FALSE(w.tracker.report(payload, w.at(e)));
    CHECK_FALSE(w.tracker.report(payload, w.at(e + 1)));
  }
  SUBCASE("last piece is credited at its true length") {
    const std::vector<Receipt> tail{w.receipt(s, r1, 11, e)};
    const auto p = make_report("sender", s.kp.pk, w.torrent, tail);
    CHECK(p.delta_up == 50);
    REQUIRE(w.tracker.report(p, w.at(e)));
    CHECK(w.tracker.lookup("r1")->down == 50);
  }
  SUBCASE("self-declared downloads") {
    auto p = make_report("sender", s.kp.pk, w.torrent, rs, 42);
    REQUIRE(w.tracker.report(p, w.at(e)));
    CHECK(w.tracker.lookup("sender")->down == 42);
  }

  const auto before = w.snapshot();
  auto rejected = [&](const ReportPayload& p, std::uint64_t now) {
    const bool ok = w.tracker.report(p, now);
    CHECK(w.snapshot() == before);
    return !ok;
  };

  SUBCASE("one stale receipt rejects the whole report") {
    auto stale = rs;
    stale[1] = w.receipt(s, r2, 2, e - 3);
    CHECK(rejected(make_report("sender", s.kp.pk, w.torrent, stale), w.at(e)));
    // the window is [now - delta, now + skew]
    CHECK(w.tracker.report(make_report("sender", s.kp.pk, w.torrent, rs), w.at(e + 2)));
  }
  SUBCASE("receipt too far in the future") {
    std::vector<Receipt> future{w.receipt(s, r1, 1, e + 2)};
    CHECK(rejected(make_report("sender", s.kp.pk, w.torrent, future), w.at(e)));
    future[0] = w.receipt(s, r1, 1, e + 1);
    CHECK(w.tracker.report(make_report("sender", s.kp.pk, w.torrent, future), w.at(e)));
  }
  SUBCASE("inflated upload claim") {
    auto p = payload;
    p.delta_up += 1;
    CHECK(rejected(p, w.at(e)));
    p.delta_up = 200;
    CHECK(rejected(p, w.at(e)));
  }
  SUBCASE("forged aggregate") {
    auto p = payload;
    p.agg = aggregate_receipts(std::span(rs).first(2));
    CHECK(rejected(p, w.at(e)));
    p.agg.count = 3;
    CHECK(rejected(p, w.at(e)));
  }
  SUBCASE("claim altered after signing") {
    auto p = payload;
    p.receipts[0].epoch = e - 1;
    CHECK(rejected(p, w.at(e)));
    p = payload;
    p.receipts[2].piece_index = 4;
    p.receipts[2].piece_hash = w.torrent.hash_at(4);
    CHECK(rejected(p, w.at(e)));
    p = payload;
    p.receipts[2].piece_hash = w.torrent.hash_at(4);
    CHECK(rejected(p, w.at(e)));
  }
  SUBCASE("duplicate receipt inside one report") {
    const std::vector<Receipt> dup{rs[0], rs[0]};
    CHECK(rejected(make_report("sender", s.kp.pk, w.torrent, dup), w.at(e)));
  }
  SUBCASE("receipts credited to someone else") {
    auto p = payload;
    p.uid = "r1";
    CHECK(rejected(p, w.at(e)));
    p = payload;
    p.pk = r1.kp.pk;
    CHECK(rejected(p, w.at(e)));
  }
  SUBCASE("self-signed receipts") {
    const std::vector<Receipt> self{w.receipt(s, s, 1, e)};
    CHECK(rejected(make_report("sender", s.kp.pk, w.torrent, self), w.at(e)));
  }
  SUBCASE("unregistered downloader") {
    const User ghost{"ghost", keygen(77)};
    const std::vector<Receipt> g{w.receipt(s, ghost, 1, e)};
    CHECK(rejected(make_report("sender", s.kp.pk, w.torrent, g), w.at(e)));
  }
  SUBCASE("unknown reporter") {
    auto p = payload;
    p.uid = "nobody";
    CHECK(rejected(p, w.at(e)));
  }
}

TEST_CASE("report_batch") {
  World w;
  const auto s = w.join("sender", 1);
  const auto r = w.join("r", 2);
  const std::uint64_t e = 3;
  std::vector<ByteView> pieces;
  for (std::uint64_t i = 1; i <= 10; ++i) pieces.push_back(w.piece(i));
  const auto c1 = *batch_attest(r.kp, s.kp.pk, std::span(pieces).first(5), w.torrent, 1, e);
  const auto c2 = *batch_attest(r.kp, s.kp.pk, std::span(pieces).subspan(5), w.torrent, 6, e);
  std::array<Signature, 2> sigs{c1.sig, c2.sig};
  BatchReport p{"sender", s.kp.pk, w.torrent, {c1, c2}, aggregate(std::span<const Signature>(sigs)),
                1000, 0};

  REQUIRE(w.tracker.report_batch(p, w.at(e)));
  CHECK(w.tracker.lookup("sender")->up == 2000);
  CHECK(w.tracker.lookup("r")->down == 1000);
  CHECK(w.tracker.recent_size() == 10);
  CHECK_FALSE(w.tracker.report_batch(p, w.at(e)));

  // a per-piece receipt for a piece already credited by the batch is a reuse
  const std::vector<Receipt> again{w.receipt(s, r, 3, e)};
  CHECK_FALSE(w.tracker.report(make_report("sender", s.kp.pk, w.torrent, again), w.at(e)));

  SUBCASE("tampered range") {
    World w2;
    const auto s2 = w2.join("sender", 1);
    const auto r2 = w2.join("r", 2);
    auto c = *batch_attest(r2.kp, s2.kp.pk, std::span(pieces).first(5), w2.torrent, 1, e);
    std::array<Signature, 1> one{c.sig};
    BatchReport q{"sender", s2.kp.pk, w2.torrent, {c}, aggregate(std::span<const Signature>(one)),
                  500, 0};
    auto bad = q;
    bad.commitments[0].k = 6;
    bad.delta_up = 600;
    CHECK_FALSE(w2.tracker.report_batch(bad, w2.at(e)));
    bad = q;
    bad.delta_up = 600;
    CHECK_FALSE(w2.tracker.report_batch(bad, w2.at(e)));
    CHECK(w2.tracker.report_batch(q, w2.at(e)));
  }
}

TEST_CASE("report_session") {
  World w;
  const auto s = w.join("sender", 1);
  const auto r = w.join("r", 2);
  const std::uint64_t e = 4;
  auto [cert, session] = open_session(r.kp, s.kp.pk, w.torrent, w.rng);
  std::vector<SessionPieceSig> sigs;
  for (std::uint64_t i = 1; i <= 5; ++i) {
    sigs.push_back({i, e, session_attest(session, cert, w.torrent, i, e)});
  }
  std::array<SessionCert, 1> certs{cert};
  SessionReport p{"sender", s.kp.pk, w.torrent, {cert}, {sigs},
                  aggregate_session_certs(certs), 500, 0};

  SUBCASE("valid") {
    REQUIRE(w.tracker.report_session(p, w.at(e)));
    CHECK(w.tracker.lookup("sender")->up == 1500);
    CHECK(w.tracker.lookup("r")->down == 500);
    CHECK_FALSE(w.tracker.report_session(p, w.at(e)));
    auto subset = p;
    subset.pieces[0].resize(1);
    subset.delta_up = 100;
    CHECK_FALSE(w.tracker.report_session(subset, w.at(e)));
  }
  SUBCASE("one forged session signature") {
    const auto before = w.snapshot();
    auto bad = p;
    bad.pieces[0][3].sig.data[0] ^= 1;
    CHECK_FALSE(w.tracker.report_session(bad, w.at(e)));
    bad = p;
    bad.pieces[0][3].sig = session_attest(session_keygen(5), cert, w.torrent, 4, e);
    CHECK_FALSE(w.tracker.report_session(bad, w.at(e)));
    CHECK(w.snapshot() == before);
  }
  SUBCASE("certificate for another sender") {
    auto bad = p;
    bad.certs[0].pk_sender = r.kp.pk;
    CHECK_FALSE(w.tracker.report_session(bad, w.at(e)));
  }
  SUBCASE("aggregate does not cover the certificate") {
    auto bad = p;
    auto [other, unused] = open_session(r.kp, s.kp.pk, w.torrent, w.rng);
    std::array<SessionCert, 1> oc{other};
    bad.agg = aggregate_session_certs(oc);
    CHECK_FALSE(w.tracker.report_session(bad, w.at(e)));
  }
}

TEST_CASE("gc_recent boundaries") {
  World w;
  const auto delta = w.tracker.config().epochs.delta;
  w.tracker.gc_recent(w.at(0));
  CHECK(w.tracker.recent_size() == 0);

  const auto s = w.join("s", 1);
  const auto r = w.join("r", 2);
  const std::uint64_t e = 10;
  const std::vector<Receipt> rs{w.receipt(s, r, 1, e)};
  REQUIRE(w.tracker.report(make_report("s", s.kp.pk, w.torrent, rs), w.at(e)));

  w.tracker.gc_recent(w.at(e + delta + 1));
  CHECK(w.tracker.recent_size() == 1);
  w.tracker.gc_recent(w.at(e + delta + 2));
  CHECK(w.tracker.recent_size() == 0);
}

TEST_CASE("migrate") {
  World w;
  const auto alice = w.join("alice", 1);
  const auto old_addr = w.tracker.address();

  const auto next = World::enclave("gen-1", w.allow);
  const auto proof = migration_proof(next, to_bytes("iid-1"), old_addr);
  Chain& chain = w.chain;

  SUBCASE("forged quote") {
    auto bad = proof;
    bad.auth.quote.sig.data[3] ^= 1;
    CHECK_FALSE(migrate(chain, old_addr, bad, w.allow));
    Allowlist other;
    CHECK_FALSE(migrate(chain, old_addr, proof, other));
  }
  SUBCASE("valid migration inherits state") {
    const auto fresh = migrate(chain, old_addr, proof, w.allow);
    REQUIRE(fresh);
    CHECK(chain.get_referrer(*fresh) == old_addr);
    CHECK(chain.sc_read(*fresh, "alice") == chain.sc_read(old_addr, "alice"));

    Tracker t2(chain, next, *fresh, w.tracker.params());
    CHECK(t2.uid_of(alice.kp.pk) == "alice");
    // reports keep working against inherited records
    const User bob{"bob", keygen(2)};
    REQUIRE(t2.register_user("bob", bob.kp.pk,
                             sign(bob.kp.sk, register_message(t2.params().iid, "bob")),
                             {prove_possession(bob.kp.sk)}));
    const std::vector<Receipt> rs{w.receipt(alice, bob, 1, 3)};
    REQUIRE(t2.report(make_report("alice", alice.kp.pk, w.torrent, rs), w.at(3)));
    CHECK(t2.lookup("alice")->up == 1100);
    CHECK(chain.sc_read(old_addr, "alice")->up == 1000);

    SUBCASE("two migrations: single hop") {
      const auto third = World::enclave("gen-2", w.allow);
      const auto again = migrate(chain, *fresh, migration_proof(third, to_bytes("iid-2"), *fresh),
                                 w.allow);
      REQUIRE(again);
      // alice was written locally in fresh, so she survives; carol exists only in old
      w.join("carol", 3);
      CHECK(chain.sc_read(*again, "alice"));
      CHECK_FALSE(chain.sc_read(*again, "carol"));
      CHECK(chain.sc_read(*fresh, "carol"));
    }
  }
  SUBCASE("missing old contract") {
    ContractAddress ghost;
    ghost.data.fill(9);
    CHECK_THROWS_AS(migrate(chain, ghost, proof, w.allow), UnknownContract);
  }
}

TEST_CASE("non-reusability: exhaustive over epoch pairs") {
  int accepted_twice = 0;
  int by_dedup = 0;
  int by_expiry = 0;
  for (std::uint64_t delta = 0; delta <= 3; ++delta) {
    TrackerConfig cfg;
    cfg.epochs.delta = delta;
    World w(cfg);
    const auto s = w.join("s", 1);
    const auto r = w.join("r", 2);
    std::uint64_t base = 100;
    for (std::uint64_t back = 0; back <= delta + cfg.skew; ++back) {
      for (std::uint64_t gap = 0; gap <= 3 * delta + 3; ++gap) {
        base += 10 * (delta + 2);
        const std::uint64_t t1 = base;
        const std::uint64_t receipt_epoch = t1 + cfg.skew - back;
        const std::uint64_t t2 = t1 + gap;
        const std::vector<Receipt> rs{w.receipt(s, r, 1 + gap % 11, receipt_epoch)};
        const auto p = make_report("s", s.kp.pk, w.torrent, rs);

        w.tracker.gc_recent(w.at(t1));
        REQUIRE(w.tracker.report(p, w.at(t1)));
        for (std::uint64_t t = t1; t <= t2; ++t) w.tracker.gc_recent(w.at(t));
        const bool still_recent = w.tracker.recent().count(receipt_id(rs[0]).encode()) != 0;
        const bool in_window = receipt_epoch + delta >= t2;
        if (w.tracker.report(p, w.at(t2))) ++accepted_twice;
        if (gap <= delta + 1) {
          CHECK(still_recent);
          ++by_dedup;
        } else {
          CHECK_FALSE(in_window);
          ++by_expiry;
        }
      }
    }
  }
  CHECK(accepted_twice == 0);
  CHECK(by_dedup > 0);
  CHECK(by_expiry > 0);
}

TEST_CASE("property: rejected reports leave no trace") {
  World w;
  std::vector<User> users;
  for (int i = 0; i < 5; ++i) users.push_back(w.join("u" + std::to_string(i), 200 + i));
  std::mt19937_64 rng(5);
  int accepted = 0, rejected = 0;
  for (int trial = 0; trial < 150; ++trial) {
    const std::uint64_t now_epoch = 20 + trial / 10;
    const auto& sender = users[rng() % users.size()];
    std::vector<Receipt> rs;
    const std::size_t n = 1 + rng() % 4;
    for (std::size_t k = 0; k < n; ++k) {
      const auto& recv = users[rng() % users.size()];
      rs.push_back(w.receipt(sender, recv, 1 + rng() % 11, now_epoch - rng() % 4));
    }
    auto p = make_report(sender.uid, sender.kp.pk, w.torrent, rs);
    switch (rng() % 6) {
      case 0: p.delta_up += 1; break;
      case 1: p.receipts.back().epoch += 1; break;
      case 2: p.agg.bytes = rs[0].sig; break;
      case 3: p.uid = users[(rng() % 4 + 1 + (&sender - users.data())) % 5].uid; break;
      default: break;
    }
    const auto before = w.snapshot();
    if (w.tracker.report(p, w.at(now_epoch))) {
      ++accepted;
    } else {
      ++rejected;
      CHECK(w.snapshot() == before);
    }
  }
  CHECK(accepted > 10);
  CHECK(rejected > 10);
}

TEST_CASE("property: announce gating") {
  std::mt19937_64 rng(8);
  World w(TrackerConfig{}, Ratio{1, 1});
  std::vector<User> users;
  for (int i = 0; i < 40; ++i) users.push_back(w.join("g" + std::to_string(i), 300 + i));
  int admitted = 0, denied = 0;
  for (int trial = 0; trial < 400; ++trial) {
    const auto& u = users[trial % users.size()];
    const std::int64_t up = static_cast<std::int64_t>(rng() % 2000);
    const std::int64_t down = static_cast<std::int64_t>(rng() % 2000);
    w.set_counters(u, up, down);
    const Event e = static_cast<Event>(rng() % 4);
    const bool ratio_ok = down == 0 || static_cast<double>(up) >= static_cast<double>(down);
    const auto before = w.tracker.swarm(w.torrent.infohash());
    w.announce(u, e);
    const auto after = w.tracker.swarm(w.torrent.infohash());
    bool present = false;
    for (const auto& p : after) present |= p.pk == u.kp.pk;
    const bool expected_in = e != Event::stopped && (e != Event::started || ratio_ok);
    const bool was_in = std::any_of(before.begin(), before.end(),
                                    [&](const PeerEntry& p) { return p.pk == u.kp.pk; });
    if (e == Event::started && !ratio_ok) {
      CHECK(after == before);
      CHECK(present == was_in);
      ++denied;
    } else {
      CHECK(present == expected_in);
      if (e == Event::started) ++admitted;
    }
  }
  CHECK(admitted > 0);
  CHECK(denied > 0);
}
