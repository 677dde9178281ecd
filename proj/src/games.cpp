#include <algorithm>
#include <functional>
#include <random>
#include <sstream>

#include "pbts/sim.hpp"

namespace pbts {

namespace {

const Bytes kProgram = to_bytes("pbts-tracker");

/// A chain with one deployed tracker.
struct Arena {
  Allowlist allow;
  Chain chain;
  Tracker tracker;

  static Allowlist initial() {
    Allowlist a;
    a.insert(measure(kProgram, to_bytes("gen-0")));
    return a;
  }
  static Tracker make(Chain& chain, const Allowlist& allow, std::mt19937_64& rng,
                      EpochParams epochs) {
    auto enclave = Enclave::launch(kProgram, to_bytes("gen-0"), allow, QuoteNonce{});
    if (!enclave) throw Error("game: enclave launch refused");
    auto t = Tracker::deploy(chain, std::move(*enclave), setup(128, {1, 2}, 1 << 20, rng),
                             TrackerConfig{epochs, 50, 1});
    if (!t) throw Error("game: deployment refused");
    return std::move(*t);
  }

  Arena(std::mt19937_64& rng, EpochParams epochs = {60, 2})
      : allow(initial()), chain(allow), tracker(make(chain, allow, rng, epochs)) {}

  bool enrol(const std::string& uid, const KeyPair& kp) {
    const auto sig = sign(kp.sk, register_message(tracker.params().iid, uid));
    return tracker.register_user(uid, kp.pk, sig, {prove_possession(kp.sk)});
  }
  std::int64_t up(const std::string& uid) const { return tracker.lookup(uid)->up; }
};

Signature random_signature(std::mt19937_64& rng) {
  Signature s;
  for (auto& b : s.data) b = static_cast<std::uint8_t>(rng());
  return s;
}

TorrentMeta game_torrent(std::uint64_t n, std::uint64_t seed) {
  std::vector<Digest> hashes;
  for (std::uint64_t i = 0; i < n; ++i) {
    hashes.push_back(hash("game-piece-" + std::to_string(seed) + "-" + std::to_string(i)));
  }
  return TorrentMeta(std::move(hashes), 1024, 1024 * n);
}

GameResult finish(GameResult r) {
  r.pass = r.wins == 0 && r.witness.empty();
  return r;
}

}  // namespace

GameResult game_registration(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  Arena arena(rng);
  GameResult res{"registration", false, 0, 0, {}};

  const auto adv = KeyPair::generate(rng);
  if (!arena.enrol("adversary", adv)) {
    res.witness = "control registration of the adversary's own key was refused";
    return res;
  }

  // Half the victims are registered here, so their transcripts are public;
  // every victim has also registered elsewhere under the same uid.
  struct Victim {
    std::string uid;
    PublicKey pk;
    Signature pop;
    Signature sig_here;
    Signature sig_elsewhere;
    bool registered;
  };
  const Bytes iid_other = to_bytes("another-instance");
  std::vector<Victim> victims;
  for (int v = 0; v < 8; ++v) {
    const auto kp = KeyPair::generate(rng);
    Victim w{"victim-" + std::to_string(v), kp.pk, prove_possession(kp.sk), {}, {}, v % 2 == 0};
    w.sig_here = sign(kp.sk, register_message(arena.tracker.params().iid, w.uid));
    w.sig_elsewhere = sign(kp.sk, register_message(iid_other, w.uid));
    if (w.registered && !arena.tracker.register_user(w.uid, w.pk, w.sig_here, {w.pop})) {
      res.witness = "honest victim registration refused";
      return res;
    }
    victims.push_back(w);
  }

  const auto& iid = arena.tracker.params().iid;
  for (std::size_t t = 0; t < trials; ++t) {
    const Victim& v = victims[rng() % victims.size()];
    const int strategy = static_cast<int>(t % 10);
    std::string uid = "forged-" + std::to_string(t);
    PublicKey pk = v.pk;
    Signature sig;
    std::optional<Signature> pop = v.pop;
    switch (strategy) {
      case 0:
        sig = random_signature(rng);
        break;
      case 1:
        sig = sign(adv.sk, register_message(iid, uid));
        break;
      case 2:
        uid = v.uid;
        sig = v.sig_elsewhere;
        break;
      case 3:
        sig = v.sig_here;
        break;
      case 4:
        uid = v.uid;
        sig = v.sig_elsewhere;
        pop.reset();
        break;
      case 5: {
        const Signature parts[] = {sign(adv.sk, register_message(iid, v.uid)), v.sig_elsewhere};
        uid = v.uid;
        sig = aggregate(parts).bytes;
        break;
      }
      case 6:
        uid = v.uid;
        sig = v.sig_here;
        sig.data[rng() % sig.data.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);
        break;
      case 7:
        sig = v.pop;
        break;
      case 8:
        sig = sign(adv.sk, register_message(iid, uid));
        pop = prove_possession(adv.sk);
        break;
      default: {
        // A key nobody holds, e.g. one derived from other keys.
        const auto stray = KeyPair::generate(rng);
        pk = stray.pk;
        pk.data[pk.data.size() - 1] ^= 1;
        sig = sign(adv.sk, register_message(iid, uid));
        pop = prove_possession(adv.sk);
        break;
      }
    }
    ++res.trials;
    if (arena.tracker.register_user(uid, pk, sig, {pop})) {
      ++res.wins;
      if (res.witness.empty()) {
        std::ostringstream w;
        w << "trial " << t << " strategy " << strategy << " uid " << uid << " pk " << pk.hex()
          << " sig " << sig.hex();
        res.witness = w.str();
      }
    }
  }
  return finish(res);
}

GameResult game_nonrepudiation(std::uint64_t seed, std::size_t trials) {
  std::mt19937_64 rng(seed);
  const EpochParams epochs{60, 2};
  Arena arena(rng, epochs);
  GameResult res{"non-repudiation", false, 0, 0, {}};
  const auto torrent = game_torrent(64, seed);

  // Receivers under adversarial control; the last two never registered.
  std::vector<KeyPair> receivers;
  for (int a = 0; a < 8; ++a) {
    receivers.push_back(KeyPair::generate(rng));
    if (a < 6 && !arena.enrol("receiver-" + std::to_string(a), receivers.back())) {
      res.witness = "adversary receiver registration refused";
      return res;
    }
  }

  // Loop until the budget of reports is spent; rounds where the adversary
  // hands over nothing the sender accepts do not count.
  std::uint64_t accepted_total = 0;
  for (std::size_t t = 0; res.trials < trials; ++t) {
    if (t >= 20 * trials + 100) {
      res.witness = "trial budget not reached";
      return res;
    }
    const auto sender = KeyPair::generate(rng);
    const std::string uid = "sender-" + std::to_string(t);
    if (!arena.enrol(uid, sender)) {
      res.witness = "honest sender registration refused at trial " + std::to_string(t);
      return res;
    }
    const std::uint64_t now_s = 1000 + t * 7;
    const std::uint64_t now_e = epoch_of(now_s, epochs);

    std::vector<Receipt> held;
    const int count = 1 + static_cast<int>(rng() % 3);
    for (int k = 0; k < count; ++k) {
      const auto& a = receivers[rng() % receivers.size()];
      const std::uint64_t i = rng() % torrent.piece_count() + 1;
      // The adversary chooses the epoch and may sign garbage.
      const std::uint64_t shifts[] = {0, 0, 0, 1, 2, 3};
      std::uint64_t e = now_e;
      const auto shift = shifts[rng() % 6];
      if (rng() % 2) {
        e = now_e >= shift ? now_e - shift : 0;
      } else {
        e = now_e + shift;
      }
      Receipt r{torrent.infohash(), sender.pk, a.pk, torrent.hash_at(i), i, e, {}};
      r.sig = rng() % 8 == 0 ? random_signature(rng) : sign(a.sk, r.message());
      if (rng() % 8 == 0) r.piece_hash = torrent.hash_at(i % torrent.piece_count() + 1);

      // The honest sender only keeps receipts that check out.
      const bool fresh = e + epochs.delta >= now_e && e <= now_e;
      const bool dup = std::any_of(held.begin(), held.end(), [&](const Receipt& h) {
        return receipt_id(h) == receipt_id(r);
      });
      if (verify_receipt(r, torrent) && fresh && !dup && arena.tracker.uid_of(a.pk)) {
        held.push_back(r);
      }
    }
    if (held.empty()) continue;
    ++res.trials;
    accepted_total += held.size();
    const auto payload = make_report(uid, sender.pk, torrent, held);
    if (!arena.tracker.report(payload, now_s)) {
      ++res.wins;
      if (res.witness.empty()) {
        std::ostringstream w;
        w << "trial " << t << " sender " << uid << " now_s " << now_s << " receipts";
        for (const auto& r : held) w << " (" << r.piece_index << "," << r.epoch << ")";
        res.witness = w.str();
      }
    }
  }
  if (accepted_total == 0) res.witness = "no receipt was ever accepted by a sender";
  return finish(res);
}

GameResult game_soundness(std::uint64_t seed, std::size_t swarms) {
  std::mt19937_64 rng(seed);
  GameResult res{"soundness", false, 0, 0, {}};
  const AdversaryKind kinds[] = {AdversaryKind::inflate, AdversaryKind::replay,
                                 AdversaryKind::forge, AdversaryKind::freeride};
  const char* policies[] = {"per-piece", "batch:3", "session", "adaptive:2:3:2"};

  for (std::size_t k = 0; k < swarms; ++k) {
    Scenario s;
    s.seed = rng();
    s.peers = 3 + rng() % 4;
    s.seeders = 1 + rng() % 2;
    s.piece_size = 16 * 1024;
    s.file_size = s.piece_size * (4 + rng() % 9) - rng() % 1000;
    s.policy = parse_policy(policies[rng() % 4]);
    s.epochs = {60, 2};
    s.cost = table1_cost_model();
    s.cost.bandwidth = 64 * 1024;
    s.report_interval_s = 20 + rng() % 21;
    s.join_spread_ms = rng() % 3000;
    s.max_time_s = 24 * 3600;
    if (rng() % 3 == 0) s.tracker_down.push_back({5, 65});
    const std::size_t bad = s.seeders + rng() % (s.peers - s.seeders);
    s.adversaries.push_back({kinds[rng() % 4], bad});

    const auto run = run_swarm_detailed(s);
    ++res.trials;

    // Expected ledger: every attested transfer is credited once, except those
    // uploaded by the inflating peer, whose reports are all refused.
    std::vector<std::uint64_t> want_up(s.peers, 0), want_down(s.peers, 0);
    for (const auto& t : run.truth.entries()) {
      if (!t.attested) continue;
      if (bad == t.sender && s.adversaries[0].kind == AdversaryKind::inflate) continue;
      want_up[t.sender] += t.bytes;
      want_down[t.receiver] += t.bytes;
    }
    std::string problem;
    for (std::size_t i = 0; i < s.peers && problem.empty(); ++i) {
      const auto& p = run.metrics.peers[i];
      if (p.attested_up > p.true_up ||
          p.chain_up != static_cast<std::int64_t>(want_up[i])) {
        problem = p.uid + " (" + p.role + ") credited " + std::to_string(p.chain_up) +
                  " for " + std::to_string(want_up[i]) + " attested bytes";
      } else if (p.chain_down != static_cast<std::int64_t>(want_down[i])) {
        problem = p.uid + " charged " + std::to_string(p.chain_down) + " for " +
                  std::to_string(want_down[i]) + " attested bytes";
      }
    }
    if (problem.empty() && !run.metrics.all_complete) problem = "swarm did not complete";
    if (!problem.empty()) {
      ++res.wins;
      if (res.witness.empty()) res.witness = problem + "; scenario " + s.to_json().dump();
    }
  }
  return finish(res);
}

GameResult game_reuse(std::uint64_t seed, std::uint64_t max_delta) {
  std::mt19937_64 rng(seed);
  GameResult res{"reuse", false, 0, 0, {}};

  for (std::uint64_t delta = 0; delta <= max_delta; ++delta) {
    const EpochParams epochs{10, delta};
    Arena arena(rng, epochs);
    const auto torrent = game_torrent(1024, seed + delta);
    const auto receiver = KeyPair::generate(rng);
    if (!arena.enrol("receiver", receiver)) throw Error("game: receiver refused");
    const auto sender = KeyPair::generate(rng);
    if (!arena.enrol("sender", sender)) throw Error("game: sender refused");
    std::uint64_t next_piece = 1;

    // Receipt epoch e is fixed; the first report lands in t1 and the replay in
    // t2 >= t1, covering both sides of the expiry boundary.
    const std::uint64_t e = delta + 3;
    std::uint64_t clock_s = 0;
    for (std::uint64_t t1 = e - 1; t1 <= e + delta + 2; ++t1) {
      for (std::uint64_t t2 = t1; t2 <= t1 + delta + 3; ++t2) {
        for (int form = 0; form < 3; ++form) {
          const std::uint64_t i = next_piece;
          next_piece += 2;
          if (next_piece > torrent.piece_count()) throw Error("game: torrent too small");
          // Reports must be submitted in time order, so the arena clock only
          // moves forward; each combination is shifted past the previous one.
          const std::uint64_t base = (clock_s / epochs.width + 1) * epochs.width;
          const std::uint64_t shift = base / epochs.width;
          const std::uint64_t ee = e + shift;
          const std::uint64_t s1 = (t1 + shift) * epochs.width;
          const std::uint64_t s2 = (t2 + shift) * epochs.width + 1;
          clock_s = s2;

          std::function<bool(std::uint64_t)> submit;
          std::uint64_t bytes = 0;
          if (form == 0) {
            Receipt r{torrent.infohash(), sender.pk, receiver.pk, torrent.hash_at(i), i, ee, {}};
            r.sig = sign(receiver.sk, r.message());
            const auto p = make_report("sender", sender.pk, torrent, std::span(&r, 1));
            bytes = torrent.piece_length(i);
            submit = [&, p](std::uint64_t now) { return arena.tracker.report(p, now); };
          } else if (form == 1) {
            BatchCommitment c{torrent.infohash(), sender.pk, receiver.pk, {}, i, 2, ee, {}};
            const Digest leaves[] = {torrent.hash_at(i), torrent.hash_at(i + 1)};
            c.root = merkle_root(leaves);
            c.sig = sign(receiver.sk, c.message());
            bytes = batch_bytes(c, torrent);
            BatchReport p{"sender", sender.pk, torrent, {c}, {}, static_cast<std::int64_t>(bytes), 0};
            p.agg = aggregate(std::span(&c.sig, 1));
            submit = [&, p](std::uint64_t now) { return arena.tracker.report_batch(p, now); };
          } else {
            auto [cert, keys] = open_session(receiver, sender.pk, torrent, rng);
            const auto sig = session_attest(keys, cert, torrent, i, ee);
            bytes = torrent.piece_length(i);
            SessionReport p{"sender", sender.pk, torrent, {cert}, {{{i, ee, sig}}}, {},
                            static_cast<std::int64_t>(bytes), 0};
            p.agg = aggregate_session_certs(p.certs);
            submit = [&, p](std::uint64_t now) { return arena.tracker.report_session(p, now); };
          }

          const auto before = arena.up("sender");
          arena.tracker.gc_recent(s1);
          const bool first = submit(s1);
          arena.tracker.gc_recent(s2);
          const bool second = submit(s2);
          const auto gained = arena.up("sender") - before;
          ++res.trials;
          const auto expect = first ? static_cast<std::int64_t>(bytes) : 0;
          if (second || gained != expect) {
            ++res.wins;
            if (res.witness.empty()) {
              std::ostringstream w;
              w << "delta " << delta << " form " << form << " receipt epoch " << ee
                << " reports at " << s1 << "s and " << s2 << "s credited " << gained;
              res.witness = w.str();
            }
          }
        }
      }
    }
  }
  return finish(res);
}

}  // namespace pbts
