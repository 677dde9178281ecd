// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <regex>
#include <sstream>
#include <tuple>

#include "pbts/cli.hpp"
#include "pbts/dht.hpp"
#include "pbts/sim.hpp"
#include "pbts/tracker.hpp"

using namespace pbts;
namespace fs = std::filesystem;

namespace {

constexpr double kGamesBudgetS = 300.0;
constexpr double kTable1TimeTol = 0.10;
constexpr double kSessionSizeTol = 0.05;
constexpr double kSessionSizeRef = 160.0 * 1024;
constexpr double kOverhead256 = 0.52;
constexpr double kOverhead256Tol = 0.05;
constexpr double kOverhead2M = 0.06;
constexpr double kOverhead2MTol = 0.02;
constexpr double kMinAggSpeedup = 1.5;
constexpr std::size_t kBenchReps = 100;
constexpr std::size_t kDhtKeys = 100;
constexpr std::size_t kDhtK = 20;
constexpr int kGateSeeds = 50;
constexpr int kGateOps = 200;
constexpr int kChainOps = 10000;
constexpr int kTruncations = 60;

// Collects failure reasons for the current criterion.
struct Check {
  std::vector<std::string> why;
  void operator()(bool ok, const std::string& what) {
    if (!ok) why.push_back(what);
  }
  bool ok() const { return why.empty(); }
};

int failures = 0;

void report(int n, const std::string& name, const Check& c, const std::string& detail) {
  std::printf("%s %d %s: %s\n", c.ok() ? "PASS" : "FAIL", n, name.c_str(), detail.c_str());
  for (const auto& w : c.why) std::printf("    %s\n", w.c_str());
  std::fflush(stdout);
  if (!c.ok()) ++failures;
}

void run(int n, const std::string& name, const std::function<std::string(Check&)>& body) {
  Check c;
  std::string detail;
  try {
    detail = body(c);
  } catch (const std::exception& e) {
    c(false, std::string("exception: ") + e.what());
  }
  report(n, name, c, detail);
}

std::string num(double v, const char* f = "%.3f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

bool within(double v, double ref, double rel) { return std::abs(v - ref) <= rel * ref; }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("pbts-acceptance-" + name);
  fs::remove(p);
  return p;
}

Enclave tracker_enclave(std::string_view cfg, Allowlist& allow) {
  const Bytes prog = to_bytes("pbts-tracker");
  allow.insert(measure(prog, to_bytes(cfg)));
  return *Enclave::launch(prog, to_bytes(cfg), allow, QuoteNonce{});
}

PublicParams params(Ratio min_rep, std::int64_t credit) {
  std::mt19937_64 r(1);
  return setup(128, min_rep, credit, r);
}

// 1

std::string games(Check& check) {
  std::ostringstream out, err;
  const auto t0 = std::chrono::steady_clock::now();
  const int code = cli({"games", "--seed", "1"}, out, err);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  check(code == 0, "games exit code " + std::to_string(code));
  check(secs <= kGamesBudgetS, "runtime " + num(secs, "%.1f") + " s");

  std::map<std::string, std::pair<std::uint64_t, std::uint64_t>> seen;
  const std::regex line(R"(^PASS (\S+) \((\d+) trials, (\d+) adversary wins\)$)");
  std::istringstream in(out.str());
  for (std::string l; std::getline(in, l);) {
    std::smatch m;
    if (std::regex_match(l, m, line)) seen[m[1]] = {std::stoull(m[2]), std::stoull(m[3])};
  }
  check(seen.size() == 4, std::to_string(seen.size()) + " of 4 games passed");
  auto trials = [&](const std::string& g) { return seen.count(g) ? seen[g].first : 0; };
  check(trials("registration") == 10000, "registration trials " + std::to_string(trials("registration")));
  check(trials("non-repudiation") == 1000,
        "non-repudiation trials " + std::to_string(trials("non-repudiation")));
  check(trials("soundness") == 50, "soundness swarms " + std::to_string(trials("soundness")));
  // every (sender, receipt) epoch pair in a span wider than the window, three report forms
  std::uint64_t reuse = 0;
  for (std::uint64_t d = 0; d <= 3; ++d) reuse += (d + 4) * (d + 4) * 3;
  check(trials("reuse") == reuse, "reuse trials " + std::to_string(trials("reuse")));
  for (const auto& [g, tw] : seen) check(tw.second == 0, g + " adversary wins");
  return std::to_string(seen.size()) + "/4 games, " + num(secs, "%.1f") + " s";
}

// 2

std::string table1(Check& check) {
  const auto rows = table1_projection();
  check(rows.size() == 4, "row count");
  if (rows.size() != 4) return "";
  const std::uint64_t sigs[] = {2560, 436, 256, 2560};
  const double times[] = {5.1, -1, 0.51, 0.53};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& r = rows[i];
    const auto s = i == 3 ? r.signatures.session : r.signatures.total();
    check(s == sigs[i], r.approach + " signatures " + std::to_string(s));
    if (times[i] > 0) {
      check(within(r.time_s, times[i], kTable1TimeTol), r.approach + " time " + num(r.time_s));
    }
  }
  check(rows[3].signatures.long_term <= 1, "session long-term signatures");
  const double sz = static_cast<double>(rows[3].report_bytes);
  check(within(sz, kSessionSizeRef, kSessionSizeTol), "session report " + num(sz, "%.0f") + " B");
  check(rows[1].reference_signatures == "~512" && rows[1].note.find("436") != std::string::npos,
        "adaptive discrepancy not flagged");

  std::ostringstream out, err;
  check(cli({"table1"}, out, err) == 0, "table1 command failed");
  check(out.str().find("~512") != std::string::npos, "table1 output lacks reference row");
  return "times " + num(rows[0].time_s) + " / " + num(rows[2].time_s) + " / " +
         num(rows[3].time_s) + " s, session report " + num(sz / 1024, "%.1f") + " KiB";
}

// 3

std::string overhead(Check& check) {
  const auto cost = reference_cost_model();
  const std::uint64_t gb = 1ull << 30;
  const double bw = 1 << 20;
  const double a = throughput_overhead(gb, bw, 256 * 1024, PerPieceBls{}, cost);
  const double b = throughput_overhead(gb, bw, 2 * 1024 * 1024, PerPieceBls{}, cost);
  check(std::abs(a - kOverhead256) <= kOverhead256Tol, "256 KiB overhead " + num(a));
  check(std::abs(b - kOverhead2M) <= kOverhead2MTol, "2 MiB overhead " + num(b));

  std::ostringstream out, err;
  const int code = cli({"overhead", "--file-size", "1GB", "--bandwidth", "1MB", "--piece-size",
                        "256KB"},
                       out, err);
  check(code == 0 && out.str().find("overhead " + num(100 * a, "%.1f") + "%") == 0,
        "overhead command output: " + out.str());
  return "256 KiB " + num(100 * a, "%.1f") + "%, 2 MiB " + num(100 * b, "%.1f") + "%";
}

// 4

std::string aggregation(Check& check) {
  const auto b = bench_crypto(kBenchReps);
  std::string detail;
  for (const std::size_t k : {10, 25, 50, 100}) {
    const auto it = b.agg_speedup.find(k);
    check(it != b.agg_speedup.end(), "no measurement at " + std::to_string(k));
    if (it == b.agg_speedup.end()) continue;
    check(it->second >= kMinAggSpeedup, "speedup " + num(it->second, "%.2f") + " at " +
                                            std::to_string(k));
    detail += std::to_string(k) + ":" + num(it->second, "%.2f") + "x ";
  }
  return detail;
}

// 5

std::string migration(Check& check) {
  Scenario base;
  base.seed = 5;
  base.peers = 6;
  base.seeders = 1;
  base.file_size = 20 * 64 * 1024 - 999;
  base.piece_size = 64 * 1024;
  base.policy = PerPieceBls{};
  base.report_interval_s = 2;
  // everyone is in the swarm before the tracker goes away
  base.join_spread_ms = 300;
  const auto control = run_swarm(base);
  check(control.all_complete, "control run incomplete");

  int variants = 0;
  for (const auto& outage : {std::vector<Interval>{}, std::vector<Interval>{{3, 6}}}) {
    auto s = base;
    s.migrate_at_s = {5};
    s.tracker_down = outage;
    const auto log = scratch("migrate.log");
    const auto m = run_swarm(s, log);
    const std::string tag = outage.empty() ? "kill+migrate" : "outage+migrate";
    check(m.all_complete, tag + " incomplete");
    check(m.contracts.size() == 2, tag + " contracts " + std::to_string(m.contracts.size()));
    check(m.peers.size() == control.peers.size(), tag + " peer count");
    for (std::size_t i = 0; i < std::min(m.peers.size(), control.peers.size()); ++i) {
      check(m.peers[i].chain_up == control.peers[i].chain_up &&
                m.peers[i].chain_down == control.peers[i].chain_down,
            tag + " " + m.peers[i].uid + " reputation differs");
    }
    if (m.contracts.size() == 2) {
      Chain replay(Allowlist{}, log);
      const auto a = ContractAddress::from_hex(m.contracts[0]);
      const auto b = ContractAddress::from_hex(m.contracts[1]);
      check(a && b && replay.get_referrer(*b) == a, tag + " referrer mismatch");
    }
    fs::remove(log);
    ++variants;
  }

  // two hops: a uid written only in the first contract is gone from the third
  Allowlist allow;
  for (const char* g : {"gen-0", "gen-1", "gen-2"}) tracker_enclave(g, allow);
  Chain chain(allow);
  auto t0 = *Tracker::deploy(chain, tracker_enclave("gen-0", allow), params({1, 2}, 1000));
  const auto ghost = keygen(4242);
  check(t0.register_user("ghost", ghost.pk, sign(ghost.sk, register_message(t0.params().iid, "ghost")),
                         {prove_possession(ghost.sk)}),
        "ghost registration");
  const auto a = t0.address();
  const auto gen1 = tracker_enclave("gen-1", allow);
  const auto b = migrate(chain, a, migration_proof(gen1, to_bytes("iid-1"), a), allow);
  check(b.has_value(), "first migration");
  if (!b) return "";
  check(chain.sc_read(*b, "ghost").has_value(), "ghost unreadable one hop away");
  const auto gen2 = tracker_enclave("gen-2", allow);
  const auto c = migrate(chain, *b, migration_proof(gen2, to_bytes("iid-2"), *b), allow);
  check(c.has_value(), "second migration");
  if (!c) return "";
  check(chain.get_referrer(*c) == b, "second referrer");
  check(!chain.sc_read(*c, "ghost").has_value(), "ghost readable two hops away");
  return std::to_string(variants) + " variants match control; two-hop read is empty";
}

// 6

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

// distance compared as a 160-bit big-endian integer, one bit at a time
bool closer(const NodeId& a, const NodeId& b, const NodeId& t) {
  for (int bit = 0; bit < 160; ++bit) {
    const int byte = bit / 8, shift = 7 - bit % 8;
    const int da = ((a.data[byte] ^ t.data[byte]) >> shift) & 1;
    const int db = ((b.data[byte] ^ t.data[byte]) >> shift) & 1;
    if (da != db) return da < db;
  }
  return false;
}

std::string dht_lookup(Check& check) {
  std::string detail;
  for (const std::size_t n : {10, 100, 1000}) {
    Chain chain{Allowlist{}};
    DhtConfig cfg;
    cfg.k = kDhtK;
    DhtNetwork net(cfg, chain, ContractAddress{}, Ratio{0, 1}, n);
    std::mt19937_64 rng(n * 31 + 1);
    std::vector<NodeId> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back(net.add_node(random_pk(rng), endpoint(i)).id());
    for (std::size_t i = 1; i < n; ++i) check(net.join(ids[i], {endpoint(0)}), "join failed");
    for (const auto& id : ids) net.find_closest(id, id);

    std::size_t match = 0;
    for (std::size_t q = 0; q < kDhtKeys; ++q) {
      const auto target = random_id(rng);
      const auto& from = ids[rng() % n];
      auto want = ids;
      std::sort(want.begin(), want.end(),
                [&](const NodeId& x, const NodeId& y) { return closer(x, y, target); });
      want.resize(std::min(kDhtK, n));
      std::vector<NodeId> got;
      for (const auto& c : net.find_closest(from, target).closest) got.push_back(c.id);
      if (got == want) ++match;
    }
    check(match == kDhtKeys, std::to_string(n) + " nodes: " + std::to_string(match) + "/" +
                                 std::to_string(kDhtKeys) + " lookups exact");
    detail += std::to_string(n) + ":" + std::to_string(match) + " ";
  }
  return detail;
}

struct Gate {
  Allowlist allow;
  Chain chain;
  Tracker tracker;
  DhtNetwork net;
  std::vector<NodeId> ids;
  Digest tid = hash(std::string_view("torrent"));

  static Allowlist initial() {
    Allowlist a;
    tracker_enclave("gen-0", a);
    return a;
  }

  Gate(std::size_t n, DhtConfig cfg, std::uint64_t seed)
      : allow(initial()),
        chain(allow),
        tracker(*Tracker::deploy(chain, tracker_enclave("gen-0", allow), params({1, 2}, 1000))),
        net(cfg, chain, tracker.address(), tracker.params().min_rep, seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) ids.push_back(net.add_node(random_pk(rng), endpoint(i)).id());
    for (std::size_t i = 1; i < n; ++i) net.join(ids[i], {endpoint(0)});
    for (const auto& id : ids) net.find_closest(id, id);
  }

  bool enrol(const std::string& uid, const KeyPair& kp) {
    return tracker.register_user(uid, kp.pk, sign(kp.sk, register_message(tracker.params().iid, uid)),
                                 {prove_possession(kp.sk)});
  }

  void set_counters(const std::string& uid, const PublicKey& pk, std::int64_t up, std::int64_t down) {
    const ReputationRecord r{uid, pk, up, down};
    const auto addr = tracker.address();
    chain.sc_write(addr, r,
                   tracker.enclave().authorize(
                       Chain::write_payload(addr, chain.write_nonce(addr), std::span(&r, 1))));
  }
};

std::string dht_gate(Check& check) {
  std::size_t stored = 0, violations = 0, offered = 0;
  for (int seed = 1; seed <= kGateSeeds; ++seed) {
    DhtConfig cfg;
    cfg.k = 4;
    Gate g(12, cfg, static_cast<std::uint64_t>(seed));
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed) * 104729);

    // oracle: who registered with which key, and their counters
    struct Row {
      PublicKey pk;
      std::int64_t up, down;
    };
    std::map<std::string, Row> oracle;
    std::vector<std::pair<std::string, KeyPair>> members;
    std::vector<KeyPair> outsiders;
    for (int i = 0; i < 3; ++i) outsiders.push_back(keygen(seed * 7000 + 900 + i));

    auto eligible = [&](const AnnounceRecord& r) {
      const auto it = oracle.find(r.uid);
      if (it == oracle.end() || it->second.pk != r.pk) return false;
      // up/down >= 1/2, on integers
      return 2 * it->second.up >= it->second.down;
    };
    using Key = std::tuple<NodeId, Digest, PublicKey>;
    using Val = std::tuple<std::string, std::string, std::uint16_t, std::uint64_t>;
    auto snapshot = [&] {
      std::map<Key, Val> out;
      for (const auto* n : g.net.nodes()) {
        for (const auto& [tid, recs] : n->store()) {
          for (const auto& [pk, r] : recs) out[{n->id(), tid, pk}] = {r.uid, r.ip, r.port, r.stored_epoch};
        }
      }
      return out;
    };
    auto offer = [&](const NodeId& from, const AnnounceRecord& r) {
      ++offered;
      const auto n = g.net.announce(from, r);
      if (n > 0 && !eligible(r)) ++violations;
      stored += n;
    };

    std::uint64_t epoch = 0;
    for (int op = 0; op < kGateOps; ++op) {
      const auto before = snapshot();
      const auto node = g.ids[rng() % g.ids.size()];
      const auto pick = rng() % 10;
      if (pick == 0 || members.empty()) {
        const std::string uid = "p" + std::to_string(members.size());
        const auto kp = keygen(seed * 7000 + members.size());
        if (g.enrol(uid, kp)) oracle[uid] = {kp.pk, 1000, 0};
        members.emplace_back(uid, kp);
      } else if (pick <= 3) {
        const auto& [uid, kp] = members[rng() % members.size()];
        offer(node, make_announce_record(uid, kp, g.tid, "1.1.1.1", 1));
      } else if (pick == 4) {
        offer(node, make_announce_record("x" + std::to_string(rng() % 5),
                                         outsiders[rng() % outsiders.size()], g.tid, "6.6.6.6", 1));
      } else if (pick == 5) {
        const auto& uid = members[rng() % members.size()].first;
        offer(node, make_announce_record(uid, outsiders[rng() % outsiders.size()], g.tid, "6.6.6.6", 1));
      } else if (pick == 6) {
        const auto& [uid, kp] = members[rng() % members.size()];
        const auto up = static_cast<std::int64_t>(rng() % 100);
        const auto down = static_cast<std::int64_t>(rng() % 300);
        g.set_counters(uid, kp.pk, up, down);
        oracle[uid].up = up;
        oracle[uid].down = down;
      } else if (pick == 7) {
        g.net.set_epoch(++epoch);
      } else if (pick == 8) {
        g.net.set_alive(node, !g.net.alive(node) || g.net.live_ids().size() < 6);
      } else {
        const auto& [uid, kp] = members[rng() % members.size()];
        auto r = make_announce_record(uid, kp, g.tid, "1.1.1.1", 1);
        r.ip = "7.7.7.7";
        offer(node, r);
      }

      // anything new or changed in any store must pass the gate right now
      for (const auto* n : g.net.nodes()) {
        for (const auto& [tid, recs] : n->store()) {
          for (const auto& [pk, r] : recs) {
            const auto it = before.find({n->id(), tid, pk});
            const bool changed =
                it == before.end() || it->second != Val{r.uid, r.ip, r.port, r.stored_epoch};
            if (changed && !eligible(r)) ++violations;
          }
        }
      }
    }
  }
  check(violations == 0, std::to_string(violations) + " ineligible records stored");
  check(stored > 0, "nothing was ever stored");
  return std::to_string(kGateSeeds) + " seeds x " + std::to_string(kGateOps) + " ops, " +
         std::to_string(offered) + " offers, " + std::to_string(stored) + " stores, " +
         std::to_string(violations) + " violations";
}

// 7

std::string persistence(Check& check) {
  const auto live = scratch("chain-live.jsonl");
  const auto copy = scratch("chain-copy.jsonl");
  const auto cut = scratch("chain-cut.jsonl");
  Allowlist allow;
  const Bytes prog = to_bytes("tracker");
  allow.insert(measure(prog, to_bytes("gen-0")));
  allow.insert(measure(prog, to_bytes("gen-1")));
  const auto owner = *Enclave::launch(prog, to_bytes("gen-0"), allow, QuoteNonce{});
  const auto intruder = *Enclave::launch(prog, to_bytes("gen-1"), allow, QuoteNonce{});
  auto init = [&](std::optional<ContractAddress> ref) {
    const Bytes iid = to_bytes("instance");
    return InitParams{iid, ref, owner.public_key(),
                      owner.authorize(Chain::init_payload(iid, ref, owner.public_key()))};
  };
  auto write = [&](Chain& c, const Enclave& e, const ContractAddress& addr, const ReputationRecord& r) {
    return c.sc_write(addr, r,
                      e.authorize(Chain::write_payload(addr, c.write_nonce(addr), std::span(&r, 1))));
  };

  std::mt19937_64 rng(2024);
  std::string state;
  std::uint64_t head = 0;
  {
    Chain chain(allow, live);
    std::vector<ContractAddress> addrs{*chain.sc_init(init(std::nullopt))};
    std::map<std::string, std::int64_t> up;
    for (int op = 0; op < kChainOps; ++op) {
      const auto& addr = addrs[rng() % addrs.size()];
      const std::string uid = "u" + std::to_string(rng() % 64);
      const auto kind = rng() % 100;
      if (kind < 3) {
        addrs.push_back(*chain.sc_init(init(addr)));
      } else if (kind < 30) {
        (void)chain.sc_read(addr, uid);
      } else if (kind < 36) {
        const ReputationRecord r{uid, keygen(rng() % 64).pk, 1, 1};
        check(!write(chain, intruder, addr, r), "intruder write accepted");
      } else {
        up[uid] += static_cast<std::int64_t>(rng() % 4096);
        const ReputationRecord r{uid, keygen(std::hash<std::string>{}(uid)).pk, up[uid],
                                 static_cast<std::int64_t>(rng() % 4096)};
        check(write(chain, owner, addr, r), "owner write rejected");
      }
    }
    state = chain.state_json();
    head = chain.head_seq();
    chain.save(copy);
  }
  const std::string good = slurp(live);
  check(good == slurp(copy), "save differs from live log");
  {
    Chain a(allow, live);
    Chain b(allow, copy);
    check(a.state_json() == state && b.state_json() == state, "reloaded state differs");
    check(a.head_seq() == head, "reloaded head seq");
    a.save(cut);
    check(slurp(cut) == good, "second save differs");
  }

  std::vector<std::size_t> ends;
  for (std::size_t i = 0; i < good.size(); ++i) {
    if (good[i] == '\n') ends.push_back(i);
  }
  check(ends.size() == head, "log lines " + std::to_string(ends.size()));
  std::size_t exact = 0;
  for (int t = 0; t < kTruncations; ++t) {
    // half the cuts land inside an entry, half on a boundary
    const std::size_t line = rng() % ends.size();
    const std::size_t start = line == 0 ? 0 : ends[line - 1] + 1;
    const bool inside = t % 2 == 0;
    const std::size_t at = inside ? start + 1 + rng() % (ends[line] - start) : ends[line] + 1;
    { std::ofstream(cut, std::ios::binary | std::ios::trunc) << good.substr(0, at); }
    try {
      Chain c(allow, cut);
      if (!inside && c.head_seq() == line + 1) ++exact;
      else check(false, "cut at byte " + std::to_string(at) + " replayed to seq " +
                            std::to_string(c.head_seq()));
    } catch (const ChainLogError& e) {
      if (inside && e.seq() == line + 1) ++exact;
      else check(false, "cut at byte " + std::to_string(at) + " reported seq " +
                            std::to_string(e.seq()) + ", expected " + std::to_string(line + 1));
    }
  }
  fs::remove(live);
  fs::remove(copy);
  fs::remove(cut);
  return std::to_string(head) + " entries byte-identical after save/reload; " +
         std::to_string(exact) + "/" + std::to_string(kTruncations) + " truncations located";
}

// 8

std::string determinism(Check& check) {
  std::vector<std::pair<std::string, Scenario>> cases;
  for (const auto& e : fs::directory_iterator(PBTS_SCENARIO_DIR)) {
    if (e.path().extension() == ".json") cases.emplace_back(e.path().filename().string(), Scenario::load(e.path()));
  }
  std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  check(!cases.empty(), "no scenario files in " PBTS_SCENARIO_DIR);

  std::mt19937_64 rng(8);
  const char* policies[] = {"per-piece", "batch:3", "session", "adaptive"};
  for (int i = 0; i < 6; ++i) {
    Scenario s;
    s.seed = rng();
    s.peers = 3 + rng() % 5;
    s.seeders = 1 + rng() % 2;
    s.piece_size = 32 * 1024;
    s.file_size = 8 * s.piece_size + rng() % (8 * s.piece_size);
    s.policy = parse_policy(policies[i % 4]);
    s.join_spread_ms = rng() % 5000;
    s.dht.drop_rate = 0.1;
    if (i % 2) s.tracker_down = {{2, 40}};
    if (i % 3 == 2) s.migrate_at_s = {4};
    if (i == 5) s.adversaries = {{AdversaryKind::inflate, 2}, {AdversaryKind::replay, 3}};
    cases.emplace_back("random-" + std::to_string(i), s);
  }

  for (const auto& [name, s] : cases) {
    const auto a = run_swarm(s).dump();
    const auto b = run_swarm(s).dump();
    check(a == b, name + " metrics differ between runs");
  }
  return std::to_string(cases.size()) + " scenarios byte-identical across two runs";
}

}  // namespace

int main() {
  run(1, "security games", games);
  run(2, "signature cost table", table1);
  run(3, "throughput overhead", overhead);
  run(4, "aggregate verification speedup", aggregation);
  run(5, "migration continuity", migration);
  run(6, "dht lookup and storage gate", [](Check& c) {
    const auto a = dht_lookup(c);
    return a + "| " + dht_gate(c);
  });
  run(7, "chain persistence", persistence);
  run(8, "determinism", determinism);
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
