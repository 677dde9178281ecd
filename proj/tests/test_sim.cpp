#include <doctest.h>

#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "pbts/sim.hpp"

using namespace pbts;

namespace {

Scenario small(const char* policy, std::uint64_t seed = 1) {
  Scenario s;
  s.seed = seed;
  s.peers = 4;
  s.seeders = 1;
  s.file_size = 10 * 64 * 1024 - 1234;
  s.piece_size = 64 * 1024;
  s.policy = parse_policy(policy);
  return s;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("pbts-sim-" + name);
  std::filesystem::remove(p);
  return p;
}

}  // namespace

TEST_CASE("honest swarm: on-chain totals equal ground truth") {
  for (const char* policy : {"per-piece", "batch:3", "session"}) {
    CAPTURE(policy);
    const auto s = small(policy);
    const auto run = run_swarm_detailed(s);
    const auto& m = run.metrics;
    REQUIRE(m.all_complete);

    std::int64_t up_sum = 0;
    std::int64_t down_sum = 0;
    for (std::size_t i = 0; i < m.peers.size(); ++i) {
      const auto& p = m.peers[i];
      CAPTURE(p.uid);
      CHECK(p.chain_up == static_cast<std::int64_t>(p.true_up));
      CHECK(p.chain_down == static_cast<std::int64_t>(p.true_down));
      // Each leecher pulls the file exactly once, last piece at its true length.
      CHECK(p.true_down == (p.seeder ? 0 : s.file_size));
      up_sum += p.chain_up;
      down_sum += p.chain_down;
    }
    CHECK(up_sum == down_sum);
    CHECK(down_sum == static_cast<std::int64_t>(3 * s.file_size));
    CHECK(m.receipts_expired == 0);
    CHECK(m.reports_rejected == 0);
  }
}

TEST_CASE("signatures issued follow the policy") {
  SUBCASE("per-piece: one per piece") {
    const auto m = run_swarm(small("per-piece"));
    CHECK(m.signatures == SignatureCount{30, 0});
    CHECK(m.receipts_issued == 30);
    CHECK(m.items_verified == 30);
    CHECK(m.report_bytes == 30 * 32 + 96 * m.reports_accepted);
  }
  SUBCASE("batch: one per aligned block") {
    const auto run = run_swarm_detailed(small("batch:3"));
    CHECK(run.metrics.signatures == SignatureCount{12, 0});
    CHECK(run.truth.entries().size() == 30);
  }
  SUBCASE("session: one certificate per pair") {
    const auto run = run_swarm_detailed(small("session"));
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    for (const auto& t : run.truth.entries()) pairs.insert({t.sender, t.receiver});
    CHECK(run.metrics.signatures.long_term == pairs.size());
    CHECK(run.metrics.signatures.session == 30);
  }
  SUBCASE("adaptive with one sender matches the index formula") {
    for (std::uint64_t pieces : {3u, 9u, 17u, 40u}) {
      Scenario s;
      s.peers = 2;
      s.piece_size = 4096;
      s.file_size = pieces * 4096;
      s.policy = Adaptive{3, 4, 2};
      s.cost = table1_cost_model();
      const auto run = run_swarm_detailed(s);
      REQUIRE(run.metrics.all_complete);
      const auto want = adaptive_indices(pieces, Adaptive{3, 4, 2});
      std::vector<std::uint64_t> got;
      for (const auto& t : run.truth.entries()) {
        if (t.attested) got.push_back(t.piece);
      }
      // Pieces arrive in rarest-first order, so compare sequence positions.
      std::vector<std::uint64_t> pos;
      for (std::size_t k = 0; k < run.truth.entries().size(); ++k) {
        if (run.truth.entries()[k].attested) pos.push_back(k + 1);
      }
      CHECK(pos == want);
      CHECK(run.metrics.peers[1].chain_down ==
            static_cast<std::int64_t>(4096 * want.size()));
    }
  }
}

TEST_CASE("tracker outage: discovery via the DHT, receipts reported after recovery") {
  auto s = small("per-piece");
  s.peers = 6;
  s.join_spread_ms = 15000;
  // Receipts from epoch 0 are still inside the window at recovery.
  s.tracker_down = {{10, 150}};
  const auto run = run_swarm_detailed(s);
  const auto& m = run.metrics;
  REQUIRE(m.all_complete);
  CHECK(m.dht_lookups > 0);
  // Late joiners start inside the outage and still finish there.
  for (std::size_t i = 1; i < m.peers.size(); ++i) {
    REQUIRE(m.peers[i].completed_ms);
    CHECK(*m.peers[i].completed_ms < 150000);
  }
  CHECK(m.sim_time_ms >= 150000);
  CHECK(m.receipts_expired == 0);
  for (const auto& p : m.peers) {
    CHECK(p.chain_up == static_cast<std::int64_t>(p.true_up));
    CHECK(p.chain_down == static_cast<std::int64_t>(p.true_down));
  }
}

TEST_CASE("outage longer than the window expires receipts") {
  auto s = small("per-piece");
  s.epochs = {60, 1};
  s.tracker_down = {{1, 1000}};
  const auto m = run_swarm(s);
  CHECK(m.all_complete);
  CHECK(m.receipts_expired == 30);
  for (const auto& p : m.peers) CHECK(p.chain_up == 0);
}

TEST_CASE("same seed, same metrics") {
  for (const char* policy : {"per-piece", "adaptive:2:3:2", "batch:4", "session"}) {
    auto s = small(policy, 42);
    s.peers = 5;
    s.join_spread_ms = 700;
    s.tracker_down = {{3, 70}};
    s.adversaries = {{AdversaryKind::forge, 4}};
    CHECK(run_swarm(s).dump() == run_swarm(s).dump());
  }
  CHECK(run_swarm(small("per-piece", 1)).dump() != run_swarm(small("per-piece", 2)).dump());
}

TEST_CASE("adversarial peers gain nothing unattested") {
  SUBCASE("inflated reports are refused outright") {
    auto s = small("per-piece");
    s.adversaries = {{AdversaryKind::inflate, 2}};
    const auto m = run_swarm(s);
    CHECK(m.peers[2].chain_up == 0);
    CHECK(m.reports_rejected > 0);
  }
  SUBCASE("replayed reports credit once") {
    auto s = small("per-piece");
    s.adversaries = {{AdversaryKind::replay, 2}};
    const auto m = run_swarm(s);
    CHECK(m.peers[2].chain_up == static_cast<std::int64_t>(m.peers[2].true_up));
    CHECK(m.reports_rejected > 0);
  }
  SUBCASE("freeriders are cut off after one piece per sender") {
    auto s = small("per-piece");
    s.peers = 5;
    s.adversaries = {{AdversaryKind::freeride, 4}};
    const auto run = run_swarm_detailed(s);
    std::map<std::size_t, int> served;
    for (const auto& t : run.truth.entries()) {
      if (t.receiver == 4) ++served[t.sender];
    }
    for (const auto& [sender, count] : served) CHECK(count == 1);
    CHECK(run.metrics.peers[4].chain_down == 0);
    CHECK_FALSE(run.metrics.peers[4].completed_ms);
    CHECK(run.metrics.all_complete);
  }
}

TEST_CASE("migration mid-run leaves final reputations unchanged") {
  auto base = small("per-piece", 5);
  base.report_interval_s = 2;
  const auto control = run_swarm(base);

  for (const auto& variant : {std::vector<Interval>{}, std::vector<Interval>{{3, 6}}}) {
    auto s = base;
    s.migrate_at_s = {5};
    s.tracker_down = variant;
    const auto log = scratch("migrate.log");
    const auto m = run_swarm(s, log);
    REQUIRE(m.contracts.size() == 2);
    REQUIRE(m.peers.size() == control.peers.size());
    for (std::size_t i = 0; i < m.peers.size(); ++i) {
      CHECK(m.peers[i].chain_up == control.peers[i].chain_up);
      CHECK(m.peers[i].chain_down == control.peers[i].chain_down);
    }

    Chain replay(Allowlist{}, log);
    const auto old_addr = ContractAddress::from_hex(m.contracts[0]);
    const auto new_addr = ContractAddress::from_hex(m.contracts[1]);
    REQUIRE(old_addr);
    REQUIRE(new_addr);
    CHECK(replay.get_referrer(*new_addr) == old_addr);
    std::filesystem::remove(log);
  }
}

TEST_CASE("chain log refuses to overwrite") {
  const auto log = scratch("exists.log");
  run_swarm(small("session"), log);
  CHECK_THROWS_AS(run_swarm(small("session"), log), Error);
  std::filesystem::remove(log);
}

TEST_CASE("invalid scenarios are rejected") {
  auto bad = [](auto edit) {
    auto s = small("per-piece");
    edit(s);
    CHECK_THROWS_AS(run_swarm(s), Error);
  };
  bad([](Scenario& s) { s.peers = 1; });
  bad([](Scenario& s) { s.seeders = 0; });
  bad([](Scenario& s) { s.seeders = s.peers; });
  bad([](Scenario& s) { s.piece_size = 0; });
  bad([](Scenario& s) { s.file_size = 0; });
  bad([](Scenario& s) { s.epochs.width = 0; });
  bad([](Scenario& s) { s.cost.sign_ms = 0; });
  bad([](Scenario& s) { s.cost.bandwidth = -1; });
  bad([](Scenario& s) { s.tracker_down = {{50, 50}}; });
  bad([](Scenario& s) { s.migrate_at_s = {10, 5}; });
  bad([](Scenario& s) { s.adversaries = {{AdversaryKind::freeride, 0}}; });
  bad([](Scenario& s) { s.adversaries = {{AdversaryKind::inflate, 9}}; });
  bad([](Scenario& s) { s.adversaries = {{AdversaryKind::inflate, 2}, {AdversaryKind::forge, 2}}; });
  bad([](Scenario& s) { s.dht.drop_rate = 1.0; });
}

TEST_CASE("scenario json") {
  auto s = small("adaptive:4:2:3", 9);
  s.tracker_down = {{5, 9}};
  s.migrate_at_s = {3, 7};
  s.adversaries = {{AdversaryKind::replay, 3}};
  s.min_rep = {2, 3};
  const auto j = s.to_json();
  CHECK(Scenario::from_json(j).to_json() == j);
  CHECK(s.piece_count() == 10);

  CHECK_THROWS_AS(Scenario::from_json(Json{{"peers", 3}, {"colour", "red"}}), Error);
  CHECK_THROWS_AS(Scenario::from_json(Json{{"peers", "three"}}), Error);
  CHECK_THROWS_AS(Scenario::from_json(Json{{"policy", "sometimes"}}), Error);
  CHECK_THROWS_AS(Scenario::from_json(Json{{"min_rep", {1, 2, 3}}}), Error);
  CHECK_THROWS_AS(Scenario::from_json(Json{{"adversaries", {{{"kind", "gremlin"}}}}}), Error);
  CHECK_THROWS_AS(Scenario::from_json(Json::array()), Error);
  CHECK(Scenario::from_json(Json::object()).to_json() == Scenario{}.to_json());
}

TEST_CASE("throughput overhead") {
  const std::uint64_t gib = 1ull << 30;
  const double mib = 1 << 20;
  const auto cost = reference_cost_model();

  // baseline 1024 s; 4096 and 512 signatures at 134.19 ms
  const double small_pieces = throughput_overhead(gib, mib, 256 * 1024, PerPieceBls{}, cost);
  CHECK(small_pieces == doctest::Approx(4096 * 0.13419 / 1024).epsilon(1e-12));
  CHECK(std::abs(small_pieces - 0.52) <= 0.05);

  const double big_pieces = throughput_overhead(gib, mib, 2 * 1024 * 1024, PerPieceBls{}, cost);
  CHECK(big_pieces == doctest::Approx(512 * 0.13419 / 1024).epsilon(1e-12));
  CHECK(std::abs(big_pieces - 0.06) <= 0.02);

  CHECK(overhead_fraction(1000, SignatureCount{}, cost) == 0.0);
  CHECK_THROWS_AS(throughput_overhead(0, mib, 1024, PerPieceBls{}, cost), Error);
  CHECK_THROWS_AS(throughput_overhead(gib, 0, 1024, PerPieceBls{}, cost), Error);
  CHECK_THROWS_AS(throughput_overhead(gib, mib, 0, PerPieceBls{}, cost), Error);

  // Session signing is charged at the session rate.
  const double ses = throughput_overhead(gib, mib, 256 * 1024, Session{}, cost);
  CHECK(ses == doctest::Approx((4096 * 0.1 + 134.19) / 1000 / 1024).epsilon(1e-12));
}

TEST_CASE("property: overhead decreases in piece size and increases in sign cost") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const std::uint64_t file = 1 + rng() % (1ull << 32);
    const double bw = 1 + static_cast<double>(rng() % (1 << 26));
    const std::uint64_t p1 = 1 + rng() % (file);
    const std::uint64_t p2 = p1 + 1 + rng() % file;
    CostModel c;
    c.sign_ms = 0.01 + static_cast<double>(rng() % 100000) / 100;
    const SigningPolicy policy = PerPieceBls{};
    const auto n1 = (file + p1 - 1) / p1;
    const auto n2 = (file + p2 - 1) / p2;
    const double o1 = throughput_overhead(file, bw, p1, policy, c);
    const double o2 = throughput_overhead(file, bw, p2, policy, c);
    CAPTURE(file);
    CAPTURE(p1);
    CAPTURE(p2);
    // Strict whenever the piece count actually drops.
    if (n2 < n1) {
      CHECK(o2 < o1);
    } else {
      CHECK(o2 == o1);
    }
    CostModel slower = c;
    slower.sign_ms *= 1.5;
    CHECK(throughput_overhead(file, bw, p1, policy, slower) > o1);
  }
}

TEST_CASE("signature cost table projection") {
  const auto rows = table1_projection();
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].signatures == SignatureCount{2560, 0});
  CHECK(rows[1].signatures == SignatureCount{436, 0});
  CHECK(rows[2].signatures == SignatureCount{256, 0});
  CHECK(rows[3].signatures == SignatureCount{1, 2560});

  CHECK(std::abs(rows[0].time_s / 5.1 - 1) <= 0.10);
  CHECK(std::abs(rows[2].time_s / 0.51 - 1) <= 0.10);
  CHECK(std::abs(rows[3].time_s / 0.53 - 1) <= 0.10);
  CHECK(rows[1].time_s == doctest::Approx(0.872));

  CHECK(rows[0].report_bytes == 2560 * 32 + 96);
  CHECK(rows[2].report_bytes == 256 * 32 + 96);
  CHECK(rows[3].report_bytes == 2560 * 64 + 96);
  CHECK(std::abs(rows[3].report_bytes / 1024.0 / 160 - 1) <= 0.05);
  CHECK_FALSE(rows[1].note.empty());
  CHECK(rows[1].reference_signatures == "~512");
}

TEST_CASE("cost model validation and json") {
  CHECK_NOTHROW(reference_cost_model().validate());
  CHECK_NOTHROW(table1_cost_model().validate());
  for (int f = 0; f < 6; ++f) {
    CostModel c;
    double* fields[] = {&c.sign_ms, &c.verify_ms, &c.agg_verify_per_sig_ms,
                        &c.session_sign_ms, &c.session_verify_ms, &c.bandwidth};
    *fields[f] = 0;
    CHECK_THROWS_AS(c.validate(), Error);
    *fields[f] = std::nan("");
    CHECK_THROWS_AS(c.validate(), Error);
  }
  const auto c = table1_cost_model();
  CHECK(CostModel::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(CostModel::from_json(Json{{"sign_ms", "fast"}}), Error);
  CHECK(CostModel{}.agg_verify_ms(10) == doctest::Approx(1293.18));
}

TEST_CASE("crypto bench: directional checks on this host") {
  CHECK_THROWS_AS(bench_crypto(99), Error);
  const auto b = bench_crypto(100, {10, 25});
  CHECK(b.session_sign_speedup() > 1);
  CHECK(b.verify_over_sign() > 1);
  CHECK(b.agg_speedup.at(10) > 1.5);
  CHECK(b.agg_speedup.at(25) > 1.5);
  CHECK_NOTHROW(b.cost.validate());
}

TEST_CASE("games on a reduced budget") {
  SUBCASE("reuse, exhaustive") {
    const auto g = game_reuse(3, 3);
    CHECK(g.pass);
    CHECK(g.trials == 3 * (16 + 25 + 36 + 49));
  }
  SUBCASE("registration") {
    const auto g = game_registration(3, 300);
    CHECK(g.pass);
    CHECK(g.trials == 300);
  }
  SUBCASE("non-repudiation") {
    const auto g = game_nonrepudiation(3, 50);
    CHECK(g.pass);
    CHECK(g.trials == 50);
  }
  SUBCASE("soundness") {
    const auto g = game_soundness(3, 4);
    CHECK(g.pass);
    CHECK(g.witness.empty());
  }
}
