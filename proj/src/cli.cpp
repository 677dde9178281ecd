#include "pbts/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <optional>

#include <CLI11.hpp>

#include "pbts/sim.hpp"

namespace pbts {

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(std::string s, std::size_t w) {
  if (s.size() < w) s.insert(0, w - s.size(), ' ');
  return s;
}

std::string left(std::string s, std::size_t w) {
  if (s.size() < w) s.append(w - s.size(), ' ');
  return s;
}

void print_metrics(const Metrics& m, std::ostream& out) {
  out << "peers " << m.peers.size() << ", complete " << (m.all_complete ? "yes" : "no")
      << ", simulated " << fmt("%.3f", m.sim_time_ms / 1000.0) << " s\n";
  out << pad("uid", 10) << pad("role", 10) << pad("true_up", 12) << pad("chain_up", 12)
      << pad("true_down", 12) << pad("chain_down", 12) << pad("done_s", 10) << "\n";
  for (const auto& p : m.peers) {
    out << pad(p.uid, 10) << pad(p.seeder ? "seeder" : p.role, 10)
        << pad(std::to_string(p.true_up), 12) << pad(std::to_string(p.chain_up), 12)
        << pad(std::to_string(p.true_down), 12) << pad(std::to_string(p.chain_down), 12)
        << pad(p.completed_ms ? fmt("%.3f", *p.completed_ms / 1000.0) : "-", 10) << "\n";
  }
  out << "signatures " << m.signatures.long_term << " long-term + " << m.signatures.session
      << " session; reports " << m.reports_accepted << " accepted, " << m.reports_rejected
      << " rejected; " << m.report_bytes << " report bytes; " << m.receipts_expired
      << " expired\n";
  out << "crypto overhead " << fmt("%.1f", 100 * m.overhead) << "% of transfer time; dht lookups "
      << m.dht_lookups << "; contracts " << m.contracts.size() << "\n";
}

}  // namespace

std::uint64_t parse_size(std::string_view text) {
  std::uint64_t v = 0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr == text.data()) throw Error("bad size '" + std::string(text) + "'");
  std::string unit(ptr, end);
  std::transform(unit.begin(), unit.end(), unit.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  int shift = 0;
  if (unit.empty() || unit == "b") {
    shift = 0;
  } else if (unit == "k" || unit == "kb" || unit == "kib") {
    shift = 10;
  } else if (unit == "m" || unit == "mb" || unit == "mib") {
    shift = 20;
  } else if (unit == "g" || unit == "gb" || unit == "gib") {
    shift = 30;
  } else {
    throw Error("bad size unit '" + unit + "'");
  }
  if (shift && v > (UINT64_MAX >> shift)) throw Error("size too large");
  return v << shift;
}

int cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reputation-tracked BitTorrent: simulator, games and cost model", "pbts"};
  app.require_subcommand(1);
  app.fallthrough();
  bool json = false;
  app.add_flag("--json", json, "Machine-readable JSON on stdout");

  std::string scenario_path;
  std::string chain_path;
  auto* run = app.add_subcommand("run", "Simulate a swarm described by a scenario file");
  run->add_option("scenario", scenario_path, "Scenario JSON")->required();
  run->add_option("--chain", chain_path, "Write the chain log here (default: $PBTS_CHAIN)");

  std::size_t reps = 200;
  auto* bench = app.add_subcommand("bench", "Measure signing and verification on this host");
  bench->add_option("--reps", reps, "Repetitions per operation")->check(CLI::Range(100, 1000000));

  std::uint64_t seed = 1;
  auto* games = app.add_subcommand("games", "Run the four security games");
  games->add_option("--seed", seed, "Game seed");

  auto* table1 = app.add_subcommand("table1", "Model the attestation comparison table");

  std::string file_size, bandwidth, piece_size, policy = "per-piece";
  CostModel cost = reference_cost_model();
  auto* overhead = app.add_subcommand("overhead", "Download slowdown from receipt signing");
  overhead->add_option("--file-size", file_size, "e.g. 1GB")->required();
  overhead->add_option("--bandwidth", bandwidth, "bytes per second, e.g. 1MB")->required();
  overhead->add_option("--piece-size", piece_size, "e.g. 256KB")->required();
  overhead->add_option("--policy", policy, "per-piece | batch:K | session | adaptive[:H:S:T]");
  overhead->add_option("--sign-ms", cost.sign_ms, "Long-term signing latency");
  overhead->add_option("--session-sign-ms", cost.session_sign_ms, "Session signing latency");

  std::string dump_path;
  auto* chain = app.add_subcommand("chain", "Inspect a chain log");
  chain->require_subcommand(1);
  auto* dump = chain->add_subcommand("dump", "Replay a log and print contract state");
  dump->add_option("path", dump_path, "Chain log")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "pbts: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*run) {
      std::optional<std::filesystem::path> log;
      if (!chain_path.empty()) {
        log = chain_path;
      } else if (const char* env = std::getenv("PBTS_CHAIN"); env && *env) {
        log = env;
      }
      const auto m = run_swarm(Scenario::load(scenario_path), log);
      if (json) {
        out << m.dump() << "\n";
      } else {
        print_metrics(m, out);
      }
      return m.all_complete ? 0 : 1;
    }

    if (*bench) {
      const auto b = bench_crypto(reps);
      if (json) {
        out << b.to_json().dump(2) << "\n";
        return 0;
      }
      out << "mean latency over " << b.reps << " runs (ms)\n";
      out << "  sign            " << fmt("%9.3f", b.cost.sign_ms) << "\n";
      out << "  verify          " << fmt("%9.3f", b.cost.verify_ms) << "\n";
      out << "  session sign    " << fmt("%9.3f", b.cost.session_sign_ms) << "\n";
      out << "  session verify  " << fmt("%9.3f", b.cost.session_verify_ms) << "\n";
      out << "session sign speedup " << fmt("%.1fx", b.session_sign_speedup())
          << ", verify/sign " << fmt("%.2f", b.verify_over_sign()) << "\n";
      out << "batch  agg_verify_ms  speedup\n";
      for (const auto& [k, s] : b.agg_speedup) {
        out << pad(std::to_string(k), 5) << fmt("%15.3f", b.agg_verify_ms.at(k))
            << fmt("%8.2fx", s) << "\n";
      }
      return 0;
    }

    if (*games) {
      const GameResult results[] = {game_registration(seed), game_nonrepudiation(seed),
                                    game_soundness(seed), game_reuse(seed)};
      bool ok = true;
      Json j = Json::array();
      for (const auto& r : results) {
        ok = ok && r.pass;
        j.push_back(r.to_json());
        if (!json) {
          out << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.trials << " trials, "
              << r.wins << " adversary wins)\n";
          if (!r.witness.empty()) out << "  witness: " << r.witness << "\n";
        }
      }
      if (json) out << j.dump(2) << "\n";
      return ok ? 0 : 1;
    }

    if (*table1) {
      const auto rows = table1_projection();
      if (json) {
        Json j = Json::array();
        for (const auto& r : rows) {
          j.push_back({{"approach", r.approach},
                       {"policy", policy_name(r.policy)},
                       {"signatures", r.signatures.total()},
                       {"long_term", r.signatures.long_term},
                       {"session", r.signatures.session},
                       {"time_s", r.time_s},
                       {"report_bytes", r.report_bytes},
                       {"reference_signatures", r.reference_signatures},
                       {"reference_time_s", r.reference_time_s},
                       {"reference_size", r.reference_size},
                       {"note", r.note}});
        }
        out << j.dump(2) << "\n";
        return 0;
      }
      out << "2560 pieces of 2 MiB; BLS sign+verify 2 ms, session 0.2 ms\n";
      out << left("approach", 20) << pad("sigs", 7) << pad("time_s", 9) << pad("bytes", 9)
          << " | " << pad("ref sigs", 8) << pad("ref s", 7) << pad("ref size", 9) << "\n";
      for (const auto& r : rows) {
        out << left(r.approach, 20) << pad(std::to_string(r.signatures.total()), 7)
            << fmt("%9.3f", r.time_s) << pad(std::to_string(r.report_bytes), 9) << " | "
            << pad(r.reference_signatures, 8) << fmt("%7.2f", r.reference_time_s)
            << pad(r.reference_size, 9);
        if (!r.note.empty()) out << "  (" << r.note << ")";
        out << "\n";
      }
      return 0;
    }

    if (*overhead) {
      std::uint64_t fs = 0, bw = 0, ps = 0;
      SigningPolicy p;
      try {
        fs = parse_size(file_size);
        bw = parse_size(bandwidth);
        ps = parse_size(piece_size);
        p = parse_policy(policy);
        if (fs == 0 || bw == 0 || ps == 0) throw Error("sizes must be positive");
        cost.validate();
      } catch (const Error& e) {
        err << "pbts overhead: " << e.what() << "\n" << overhead->help();
        return 2;
      }
      const double frac = throughput_overhead(fs, static_cast<double>(bw), ps, p, cost);
      const auto n = (fs + ps - 1) / ps;
      const auto sigs = signature_count(p, n);
      const double base = static_cast<double>(fs) / static_cast<double>(bw);
      if (json) {
        out << Json{{"file_size", fs},
                    {"bandwidth", bw},
                    {"piece_size", ps},
                    {"policy", policy_name(p)},
                    {"pieces", n},
                    {"long_term_signatures", sigs.long_term},
                    {"session_signatures", sigs.session},
                    {"baseline_s", base},
                    {"total_s", base * (1 + frac)},
                    {"overhead", frac}}
                   .dump(2)
            << "\n";
        return 0;
      }
      out << "overhead " << fmt("%.1f", 100 * frac) << "% (" << n << " pieces, "
          << sigs.long_term << " long-term + " << sigs.session << " session signatures; "
          << fmt("%.1f", base) << " s -> " << fmt("%.1f", base * (1 + frac)) << " s)\n";
      return 0;
    }

    if (*dump) {
      if (!std::filesystem::exists(dump_path)) throw Error("no such chain log " + dump_path);
      Chain c(Allowlist{}, std::filesystem::path(dump_path));
      if (json) {
        out << c.state_json() << "\n";
      } else {
        out << c.contract_count() << " contracts, head seq " << c.head_seq() << "\n"
            << Json::parse(c.state_json()).dump(2) << "\n";
      }
      return 0;
    }
  } catch (const std::exception& e) {
    err << "pbts: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace pbts
