#include <chrono>
#include <cmath>
#include <random>

#include "pbts/sim.hpp"

namespace pbts {

void CostModel::validate() const {
  const std::pair<const char*, double> fields[] = {
      {"sign_ms", sign_ms},
      {"verify_ms", verify_ms},
      {"agg_verify_per_sig_ms", agg_verify_per_sig_ms},
      {"session_sign_ms", session_sign_ms},
      {"session_verify_ms", session_verify_ms},
      {"bandwidth", bandwidth},
  };
  for (const auto& [name, v] : fields) {
    if (!(v > 0) || !std::isfinite(v)) {
      throw Error(std::string("cost model: ") + name + " must be positive");
    }
  }
}

Json CostModel::to_json() const {
  Json j;
  j["sign_ms"] = sign_ms;
  j["verify_ms"] = verify_ms;
  j["agg_verify_per_sig_ms"] = agg_verify_per_sig_ms;
  j["session_sign_ms"] = session_sign_ms;
  j["session_verify_ms"] = session_verify_ms;
  j["bandwidth"] = bandwidth;
  return j;
}

CostModel CostModel::from_json(const Json& j) {
  if (!j.is_object()) throw Error("cost model: expected an object");
  CostModel c;
  auto field = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw Error(std::string("cost model: ") + key + " must be a number");
    out = j[key].get<double>();
  };
  field("sign_ms", c.sign_ms);
  field("verify_ms", c.verify_ms);
  field("agg_verify_per_sig_ms", c.agg_verify_per_sig_ms);
  field("session_sign_ms", c.session_sign_ms);
  field("session_verify_ms", c.session_verify_ms);
  field("bandwidth", c.bandwidth);
  c.validate();
  return c;
}

CostModel reference_cost_model() { return CostModel{}; }

CostModel table1_cost_model() {
  CostModel c;
  c.sign_ms = 1.0;
  c.verify_ms = 1.0;
  c.agg_verify_per_sig_ms = 1.0;
  c.session_sign_ms = 0.1;
  c.session_verify_ms = 0.1;
  return c;
}

double overhead_fraction(double baseline_s, const SignatureCount& count, const CostModel& cost) {
  cost.validate();
  if (!(baseline_s > 0)) throw Error("overhead: baseline must be positive");
  const double signing_ms = static_cast<double>(count.long_term) * cost.sign_ms +
                            static_cast<double>(count.session) * cost.session_sign_ms;
  return (signing_ms / 1000.0 + baseline_s) / baseline_s - 1.0;
}

double throughput_overhead(std::uint64_t file_size, double bandwidth, std::uint64_t piece_size,
                           const SigningPolicy& policy, const CostModel& cost) {
  if (file_size == 0 || piece_size == 0 || !(bandwidth > 0)) {
    throw Error("overhead: inputs must be positive");
  }
  const std::uint64_t n = (file_size + piece_size - 1) / piece_size;
  const double baseline_s = static_cast<double>(file_size) / bandwidth;
  return overhead_fraction(baseline_s, signature_count(policy, n), cost);
}

std::uint64_t report_bytes_model(const SigningPolicy& policy, std::uint64_t n) {
  const auto c = signature_count(policy, n);
  if (std::holds_alternative<Session>(policy)) return 64 * c.session + 96;
  return 32 * c.long_term + 96;
}

std::vector<Table1Row> table1_projection(std::uint64_t n, std::uint64_t piece_size,
                                         const CostModel& cost) {
  cost.validate();
  if (n == 0 || piece_size == 0) throw Error("table1: n and piece size must be positive");
  const double bls = cost.sign_ms + cost.verify_ms;
  const double ses = cost.session_sign_ms + cost.session_verify_ms;

  auto row = [&](std::string name, SigningPolicy p, std::string ref_sigs, double ref_t,
                 std::string ref_size) {
    Table1Row r;
    r.approach = std::move(name);
    r.policy = p;
    r.signatures = signature_count(p, n);
    r.time_s = (static_cast<double>(r.signatures.long_term) * bls +
                static_cast<double>(r.signatures.session) * ses) /
               1000.0;
    r.report_bytes = report_bytes_model(p, n);
    r.reference_signatures = std::move(ref_sigs);
    r.reference_time_s = ref_t;
    r.reference_size = std::move(ref_size);
    return r;
  };

  std::vector<Table1Row> rows;
  rows.push_back(row("Per-piece BLS", PerPieceBls{}, "2,560", 5.1, "2.3 MB"));
  rows.back().note = "reference size disagrees with 32 B per hash + 96 B";
  rows.push_back(row("Adaptive frequency", Adaptive{}, "~512", 1.02, "456 KB"));
  rows.back().note = "formula gives " + std::to_string(rows.back().signatures.total()) +
                     " signatures, reference ~512";
  rows.push_back(row("Batch (k=10)", Batch{10}, "256", 0.51, "228 KB"));
  rows.push_back(row("Session (per-piece)", Session{}, "2,560", 0.53, "160 KB"));
  return rows;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0, std::size_t ops) {
  const std::chrono::duration<double, std::milli> d = Clock::now() - t0;
  return d.count() / static_cast<double>(ops);
}

}  // namespace

Json BenchResult::to_json() const {
  Json j;
  j["reps"] = reps;
  j["cost"] = cost.to_json();
  Json agg = Json::array();
  for (const auto& [b, s] : agg_speedup) {
    agg.push_back({{"batch", b}, {"agg_verify_ms", agg_verify_ms.at(b)}, {"speedup", s}});
  }
  j["aggregation"] = agg;
  j["session_sign_speedup"] = session_sign_speedup();
  j["verify_over_sign"] = verify_over_sign();
  return j;
}

BenchResult bench_crypto(std::size_t reps, const std::vector<std::size_t>& batches) {
  if (reps < 100) throw Error("bench: reps must be at least 100");
  std::mt19937_64 rng(0xbe9c);
  BenchResult out;
  out.reps = reps;

  const auto kp = KeyPair::generate(rng);
  std::vector<Bytes> msgs;
  for (std::size_t i = 0; i < reps; ++i) msgs.push_back(to_bytes("bench-" + std::to_string(i)));

  std::vector<Signature> sigs;
  auto t0 = Clock::now();
  for (const auto& m : msgs) sigs.push_back(sign(kp.sk, m));
  out.cost.sign_ms = ms_since(t0, reps);

  std::size_t ok = 0;
  t0 = Clock::now();
  for (std::size_t i = 0; i < reps; ++i) ok += verify(kp.pk, msgs[i], sigs[i]);
  out.cost.verify_ms = ms_since(t0, reps);
  if (ok != reps) throw Error("bench: signature failed to verify");

  const auto skp = SessionKeyPair::generate(rng);
  std::vector<SessionSignature> ssigs;
  t0 = Clock::now();
  for (const auto& m : msgs) ssigs.push_back(session_sign(skp.sk, m));
  out.cost.session_sign_ms = ms_since(t0, reps);
  ok = 0;
  t0 = Clock::now();
  for (std::size_t i = 0; i < reps; ++i) ok += session_verify(skp.pk, msgs[i], ssigs[i]);
  out.cost.session_verify_ms = ms_since(t0, reps);
  if (ok != reps) throw Error("bench: session signature failed to verify");

  // Distinct signers, as in a report covering many receivers.
  std::size_t largest = 0;
  for (auto b : batches) largest = std::max(largest, b);
  std::vector<KeyPair> signers;
  for (std::size_t i = 0; i < largest; ++i) signers.push_back(KeyPair::generate(rng));

  const std::size_t agg_reps = std::max<std::size_t>(3, reps / 20);
  double per_sig_total = 0;
  for (auto b : batches) {
    if (b == 0) throw Error("bench: batch size must be positive");
    std::vector<KeyedMessage> pairs;
    std::vector<Signature> parts;
    for (std::size_t i = 0; i < b; ++i) {
      pairs.push_back({signers[i].pk, msgs[i % msgs.size()]});
      parts.push_back(sign(signers[i].sk, pairs.back().message));
    }
    const auto agg = aggregate(parts);
    ok = 0;
    t0 = Clock::now();
    for (std::size_t r = 0; r < agg_reps; ++r) ok += aggregate_verify(pairs, agg);
    const double ms = ms_since(t0, agg_reps);
    if (ok != agg_reps) throw Error("bench: aggregate failed to verify");
    out.agg_verify_ms[b] = ms;
    out.agg_speedup[b] = static_cast<double>(b) * out.cost.verify_ms / ms;
    per_sig_total += ms / static_cast<double>(b);
  }
  if (!batches.empty()) out.cost.agg_verify_per_sig_ms = per_sig_total / batches.size();
  return out;
}

}  // namespace pbts
