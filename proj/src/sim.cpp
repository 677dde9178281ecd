#include "pbts/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>

namespace pbts {

namespace {

constexpr std::uint64_t kRetryMs = 1000;
constexpr std::uint16_t kPort = 6881;
const Bytes kProgram = to_bytes("pbts-tracker");

std::uint64_t ceil_ms(double ms) {
  return ms <= 0 ? 0 : static_cast<std::uint64_t>(std::ceil(ms - 1e-9));
}

std::string generation(std::size_t g) { return "gen-" + std::to_string(g); }

Bytes piece_content(std::uint64_t seed, std::uint64_t i, std::uint64_t len) {
  std::mt19937_64 r(seed * 0x9e3779b97f4a7c15ULL + i);
  Bytes out(len);
  for (std::uint64_t j = 0; j < len; j += 8) {
    const std::uint64_t w = r();
    for (std::uint64_t b = 0; b < 8 && j + b < len; ++b) {
      out[j + b] = static_cast<std::uint8_t>(w >> (8 * b));
    }
  }
  return out;
}

template <class T>
T take(const Json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(std::string("scenario: bad value for '") + key + "'");
  }
}

}  // namespace

std::string_view to_string(AdversaryKind k) {
  switch (k) {
    case AdversaryKind::inflate: return "inflate";
    case AdversaryKind::replay: return "replay";
    case AdversaryKind::forge: return "forge";
    case AdversaryKind::freeride: return "freeride";
  }
  return "?";
}

AdversaryKind parse_adversary(std::string_view s) {
  for (auto k : {AdversaryKind::inflate, AdversaryKind::replay, AdversaryKind::forge,
                 AdversaryKind::freeride}) {
    if (to_string(k) == s) return k;
  }
  throw Error("unknown adversary kind '" + std::string(s) + "'");
}

// Scenario

std::uint64_t Scenario::piece_count() const {
  if (piece_size == 0) return 0;
  return (file_size + piece_size - 1) / piece_size;
}

void Scenario::validate() const {
  if (peers < 2) throw Error("scenario: need at least two peers");
  if (seeders == 0 || seeders >= peers) throw Error("scenario: seeders must be in [1, peers)");
  if (file_size == 0 || piece_size == 0) throw Error("scenario: sizes must be positive");
  if (piece_count() > (1u << 20)) throw Error("scenario: too many pieces");
  if (epochs.width == 0) throw Error("scenario: epoch width must be positive");
  if (min_rep.den == 0) throw Error("scenario: min_rep denominator is zero");
  if (init_credit < 0) throw Error("scenario: init_credit must be non-negative");
  cost.validate();
  if (report_interval_s == 0 || announce_interval_s == 0) {
    throw Error("scenario: intervals must be positive");
  }
  for (const auto& d : tracker_down) {
    if (d.start_s >= d.end_s) throw Error("scenario: empty tracker outage");
  }
  for (std::size_t i = 0; i < migrate_at_s.size(); ++i) {
    if (migrate_at_s[i] == 0 || (i > 0 && migrate_at_s[i] <= migrate_at_s[i - 1])) {
      throw Error("scenario: migration times must be positive and increasing");
    }
  }
  std::set<std::size_t> seen;
  for (const auto& a : adversaries) {
    if (a.peer >= peers) throw Error("scenario: adversary peer out of range");
    if (!seen.insert(a.peer).second) throw Error("scenario: one script per adversary peer");
    if (a.kind == AdversaryKind::freeride && a.peer < seeders) {
      throw Error("scenario: a seeder cannot freeride");
    }
  }
  if (max_time_s == 0) throw Error("scenario: max_time_s must be positive");
  if (dht.k == 0 || dht.alpha == 0 || dht.ttl_epochs == 0) {
    throw Error("scenario: dht parameters must be positive");
  }
  if (!(dht.drop_rate >= 0 && dht.drop_rate < 1)) throw Error("scenario: drop_rate not in [0, 1)");
  if (const auto* b = std::get_if<Batch>(&policy); b && b->k == 0) {
    throw Error("scenario: batch size must be positive");
  }
}

Json Scenario::to_json() const {
  Json j;
  j["seed"] = seed;
  j["peers"] = peers;
  j["seeders"] = seeders;
  j["file_size"] = file_size;
  j["piece_size"] = piece_size;
  j["policy"] = policy_name(policy);
  j["epoch_width_s"] = epochs.width;
  j["delta"] = epochs.delta;
  j["min_rep"] = Json::array({min_rep.num, min_rep.den});
  j["init_credit"] = init_credit;
  j["cost"] = cost.to_json();
  j["join_spread_ms"] = join_spread_ms;
  j["report_interval_s"] = report_interval_s;
  j["announce_interval_s"] = announce_interval_s;
  Json down = Json::array();
  for (const auto& d : tracker_down) down.push_back(Json::array({d.start_s, d.end_s}));
  j["tracker_down"] = down;
  j["migrate_at_s"] = migrate_at_s;
  Json adv = Json::array();
  for (const auto& a : adversaries) adv.push_back({{"kind", to_string(a.kind)}, {"peer", a.peer}});
  j["adversaries"] = adv;
  j["max_time_s"] = max_time_s;
  j["dht"] = {{"k", dht.k},
              {"alpha", dht.alpha},
              {"ttl_epochs", dht.ttl_epochs},
              {"drop_rate", dht.drop_rate},
              {"retries", dht.retries}};
  return j;
}

Scenario Scenario::from_json(const Json& j) {
  if (!j.is_object()) throw Error("scenario: expected a JSON object");
  static const std::set<std::string> known = {
      "seed", "peers", "seeders", "file_size", "piece_size", "policy", "epoch_width_s",
      "delta", "min_rep", "init_credit", "cost", "join_spread_ms", "report_interval_s",
      "announce_interval_s", "tracker_down", "migrate_at_s", "adversaries", "max_time_s", "dht"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw Error("scenario: unknown field '" + key + "'");
  }
  Scenario s;
  s.seed = take(j, "seed", s.seed);
  s.peers = take(j, "peers", s.peers);
  s.seeders = take(j, "seeders", s.seeders);
  s.file_size = take(j, "file_size", s.file_size);
  s.piece_size = take(j, "piece_size", s.piece_size);
  if (j.contains("policy")) s.policy = parse_policy(take<std::string>(j, "policy", ""));
  s.epochs.width = take(j, "epoch_width_s", s.epochs.width);
  s.epochs.delta = take(j, "delta", s.epochs.delta);
  if (j.contains("min_rep")) {
    const auto r = take<std::vector<std::uint64_t>>(j, "min_rep", {});
    if (r.size() != 2) throw Error("scenario: min_rep must be [num, den]");
    s.min_rep = {r[0], r[1]};
  }
  s.init_credit = take(j, "init_credit", s.init_credit);
  if (j.contains("cost")) s.cost = CostModel::from_json(j["cost"]);
  s.join_spread_ms = take(j, "join_spread_ms", s.join_spread_ms);
  s.report_interval_s = take(j, "report_interval_s", s.report_interval_s);
  s.announce_interval_s = take(j, "announce_interval_s", s.announce_interval_s);
  for (const auto& d : take<std::vector<std::vector<std::uint64_t>>>(j, "tracker_down", {})) {
    if (d.size() != 2) throw Error("scenario: outage must be [start_s, end_s]");
    s.tracker_down.push_back({d[0], d[1]});
  }
  s.migrate_at_s = take(j, "migrate_at_s", s.migrate_at_s);
  if (j.contains("adversaries")) {
    if (!j["adversaries"].is_array()) throw Error("scenario: adversaries must be a list");
    for (const auto& a : j["adversaries"]) {
      if (!a.is_object()) throw Error("scenario: adversary must be an object");
      s.adversaries.push_back(
          {parse_adversary(take<std::string>(a, "kind", "")), take<std::size_t>(a, "peer", 0)});
    }
  }
  s.max_time_s = take(j, "max_time_s", s.max_time_s);
  if (j.contains("dht")) {
    const auto& d = j["dht"];
    if (!d.is_object()) throw Error("scenario: dht must be an object");
    s.dht.k = take(d, "k", s.dht.k);
    s.dht.alpha = take(d, "alpha", s.dht.alpha);
    s.dht.ttl_epochs = take(d, "ttl_epochs", s.dht.ttl_epochs);
    s.dht.drop_rate = take(d, "drop_rate", s.dht.drop_rate);
    s.dht.retries = take(d, "retries", s.dht.retries);
  }
  s.validate();
  return s;
}

Scenario Scenario::load(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open scenario " + p.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("scenario " + p.string() + ": " + e.what());
  }
  return from_json(j);
}

// Ground truth

std::uint64_t GroundTruthLog::uploaded(std::size_t peer) const {
  std::uint64_t s = 0;
  for (const auto& t : entries_) s += t.sender == peer ? t.bytes : 0;
  return s;
}

std::uint64_t GroundTruthLog::downloaded(std::size_t peer) const {
  std::uint64_t s = 0;
  for (const auto& t : entries_) s += t.receiver == peer ? t.bytes : 0;
  return s;
}

std::uint64_t GroundTruthLog::attested_upload(std::size_t peer) const {
  std::uint64_t s = 0;
  for (const auto& t : entries_) s += t.sender == peer && t.attested ? t.bytes : 0;
  return s;
}

Json Metrics::to_json() const {
  Json j;
  Json ps = Json::array();
  for (const auto& p : peers) {
    Json e;
    e["uid"] = p.uid;
    e["role"] = p.role;
    e["seeder"] = p.seeder;
    e["true_up"] = p.true_up;
    e["true_down"] = p.true_down;
    e["attested_up"] = p.attested_up;
    e["chain_up"] = p.chain_up;
    e["chain_down"] = p.chain_down;
    e["receipts_issued"] = p.receipts_issued;
    e["completed_ms"] = p.completed_ms ? Json(*p.completed_ms) : Json(nullptr);
    ps.push_back(e);
  }
  j["peers"] = ps;
  j["transfers"] = transfers;
  j["receipts_issued"] = receipts_issued;
  j["items_verified"] = items_verified;
  j["signatures"] = {{"long_term", signatures.long_term}, {"session", signatures.session}};
  j["report_bytes"] = report_bytes;
  j["reports_accepted"] = reports_accepted;
  j["reports_rejected"] = reports_rejected;
  j["receipts_expired"] = receipts_expired;
  j["sim_time_ms"] = sim_time_ms;
  j["transfer_ms"] = transfer_ms;
  j["crypto_ms"] = crypto_ms;
  j["overhead"] = overhead;
  j["dht_lookups"] = dht_lookups;
  j["dht_messages"] = dht_messages;
  j["contracts"] = contracts;
  j["all_complete"] = all_complete;
  return j;
}

// The event-driven swarm.

class Swarm {
 public:
  Swarm(const Scenario& s, const std::optional<std::filesystem::path>& log);
  SwarmRun run();

 private:
  enum class Ev { start, request, done, report, announce, migrate };
  struct Item {
    std::uint64_t t;
    std::uint64_t seq;
    Ev kind;
    std::size_t a;
    std::size_t b;
    std::uint64_t unit;
    bool operator>(const Item& o) const { return std::tie(t, seq) > std::tie(o.t, o.seq); }
  };

  struct ReceiverSession {
    SessionCert cert;
    SessionKeyPair keys;
  };
  struct SessionBuffer {
    SessionCert cert;
    std::vector<SessionPieceSig> sigs;
  };

  struct Peer {
    std::string uid;
    KeyPair kp;
    Endpoint ep;
    NodeId node;
    bool seeder = false;
    std::optional<AdversaryKind> adv;
    std::uint64_t start_ms = 0;
    bool started = false;
    bool in_swarm = false;
    std::vector<bool> have;
    std::uint64_t have_count = 0;
    bool busy = false;
    std::uint64_t free_at = 0;
    std::set<std::size_t> neighbors;
    std::set<std::size_t> refused;
    LocalView view;
    // Receiver side, keyed by sender.
    std::map<std::size_t, std::uint64_t> pair_count;
    std::map<std::size_t, ReceiverSession> sessions;
    // Sender side, awaiting a report.
    std::vector<Receipt> receipts;
    std::vector<BatchCommitment> batches;
    std::map<SessionId, SessionBuffer> session_buf;
    std::optional<ReportPayload> last_report;
    std::uint64_t receipts_issued = 0;
    std::optional<std::uint64_t> completed_ms;

    bool complete() const { return have_count == have.size(); }
    bool pending() const {
      if (!receipts.empty() || !batches.empty()) return true;
      for (const auto& [_, b] : session_buf) {
        if (!b.sigs.empty()) return true;
      }
      return false;
    }
  };

  void push(std::uint64_t t, Ev kind, std::size_t a, std::size_t b = 0, std::uint64_t unit = 0) {
    queue_.push(Item{t, seq_++, kind, a, b, unit});
  }

  bool tracker_up(std::uint64_t t) const {
    for (const auto& d : s_.tracker_down) {
      if (t >= d.start_s * 1000 && t < d.end_s * 1000) return false;
    }
    return true;
  }
  bool finished() const;

  std::uint64_t unit_size() const {
    if (const auto* b = std::get_if<Batch>(&s_.policy)) return b->k;
    return 1;
  }
  std::uint64_t unit_count() const { return (n_ + unit_size() - 1) / unit_size(); }
  std::uint64_t unit_first(std::uint64_t u) const { return u * unit_size() + 1; }
  std::uint64_t unit_last(std::uint64_t u) const { return std::min(n_, (u + 1) * unit_size()); }
  bool has_unit(const Peer& p, std::uint64_t u) const;
  Bytes piece(std::uint64_t i) const {
    return piece_content(s_.seed, i, torrent_->piece_length(i));
  }

  void link(std::size_t a, std::size_t b);
  void merge(std::size_t p, const std::vector<PeerEntry>& sample);
  void on_start(std::size_t p, std::uint64_t t);
  void announce(std::size_t p, Event e, std::uint64_t t);
  void on_request(std::size_t p, std::uint64_t t);
  void on_done(std::size_t sender, std::size_t receiver, std::uint64_t unit, std::uint64_t t);
  void on_report(std::size_t p, std::uint64_t t);
  void on_migrate();

  void submit(Peer& p, std::uint64_t t);
  void submit_receipts(Peer& p, std::uint64_t now_s);
  void submit_batches(Peer& p, std::uint64_t now_s);
  void submit_sessions(Peer& p, std::uint64_t now_s);
  void forge(Peer& p, std::uint64_t now_s, std::uint64_t now_e);
  void settle(bool ok, std::uint64_t items, std::uint64_t bytes);

  Metrics collect(std::uint64_t end_ms) const;

  Scenario s_;
  std::uint64_t n_;
  std::mt19937_64 rng_;
  std::mt19937_64 tracker_rng_;
  Allowlist allow_;
  Chain chain_;
  std::optional<Tracker> tracker_;
  std::optional<TorrentMeta> torrent_;
  std::optional<DhtNetwork> dht_;
  std::vector<Peer> peers_;
  std::map<PublicKey, std::size_t> by_pk_;
  std::size_t generation_ = 0;
  std::vector<std::string> contracts_;

  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue_;
  std::uint64_t seq_ = 0;
  GroundTruthLog truth_;
  Metrics m_;
};

namespace {

Allowlist swarm_allowlist(const Scenario& s) {
  Allowlist a;
  for (std::size_t g = 0; g <= s.migrate_at_s.size(); ++g) {
    a.insert(measure(kProgram, to_bytes(generation(g))));
  }
  return a;
}

Enclave launch_generation(std::size_t g, const Allowlist& allow) {
  auto e = Enclave::launch(kProgram, to_bytes(generation(g)), allow, QuoteNonce{});
  if (!e) throw Error("sim: enclave launch refused");
  return std::move(*e);
}

std::optional<std::filesystem::path> fresh_log(const std::optional<std::filesystem::path>& p) {
  if (p && std::filesystem::exists(*p)) {
    throw Error("chain log " + p->string() + " already exists");
  }
  return p;
}

}  // namespace

Swarm::Swarm(const Scenario& s, const std::optional<std::filesystem::path>& log)
    : s_((s.validate(), s)),
      n_(s.piece_count()),
      rng_(s.seed),
      tracker_rng_(s.seed ^ 0x7a11e7ULL),
      allow_(swarm_allowlist(s)),
      chain_(allow_, fresh_log(log)) {
  std::mt19937_64 setup_rng(s.seed ^ 0x5e7U);
  const TrackerConfig cfg{s.epochs, 50, 1};
  tracker_ = Tracker::deploy(chain_, launch_generation(0, allow_),
                             setup(128, s.min_rep, s.init_credit, setup_rng), cfg);
  if (!tracker_) throw Error("sim: tracker deployment refused");
  contracts_.push_back(tracker_->address().hex());

  std::mt19937_64 key_rng(s.seed ^ 0x6b657973ULL);
  for (std::size_t i = 0; i < s.peers; ++i) {
    Peer p;
    p.uid = "peer-" + std::to_string(i);
    p.kp = KeyPair::generate(key_rng);
    p.ep = {"10.0." + std::to_string(i / 250) + "." + std::to_string(i % 250 + 1), kPort};
    p.node = node_id(p.kp.pk);
    p.seeder = i < s.seeders;
    p.start_ms = i * s.join_spread_ms;
    p.have.assign(n_, p.seeder);
    p.have_count = p.seeder ? n_ : 0;
    for (const auto& a : s.adversaries) {
      if (a.peer == i) p.adv = a.kind;
    }
    const auto sig = sign(p.kp.sk, register_message(tracker_->params().iid, p.uid));
    if (!tracker_->register_user(p.uid, p.kp.pk, sig, {prove_possession(p.kp.sk)})) {
      throw Error("sim: registration refused for " + p.uid);
    }
    by_pk_[p.kp.pk] = i;
    peers_.push_back(std::move(p));
  }

  std::vector<Digest> hashes;
  const std::uint64_t last = s.file_size - (n_ - 1) * s.piece_size;
  for (std::uint64_t i = 1; i <= n_; ++i) {
    hashes.push_back(hash(piece_content(s.seed, i, i == n_ ? last : s.piece_size)));
  }
  Bootstrap boot;
  for (std::size_t i = 0; i < s.seeders; ++i) boot.nodes.push_back(peers_[i].ep);
  boot.contract = tracker_->address();
  torrent_.emplace(std::move(hashes), s.piece_size, s.file_size, std::move(boot));

  dht_.emplace(s.dht, chain_, tracker_->address(), s.min_rep, s.seed ^ 0xd47ULL);
}

bool Swarm::has_unit(const Peer& p, std::uint64_t u) const {
  for (std::uint64_t i = unit_first(u); i <= unit_last(u); ++i) {
    if (!p.have[i - 1]) return false;
  }
  return true;
}

bool Swarm::finished() const {
  for (const auto& p : peers_) {
    if (p.adv == AdversaryKind::freeride) continue;
    if (!p.complete()) return false;
    if (p.pending()) return false;
  }
  return true;
}

void Swarm::link(std::size_t a, std::size_t b) {
  if (a == b) return;
  peers_[a].neighbors.insert(b);
  peers_[b].neighbors.insert(a);
  dht_->node(peers_[a].node)->cache_bootstrap(peers_[b].ep);
}

void Swarm::merge(std::size_t p, const std::vector<PeerEntry>& sample) {
  for (const auto& e : sample) {
    const auto it = by_pk_.find(e.pk);
    if (it != by_pk_.end() && peers_[it->second].started) link(p, it->second);
  }
}

void Swarm::on_start(std::size_t i, std::uint64_t t) {
  Peer& p = peers_[i];
  p.started = true;
  dht_->add_node(p.kp.pk, p.ep);
  dht_->join(p.node, torrent_->bootstrap().nodes);
  announce(i, Event::started, t);
  if (!p.complete()) push(t, Ev::request, i);
  push(t + s_.announce_interval_s * 1000, Ev::announce, i);
  push(t + s_.report_interval_s * 1000, Ev::report, i);
}

void Swarm::announce(std::size_t i, Event e, std::uint64_t t) {
  Peer& p = peers_[i];
  const Digest& tid = torrent_->infohash();
  // A peer refused at start keeps asking to start.
  if (!p.in_swarm && e == Event::none) e = Event::started;
  const auto sig = sign(p.kp.sk, announce_message(p.uid, tid, e));
  if (tracker_up(t)) {
    const auto sample = tracker_->announce(p.uid, p.kp.pk, sig, tid, e, p.ep.host, p.ep.port,
                                           tracker_rng_);
    const auto members = tracker_->swarm(tid);
    const bool listed = std::any_of(members.begin(), members.end(),
                                    [&](const PeerEntry& m) { return m.pk == p.kp.pk; });
    if (e == Event::started) p.in_swarm = listed;
    if (p.in_swarm) merge(i, sample);
    return;
  }

  // Tracker unreachable: signed records in the DHT plus direct exchange with
  // known neighbours, both checked against the chain.
  if (e == Event::started &&
      check_standing(p.uid, p.kp.pk, chain_, tracker_->address(), s_.min_rep) !=
          StoreResult::accepted) {
    return;
  }
  p.in_swarm = true;
  const auto rec = make_announce_record(p.uid, p.kp, tid, p.ep.host, p.ep.port);
  dht_->announce(p.node, rec);
  merge(i, dht_->get_peers(p.node, tid));
  m_.dht_lookups += 2;
  const auto known = p.neighbors;
  for (auto q : known) {
    merge(i, peers_[q].view.peer_announce(p.uid, p.kp.pk, sig, tid, e, p.ep.host, p.ep.port,
                                          chain_, tracker_->address(), s_.min_rep,
                                          tracker_rng_));
  }
}

void Swarm::on_request(std::size_t i, std::uint64_t t) {
  Peer& p = peers_[i];
  if (p.busy || p.complete()) return;

  std::vector<std::uint64_t> best;
  std::size_t best_holders = SIZE_MAX;
  for (std::uint64_t u = 0; u < unit_count(); ++u) {
    if (has_unit(p, u)) continue;
    std::size_t holders = 0;
    for (auto q : p.neighbors) {
      const Peer& s = peers_[q];
      if (s.started && s.adv != AdversaryKind::freeride && !s.refused.count(i) && has_unit(s, u)) {
        ++holders;
      }
    }
    if (holders == 0 || holders > best_holders) continue;
    if (holders < best_holders) best.clear();
    best_holders = holders;
    best.push_back(u);
  }
  if (best.empty()) {
    push(t + kRetryMs, Ev::request, i);
    return;
  }
  const std::uint64_t u = best[rng_() % best.size()];

  std::vector<std::size_t> senders;
  std::uint64_t earliest = UINT64_MAX;
  for (auto q : p.neighbors) {
    const Peer& s = peers_[q];
    if (!s.started || s.adv == AdversaryKind::freeride || s.refused.count(i) || !has_unit(s, u)) {
      continue;
    }
    const auto at = std::max(t, s.free_at);
    if (at < earliest) senders.clear();
    if (at <= earliest) {
      earliest = at;
      senders.push_back(q);
    }
  }
  const std::size_t q = senders[rng_() % senders.size()];

  std::uint64_t bytes = 0;
  for (std::uint64_t k = unit_first(u); k <= unit_last(u); ++k) bytes += torrent_->piece_length(k);
  const auto xfer = ceil_ms(static_cast<double>(bytes) * 1000.0 / s_.cost.bandwidth);
  const auto done = earliest + xfer;
  peers_[q].free_at = done;
  m_.transfer_ms += xfer;
  p.busy = true;
  push(done, Ev::done, q, i, u);
}

void Swarm::on_done(std::size_t qi, std::size_t pi, std::uint64_t u, std::uint64_t t) {
  Peer& q = peers_[qi];
  Peer& p = peers_[pi];
  const auto e = epoch_of(t / 1000, s_.epochs);
  const TorrentMeta& tm = *torrent_;
  const CostModel& c = s_.cost;
  double recv_ms = 0;
  double send_ms = 0;

  for (std::uint64_t i = unit_first(u); i <= unit_last(u); ++i) {
    if (!p.have[i - 1]) {
      p.have[i - 1] = true;
      ++p.have_count;
    }
  }
  const std::uint64_t remaining = n_ - p.have_count;

  auto per_piece = [&](std::uint64_t i) {
    const auto r = attest(p.kp, q.kp.pk, piece(i), tm, i, e);
    if (!r || !verify_receipt(*r, tm)) throw Error("sim: honest receipt failed to verify");
    q.receipts.push_back(*r);
    recv_ms += c.sign_ms;
    send_ms += c.verify_ms;
    ++m_.signatures.long_term;
    ++p.receipts_issued;
  };

  std::vector<bool> attested(unit_last(u) - unit_first(u) + 1, false);
  if (p.adv == AdversaryKind::freeride) {
    q.refused.insert(pi);
  } else if (std::holds_alternative<PerPieceBls>(s_.policy)) {
    per_piece(unit_first(u));
    attested[0] = true;
  } else if (const auto* a = std::get_if<Adaptive>(&s_.policy)) {
    const auto k = ++p.pair_count[qi];
    if (k <= a->head || remaining < a->tail || (k - a->head - 1) % a->stride == 0) {
      per_piece(unit_first(u));
      attested[0] = true;
    }
  } else if (std::holds_alternative<Batch>(s_.policy)) {
    std::vector<Bytes> data;
    for (std::uint64_t i = unit_first(u); i <= unit_last(u); ++i) data.push_back(piece(i));
    std::vector<ByteView> views(data.begin(), data.end());
    const auto b = batch_attest(p.kp, q.kp.pk, views, tm, unit_first(u), e);
    if (!b || !verify_batch(*b, tm)) throw Error("sim: honest batch failed to verify");
    q.batches.push_back(*b);
    recv_ms += c.sign_ms;
    send_ms += c.verify_ms;
    ++m_.signatures.long_term;
    ++p.receipts_issued;
    attested.assign(attested.size(), true);
  } else {
    auto it = p.sessions.find(qi);
    if (it == p.sessions.end()) {
      auto [cert, keys] = open_session(p.kp, q.kp.pk, tm, rng_);
      if (!verify_cert(cert)) throw Error("sim: session certificate failed to verify");
      recv_ms += c.sign_ms;
      send_ms += c.verify_ms;
      ++m_.signatures.long_term;
      q.session_buf[cert.sid] = SessionBuffer{cert, {}};
      it = p.sessions.emplace(qi, ReceiverSession{std::move(cert), std::move(keys)}).first;
    }
    const auto i = unit_first(u);
    const auto sig = session_attest(it->second.keys, it->second.cert, tm, i, e);
    if (!session_verify(it->second.cert, tm, i, e, sig)) {
      throw Error("sim: session signature failed to verify");
    }
    q.session_buf[it->second.cert.sid].sigs.push_back({i, e, sig});
    recv_ms += c.session_sign_ms;
    send_ms += c.session_verify_ms;
    ++m_.signatures.session;
    ++p.receipts_issued;
    attested[0] = true;
  }

  for (std::uint64_t i = unit_first(u); i <= unit_last(u); ++i) {
    truth_.append(Transfer{qi, pi, i, tm.piece_length(i), e, t, attested[i - unit_first(u)]});
  }
  ++m_.transfers;
  m_.crypto_ms += recv_ms + send_ms;
  q.free_at = std::max(q.free_at, t) + ceil_ms(send_ms);

  p.busy = false;
  if (p.complete()) {
    p.completed_ms = t;
    announce(pi, Event::completed, t);
  } else {
    push(t + ceil_ms(recv_ms), Ev::request, pi);
  }
}

void Swarm::settle(bool ok, std::uint64_t items, std::uint64_t bytes) {
  if (ok) {
    ++m_.reports_accepted;
    m_.items_verified += items;
    m_.report_bytes += bytes;
  } else {
    ++m_.reports_rejected;
  }
}

void Swarm::submit_receipts(Peer& p, std::uint64_t now_s) {
  if (p.receipts.empty()) return;
  auto payload = make_report(p.uid, p.kp.pk, *torrent_, p.receipts);
  if (p.adv == AdversaryKind::inflate) payload.delta_up += static_cast<std::int64_t>(s_.piece_size);
  const bool ok = tracker_->report(payload, now_s);
  settle(ok, p.receipts.size(), 32 * p.receipts.size() + 96);
  p.receipts.clear();
  if (ok && p.adv == AdversaryKind::replay) settle(tracker_->report(payload, now_s), 0, 0);
  if (ok) p.last_report = std::move(payload);
}

void Swarm::submit_batches(Peer& p, std::uint64_t now_s) {
  if (p.batches.empty()) return;
  BatchReport r{p.uid, p.kp.pk, *torrent_, p.batches, {}, 0, 0};
  std::vector<Signature> sigs;
  for (const auto& b : p.batches) {
    sigs.push_back(b.sig);
    r.delta_up += static_cast<std::int64_t>(batch_bytes(b, *torrent_));
  }
  r.agg = aggregate(sigs);
  if (p.adv == AdversaryKind::inflate) r.delta_up += static_cast<std::int64_t>(s_.piece_size);
  const bool ok = tracker_->report_batch(r, now_s);
  settle(ok, p.batches.size(), 32 * p.batches.size() + 96);
  p.batches.clear();
  if (ok && p.adv == AdversaryKind::replay) settle(tracker_->report_batch(r, now_s), 0, 0);
}

void Swarm::submit_sessions(Peer& p, std::uint64_t now_s) {
  SessionReport r{p.uid, p.kp.pk, *torrent_, {}, {}, {}, 0, 0};
  std::uint64_t count = 0;
  for (auto& [_, b] : p.session_buf) {
    if (b.sigs.empty()) continue;
    r.certs.push_back(b.cert);
    for (const auto& s : b.sigs) {
      r.delta_up += static_cast<std::int64_t>(torrent_->piece_length(s.piece_index));
    }
    count += b.sigs.size();
    r.pieces.push_back(std::move(b.sigs));
    b.sigs.clear();
  }
  if (r.certs.empty()) return;
  r.agg = aggregate_session_certs(r.certs);
  if (p.adv == AdversaryKind::inflate) r.delta_up += static_cast<std::int64_t>(s_.piece_size);
  const bool ok = tracker_->report_session(r, now_s);
  settle(ok, count, 64 * count + 96);
  if (ok && p.adv == AdversaryKind::replay) settle(tracker_->report_session(r, now_s), 0, 0);
}

void Swarm::forge(Peer& p, std::uint64_t now_s, std::uint64_t now_e) {
  // Claims a piece from a peer that never signed for it, using the only key
  // the adversary holds.
  const std::size_t victim = rng_() % peers_.size();
  if (peers_[victim].kp.pk == p.kp.pk) return;
  const std::uint64_t i = rng_() % n_ + 1;
  Receipt fake{torrent_->infohash(), p.kp.pk, peers_[victim].kp.pk, torrent_->hash_at(i), i,
               now_e, {}};
  fake.sig = sign(p.kp.sk, fake.message());
  const auto payload = make_report(p.uid, p.kp.pk, *torrent_, std::span(&fake, 1));
  settle(tracker_->report(payload, now_s), 0, 0);
}

void Swarm::submit(Peer& p, std::uint64_t t) {
  const auto now_s = t / 1000;
  const auto now_e = epoch_of(now_s, s_.epochs);
  tracker_->gc_recent(now_s);

  // Items past the window would sink the whole report.
  auto stale = [&](std::uint64_t e) { return e + s_.epochs.delta < now_e; };
  const auto before = p.receipts.size() + p.batches.size();
  std::erase_if(p.receipts, [&](const Receipt& r) { return stale(r.epoch); });
  std::erase_if(p.batches, [&](const BatchCommitment& b) { return stale(b.epoch); });
  m_.receipts_expired += before - p.receipts.size() - p.batches.size();
  for (auto& [_, b] : p.session_buf) {
    m_.receipts_expired +=
        std::erase_if(b.sigs, [&](const SessionPieceSig& s) { return stale(s.epoch); });
  }

  if (p.adv == AdversaryKind::replay && p.last_report) {
    settle(tracker_->report(*p.last_report, now_s), 0, 0);
  }
  if (p.adv == AdversaryKind::forge) forge(p, now_s, now_e);

  submit_receipts(p, now_s);
  submit_batches(p, now_s);
  submit_sessions(p, now_s);
}

void Swarm::on_report(std::size_t i, std::uint64_t t) {
  Peer& p = peers_[i];
  if (tracker_up(t)) submit(p, t);
  push(t + s_.report_interval_s * 1000, Ev::report, i);
}

void Swarm::on_migrate() {
  ++generation_;
  std::mt19937_64 r(s_.seed ^ (0x6d696772ULL + generation_));
  auto pp = setup(128, s_.min_rep, s_.init_credit, r);
  Enclave enclave = launch_generation(generation_, allow_);
  const auto old = tracker_->address();
  const auto proof = migration_proof(enclave, pp.iid, old);
  const auto addr = migrate(chain_, old, proof, allow_);
  if (!addr) throw Error("sim: migration refused");
  const TrackerConfig cfg = tracker_->config();
  tracker_.reset();
  tracker_.emplace(chain_, std::move(enclave), *addr, std::move(pp), cfg);
  dht_->set_contract(*addr);
  contracts_.push_back(addr->hex());
}

Metrics Swarm::collect(std::uint64_t end_ms) const {
  Metrics m = m_;
  m.sim_time_ms = end_ms;
  m.contracts = contracts_;
  m.dht_messages = dht_->messages();
  m.overhead = m.transfer_ms ? m.crypto_ms / static_cast<double>(m.transfer_ms) : 0.0;
  m.all_complete = true;
  for (std::size_t i = 0; i < peers_.size(); ++i) {
    const Peer& p = peers_[i];
    PeerMetrics pm;
    pm.uid = p.uid;
    pm.role = p.adv ? std::string(to_string(*p.adv)) : "honest";
    pm.seeder = p.seeder;
    pm.true_up = truth_.uploaded(i);
    pm.true_down = truth_.downloaded(i);
    pm.attested_up = truth_.attested_upload(i);
    if (const auto rec = tracker_->lookup(p.uid)) {
      pm.chain_up = rec->up - s_.init_credit;
      pm.chain_down = rec->down;
    }
    pm.receipts_issued = p.receipts_issued;
    pm.completed_ms = p.completed_ms;
    m.receipts_issued += p.receipts_issued;
    if (p.adv != AdversaryKind::freeride && !p.complete()) m.all_complete = false;
    m.peers.push_back(std::move(pm));
  }
  return m;
}

SwarmRun Swarm::run() {
  for (std::size_t i = 0; i < peers_.size(); ++i) push(peers_[i].start_ms, Ev::start, i);
  for (auto at : s_.migrate_at_s) push(at * 1000, Ev::migrate, 0);

  const std::uint64_t limit = s_.max_time_s * 1000;
  std::uint64_t now = 0;
  while (!queue_.empty() && !finished()) {
    const Item ev = queue_.top();
    if (ev.t > limit) break;
    queue_.pop();
    now = ev.t;
    const auto e = epoch_of(now / 1000, s_.epochs);
    if (e != dht_->epoch()) dht_->set_epoch(e);
    switch (ev.kind) {
      case Ev::start: on_start(ev.a, now); break;
      case Ev::request: on_request(ev.a, now); break;
      case Ev::done: on_done(ev.a, ev.b, ev.unit, now); break;
      case Ev::report: on_report(ev.a, now); break;
      case Ev::announce:
        announce(ev.a, Event::none, now);
        push(now + s_.announce_interval_s * 1000, Ev::announce, ev.a);
        break;
      case Ev::migrate: on_migrate(); break;
    }
  }
  return SwarmRun{collect(now), truth_};
}

SwarmRun run_swarm_detailed(const Scenario& s, const std::optional<std::filesystem::path>& log) {
  Swarm swarm(s, log);
  return swarm.run();
}

Metrics run_swarm(const Scenario& s, const std::optional<std::filesystem::path>& log) {
  return run_swarm_detailed(s, log).metrics;
}

Json GameResult::to_json() const {
  Json j;
  j["game"] = name;
  j["pass"] = pass;
  j["trials"] = trials;
  j["wins"] = wins;
  if (!witness.empty()) j["witness"] = witness;
  return j;
}

}  // namespace pbts
