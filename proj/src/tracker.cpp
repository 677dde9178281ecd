#include "pbts/tracker.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "pbts/encoding.hpp"

namespace pbts {
namespace {

bool checked_add(std::int64_t a, std::int64_t b, std::int64_t& out) {
  return !__builtin_add_overflow(a, b, &out) && out >= 0;
}

Bytes session_key(const SessionId& sid, std::uint64_t index, std::uint64_t epoch) {
  return Encoder().text("session").blob(FieldTag::raw, sid).u64(index).u64(epoch).finish();
}

}  // namespace

double Reputation::value() const {
  if (infinite()) return std::numeric_limits<double>::infinity();
  return static_cast<double>(up) / static_cast<double>(down);
}

bool Reputation::at_least(const Ratio& r) const {
  if (infinite()) return true;
  return static_cast<__int128>(up) * r.den >= static_cast<__int128>(r.num) * down;
}

Reputation rep(std::int64_t up, std::int64_t down) {
  if (up < 0 || down < 0) throw Error("rep: negative counter");
  return {up, down};
}

PublicParams setup(unsigned lambda, Ratio min_rep, std::int64_t init_credit,
                   std::mt19937_64& rng) {
  if (lambda != 128 && lambda != 256) throw Error("setup: lambda must be 128 or 256");
  if (min_rep.den == 0) throw Error("setup: zero denominator");
  if (init_credit < 0) throw Error("setup: negative initial credit");
  PublicParams pp{lambda, Bytes(lambda / 8), min_rep, init_credit};
  for (auto& b : pp.iid) b = static_cast<std::uint8_t>(rng());
  return pp;
}

std::string_view to_string(Event e) {
  switch (e) {
    case Event::started: return "started";
    case Event::stopped: return "stopped";
    case Event::completed: return "completed";
    case Event::none: return "none";
  }
  return "none";
}

Event parse_event(std::string_view s) {
  for (Event e : {Event::started, Event::stopped, Event::completed, Event::none}) {
    if (to_string(e) == s) return e;
  }
  throw Error("unknown announce event '" + std::string(s) + "'");
}

Bytes register_message(ByteView iid, std::string_view uid) {
  return Encoder().text("register").raw(iid).text(uid).finish();
}

Bytes announce_message(std::string_view uid, const Digest& tid, Event e) {
  return Encoder()
      .text("announce")
      .text(uid)
      .blob(FieldTag::digest, tid)
      .text(to_string(e))
      .finish();
}

ReportPayload make_report(std::string uid, const PublicKey& pk, const TorrentMeta& t,
                          std::span<const Receipt> receipts, std::int64_t delta_down) {
  ReportPayload p{std::move(uid), pk, t, {}, {}, 0, delta_down};
  for (const auto& r : receipts) {
    if (r.pk_sender != pk || r.infohash != t.infohash()) {
      throw Error("make_report: receipt is not for this sender and torrent");
    }
    p.receipts.push_back({r.pk_receiver, r.piece_hash, r.piece_index, r.epoch});
    p.delta_up += static_cast<std::int64_t>(t.piece_length(r.piece_index));
  }
  p.agg = aggregate_receipts(receipts);
  return p;
}

MigrationProof migration_proof(const Enclave& enclave, ByteView iid_new,
                               const ContractAddress& addr_old) {
  const PublicKey& pk = enclave.public_key();
  return {Bytes(iid_new.begin(), iid_new.end()), pk,
          enclave.authorize(Chain::init_payload(iid_new, addr_old, pk))};
}

std::optional<ContractAddress> migrate(Chain& chain, const ContractAddress& addr_old,
                                       const MigrationProof& proof,
                                       const Allowlist& allowlist) {
  if (!chain.contains(addr_old)) throw UnknownContract(addr_old);
  if (!verify_quote(proof.auth.quote, allowlist)) return std::nullopt;
  return chain.sc_init({proof.iid, addr_old, proof.pk, proof.auth});
}

std::optional<Tracker> Tracker::deploy(Chain& chain, Enclave enclave, PublicParams pp,
                                       TrackerConfig cfg) {
  const PublicKey& pk = enclave.public_key();
  const auto auth = enclave.authorize(Chain::init_payload(pp.iid, std::nullopt, pk));
  const auto addr = chain.sc_init({pp.iid, std::nullopt, pk, auth});
  if (!addr) return std::nullopt;
  return Tracker(chain, std::move(enclave), *addr, std::move(pp), cfg);
}

Tracker::Tracker(Chain& chain, Enclave enclave, ContractAddress addr, PublicParams pp,
                 TrackerConfig cfg)
    : chain_(&chain),
      enclave_(std::move(enclave)),
      addr_(addr),
      pp_(std::move(pp)),
      cfg_(cfg) {
  if (cfg_.epochs.width == 0) throw Error("tracker: zero epoch width");
  index_from_chain();
}

void Tracker::index_from_chain() {
  std::set<std::string> uids;
  for (auto& u : chain_->local_uids(addr_)) uids.insert(std::move(u));
  if (const auto ref = chain_->get_referrer(addr_)) {
    for (auto& u : chain_->local_uids(*ref)) uids.insert(std::move(u));
  }
  pk_index_.clear();
  for (const auto& uid : uids) {
    if (const auto r = chain_->sc_read(addr_, uid)) pk_index_[r->pk] = uid;
  }
}

bool Tracker::write(std::span<const ReputationRecord> records) {
  const auto auth = enclave_.authorize(
      Chain::write_payload(addr_, chain_->write_nonce(addr_), records));
  return chain_->sc_write_batch(addr_, records, auth);
}

bool Tracker::register_user(std::string_view uid, const PublicKey& pk,
                            const Signature& sig, const RegisterParams& params) {
  if (uid.empty()) return false;
  if (!params.pop || !verify_possession(pk, *params.pop)) return false;
  if (!verify(pk, register_message(pp_.iid, uid), sig)) return false;
  if (chain_->sc_read(addr_, uid)) return false;
  if (pk_index_.count(pk)) return false;
  const ReputationRecord r{std::string(uid), pk, pp_.init_credit, 0};
  if (!write(std::span(&r, 1))) return false;
  pk_index_[pk] = r.uid;
  return true;
}

std::vector<PeerEntry> Tracker::announce(std::string_view uid, const PublicKey& pk,
                                         const Signature& sig, const Digest& tid,
                                         Event event, std::string_view ip,
                                         std::uint16_t port, std::mt19937_64& rng) {
  const auto r = chain_->sc_read(addr_, uid);
  if (!r || r->pk != pk) return {};
  if (!verify(pk, announce_message(uid, tid, event), sig)) return {};
  if (event == Event::started && !rep(r->up, r->down).at_least(pp_.min_rep)) return {};

  auto& members = swarms_[tid];
  if (event == Event::stopped) {
    members.erase(pk);
  } else {
    members[pk] = PeerEntry{pk, std::string(ip), port};
  }

  std::vector<PeerEntry> candidates;
  for (const auto& [key, entry] : members) {
    if (key != pk) candidates.push_back(entry);
  }
  if (members.empty()) swarms_.erase(tid);

  std::vector<PeerEntry> out;
  std::sample(candidates.begin(), candidates.end(), std::back_inserter(out),
              cfg_.sample_cap, rng);
  return out;
}

bool Tracker::in_window(std::uint64_t epoch, std::uint64_t now_epoch) const {
  return epoch + cfg_.epochs.delta >= now_epoch && epoch <= now_epoch + cfg_.skew;
}

bool Tracker::reporter_ok(std::string_view uid, const PublicKey& pk,
                          ReputationRecord& out) const {
  const auto r = chain_->sc_read(addr_, uid);
  if (!r || r->pk != pk) return false;
  out = *r;
  return true;
}

bool Tracker::commit(const std::string& reporter_uid, ReputationRecord reporter,
                     std::int64_t delta_up, std::int64_t delta_down,
                     const std::map<std::string, std::int64_t>& downloads,
                     const std::vector<Bytes>& keys, std::uint64_t now_epoch) {
  std::vector<ReputationRecord> records;
  if (!checked_add(reporter.up, delta_up, reporter.up) ||
      !checked_add(reporter.down, delta_down, reporter.down)) {
    return false;
  }
  reporter.uid = reporter_uid;
  records.push_back(std::move(reporter));
  for (const auto& [uid, bytes] : downloads) {
    auto r = chain_->sc_read(addr_, uid);
    if (!r || !checked_add(r->down, bytes, r->down)) return false;
    records.push_back(std::move(*r));
  }
  if (!write(records)) return false;
  for (const auto& k : keys) recent_.emplace(k, now_epoch);
  return true;
}

bool Tracker::report(const ReportPayload& p, std::uint64_t now_seconds) {
  ReputationRecord reporter;
  if (p.receipts.empty() || p.delta_up < 0 || p.delta_down < 0) return false;
  if (!reporter_ok(p.uid, p.pk, reporter)) return false;

  const auto& t = p.torrent;
  const std::uint64_t now_epoch = epoch_of(now_seconds, cfg_.epochs);
  std::vector<KeyedMessage> pairs;
  std::vector<Bytes> keys;
  std::set<Bytes> seen;
  std::map<std::string, std::int64_t> downloads;
  std::int64_t credited = 0;
  for (const auto& c : p.receipts) {
    if (!in_window(c.epoch, now_epoch)) return false;
    if (!t.valid_index(c.piece_index) || t.hash_at(c.piece_index) != c.piece_hash) return false;
    if (c.pk_receiver == p.pk) return false;
    const auto downloader = uid_of(c.pk_receiver);
    if (!downloader) return false;
    Bytes key = ReceiptID{t.infohash(), p.pk, c.pk_receiver, c.piece_hash,
                          c.piece_index, c.epoch}
                    .encode();
    if (recent_.count(key) || !seen.insert(key).second) return false;
    const auto len = static_cast<std::int64_t>(t.piece_length(c.piece_index));
    credited += len;
    downloads[*downloader] += len;
    pairs.push_back({c.pk_receiver, receipt_message(t.infohash(), p.pk, c.piece_hash,
                                                    c.piece_index, c.epoch)});
    keys.push_back(std::move(key));
  }
  if (credited != p.delta_up) return false;
  if (!aggregate_verify(pairs, p.agg)) return false;
  return commit(p.uid, std::move(reporter), p.delta_up, p.delta_down, downloads, keys,
                now_epoch);
}

bool Tracker::report_batch(const BatchReport& p, std::uint64_t now_seconds) {
  ReputationRecord reporter;
  if (p.commitments.empty() || p.delta_up < 0 || p.delta_down < 0) return false;
  if (!reporter_ok(p.uid, p.pk, reporter)) return false;

  const auto& t = p.torrent;
  const auto& hs = t.piece_hashes();
  const std::uint64_t now_epoch = epoch_of(now_seconds, cfg_.epochs);
  std::vector<KeyedMessage> pairs;
  std::vector<Bytes> keys;
  std::set<Bytes> seen;
  std::map<std::string, std::int64_t> downloads;
  std::int64_t credited = 0;
  for (const auto& c : p.commitments) {
    if (c.pk_sender != p.pk || c.infohash != t.infohash()) return false;
    if (!in_window(c.epoch, now_epoch)) return false;
    if (c.k == 0 || !t.valid_index(c.first) || c.k > t.piece_count() - c.first + 1) return false;
    if (merkle_root(std::span(hs).subspan(c.first - 1, c.k)) != c.root) return false;
    if (c.pk_receiver == p.pk) return false;
    const auto downloader = uid_of(c.pk_receiver);
    if (!downloader) return false;
    for (std::uint64_t i = c.first; i < c.first + c.k; ++i) {
      Bytes key = ReceiptID{t.infohash(), p.pk, c.pk_receiver, t.hash_at(i), i, c.epoch}.encode();
      if (recent_.count(key) || !seen.insert(key).second) return false;
      keys.push_back(std::move(key));
    }
    const auto len = static_cast<std::int64_t>(batch_bytes(c, t));
    credited += len;
    downloads[*downloader] += len;
    pairs.push_back({c.pk_receiver, c.message()});
  }
  if (credited != p.delta_up) return false;
  if (!aggregate_verify(pairs, p.agg)) return false;
  return commit(p.uid, std::move(reporter), p.delta_up, p.delta_down, downloads, keys,
                now_epoch);
}

bool Tracker::report_session(const SessionReport& p, std::uint64_t now_seconds) {
  ReputationRecord reporter;
  if (p.certs.empty() || p.certs.size() != p.pieces.size()) return false;
  if (p.delta_up < 0 || p.delta_down < 0) return false;
  if (!reporter_ok(p.uid, p.pk, reporter)) return false;

  const auto& t = p.torrent;
  const std::uint64_t now_epoch = epoch_of(now_seconds, cfg_.epochs);
  for (const auto& cert : p.certs) {
    if (cert.pk_sender != p.pk || cert.infohash != t.infohash()) return false;
    if (cert.pk_receiver == p.pk) return false;
  }
  if (!verify_session_certs(p.certs, p.agg)) return false;

  std::vector<Bytes> keys;
  std::set<Bytes> seen;
  std::map<std::string, std::int64_t> downloads;
  std::int64_t credited = 0;
  for (std::size_t j = 0; j < p.certs.size(); ++j) {
    const auto& cert = p.certs[j];
    const auto downloader = uid_of(cert.pk_receiver);
    if (!downloader) return false;
    for (const auto& s : p.pieces[j]) {
      if (!in_window(s.epoch, now_epoch)) return false;
      if (!session_verify(cert, t, s.piece_index, s.epoch, s.sig)) return false;
      Bytes key = session_key(cert.sid, s.piece_index, s.epoch);
      if (recent_.count(key) || !seen.insert(key).second) return false;
      keys.push_back(std::move(key));
      const auto len = static_cast<std::int64_t>(t.piece_length(s.piece_index));
      credited += len;
      downloads[*downloader] += len;
    }
  }
  if (credited != p.delta_up) return false;
  return commit(p.uid, std::move(reporter), p.delta_up, p.delta_down, downloads, keys,
                now_epoch);
}

void Tracker::gc_recent(std::uint64_t now_seconds) {
  const std::uint64_t now_epoch = epoch_of(now_seconds, cfg_.epochs);
  if (now_epoch < cfg_.epochs.delta + 1) return;
  const std::uint64_t cutoff = now_epoch - cfg_.epochs.delta - 1;
  std::erase_if(recent_, [cutoff](const auto& kv) { return kv.second < cutoff; });
}

std::optional<ReputationRecord> Tracker::lookup(std::string_view uid) const {
  return chain_->sc_read(addr_, uid);
}

std::optional<std::string> Tracker::uid_of(const PublicKey& pk) const {
  auto it = pk_index_.find(pk);
  if (it == pk_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<PeerEntry> Tracker::swarm(const Digest& tid) const {
  std::vector<PeerEntry> out;
  auto it = swarms_.find(tid);
  if (it == swarms_.end()) return out;
  for (const auto& [pk, e] : it->second) out.push_back(e);
  return out;
}

}  // namespace pbts
