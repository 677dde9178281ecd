#include "pbts/attestation.hpp"

#include <charconv>
#include <json.hpp>

#include "pbts/encoding.hpp"

namespace pbts {
namespace {

Digest compute_infohash(const std::vector<Digest>& hashes, std::uint64_t piece_size,
                        std::uint64_t file_length) {
  Encoder e;
  for (const auto& h : hashes) e.blob(FieldTag::digest, h);
  e.u64(piece_size).u64(file_length);
  return hash(e.finish());
}

std::uint64_t parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error("not an unsigned integer: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return a / b + (a % b != 0); }

}  // namespace

TorrentMeta::TorrentMeta(std::vector<Digest> hashes, std::uint64_t piece_size,
                         std::uint64_t file_length, Bootstrap bootstrap)
    : hashes_(std::move(hashes)),
      piece_size_(piece_size),
      file_length_(file_length),
      bootstrap_(std::move(bootstrap)) {
  if (hashes_.empty()) throw Error("torrent: no pieces");
  if (piece_size_ == 0) throw Error("torrent: zero piece size");
  if (file_length_ == 0 || ceil_div(file_length_, piece_size_) != hashes_.size()) {
    throw Error("torrent: file length does not match piece count");
  }
  infohash_ = compute_infohash(hashes_, piece_size_, file_length_);
}

TorrentMeta TorrentMeta::from_content(ByteView content, std::uint64_t piece_size,
                                      Bootstrap bootstrap) {
  if (piece_size == 0) throw Error("torrent: zero piece size");
  std::vector<Digest> hashes;
  for (std::size_t off = 0; off < content.size(); off += piece_size) {
    hashes.push_back(hash(content.subspan(off, std::min<std::size_t>(piece_size, content.size() - off))));
  }
  return TorrentMeta(std::move(hashes), piece_size, content.size(), std::move(bootstrap));
}

const Digest& TorrentMeta::hash_at(std::uint64_t i) const {
  if (!valid_index(i)) throw Error("torrent: piece index " + std::to_string(i) + " out of range");
  return hashes_[i - 1];
}

std::uint64_t TorrentMeta::piece_length(std::uint64_t i) const {
  if (!valid_index(i)) throw Error("torrent: piece index " + std::to_string(i) + " out of range");
  if (i < hashes_.size()) return piece_size_;
  return file_length_ - (hashes_.size() - 1) * piece_size_;
}

ByteView TorrentMeta::piece_of(ByteView content, std::uint64_t i) const {
  if (content.size() != file_length_) throw Error("torrent: content length mismatch");
  return content.subspan((i - 1) * piece_size_, piece_length(i));
}

std::string TorrentMeta::to_json() const {
  nlohmann::ordered_json j;
  auto& hs = j["piece_hashes"] = nlohmann::ordered_json::array();
  for (const auto& h : hashes_) hs.push_back(h.hex());
  j["piece_size"] = piece_size_;
  j["file_length"] = file_length_;
  auto& nodes = j["bootstrap"]["nodes"] = nlohmann::ordered_json::array();
  for (const auto& n : bootstrap_.nodes) nodes.push_back({{"host", n.host}, {"port", n.port}});
  j["bootstrap"]["contract"] =
      bootstrap_.contract ? nlohmann::ordered_json(bootstrap_.contract->hex()) : nullptr;
  j["infohash"] = infohash_.hex();
  return j.dump();
}

TorrentMeta TorrentMeta::from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    std::vector<Digest> hashes;
    for (const auto& h : j.at("piece_hashes")) {
      auto d = Digest::from_hex(h.get<std::string>());
      if (!d) throw Error("bad piece hash");
      hashes.push_back(*d);
    }
    Bootstrap b;
    const auto& bj = j.at("bootstrap");
    for (const auto& n : bj.at("nodes")) {
      b.nodes.push_back({n.at("host").get<std::string>(), n.at("port").get<std::uint16_t>()});
    }
    if (!bj.at("contract").is_null()) {
      b.contract = ContractAddress::from_hex(bj.at("contract").get<std::string>());
      if (!b.contract) throw Error("bad contract address");
    }
    TorrentMeta t(std::move(hashes), j.at("piece_size").get<std::uint64_t>(),
                  j.at("file_length").get<std::uint64_t>(), std::move(b));
    if (j.contains("infohash") && j["infohash"].get<std::string>() != t.infohash().hex()) {
      throw Error("infohash does not match contents");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("torrent json: ") + e.what());
  }
}

Bytes receipt_message(const Digest& infohash, const PublicKey& pk_sender,
                      const Digest& piece_hash, std::uint64_t index,
                      std::uint64_t epoch) {
  return Encoder()
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk_sender)
      .blob(FieldTag::digest, piece_hash)
      .u64(index)
      .u64(epoch)
      .finish();
}

Bytes ReceiptID::encode() const {
  return Encoder()
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk_sender)
      .blob(FieldTag::public_key, pk_receiver)
      .blob(FieldTag::digest, piece_hash)
      .u64(piece_index)
      .u64(epoch)
      .finish();
}

Bytes Receipt::encode() const {
  return Encoder()
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk_sender)
      .blob(FieldTag::public_key, pk_receiver)
      .blob(FieldTag::digest, piece_hash)
      .u64(piece_index)
      .u64(epoch)
      .blob(FieldTag::signature, sig)
      .finish();
}

Receipt Receipt::decode(ByteView bytes) {
  Decoder d(bytes);
  Receipt r;
  r.infohash = d.blob<Digest>(FieldTag::digest);
  r.pk_sender = d.blob<PublicKey>(FieldTag::public_key);
  r.pk_receiver = d.blob<PublicKey>(FieldTag::public_key);
  r.piece_hash = d.blob<Digest>(FieldTag::digest);
  r.piece_index = d.u64();
  r.epoch = d.u64();
  r.sig = d.blob<Signature>(FieldTag::signature);
  if (d.remaining() != 0) throw Error("receipt: trailing fields");
  return r;
}

ReceiptID receipt_id(const Receipt& r) {
  return {r.infohash, r.pk_sender, r.pk_receiver, r.piece_hash, r.piece_index, r.epoch};
}

std::optional<Receipt> attest(const KeyPair& receiver, const PublicKey& pk_sender,
                              ByteView piece, const TorrentMeta& t,
                              std::uint64_t i, std::uint64_t epoch) {
  if (!t.valid_index(i)) return std::nullopt;
  const Digest& h = t.hash_at(i);
  if (hash(piece) != h) return std::nullopt;
  Receipt r{t.infohash(), pk_sender, receiver.pk, h, i, epoch, {}};
  r.sig = sign(receiver.sk, r.message());
  return r;
}

bool verify_receipt_hash_only(const PublicKey& pk_receiver,
                              const PublicKey& pk_sender, const Digest& h_i,
                              std::uint64_t i, const TorrentMeta& t,
                              std::uint64_t epoch, const Signature& sig) {
  if (!t.valid_index(i) || t.hash_at(i) != h_i) return false;
  return verify(pk_receiver, receipt_message(t.infohash(), pk_sender, h_i, i, epoch), sig);
}

bool verify_receipt(const PublicKey& pk_receiver, const PublicKey& pk_sender,
                    ByteView piece, const TorrentMeta& t, std::uint64_t i,
                    std::uint64_t epoch, const Signature& sig) {
  return verify_receipt_hash_only(pk_receiver, pk_sender, hash(piece), i, t, epoch, sig);
}

bool verify_receipt(const Receipt& r, const TorrentMeta& t) {
  return r.infohash == t.infohash() &&
         verify_receipt_hash_only(r.pk_receiver, r.pk_sender, r.piece_hash,
                                  r.piece_index, t, r.epoch, r.sig);
}

AggregateSignature aggregate_receipts(std::span<const Receipt> receipts) {
  std::vector<Signature> sigs;
  sigs.reserve(receipts.size());
  for (const auto& r : receipts) sigs.push_back(r.sig);
  return aggregate(std::span<const Signature>(sigs));
}

SigningPolicy parse_policy(std::string_view text) {
  const auto parts = split(text, ':');
  const auto name = parts[0];
  if (name == "per-piece" && parts.size() == 1) return PerPieceBls{};
  if (name == "session" && parts.size() == 1) return Session{};
  if (name == "batch" && parts.size() <= 2) {
    Batch b;
    if (parts.size() == 2) b.k = parse_u64(parts[1]);
    if (b.k == 0) throw Error("batch size must be positive");
    return b;
  }
  if (name == "adaptive" && (parts.size() == 1 || parts.size() == 4)) {
    Adaptive a;
    if (parts.size() == 4) {
      a.head = parse_u64(parts[1]);
      a.stride = parse_u64(parts[2]);
      a.tail = parse_u64(parts[3]);
    }
    if (a.head == 0 || a.stride == 0 || a.tail == 0) {
      throw Error("adaptive parameters must be positive");
    }
    return a;
  }
  throw Error("unknown signing policy '" + std::string(text) + "'");
}

std::string policy_name(const SigningPolicy& p) {
  struct {
    std::string operator()(const PerPieceBls&) const { return "per-piece"; }
    std::string operator()(const Adaptive& a) const {
      if (a == Adaptive{}) return "adaptive";
      return "adaptive:" + std::to_string(a.head) + ":" + std::to_string(a.stride) +
             ":" + std::to_string(a.tail);
    }
    std::string operator()(const Batch& b) const { return "batch:" + std::to_string(b.k); }
    std::string operator()(const Session&) const { return "session"; }
  } v;
  return std::visit(v, p);
}

std::vector<std::uint64_t> adaptive_indices(std::uint64_t n, const Adaptive& p) {
  std::vector<std::uint64_t> out;
  if (n <= p.head + p.tail) {
    for (std::uint64_t i = 1; i <= n; ++i) out.push_back(i);
    return out;
  }
  for (std::uint64_t i = 1; i <= p.head; ++i) out.push_back(i);
  for (std::uint64_t i = p.head + 1; i <= n - p.tail; i += p.stride) out.push_back(i);
  for (std::uint64_t i = n - p.tail + 1; i <= n; ++i) out.push_back(i);
  return out;
}

SignatureCount signature_count(const SigningPolicy& p, std::uint64_t n,
                               std::uint64_t peers) {
  struct {
    std::uint64_t n, peers;
    SignatureCount operator()(const PerPieceBls&) const { return {n, 0}; }
    SignatureCount operator()(const Adaptive& a) const {
      if (n <= a.head + a.tail) return {n, 0};
      return {a.head + a.tail + ceil_div(n - a.head - a.tail, a.stride), 0};
    }
    SignatureCount operator()(const Batch& b) const { return {ceil_div(n, b.k), 0}; }
    SignatureCount operator()(const Session&) const { return {peers, n}; }
  } v{n, peers};
  return std::visit(v, p);
}

Digest merkle_root(std::span<const Digest> leaves) {
  if (leaves.empty()) throw Error("merkle_root: no leaves");
  std::vector<Digest> level(leaves.begin(), leaves.end());
  while (level.size() > 1) {
    std::vector<Digest> next;
    next.reserve((level.size() + 1) / 2);
    for (std::size_t i = 0; i + 1 < level.size(); i += 2) {
      next.push_back(hash(Encoder()
                              .blob(FieldTag::digest, level[i])
                              .blob(FieldTag::digest, level[i + 1])
                              .finish()));
    }
    if (level.size() % 2 == 1) next.push_back(level.back());
    level = std::move(next);
  }
  return level.front();
}

Bytes batch_message(const Digest& infohash, const PublicKey& pk_sender,
                    const Digest& root, std::uint64_t first, std::uint64_t k,
                    std::uint64_t epoch) {
  return Encoder()
      .text("batch")
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk_sender)
      .blob(FieldTag::digest, root)
      .u64(first)
      .u64(k)
      .u64(epoch)
      .finish();
}

namespace {

std::optional<Digest> slice_root(const TorrentMeta& t, std::uint64_t first,
                                 std::uint64_t k) {
  if (k == 0 || first < 1 || first > t.piece_count() || k > t.piece_count() - first + 1) {
    return std::nullopt;
  }
  const auto& hs = t.piece_hashes();
  return merkle_root(std::span(hs).subspan(first - 1, k));
}

}  // namespace

std::optional<BatchCommitment> batch_attest(const KeyPair& receiver,
                                            const PublicKey& pk_sender,
                                            std::span<const ByteView> pieces,
                                            const TorrentMeta& t,
                                            std::uint64_t first,
                                            std::uint64_t epoch) {
  const auto root = slice_root(t, first, pieces.size());
  if (!root) return std::nullopt;
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    if (hash(pieces[j]) != t.hash_at(first + j)) return std::nullopt;
  }
  BatchCommitment c{t.infohash(), pk_sender, receiver.pk, *root, first,
                    pieces.size(), epoch, {}};
  c.sig = sign(receiver.sk, c.message());
  return c;
}

bool verify_batch(const BatchCommitment& c, const TorrentMeta& t) {
  if (c.infohash != t.infohash()) return false;
  const auto root = slice_root(t, c.first, c.k);
  return root && *root == c.root && verify(c.pk_receiver, c.message(), c.sig);
}

std::uint64_t batch_bytes(const BatchCommitment& c, const TorrentMeta& t) {
  std::uint64_t total = 0;
  for (std::uint64_t i = c.first; i < c.first + c.k; ++i) total += t.piece_length(i);
  return total;
}

Bytes cert_message(const SessionId& sid, const Digest& infohash,
                   const PublicKey& pk_sender, const SessionPublicKey& pk_session) {
  return Encoder()
      .text("session-cert")
      .blob(FieldTag::raw, sid)
      .blob(FieldTag::digest, infohash)
      .blob(FieldTag::public_key, pk_sender)
      .blob(FieldTag::session_key, pk_session)
      .finish();
}

std::pair<SessionCert, SessionKeyPair> open_session(const KeyPair& receiver,
                                                    const PublicKey& pk_sender,
                                                    const TorrentMeta& t,
                                                    const SessionId& sid,
                                                    SessionKeyPair session) {
  SessionCert cert{sid, t.infohash(), pk_sender, receiver.pk, session.pk, {}};
  cert.sig0 = sign(receiver.sk, cert.message());
  return {cert, std::move(session)};
}

bool verify_cert(const SessionCert& cert) {
  return verify(cert.pk_receiver, cert.message(), cert.sig0);
}

SessionSignature session_attest(const SessionKeyPair& session,
                                const SessionCert& cert, const TorrentMeta& t,
                                std::uint64_t i, std::uint64_t epoch) {
  return session_sign(session.sk,
                      receipt_message(cert.infohash, cert.pk_sender, t.hash_at(i), i, epoch));
}

bool session_verify(const SessionCert& cert, const TorrentMeta& t,
                    std::uint64_t i, std::uint64_t epoch,
                    const SessionSignature& sig) {
  if (cert.infohash != t.infohash() || !t.valid_index(i)) return false;
  return session_verify(
      cert.pk_session,
      receipt_message(cert.infohash, cert.pk_sender, t.hash_at(i), i, epoch), sig);
}

AggregateSignature aggregate_session_certs(std::span<const SessionCert> certs) {
  std::vector<Signature> sigs;
  sigs.reserve(certs.size());
  for (const auto& c : certs) sigs.push_back(c.sig0);
  return aggregate(std::span<const Signature>(sigs));
}

bool verify_session_certs(std::span<const SessionCert> certs,
                          const AggregateSignature& agg) {
  std::vector<KeyedMessage> pairs;
  pairs.reserve(certs.size());
  for (const auto& c : certs) pairs.push_back({c.pk_receiver, c.message()});
  return aggregate_verify(pairs, agg);
}

}  // namespace pbts
