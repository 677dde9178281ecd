#include "pbts/contract.hpp"

#include <json.hpp>
#include <limits>
#include <mutex>
#include <sstream>

#include "pbts/encoding.hpp"

namespace pbts {
namespace {

constexpr std::string_view kOpInit = "init";
constexpr std::string_view kOpWrite = "write";

ContractAddress derive_address(std::uint64_t factory_nonce, ByteView init_payload) {
  const Digest d = hash(Encoder().u64(factory_nonce).raw(init_payload).finish());
  return *ContractAddress::from_view(d.view().first(ContractAddress::size));
}

void check_counters(const ReputationRecord& r) {
  if (r.up < 0 || r.down < 0) {
    throw Error("reputation counters must be non-negative (uid " + r.uid + ")");
  }
}

std::int64_t to_counter(std::uint64_t v) {
  if (v > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    throw Error("counter out of range");
  }
  return static_cast<std::int64_t>(v);
}

struct DecodedInit {
  Bytes iid;
  std::optional<ContractAddress> referrer;
  PublicKey pk;
};

DecodedInit decode_init_payload(ByteView payload) {
  Decoder d(payload);
  if (d.text() != "sc_init") throw Error("init payload: bad domain tag");
  DecodedInit out;
  out.iid = d.raw();
  const Bytes ref = d.raw();
  if (!ref.empty()) {
    out.referrer = ContractAddress::from_view(ref);
    if (!out.referrer) throw Error("init payload: bad referrer length");
  }
  out.pk = d.blob<PublicKey>(FieldTag::public_key);
  if (d.remaining() != 0) throw Error("init payload: trailing fields");
  return out;
}

struct DecodedWrite {
  ContractAddress addr;
  std::uint64_t nonce = 0;
  std::vector<ReputationRecord> records;
};

DecodedWrite decode_write_payload(ByteView payload) {
  Decoder d(payload);
  if (d.text() != "sc_write") throw Error("write payload: bad domain tag");
  DecodedWrite out;
  out.addr = d.blob<ContractAddress>(FieldTag::address);
  out.nonce = d.u64();
  const std::uint64_t count = d.u64();
  if (count * 4 != d.remaining()) throw Error("write payload: bad record count");
  for (std::uint64_t i = 0; i < count; ++i) {
    ReputationRecord r;
    r.uid = d.text();
    r.pk = d.blob<PublicKey>(FieldTag::public_key);
    r.up = to_counter(d.u64());
    r.down = to_counter(d.u64());
    out.records.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::string LogEntry::to_json_line() const {
  nlohmann::ordered_json j;
  j["seq"] = seq;
  j["op"] = op;
  j["addr"] = addr.hex();
  j["payload"] = to_hex(payload);
  j["auth_fp"] = auth_fp.hex();
  return j.dump();
}

Bytes Chain::init_payload(ByteView iid,
                          const std::optional<ContractAddress>& referrer,
                          const PublicKey& pk) {
  return Encoder()
      .text("sc_init")
      .raw(iid)
      .raw(referrer ? referrer->view() : ByteView{})
      .blob(FieldTag::public_key, pk)
      .finish();
}

Bytes Chain::write_payload(const ContractAddress& addr, std::uint64_t nonce,
                           std::span<const ReputationRecord> values) {
  Encoder e;
  e.text("sc_write").blob(FieldTag::address, addr).u64(nonce).u64(values.size());
  for (const auto& r : values) {
    e.text(r.uid)
        .blob(FieldTag::public_key, r.pk)
        .u64(static_cast<std::uint64_t>(r.up))
        .u64(static_cast<std::uint64_t>(r.down));
  }
  return e.finish();
}

Chain::Chain(Allowlist factory_allowlist,
             std::optional<std::filesystem::path> log_path)
    : allowlist_(std::move(factory_allowlist)) {
  if (!log_path) return;
  if (std::filesystem::exists(*log_path)) replay(*log_path);
  sink_.emplace(*log_path, std::ios::app | std::ios::binary);
  if (!*sink_) throw Error("chain: cannot open log " + log_path->string());
}

void Chain::replay(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("chain: cannot read log " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::size_t pos = 0;
  std::uint64_t expected = 1;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      throw ChainLogError(expected, "truncated entry (no line terminator)");
    }
    const std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    LogEntry entry;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || j.size() != 5) throw Error("unexpected fields");
      entry.seq = j.at("seq").get<std::uint64_t>();
      entry.op = j.at("op").get<std::string>();
      auto addr = ContractAddress::from_hex(j.at("addr").get<std::string>());
      auto payload = from_hex(j.at("payload").get<std::string>());
      auto fp = Digest::from_hex(j.at("auth_fp").get<std::string>());
      if (!addr || !payload || !fp) throw Error("bad hex field");
      entry.addr = *addr;
      entry.payload = std::move(*payload);
      entry.auth_fp = *fp;
      if (entry.seq != expected) throw Error("sequence number out of order");
      if (entry.to_json_line() != line) throw Error("non-canonical encoding");
      apply(entry);
    } catch (const ChainLogError&) {
      throw;
    } catch (const std::exception& e) {
      throw ChainLogError(expected, e.what());
    }
    log_.push_back(std::move(entry));
    ++expected;
  }
}

void Chain::apply(const LogEntry& entry) {
  if (entry.op == kOpInit) {
    Decoder d(entry.payload);
    const Bytes init = d.raw();
    const Measurement m = d.blob<Measurement>(FieldTag::digest);
    if (d.remaining() != 0) throw Error("init entry: trailing fields");
    const auto parsed = decode_init_payload(init);
    if (derive_address(contracts_.size(), init) != entry.addr) {
      throw Error("init entry: address does not match deployment");
    }
    if (parsed.referrer && !contracts_.count(*parsed.referrer)) {
      throw UnknownContract(*parsed.referrer);
    }
    Contract c;
    c.owner_pk = parsed.pk;
    c.owner_measurement = m;
    c.referrer = parsed.referrer;
    c.created_seq = entry.seq;
    contracts_.emplace(entry.addr, std::move(c));
  } else if (entry.op == kOpWrite) {
    const auto parsed = decode_write_payload(entry.payload);
    auto it = contracts_.find(entry.addr);
    if (it == contracts_.end() || parsed.addr != entry.addr) {
      throw Error("write entry: unknown contract");
    }
    Contract& c = it->second;
    if (parsed.nonce != c.write_nonce) throw Error("write entry: stale nonce");
    for (const auto& r : parsed.records) {
      check_counters(r);
      c.data[r.uid].emplace_back(entry.seq, r);
    }
    ++c.write_nonce;
  } else {
    throw Error("unknown op '" + entry.op + "'");
  }
}

void Chain::append(LogEntry entry) {
  entry.seq = log_.size() + 1;
  apply(entry);
  if (sink_) {
    *sink_ << entry.to_json_line() << '\n';
    sink_->flush();
  }
  log_.push_back(std::move(entry));
}

std::optional<ContractAddress> Chain::sc_init(const InitParams& params) {
  std::unique_lock lock(mutex_);
  if (params.referrer && !contracts_.count(*params.referrer)) {
    throw UnknownContract(*params.referrer);
  }
  const Bytes init = init_payload(params.iid, params.referrer, params.pk);
  if (!verify_quote(params.auth.quote, allowlist_)) return std::nullopt;
  if (!verify(params.pk, init, params.auth.sig)) return std::nullopt;

  LogEntry entry;
  entry.op = kOpInit;
  entry.addr = derive_address(contracts_.size(), init);
  entry.payload = Encoder()
                      .raw(init)
                      .blob(FieldTag::digest, params.auth.quote.measurement)
                      .finish();
  entry.auth_fp = params.auth.fingerprint();
  const ContractAddress addr = entry.addr;
  append(std::move(entry));
  return addr;
}

const Chain::Contract& Chain::get(const ContractAddress& addr) const {
  auto it = contracts_.find(addr);
  if (it == contracts_.end()) throw UnknownContract(addr);
  return it->second;
}

std::optional<ReputationRecord> Chain::local_at(const Contract& c,
                                                std::string_view uid,
                                                std::uint64_t max_seq) {
  auto it = c.data.find(uid);
  if (it == c.data.end()) return std::nullopt;
  const auto& versions = it->second;
  for (auto v = versions.rbegin(); v != versions.rend(); ++v) {
    if (v->first <= max_seq) return v->second;
  }
  return std::nullopt;
}

std::optional<ReputationRecord> Chain::read_locked(const ContractAddress& addr,
                                                   std::string_view uid,
                                                   std::uint64_t max_seq) const {
  const Contract& c = get(addr);
  if (c.created_seq > max_seq) return std::nullopt;
  if (auto local = local_at(c, uid, max_seq)) return local;
  if (!c.referrer) return std::nullopt;
  // Single hop: the referrer's own referrer is never consulted.
  return local_at(get(*c.referrer), uid, max_seq);
}

std::optional<ReputationRecord> Chain::sc_read(const ContractAddress& addr,
                                               std::string_view uid) const {
  std::shared_lock lock(mutex_);
  return read_locked(addr, uid, std::numeric_limits<std::uint64_t>::max());
}

std::optional<ReputationRecord> Chain::sc_read_at(const ContractAddress& addr,
                                                  std::string_view uid,
                                                  std::uint64_t max_seq) const {
  std::shared_lock lock(mutex_);
  return read_locked(addr, uid, max_seq);
}

bool Chain::sc_write(const ContractAddress& addr, const ReputationRecord& value,
                     const AuthToken& auth) {
  return sc_write_batch(addr, std::span(&value, 1), auth);
}

bool Chain::sc_write_batch(const ContractAddress& addr,
                           std::span<const ReputationRecord> values,
                           const AuthToken& auth) {
  std::unique_lock lock(mutex_);
  const Contract& c = get(addr);
  if (values.empty()) throw Error("sc_write: empty batch");
  for (const auto& r : values) check_counters(r);

  Bytes payload = write_payload(addr, c.write_nonce, values);
  if (auth.quote.measurement != c.owner_measurement ||
      !verify(c.owner_pk, payload, auth.sig)) {
    return false;
  }
  LogEntry entry;
  entry.op = kOpWrite;
  entry.addr = addr;
  entry.payload = std::move(payload);
  entry.auth_fp = auth.fingerprint();
  append(std::move(entry));
  return true;
}

std::optional<ContractAddress> Chain::get_referrer(
    const ContractAddress& addr) const {
  std::shared_lock lock(mutex_);
  return get(addr).referrer;
}

bool Chain::contains(const ContractAddress& addr) const {
  std::shared_lock lock(mutex_);
  return contracts_.count(addr) != 0;
}

std::size_t Chain::contract_count() const {
  std::shared_lock lock(mutex_);
  return contracts_.size();
}

std::uint64_t Chain::write_nonce(const ContractAddress& addr) const {
  std::shared_lock lock(mutex_);
  return get(addr).write_nonce;
}

std::vector<std::string> Chain::local_uids(const ContractAddress& addr) const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> out;
  for (const auto& [uid, versions] : get(addr).data) out.push_back(uid);
  return out;
}

std::uint64_t Chain::head_seq() const {
  std::shared_lock lock(mutex_);
  return log_.size();
}

std::vector<LogEntry> Chain::log() const {
  std::shared_lock lock(mutex_);
  return log_;
}

std::string Chain::state_json() const {
  std::shared_lock lock(mutex_);
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [addr, c] : contracts_) {
    nlohmann::json data = nlohmann::json::object();
    for (const auto& [uid, versions] : c.data) {
      const auto& r = versions.back().second;
      data[to_hex(as_bytes(uid))] = {
          {"pk", r.pk.hex()}, {"up", r.up}, {"down", r.down}};
    }
    out[addr.hex()] = {
        {"owner_pk", c.owner_pk.hex()},
        {"measurement", c.owner_measurement.hex()},
        {"referrer", c.referrer ? nlohmann::json(c.referrer->hex()) : nlohmann::json()},
        {"created_seq", c.created_seq},
        {"write_nonce", c.write_nonce},
        {"data", std::move(data)},
    };
  }
  return out.dump();
}

void Chain::save(const std::filesystem::path& path) const {
  std::shared_lock lock(mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("chain: cannot write " + path.string());
  for (const auto& e : log_) out << e.to_json_line() << '\n';
}

}  // namespace pbts
