#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "pbts/contract.hpp"

using namespace pbts;
namespace fs = std::filesystem;

namespace {

struct Owner {
  Enclave enclave;

  static Owner make(std::string_view config, Allowlist& allow) {
    const Bytes prog = to_bytes("tracker");
    const Bytes cfg = to_bytes(config);
    allow.insert(measure(prog, cfg));
    return Owner{*Enclave::launch(prog, cfg, allow, QuoteNonce{})};
  }

  InitParams init(std::optional<ContractAddress> ref = std::nullopt) const {
    const Bytes iid = to_bytes("instance");
    const PublicKey& pk = enclave.public_key();
    return {iid, ref, pk, enclave.authorize(Chain::init_payload(iid, ref, pk))};
  }

  AuthToken write_auth(const Chain& chain, const ContractAddress& addr,
                       std::span<const ReputationRecord> values) const {
    return enclave.authorize(
        Chain::write_payload(addr, chain.write_nonce(addr), values));
  }

  bool write(Chain& chain, const ContractAddress& addr, const ReputationRecord& r) const {
    return chain.sc_write(addr, r, write_auth(chain, addr, std::span(&r, 1)));
  }
};

ReputationRecord rec(std::string uid, std::int64_t up, std::int64_t down) {
  return {std::move(uid), keygen(std::hash<std::string>{}(uid)).pk, up, down};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  fs::path path;
  explicit TempFile(std::string_view name)
      : path(fs::temp_directory_path() / (std::string("pbts_") + std::string(name))) {
    fs::remove(path);
  }
  ~TempFile() { fs::remove(path); }
};

}  // namespace

TEST_CASE("new chain is empty") {
  Chain chain(Allowlist{});
  CHECK(chain.contract_count() == 0);
  CHECK(chain.head_seq() == 0);
  CHECK(chain.state_json() == "{}");
}

TEST_CASE("sc_init") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  Chain chain(allow);

  const auto a = chain.sc_init(owner.init());
  REQUIRE(a);
  CHECK(chain.contains(*a));
  CHECK_FALSE(chain.get_referrer(*a));

  SUBCASE("with referrer") {
    const auto b = chain.sc_init(owner.init(*a));
    REQUIRE(b);
    CHECK(*b != *a);
    CHECK(chain.get_referrer(*b) == *a);
  }
  SUBCASE("forged auth") {
    std::mt19937_64 rng(3);
    auto p = owner.init();
    for (auto& x : p.auth.sig.data) x = static_cast<std::uint8_t>(rng());
    CHECK_FALSE(chain.sc_init(p));
    CHECK(chain.contract_count() == 1);
  }
  SUBCASE("auth for a different pk") {
    auto p = owner.init();
    p.pk = keygen(5).pk;
    CHECK_FALSE(chain.sc_init(p));
  }
  SUBCASE("quote not on the factory allowlist") {
    Allowlist other;
    const auto rogue = Owner::make("rogue", other);
    CHECK_FALSE(chain.sc_init(rogue.init()));
  }
  SUBCASE("missing referrer") {
    ContractAddress ghost;
    ghost.data.fill(0x42);
    CHECK_THROWS_AS(chain.sc_init(owner.init(ghost)), UnknownContract);
  }
}

TEST_CASE("reads and writes") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  Chain chain(allow);
  const auto a = *chain.sc_init(owner.init());
  const auto b = *chain.sc_init(owner.init(a));

  REQUIRE(owner.write(chain, a, rec("alice", 10, 1)));
  REQUIRE(owner.write(chain, a, rec("bob", 20, 2)));

  CHECK(chain.sc_read(a, "alice") == rec("alice", 10, 1));
  CHECK_FALSE(chain.sc_read(a, "carol"));

  SUBCASE("inherited from referrer") {
    CHECK(chain.sc_read(b, "alice") == rec("alice", 10, 1));
  }
  SUBCASE("local value shadows referrer") {
    REQUIRE(owner.write(chain, b, rec("alice", 99, 9)));
    CHECK(chain.sc_read(b, "alice") == rec("alice", 99, 9));
    CHECK(chain.sc_read(a, "alice") == rec("alice", 10, 1));
  }
  SUBCASE("copy on write leaves referrer untouched") {
    const auto before = chain.sc_read(a, "bob");
    REQUIRE(owner.write(chain, b, rec("bob", 21, 2)));
    CHECK(chain.sc_read(a, "bob") == before);
    CHECK(chain.local_uids(b) == std::vector<std::string>{"bob"});
    CHECK(chain.local_uids(a) == std::vector<std::string>{"alice", "bob"});
  }
  SUBCASE("errors") {
    ContractAddress ghost;
    CHECK_THROWS_AS(chain.sc_read(ghost, "alice"), UnknownContract);
    CHECK_THROWS_AS(owner.write(chain, ghost, rec("alice", 1, 1)), UnknownContract);
    CHECK_THROWS_AS(owner.write(chain, a, rec("alice", -1, 0)), Error);
    CHECK_THROWS_AS(owner.write(chain, a, rec("alice", 0, -1)), Error);
    CHECK(chain.sc_read(a, "alice") == rec("alice", 10, 1));
  }
  SUBCASE("token cannot be replayed") {
    const auto r = rec("alice", 11, 1);
    const auto tok = owner.write_auth(chain, a, std::span(&r, 1));
    CHECK(chain.sc_write(a, r, tok));
    const auto r2 = rec("alice", 50, 1);
    CHECK_FALSE(chain.sc_write(a, r2, tok));
    CHECK_FALSE(chain.sc_write(a, r, tok));
    CHECK(chain.sc_read(a, "alice") == r);
  }
  SUBCASE("batch lands in one entry") {
    const std::vector<ReputationRecord> batch{rec("x", 1, 0), rec("y", 2, 0)};
    const auto seq = chain.head_seq();
    CHECK(chain.sc_write_batch(a, batch, owner.write_auth(chain, a, batch)));
    CHECK(chain.head_seq() == seq + 1);
    CHECK(chain.sc_read(a, "y") == batch[1]);
  }
  SUBCASE("historical reads") {
    const auto seq = chain.head_seq();
    REQUIRE(owner.write(chain, a, rec("alice", 30, 3)));
    CHECK(chain.sc_read_at(a, "alice", seq) == rec("alice", 10, 1));
    CHECK(chain.sc_read_at(a, "alice", seq + 1) == rec("alice", 30, 3));
    CHECK_FALSE(chain.sc_read_at(a, "alice", 0));
  }
}

TEST_CASE("single hop across a three-deep referrer chain") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  Chain chain(allow);
  const auto c = *chain.sc_init(owner.init());
  const auto b = *chain.sc_init(owner.init(c));
  const auto a = *chain.sc_init(owner.init(b));

  REQUIRE(owner.write(chain, c, rec("deep", 7, 7)));
  CHECK(chain.sc_read(c, "deep"));
  CHECK(chain.sc_read(b, "deep") == rec("deep", 7, 7));
  CHECK_FALSE(chain.sc_read(a, "deep"));

  REQUIRE(owner.write(chain, b, rec("mid", 1, 1)));
  CHECK(chain.sc_read(a, "mid") == rec("mid", 1, 1));
}

TEST_CASE("referrer is immutable") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  Chain chain(allow);
  const auto old = *chain.sc_init(owner.init());
  const auto fresh = *chain.sc_init(owner.init(old));
  for (int i = 0; i < 20; ++i) {
    REQUIRE(owner.write(chain, fresh, rec("u" + std::to_string(i % 3), i, i)));
    CHECK(chain.get_referrer(fresh) == old);
    CHECK_FALSE(chain.get_referrer(old));
  }
}

TEST_CASE("property: non-owner tokens never mutate state") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  const auto other = Owner::make("gen-1", allow);
  Chain chain(allow);
  const auto a = *chain.sc_init(owner.init());
  REQUIRE(owner.write(chain, a, rec("alice", 5, 5)));

  std::mt19937_64 rng(21);
  const auto before_state = chain.state_json();
  const auto before_seq = chain.head_seq();
  for (int i = 0; i < 500; ++i) {
    const auto r = rec("alice", static_cast<std::int64_t>(rng() % 1000), 6);
    const Bytes payload = Chain::write_payload(a, chain.write_nonce(a), std::span(&r, 1));
    AuthToken tok;
    switch (i % 4) {
      case 0:  // different allowlisted enclave, correct payload
        tok = other.enclave.authorize(payload);
        break;
      case 1:  // owner quote, signature by another key
        tok = {owner.enclave.quote(), sign(keygen(rng()).sk, payload)};
        break;
      case 2:  // owner signature, another quote
        tok = {other.enclave.quote(), owner.enclave.authorize(payload).sig};
        break;
      default:
        for (auto& x : tok.quote.measurement.data) x = static_cast<std::uint8_t>(rng());
        for (auto& x : tok.sig.data) x = static_cast<std::uint8_t>(rng());
    }
    CHECK_FALSE(chain.sc_write(a, r, tok));
    CHECK(chain.sc_read(a, "alice") == rec("alice", 5, 5));
  }
  CHECK(chain.state_json() == before_state);
  CHECK(chain.head_seq() == before_seq);
}

TEST_CASE("persistence: reload reproduces state") {
  TempFile f("chain_small.jsonl");
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  std::string state;
  {
    Chain chain(allow, f.path);
    const auto a = *chain.sc_init(owner.init());
    REQUIRE(owner.write(chain, a, rec("alice", 1, 0)));
    REQUIRE(owner.write(chain, a, rec("bob", 2, 0)));
    state = chain.state_json();
    CHECK(chain.head_seq() == 3);
  }
  Chain reloaded(allow, f.path);
  CHECK(reloaded.state_json() == state);
  CHECK(reloaded.head_seq() == 3);

  // the reloaded chain keeps appending where the log left off
  const auto a = reloaded.log().front().addr;
  REQUIRE(owner.write(reloaded, a, rec("carol", 3, 0)));
  Chain again(allow, f.path);
  CHECK(again.head_seq() == 4);
  CHECK(again.sc_read(a, "carol") == rec("carol", 3, 0));
}

TEST_CASE("corrupt logs name the first bad sequence number") {
  TempFile f("chain_corrupt.jsonl");
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  {
    Chain chain(allow, f.path);
    const auto a = *chain.sc_init(owner.init());
    for (int i = 0; i < 4; ++i) REQUIRE(owner.write(chain, a, rec("u", i, 0)));
  }
  const std::string good = slurp(f.path);
  std::vector<std::size_t> line_ends;
  for (std::size_t i = 0; i < good.size(); ++i) {
    if (good[i] == '\n') line_ends.push_back(i);
  }
  REQUIRE(line_ends.size() == 5);

  auto expect_error_at = [&](const std::string& text, std::uint64_t seq) {
    { std::ofstream(f.path, std::ios::binary | std::ios::trunc) << text; }
    try {
      Chain c(allow, f.path);
      FAIL("replay accepted a corrupt log");
    } catch (const ChainLogError& e) {
      CHECK(e.seq() == seq);
    }
  };

  SUBCASE("truncated mid-entry") {
    for (std::size_t k = 0; k < 5; ++k) {
      const std::size_t start = k == 0 ? 0 : line_ends[k - 1] + 1;
      for (std::size_t cut : {start + 1, (start + line_ends[k]) / 2, line_ends[k]}) {
        expect_error_at(good.substr(0, cut), k + 1);
      }
    }
  }
  SUBCASE("truncated at an entry boundary is a shorter valid log") {
    { std::ofstream(f.path, std::ios::binary | std::ios::trunc) << good.substr(0, line_ends[2] + 1); }
    Chain c(allow, f.path);
    CHECK(c.head_seq() == 3);
  }
  SUBCASE("tampered payload") {
    std::string bad = good;
    const auto pos = bad.find("\"payload\":\"", line_ends[1]) + 20;
    bad[pos] = bad[pos] == '0' ? '1' : '0';
    expect_error_at(bad, 3);
  }
  SUBCASE("reordered entries") {
    const std::string l1 = good.substr(0, line_ends[0] + 1);
    const std::string l2 = good.substr(line_ends[0] + 1, line_ends[1] - line_ends[0]);
    const std::string rest = good.substr(line_ends[1] + 1);
    expect_error_at(l2 + l1 + rest, 1);
  }
  SUBCASE("duplicated entry") {
    const std::string l2 = good.substr(line_ends[0] + 1, line_ends[1] - line_ends[0]);
    expect_error_at(good.substr(0, line_ends[1] + 1) + l2, 3);
  }
  SUBCASE("garbage line") {
    expect_error_at(good + "not json\n", 6);
  }
}

TEST_CASE("log line format") {
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  Chain chain(allow);
  const auto a = *chain.sc_init(owner.init());
  const auto e = chain.log().front();
  const std::string line = e.to_json_line();
  CHECK(line.rfind("{\"seq\":1,\"op\":\"init\",\"addr\":\"" + a.hex() + "\",\"payload\":\"", 0) == 0);
  CHECK(line.find("\"auth_fp\":\"" + e.auth_fp.hex() + "\"}") != std::string::npos);
  CHECK(line.find('\n') == std::string::npos);
}

TEST_CASE("property: random operation sequences survive save and reload") {
  TempFile live("chain_prop_live.jsonl");
  TempFile copy("chain_prop_copy.jsonl");
  Allowlist allow;
  const auto owner = Owner::make("gen-0", allow);
  const auto intruder = Owner::make("gen-1", allow);
  std::mt19937_64 rng(31);

  std::string state;
  std::vector<std::uint64_t> seqs;
  {
    Chain chain(allow, live.path);
    std::vector<ContractAddress> addrs{*chain.sc_init(owner.init())};
    std::map<std::string, std::int64_t> up;
    for (int op = 0; op < 10000; ++op) {
      const auto& addr = addrs[rng() % addrs.size()];
      const std::string uid = "u" + std::to_string(rng() % 50);
      const auto kind = rng() % 100;
      if (kind < 3) {
        addrs.push_back(*chain.sc_init(owner.init(addr)));
      } else if (kind < 40) {
        (void)chain.sc_read(addr, uid);
      } else if (kind < 45) {
        const auto r = rec(uid, 1, 1);
        const auto tok = intruder.write_auth(chain, addr, std::span(&r, 1));
        CHECK_FALSE(chain.sc_write(addr, r, tok));
      } else {
        up[uid] += static_cast<std::int64_t>(rng() % 1000);
        CHECK(owner.write(chain, addr, rec(uid, up[uid], op)));
      }
    }
    state = chain.state_json();
    chain.save(copy.path);
    for (const auto& e : chain.log()) seqs.push_back(e.seq);
  }
  for (std::size_t i = 0; i < seqs.size(); ++i) CHECK(seqs[i] == i + 1);

  CHECK(slurp(live.path) == slurp(copy.path));
  Chain a(allow, live.path);
  Chain b(allow, copy.path);
  CHECK(a.state_json() == state);
  CHECK(b.state_json() == state);
}
