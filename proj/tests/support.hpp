#pragma once

#include <doctest.h>

#include "pbts/tracker.hpp"

namespace pbts::testing {

struct Member {
  std::string uid;
  KeyPair kp;
};

/// A chain with one deployed tracker and helpers to enrol members.
struct Community {
  Allowlist allow;
  Chain chain;
  Tracker tracker;

  static Enclave enclave(std::string_view cfg, Allowlist& allow) {
    const Bytes prog = to_bytes("pbts-tracker");
    allow.insert(measure(prog, to_bytes(cfg)));
    return *Enclave::launch(prog, to_bytes(cfg), allow, QuoteNonce{});
  }

  static Allowlist initial() {
    Allowlist a;
    enclave("gen-0", a);
    return a;
  }

  static PublicParams params(Ratio min_rep, std::int64_t credit) {
    std::mt19937_64 r(1);
    return setup(128, min_rep, credit, r);
  }

  explicit Community(Ratio min_rep = {1, 2}, std::int64_t credit = 1000)
      : allow(initial()),
        chain(allow),
        tracker(*Tracker::deploy(chain, enclave("gen-0", allow), params(min_rep, credit))) {}

  Member join(std::string uid, std::uint64_t seed) {
    Member m{std::move(uid), keygen(seed)};
    const auto sig = sign(m.kp.sk, register_message(tracker.params().iid, m.uid));
    REQUIRE(tracker.register_user(m.uid, m.kp.pk, sig, {prove_possession(m.kp.sk)}));
    return m;
  }

  void set_counters(const Member& m, std::int64_t up, std::int64_t down) {
    const ReputationRecord r{m.uid, m.kp.pk, up, down};
    const auto addr = tracker.address();
    const auto auth = tracker.enclave().authorize(
        Chain::write_payload(addr, chain.write_nonce(addr), std::span(&r, 1)));
    REQUIRE(chain.sc_write(addr, r, auth));
  }

  Ratio min_rep() const { return tracker.params().min_rep; }
  const ContractAddress& addr() const { return tracker.address(); }
};

}  // namespace pbts::testing
