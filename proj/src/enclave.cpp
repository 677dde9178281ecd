#include "pbts/enclave.hpp"

#include <sodium.h>

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "pbts/encoding.hpp"

namespace pbts {
namespace {

const KeyPair& hardware_root() {
  static const KeyPair root =
      KeyPair::from_ikm(hash("pbts simulated hardware attestation root").view());
  return root;
}

const Digest& kms_master_secret() {
  static const Digest secret = hash("pbts simulated kms master secret");
  return secret;
}

Bytes quote_message(const Measurement& m, const QuoteNonce& nonce) {
  return Encoder()
      .text("quote")
      .blob(FieldTag::digest, m)
      .blob(FieldTag::raw, nonce)
      .finish();
}

}  // namespace

Bytes AttestationQuote::encode() const {
  return Encoder()
      .blob(FieldTag::digest, measurement)
      .blob(FieldTag::raw, nonce)
      .blob(FieldTag::signature, sig)
      .finish();
}

AttestationQuote AttestationQuote::decode(ByteView bytes) {
  Decoder d(bytes);
  AttestationQuote q;
  q.measurement = d.blob<Measurement>(FieldTag::digest);
  q.nonce = d.blob<QuoteNonce>(FieldTag::raw);
  q.sig = d.blob<Signature>(FieldTag::signature);
  if (d.remaining() != 0) throw Error("quote: trailing fields");
  return q;
}

Measurement measure(ByteView program_id, ByteView config) {
  const Digest d = hash(Encoder()
                            .push(FieldTag::raw, program_id)
                            .push(FieldTag::raw, config)
                            .finish());
  return Measurement{d.data};
}

const PublicKey& hardware_root_public_key() { return hardware_root().pk; }

AttestationQuote attest_quote(const Measurement& m, const QuoteNonce& nonce) {
  return {m, nonce, sign(hardware_root().sk, quote_message(m, nonce))};
}

bool verify_quote(const AttestationQuote& quote, const Allowlist& allowlist) {
  return allowlist.contains(quote.measurement) &&
         verify(hardware_root_public_key(),
                quote_message(quote.measurement, quote.nonce), quote.sig);
}

std::optional<TrackerRootKey> kms_derive(const AttestationQuote& quote,
                                         const Allowlist& allowlist) {
  if (!verify_quote(quote, allowlist)) return std::nullopt;
  std::array<std::uint8_t, crypto_auth_hmacsha256_BYTES> ikm{};
  crypto_auth_hmacsha256(ikm.data(), quote.measurement.data.data(),
                         quote.measurement.size,
                         kms_master_secret().data.data());
  return TrackerRootKey{KeyPair::from_ikm(ikm), quote.measurement};
}

std::string Allowlist::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : entries_) j.push_back(m.hex());
  return j.dump();
}

Allowlist Allowlist::from_json(std::string_view text) {
  Allowlist out;
  const auto j = nlohmann::json::parse(text);
  if (!j.is_array()) throw Error("allowlist: expected a JSON array");
  for (const auto& item : j) {
    auto m = Measurement::from_hex(item.get<std::string>());
    if (!m) throw Error("allowlist: bad measurement hex");
    out.insert(*m);
  }
  return out;
}

void Allowlist::save(const std::filesystem::path& path) const {
  std::ofstream(path) << to_json() << '\n';
}

Allowlist Allowlist::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("allowlist: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Bytes AuthToken::encode() const {
  return Encoder()
      .raw(quote.encode())
      .blob(FieldTag::signature, sig)
      .finish();
}

std::optional<Enclave> Enclave::launch(ByteView program_id, ByteView config,
                                       const Allowlist& allowlist,
                                       const QuoteNonce& nonce) {
  auto quote = attest_quote(measure(program_id, config), nonce);
  auto key = kms_derive(quote, allowlist);
  if (!key) return std::nullopt;
  return Enclave(std::move(quote), std::move(*key));
}

AuthToken Enclave::authorize(ByteView payload) const {
  return {quote_, sign(root_.key.sk, payload)};
}

}  // namespace pbts
