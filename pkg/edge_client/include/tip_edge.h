// Minimal constrained-device TIP client: header decode, integrity and
// signature verification, CoAP payload extraction. Read-only by design --
// enough to prove wire compatibility against the reference engine.
//
// The decode path performs no dynamic allocation; signature verification
// assembles its message in a caller-provided scratch buffer.

#ifndef TIP_EDGE_H
#define TIP_EDGE_H

#include <cstddef>
#include <cstdint>

namespace tipedge {

constexpr std::uint16_t kMagic = 0x5449;
constexpr std::uint8_t kVersion = 0x01;
constexpr std::size_t kHeaderLen = 116;
constexpr std::size_t kSignatureLen = 64;
constexpr std::size_t kPublicKeyLen = 32;
constexpr std::size_t kChecksumOffset = 48;
constexpr std::size_t kSignatureOffset = 52;

// Verdict codes shared with the reference implementation's manifest.
enum class Verdict : int {
  kValid = 0,
  kTooShort = 1,
  kBadMagic = 2,
  kUnsupportedVersion = 3,
  kChecksumMismatch = 4,
  kBadSignature = 5,
};

const char* verdict_name(Verdict v);

// Field view over a 116-byte header. The signature pointer aliases the
// input buffer; nothing is copied.
struct HeaderView {
  std::uint16_t magic;
  std::uint8_t version;
  std::uint8_t packet_type;
  std::uint8_t transaction_id[16];
  std::uint32_t payload_length;
  std::uint32_t capability_hash;
  std::uint32_t sequence_number;
  std::uint32_t flags;
  std::uint64_t timestamp_us;
  std::uint32_t ttl_ms;
  std::uint32_t checksum;
  const std::uint8_t* signature;
};

// CRC-32 (reflected 0xEDB88320, init/final-xor 0xFFFFFFFF), resumable so the
// split coverage windows need no copying. Begin with 0xFFFFFFFF, finish by
// xor with 0xFFFFFFFF.
std::uint32_t crc32_update(std::uint32_t state, const std::uint8_t* data, std::size_t len);
std::uint32_t crc32(const std::uint8_t* data, std::size_t len);

// Parses and checks magic + version. No allocation.
Verdict decode_header(const std::uint8_t* data, std::size_t len, HeaderView* out);

// Full static pipeline: header, checksum over bytes 0-47 and 52-115 plus the
// payload, Ed25519 signature over bytes 0-51 (checksum field zeroed) plus
// the payload. Replay/TTL are stateful receiver policy and not an edge
// concern. `scratch` must hold at least 52 + payload length bytes.
Verdict validate(const std::uint8_t* data, std::size_t len,
                 const std::uint8_t public_key[kPublicKeyLen],
                 std::uint8_t* scratch, std::size_t scratch_len);

enum class CoapResult : int {
  kOk = 0,
  kNotCoap = 1,
  kWrongPath = 2,
  kWrongContentFormat = 3,
  kNoPayload = 4,
};

const char* coap_result_name(CoapResult r);

// Walks the CoAP option list (standard delta encoding, 13/14 extensions),
// requires a single Uri-Path "tip" and Content-Format 42, and returns a view
// of the payload after the 0xFF marker. No allocation.
CoapResult coap_extract(const std::uint8_t* datagram, std::size_t len,
                        const std::uint8_t** frame, std::size_t* frame_len);

}  // namespace tipedge

#endif  // TIP_EDGE_H
