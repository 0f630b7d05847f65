#include "tip_edge.h"

#include <cstring>

#include <sodium.h>

namespace tipedge {

namespace {

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0]) << 8 | p[1];
}

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) << 24 | static_cast<std::uint32_t>(p[1]) << 16 |
         static_cast<std::uint32_t>(p[2]) << 8 | p[3];
}

std::uint64_t read_u64(const std::uint8_t* p) {
  return static_cast<std::uint64_t>(read_u32(p)) << 32 | read_u32(p + 4);
}

struct Crc32Table {
  std::uint32_t entry[256];
  Crc32Table() {
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int bit = 0; bit < 8; ++bit) {
        c = (c & 1) ? (c >> 1) ^ 0xEDB88320u : c >> 1;
      }
      entry[i] = c;
    }
  }
};

const Crc32Table kCrcTable;  // static storage, no heap

}  // namespace

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::kValid: return "valid";
    case Verdict::kTooShort: return "TooShort";
    case Verdict::kBadMagic: return "BadMagic";
    case Verdict::kUnsupportedVersion: return "UnsupportedVersion";
    case Verdict::kChecksumMismatch: return "ChecksumMismatch";
    case Verdict::kBadSignature: return "BadSignature";
  }
  return "unknown";
}

const char* coap_result_name(CoapResult r) {
  switch (r) {
    case CoapResult::kOk: return "ok";
    case CoapResult::kNotCoap: return "NotCoap";
    case CoapResult::kWrongPath: return "WrongPath";
    case CoapResult::kWrongContentFormat: return "WrongContentFormat";
    case CoapResult::kNoPayload: return "NoPayload";
  }
  return "unknown";
}

std::uint32_t crc32_update(std::uint32_t state, const std::uint8_t* data, std::size_t len) {
  for (std::size_t i = 0; i < len; ++i) {
    state = kCrcTable.entry[(state ^ data[i]) & 0xFF] ^ (state >> 8);
  }
  return state;
}

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  return crc32_update(0xFFFFFFFFu, data, len) ^ 0xFFFFFFFFu;
}

Verdict decode_header(const std::uint8_t* data, std::size_t len, HeaderView* out) {
  if (len < kHeaderLen) {
    return Verdict::kTooShort;
  }
  const std::uint16_t magic = read_u16(data);
  if (magic != kMagic) {
    return Verdict::kBadMagic;
  }
  if (data[2] != kVersion) {
    return Verdict::kUnsupportedVersion;
  }
  if (out != nullptr) {
    out->magic = magic;
    out->version = data[2];
    out->packet_type = data[3];
    std::memcpy(out->transaction_id, data + 4, 16);
    out->payload_length = read_u32(data + 20);
    out->capability_hash = read_u32(data + 24);
    out->sequence_number = read_u32(data + 28);
    out->flags = read_u32(data + 32);
    out->timestamp_us = read_u64(data + 36);
    out->ttl_ms = read_u32(data + 44);
    out->checksum = read_u32(data + 48);
    out->signature = data + kSignatureOffset;
  }
  return Verdict::kValid;
}

Verdict validate(const std::uint8_t* data, std::size_t len,
                 const std::uint8_t public_key[kPublicKeyLen],
                 std::uint8_t* scratch, std::size_t scratch_len) {
  HeaderView header;
  const Verdict decoded = decode_header(data, len, &header);
  if (decoded != Verdict::kValid) {
    return decoded;
  }
  const std::uint8_t* payload = data + kHeaderLen;
  const std::size_t payload_len = len - kHeaderLen;
  if (header.payload_length != payload_len) {
    return Verdict::kChecksumMismatch;
  }

  // CRC32 over bytes 0-47, the signature bytes 52-115, then the payload.
  std::uint32_t state = 0xFFFFFFFFu;
  state = crc32_update(state, data, kChecksumOffset);
  state = crc32_update(state, data + kSignatureOffset, kHeaderLen - kSignatureOffset);
  state = crc32_update(state, payload, payload_len);
  if ((state ^ 0xFFFFFFFFu) != header.checksum) {
    return Verdict::kChecksumMismatch;
  }

  // Signed message: bytes 0-51 with the checksum field zeroed, then payload.
  const std::size_t message_len = kSignatureOffset + payload_len;
  if (scratch == nullptr || scratch_len < message_len) {
    return Verdict::kBadSignature;  // cannot verify without workspace
  }
  std::memcpy(scratch, data, kSignatureOffset);
  std::memset(scratch + kChecksumOffset, 0, 4);
  std::memcpy(scratch + kSignatureOffset, payload, payload_len);
  if (crypto_sign_verify_detached(header.signature, scratch, message_len, public_key) != 0) {
    return Verdict::kBadSignature;
  }
  return Verdict::kValid;
}

namespace {

constexpr std::uint16_t kOptUriPath = 11;
constexpr std::uint16_t kOptContentFormat = 12;
constexpr std::uint32_t kContentFormatOctetStream = 42;

bool read_option_nibble(const std::uint8_t* data, std::size_t len, std::size_t* pos,
                        std::uint32_t nibble, std::uint32_t* value) {
  if (nibble < 13) {
    *value = nibble;
    return true;
  }
  if (nibble == 13) {
    if (*pos >= len) return false;
    *value = data[(*pos)++] + 13u;
    return true;
  }
  if (nibble == 14) {
    if (*pos + 2 > len) return false;
    *value = (static_cast<std::uint32_t>(data[*pos]) << 8 | data[*pos + 1]) + 269u;
    *pos += 2;
    return true;
  }
  return false;  // 15 is reserved
}

}  // namespace

CoapResult coap_extract(const std::uint8_t* datagram, std::size_t len,
                        const std::uint8_t** frame, std::size_t* frame_len) {
  if (len < 4) {
    return CoapResult::kNotCoap;
  }
  const std::uint8_t version = datagram[0] >> 6;
  const std::uint8_t token_length = datagram[0] & 0x0F;
  if (version != 1 || token_length > 8) {
    return CoapResult::kNotCoap;
  }
  std::size_t pos = 4 + token_length;
  if (pos > len) {
    return CoapResult::kNotCoap;
  }

  std::uint32_t option_number = 0;
  bool path_is_tip = false;
  std::uint32_t path_segments = 0;
  bool format_seen = false;
  bool format_is_octets = false;

  while (pos < len) {
    const std::uint8_t byte = datagram[pos];
    if (byte == 0xFF) {
      ++pos;
      if (pos >= len) {
        return CoapResult::kNoPayload;
      }
      if (path_segments != 1 || !path_is_tip) {
        return CoapResult::kWrongPath;
      }
      if (!format_seen || !format_is_octets) {
        return CoapResult::kWrongContentFormat;
      }
      *frame = datagram + pos;
      *frame_len = len - pos;
      return CoapResult::kOk;
    }
    ++pos;
    std::uint32_t delta = 0;
    std::uint32_t value_len = 0;
    if (!read_option_nibble(datagram, len, &pos, byte >> 4, &delta) ||
        !read_option_nibble(datagram, len, &pos, byte & 0x0F, &value_len)) {
      return CoapResult::kNotCoap;
    }
    if (pos + value_len > len) {
      return CoapResult::kNotCoap;
    }
    option_number += delta;
    const std::uint8_t* value = datagram + pos;
    pos += value_len;
    if (option_number == kOptUriPath) {
      ++path_segments;
      path_is_tip = value_len == 3 && std::memcmp(value, "tip", 3) == 0;
    } else if (option_number == kOptContentFormat) {
      std::uint32_t format = 0;
      for (std::uint32_t i = 0; i < value_len; ++i) {
        format = format << 8 | value[i];
      }
      format_seen = true;
      format_is_octets = format == kContentFormatOctetStream;
    }
  }
  return CoapResult::kNoPayload;
}

}  // namespace tipedge
