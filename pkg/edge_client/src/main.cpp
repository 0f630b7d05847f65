// tip-edge: verify / decode / extract TIP frames from the command line.
//
//   tip-edge verify <frame-file> <pubkey-hex>   exit 0 when valid, else the
//                                               verdict code (1..5)
//   tip-edge decode <frame-file>                print header fields as
//                                               key=value hex lines
//   tip-edge extract <coap-file>                print the inner frame as hex
//
// Exit codes mirror the manifest's verdict codes so the interop harness can
// compare against the reference implementation directly.

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include <sodium.h>

#include "tip_edge.h"

namespace {

bool read_file(const char* path, std::vector<std::uint8_t>* out) {
  std::FILE* fh = std::fopen(path, "rb");
  if (fh == nullptr) {
    return false;
  }
  std::fseek(fh, 0, SEEK_END);
  const long size = std::ftell(fh);
  std::fseek(fh, 0, SEEK_SET);
  out->resize(size < 0 ? 0 : static_cast<std::size_t>(size));
  const std::size_t got = out->empty() ? 0 : std::fread(out->data(), 1, out->size(), fh);
  std::fclose(fh);
  return got == out->size();
}

bool parse_hex(const char* hex, std::uint8_t* out, std::size_t out_len) {
  if (std::strlen(hex) != out_len * 2) {
    return false;
  }
  for (std::size_t i = 0; i < out_len; ++i) {
    unsigned value = 0;
    if (std::sscanf(hex + 2 * i, "%2x", &value) != 1) {
      return false;
    }
    out[i] = static_cast<std::uint8_t>(value);
  }
  return true;
}

void print_hex(const char* key, const std::uint8_t* data, std::size_t len) {
  std::printf("%s=", key);
  for (std::size_t i = 0; i < len; ++i) {
    std::printf("%02x", data[i]);
  }
  std::printf("\n");
}

int cmd_verify(const char* frame_path, const char* pubkey_hex) {
  std::vector<std::uint8_t> frame;
  if (!read_file(frame_path, &frame)) {
    std::fprintf(stderr, "cannot read %s\n", frame_path);
    return 100;
  }
  std::uint8_t public_key[tipedge::kPublicKeyLen];
  if (!parse_hex(pubkey_hex, public_key, sizeof public_key)) {
    std::fprintf(stderr, "public key must be 64 hex chars\n");
    return 100;
  }
  std::vector<std::uint8_t> scratch(frame.size() + tipedge::kSignatureOffset);
  const tipedge::Verdict verdict = tipedge::validate(
      frame.data(), frame.size(), public_key, scratch.data(), scratch.size());
  std::printf("verdict=%d %s\n", static_cast<int>(verdict), tipedge::verdict_name(verdict));
  return static_cast<int>(verdict);
}

int cmd_decode(const char* frame_path) {
  std::vector<std::uint8_t> frame;
  if (!read_file(frame_path, &frame)) {
    std::fprintf(stderr, "cannot read %s\n", frame_path);
    return 100;
  }
  tipedge::HeaderView header;
  const tipedge::Verdict verdict = tipedge::decode_header(frame.data(), frame.size(), &header);
  if (verdict != tipedge::Verdict::kValid) {
    std::printf("verdict=%d %s\n", static_cast<int>(verdict), tipedge::verdict_name(verdict));
    return static_cast<int>(verdict);
  }
  std::printf("magic=%04x\n", header.magic);
  std::printf("version=%02x\n", header.version);
  std::printf("packet_type=%02x\n", header.packet_type);
  print_hex("transaction_id", header.transaction_id, 16);
  std::printf("payload_length=%08x\n", header.payload_length);
  std::printf("capability_hash=%08x\n", header.capability_hash);
  std::printf("sequence_number=%08x\n", header.sequence_number);
  std::printf("flags=%08x\n", header.flags);
  std::printf("timestamp=%016" PRIx64 "\n", header.timestamp_us);
  std::printf("ttl=%08x\n", header.ttl_ms);
  std::printf("checksum=%08x\n", header.checksum);
  print_hex("signature", header.signature, tipedge::kSignatureLen);
  return 0;
}

int cmd_extract(const char* coap_path) {
  std::vector<std::uint8_t> datagram;
  if (!read_file(coap_path, &datagram)) {
    std::fprintf(stderr, "cannot read %s\n", coap_path);
    return 100;
  }
  const std::uint8_t* frame = nullptr;
  std::size_t frame_len = 0;
  const tipedge::CoapResult result =
      tipedge::coap_extract(datagram.data(), datagram.size(), &frame, &frame_len);
  if (result != tipedge::CoapResult::kOk) {
    std::fprintf(stderr, "coap: %s\n", tipedge::coap_result_name(result));
    return static_cast<int>(result);
  }
  print_hex("frame", frame, frame_len);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (sodium_init() < 0) {
    std::fprintf(stderr, "libsodium init failed\n");
    return 100;
  }
  if (argc == 4 && std::strcmp(argv[1], "verify") == 0) {
    return cmd_verify(argv[2], argv[3]);
  }
  if (argc == 3 && std::strcmp(argv[1], "decode") == 0) {
    return cmd_decode(argv[2]);
  }
  if (argc == 3 && std::strcmp(argv[1], "extract") == 0) {
    return cmd_extract(argv[2]);
  }
  std::fprintf(stderr,
               "usage: tip-edge verify <frame-file> <pubkey-hex>\n"
               "       tip-edge decode <frame-file>\n"
               "       tip-edge extract <coap-file>\n");
  return 100;
}
