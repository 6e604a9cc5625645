#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

/// Framed binary messages exchanged with an external noise predictor.
///
///   frame    = "GGDS" | version u8 | type u8 | payload length u32 | payload
///   request  = t u32 | alpha_bar f64 | rank u8 | dims u32[rank] | flags u8
///              | latent f32[prod dims] | [disparity f32[h w]] | [text u32 length + UTF-8]
///   response = rank u8 | dims u32[rank] | eps f32[prod dims]
///   error    = u32 length + UTF-8 message
///
/// All integers and floats are little-endian; tensors are row-major. flags bit 0 marks a
/// disparity tensor (spatial dims = first two latent dims), bit 1 marks text.
namespace ggds::wire {

constexpr std::array<std::uint8_t, 4> kMagic = {'G', 'G', 'D', 'S'};
constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kHeaderSize = 10;
constexpr std::uint32_t kMaxPayload = 1u << 30;

enum class MessageType : std::uint8_t { Request = 1, Response = 2, Error = 3 };

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VersionError : public ProtocolError {
public:
    explicit VersionError(std::uint8_t got)
        : ProtocolError("unsupported protocol version " + std::to_string(got) + " (expected " +
                        std::to_string(kVersion) + ")"),
          version(got) {}
    std::uint8_t version;
};

struct FrameHeader {
    std::uint8_t version = kVersion;
    MessageType type = MessageType::Request;
    std::uint32_t length = 0;
};

struct Request {
    std::uint32_t t = 0;
    double alpha_bar = 1.0;
    std::vector<std::uint32_t> dims;
    std::vector<float> latent;
    std::optional<std::vector<float>> disparity;
    std::optional<std::string> text;
};

struct Response {
    std::vector<std::uint32_t> dims;
    std::vector<float> eps;
};

/// Element count of a tensor with these dims; throws ProtocolError on overflow.
std::size_t element_count(const std::vector<std::uint32_t> &dims);
/// Element count of the disparity tensor accompanying a latent with these dims.
std::size_t disparity_count(const std::vector<std::uint32_t> &dims);
std::string dims_string(const std::vector<std::uint32_t> &dims);

std::vector<std::uint8_t> frame(MessageType type, std::span<const std::uint8_t> payload,
                                std::uint8_t version = kVersion);
/// Validates magic and version; throws VersionError for a wrong version.
FrameHeader parse_header(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> encode_request(const Request &req);
Request decode_request(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_response(const Response &resp);
Response decode_response(std::span<const std::uint8_t> payload);
std::vector<std::uint8_t> encode_error(const std::string &message);
std::string decode_error(std::span<const std::uint8_t> payload);

} // namespace ggds::wire
