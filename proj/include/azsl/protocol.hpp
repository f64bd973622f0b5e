#pragma once

// AZSP wire protocol shared by the teacher server and the client.
//
// Frame: "AZSP" | version u8 (=1) | kind u8 | payload length u32 LE | payload.
// Payloads use one canonical encoding: counts and enums u32 LE, reals f64 LE,
// matrices as (rows u32, cols u32) followed by row-major f64 values.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "azsl/datasets.hpp"
#include "azsl/numkit.hpp"

namespace azsl::wire {

using data::ClassId;

inline constexpr std::array<std::uint8_t, 4> kMagic = {'A', 'Z', 'S', 'P'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderSize = 10;
inline constexpr std::uint32_t kMaxPayload = 64u << 20;

enum class MessageKind : std::uint8_t {
    FeedbackRequest = 1,
    FeedbackResponse = 2,
    WeightRequest = 3,
    WeightBlob = 4,
    Error = 255,
};

enum class Scenario : std::uint32_t { WhiteBox = 0, BlackBox = 1 };

enum class Risk : std::uint32_t { Low = 0, Mid = 1 };

// Fields of a feedback response, each carrying a fixed risk tag.
enum class Field : std::uint32_t {
    Softmax = 0,
    RegValue = 1,
    RegGrad = 2,
    CeValue = 3,
    CeGrad = 4,
};

enum ErrorCode : std::uint16_t {
    kMalformedFrame = 1,
    kOversizedFrame = 2,
    kProtocolViolation = 3,
    kInvalidRequest = 4,
    kInternalError = 5,
};

std::string_view to_string(Scenario s);
std::string_view to_string(Risk r);
std::string_view to_string(Field f);
std::string_view to_string(MessageKind k);
Scenario parse_scenario(std::string_view s);

// Gradient through the teacher is mid-risk; softmax and regularizer feedback are low.
constexpr Risk risk_of(Field f) { return f == Field::CeGrad ? Risk::Mid : Risk::Low; }

struct Frame {
    MessageKind kind = MessageKind::Error;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

struct FrameHeader {
    MessageKind kind;
    std::uint32_t length;
};

// Throws ProtocolError(kMalformedFrame) on bad magic, version or kind and
// ProtocolError(kOversizedFrame) when the payload exceeds kMaxPayload.
FrameHeader decode_header(std::span<const std::uint8_t> header);

// Decodes exactly one complete frame.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Messages

struct FeedbackRequest {
    Scenario scenario = Scenario::BlackBox;
    num::Matrix batch;
    std::vector<ClassId> cond_labels;
    bool want_softmax = true;
    bool want_ce_grad = false;  // only valid for WhiteBox
};

struct FeedbackResponse {
    num::Matrix softmax;
    double reg_value = 0.0;
    num::Matrix reg_grad;
    std::optional<double> ce_value;       // WhiteBox only
    std::optional<num::Matrix> ce_grad;   // WhiteBox only
    std::vector<std::pair<Field, Risk>> risk_tags;

    bool carries(Field f) const;
};

struct WeightRequest {
    Scenario scenario = Scenario::BlackBox;
};

struct ErrorMessage {
    std::uint16_t code = kInternalError;
    std::string message;
};

std::vector<std::uint8_t> encode(const FeedbackRequest& m);
std::vector<std::uint8_t> encode(const FeedbackResponse& m);
std::vector<std::uint8_t> encode(const WeightRequest& m);
std::vector<std::uint8_t> encode(const ErrorMessage& m);

FeedbackRequest decode_feedback_request(std::span<const std::uint8_t> payload);
FeedbackResponse decode_feedback_response(std::span<const std::uint8_t> payload);
WeightRequest decode_weight_request(std::span<const std::uint8_t> payload);
ErrorMessage decode_error(std::span<const std::uint8_t> payload);

Frame make_error_frame(std::uint16_t code, std::string_view message);

// ---------------------------------------------------------------------------
// Weight blobs (.azw files and WeightBlob payloads)
//
// "AZW1" | role u32 | seed u64 | layer count u32 |
// per layer: in u32, out u32, activation u32, slope f64 |
// per layer: weight matrix, bias count u32 + f64 values.

std::vector<std::uint8_t> encode_weights(const num::MlpParams& params);
num::MlpParams decode_weights(std::span<const std::uint8_t> blob);

// Bytes of a weight blob that are not parameter values.
std::size_t weight_blob_overhead(std::span<const num::LayerSpec> layers);

}  // namespace azsl::wire
