#include "azsl/protocol.hpp"

#include <algorithm>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"

namespace azsl::wire {

namespace {

constexpr std::array<std::uint8_t, 4> kWeightMagic = {'A', 'Z', 'W', '1'};
constexpr std::uint32_t kWantSoftmax = 1u << 0;
constexpr std::uint32_t kWantCeGrad = 1u << 1;

void put_matrix(ByteWriter& w, const num::Matrix& m) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    w.f64s(m.data());
}

num::Matrix get_matrix(ByteReader& r) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (n * 8 > r.remaining()) throw ParseError("matrix larger than payload", 0);
    num::Matrix m(rows, cols);
    r.f64s(m.data());
    return m;
}

template <class Fn>
auto decoding(std::string_view what, Fn&& fn) {
    try {
        return fn();
    } catch (const ParseError& e) {
        throw ProtocolError(kMalformedFrame, std::string(what) + ": " + e.what());
    }
}

}  // namespace

std::string_view to_string(Scenario s) {
    return s == Scenario::WhiteBox ? "whitebox" : "blackbox";
}

std::string_view to_string(Risk r) { return r == Risk::Mid ? "mid" : "low"; }

std::string_view to_string(Field f) {
    switch (f) {
        case Field::Softmax: return "softmax";
        case Field::RegValue: return "reg_value";
        case Field::RegGrad: return "reg_grad";
        case Field::CeValue: return "ce_value";
        case Field::CeGrad: return "ce_grad";
    }
    return "unknown";
}

std::string_view to_string(MessageKind k) {
    switch (k) {
        case MessageKind::FeedbackRequest: return "feedback_request";
        case MessageKind::FeedbackResponse: return "feedback_response";
        case MessageKind::WeightRequest: return "weight_request";
        case MessageKind::WeightBlob: return "weight_blob";
        case MessageKind::Error: return "error";
    }
    return "unknown";
}

Scenario parse_scenario(std::string_view s) {
    if (s == "whitebox" || s == "white" || s == "wb") return Scenario::WhiteBox;
    if (s == "blackbox" || s == "black" || s == "bb") return Scenario::BlackBox;
    throw Error("unknown scenario '" + std::string(s) + "'");
}

bool FeedbackResponse::carries(Field f) const {
    return std::any_of(risk_tags.begin(), risk_tags.end(),
                       [f](const auto& t) { return t.first == f; });
}

// ---------------------------------------------------------------------------
// Frames

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    if (frame.payload.size() > kMaxPayload) {
        throw ProtocolError(kOversizedFrame, "payload exceeds 64 MiB");
    }
    ByteWriter w;
    w.bytes(kMagic);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(frame.kind));
    w.u32(static_cast<std::uint32_t>(frame.payload.size()));
    w.bytes(frame.payload);
    return w.take();
}

FrameHeader decode_header(std::span<const std::uint8_t> header) {
    if (header.size() < kHeaderSize) throw ProtocolError(kMalformedFrame, "short frame header");
    if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
        throw ProtocolError(kMalformedFrame, "bad magic");
    }
    if (header[4] != kVersion) {
        throw ProtocolError(kMalformedFrame, "unsupported version " + std::to_string(header[4]));
    }
    const auto kind = static_cast<MessageKind>(header[5]);
    switch (kind) {
        case MessageKind::FeedbackRequest:
        case MessageKind::FeedbackResponse:
        case MessageKind::WeightRequest:
        case MessageKind::WeightBlob:
        case MessageKind::Error: break;
        default: throw ProtocolError(kMalformedFrame, "unknown message kind " + std::to_string(header[5]));
    }
    ByteReader r(header.subspan(6, 4));
    const std::uint32_t len = r.u32();
    if (len > kMaxPayload) {
        throw ProtocolError(kOversizedFrame, "frame of " + std::to_string(len) + " bytes exceeds 64 MiB");
    }
    return {kind, len};
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
    const auto h = decode_header(bytes);
    if (bytes.size() != kHeaderSize + h.length) {
        throw ProtocolError(kMalformedFrame, "frame length does not match header");
    }
    auto body = bytes.subspan(kHeaderSize);
    return Frame{h.kind, std::vector<std::uint8_t>(body.begin(), body.end())};
}

// ---------------------------------------------------------------------------
// Messages

std::vector<std::uint8_t> encode(const FeedbackRequest& m) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(m.scenario));
    w.u32((m.want_softmax ? kWantSoftmax : 0u) | (m.want_ce_grad ? kWantCeGrad : 0u));
    put_matrix(w, m.batch);
    w.u32(static_cast<std::uint32_t>(m.cond_labels.size()));
    for (ClassId c : m.cond_labels) w.u32(c);
    return w.take();
}

FeedbackRequest decode_feedback_request(std::span<const std::uint8_t> payload) {
    return decoding("feedback request", [&] {
        ByteReader r(payload);
        FeedbackRequest m;
        const std::uint32_t scenario = r.u32();
        if (scenario > 1) throw ParseError("bad scenario", 0);
        m.scenario = static_cast<Scenario>(scenario);
        const std::uint32_t flags = r.u32();
        m.want_softmax = flags & kWantSoftmax;
        m.want_ce_grad = flags & kWantCeGrad;
        m.batch = get_matrix(r);
        const std::uint32_t n = r.u32();
        if (static_cast<std::size_t>(n) * 4 > r.remaining()) throw ParseError("label count", 0);
        m.cond_labels.resize(n);
        for (auto& c : m.cond_labels) c = r.u32();
        r.expect_end();
        return m;
    });
}

std::vector<std::uint8_t> encode(const FeedbackResponse& m) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(m.risk_tags.size()));
    for (const auto& [field, risk] : m.risk_tags) {
        w.u32(static_cast<std::uint32_t>(field));
        w.u32(static_cast<std::uint32_t>(risk));
    }
    if (m.carries(Field::Softmax)) put_matrix(w, m.softmax);
    if (m.carries(Field::RegValue)) w.f64(m.reg_value);
    if (m.carries(Field::RegGrad)) put_matrix(w, m.reg_grad);
    if (m.carries(Field::CeValue)) w.f64(m.ce_value.value());
    if (m.carries(Field::CeGrad)) put_matrix(w, m.ce_grad.value());
    return w.take();
}

FeedbackResponse decode_feedback_response(std::span<const std::uint8_t> payload) {
    return decoding("feedback response", [&] {
        ByteReader r(payload);
        FeedbackResponse m;
        const std::uint32_t n = r.u32();
        if (n > 5) throw ParseError("too many fields", 0);
        for (std::uint32_t i = 0; i < n; ++i) {
            const std::uint32_t f = r.u32();
            const std::uint32_t risk = r.u32();
            if (f > 4 || risk > 1) throw ParseError("bad risk tag", 0);
            m.risk_tags.emplace_back(static_cast<Field>(f), static_cast<Risk>(risk));
        }
        if (m.carries(Field::Softmax)) m.softmax = get_matrix(r);
        if (m.carries(Field::RegValue)) m.reg_value = r.f64();
        if (m.carries(Field::RegGrad)) m.reg_grad = get_matrix(r);
        if (m.carries(Field::CeValue)) m.ce_value = r.f64();
        if (m.carries(Field::CeGrad)) m.ce_grad = get_matrix(r);
        r.expect_end();
        return m;
    });
}

std::vector<std::uint8_t> encode(const WeightRequest& m) {
    ByteWriter w;
    w.u32(static_cast<std::uint32_t>(m.scenario));
    return w.take();
}

WeightRequest decode_weight_request(std::span<const std::uint8_t> payload) {
    return decoding("weight request", [&] {
        ByteReader r(payload);
        const std::uint32_t s = r.u32();
        if (s > 1) throw ParseError("bad scenario", 0);
        r.expect_end();
        return WeightRequest{static_cast<Scenario>(s)};
    });
}

std::vector<std::uint8_t> encode(const ErrorMessage& m) {
    ByteWriter w;
    w.u16(m.code);
    w.text(m.message);
    return w.take();
}

ErrorMessage decode_error(std::span<const std::uint8_t> payload) {
    return decoding("error frame", [&] {
        ByteReader r(payload);
        ErrorMessage m;
        m.code = r.u16();
        m.message = r.rest_as_text();
        return m;
    });
}

Frame make_error_frame(std::uint16_t code, std::string_view message) {
    return Frame{MessageKind::Error, encode(ErrorMessage{code, std::string(message)})};
}

// ---------------------------------------------------------------------------
// Weights

std::size_t weight_blob_overhead(std::span<const num::LayerSpec> layers) {
    // magic + role + seed + layer count, then per layer: spec (4+4+4+8),
    // matrix shape prefix (4+4), bias count (4).
    return 4 + 4 + 8 + 4 + layers.size() * (20 + 8 + 4);
}

std::vector<std::uint8_t> encode_weights(const num::MlpParams& p) {
    ByteWriter w;
    w.bytes(kWeightMagic);
    w.u32(static_cast<std::uint32_t>(p.role));
    w.u64(p.seed);
    w.u32(static_cast<std::uint32_t>(p.layers.size()));
    for (const auto& l : p.layers) {
        w.u32(static_cast<std::uint32_t>(l.in_dim));
        w.u32(static_cast<std::uint32_t>(l.out_dim));
        w.u32(static_cast<std::uint32_t>(l.activation));
        w.f64(l.slope);
    }
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        put_matrix(w, p.weights[k]);
        w.u32(static_cast<std::uint32_t>(p.biases[k].size()));
        w.f64s(p.biases[k]);
    }
    return w.take();
}

num::MlpParams decode_weights(std::span<const std::uint8_t> blob) {
    ByteReader r(blob);
    auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kWeightMagic.begin())) {
        throw ParseError("bad weight blob magic", 0);
    }
    num::MlpParams p;
    const std::uint32_t role = r.u32();
    if (role > 3) throw ParseError("bad role", 0);
    p.role = static_cast<num::Role>(role);
    p.seed = r.u64();
    const std::uint32_t n = r.u32();
    if (n == 0 || n > 1024) throw ParseError("bad layer count", 0);
    for (std::uint32_t i = 0; i < n; ++i) {
        num::LayerSpec l;
        l.in_dim = r.u32();
        l.out_dim = r.u32();
        const std::uint32_t act = r.u32();
        if (act > 2) throw ParseError("bad activation", 0);
        l.activation = static_cast<num::Activation>(act);
        l.slope = r.f64();
        p.layers.push_back(l);
    }
    for (std::uint32_t i = 0; i < n; ++i) {
        auto w = get_matrix(r);
        if (w.rows() != p.layers[i].in_dim || w.cols() != p.layers[i].out_dim) {
            throw ParseError("weight shape does not match layer spec", 0);
        }
        const std::uint32_t nb = r.u32();
        if (nb != p.layers[i].out_dim) throw ParseError("bias length does not match layer spec", 0);
        std::vector<double> b(nb);
        r.f64s(b);
        p.weights.push_back(std::move(w));
        p.biases.push_back(std::move(b));
    }
    r.expect_end();
    return p;
}

}  // namespace azsl::wire
