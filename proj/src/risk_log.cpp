#include "azsl/risk_log.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

#include "azsl/bytes.hpp"
#include "azsl/error.hpp"

namespace azsl {

using nlohmann::json;

RiskLog::RiskLog(const RiskLog& other) : entries_(other.entries()) {}

RiskLog& RiskLog::operator=(const RiskLog& other) {
    if (this != &other) {
        auto copy = other.entries();
        std::lock_guard lock(mu_);
        entries_ = std::move(copy);
    }
    return *this;
}

void RiskLog::append(RiskEntry entry) {
    std::lock_guard lock(mu_);
    entry.seq = entries_.size();
    entries_.push_back(std::move(entry));
}

void RiskLog::record_exchange(const wire::Frame& request, const wire::Frame& response) {
    const auto scenario = request_scenario(request);
    auto up = classify_frame(request, Direction::Up, scenario);
    auto down = classify_frame(response, Direction::Down, scenario);
    std::lock_guard lock(mu_);
    up.seq = entries_.size();
    entries_.push_back(std::move(up));
    down.seq = entries_.size();
    entries_.push_back(std::move(down));
}

std::vector<RiskEntry> RiskLog::entries() const {
    std::lock_guard lock(mu_);
    return entries_;
}

std::size_t RiskLog::size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
}

std::string RiskLog::to_json() const {
    json doc;
    doc["format"] = "azsl-transcript";
    doc["version"] = 1;
    json list = json::array();
    for (const auto& e : entries()) {
        list.push_back({
            {"seq", e.seq},
            {"dir", e.direction == Direction::Up ? "up" : "down"},
            {"kind", e.kind},
            {"bytes", e.bytes},
            {"risk", wire::to_string(e.risk)},
            {"scenario", e.scenario ? std::string(wire::to_string(*e.scenario)) : "unknown"},
            {"fields", e.fields},
        });
    }
    doc["entries"] = std::move(list);
    return doc.dump(1) + "\n";
}

RiskLog RiskLog::from_json(const std::string& text) {
    RiskLog log;
    try {
        const json doc = json::parse(text);
        if (doc.at("format").get<std::string>() != "azsl-transcript") {
            throw Error("not an azsl transcript");
        }
        for (const auto& j : doc.at("entries")) {
            RiskEntry e;
            e.seq = j.at("seq").get<std::uint64_t>();
            const auto dir = j.at("dir").get<std::string>();
            if (dir != "up" && dir != "down") throw Error("bad direction '" + dir + "'");
            e.direction = dir == "up" ? Direction::Up : Direction::Down;
            e.kind = j.at("kind").get<std::string>();
            e.bytes = j.at("bytes").get<std::uint64_t>();
            const auto risk = j.at("risk").get<std::string>();
            if (risk != "low" && risk != "mid") throw Error("bad risk tag '" + risk + "'");
            e.risk = risk == "mid" ? wire::Risk::Mid : wire::Risk::Low;
            const auto sc = j.at("scenario").get<std::string>();
            if (sc != "unknown") e.scenario = wire::parse_scenario(sc);
            e.fields = j.at("fields").get<std::vector<std::string>>();
            if (e.seq != log.entries_.size()) throw Error("transcript sequence numbers out of order");
            log.entries_.push_back(std::move(e));
        }
    } catch (const json::exception& ex) {
        throw Error(std::string("corrupt transcript: ") + ex.what());
    } catch (const Error& ex) {
        throw Error(std::string("corrupt transcript: ") + ex.what());
    }
    return log;
}

void RiskLog::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << to_json();
    out.flush();
    if (!out) throw Error("write failed: " + path.string());
}

RiskLog RiskLog::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

std::uint64_t RiskLog::digest() const { return fnv1a64(to_json()); }

std::optional<wire::Scenario> request_scenario(const wire::Frame& request) {
    if (request.kind != wire::MessageKind::FeedbackRequest &&
        request.kind != wire::MessageKind::WeightRequest) {
        return std::nullopt;
    }
    if (request.payload.size() < 4) return std::nullopt;
    ByteReader r(request.payload);
    const std::uint32_t s = r.u32();
    if (s > 1) return std::nullopt;
    return static_cast<wire::Scenario>(s);
}

RiskEntry classify_frame(const wire::Frame& frame, Direction dir,
                         std::optional<wire::Scenario> scenario) {
    RiskEntry e;
    e.direction = dir;
    e.bytes = frame.payload.size();
    e.scenario = scenario;
    switch (frame.kind) {
        case wire::MessageKind::FeedbackRequest:
            e.kind = "feedback_request";
            break;
        case wire::MessageKind::WeightRequest:
            e.kind = "weight_request";
            break;
        case wire::MessageKind::FeedbackResponse: {
            e.kind = "feedback";
            try {
                const auto resp = wire::decode_feedback_response(frame.payload);
                for (const auto& [field, risk] : resp.risk_tags) {
                    e.fields.push_back(std::string(wire::to_string(field)) + ":" +
                                       std::string(wire::to_string(risk)));
                    if (risk == wire::Risk::Mid) e.risk = wire::Risk::Mid;
                }
                if (resp.carries(wire::Field::CeGrad)) e.kind = "ce_grad";
            } catch (const ProtocolError&) {
                e.kind = "malformed_response";
            }
            break;
        }
        case wire::MessageKind::WeightBlob:
            e.kind = "weight_blob";
            e.risk = wire::Risk::Mid;
            break;
        case wire::MessageKind::Error: {
            e.kind = "error";
            try {
                if (wire::decode_error(frame.payload).code == wire::kProtocolViolation) {
                    e.kind = "refusal";
                }
            } catch (const ProtocolError&) {
            }
            break;
        }
    }
    return e;
}

}  // namespace azsl
