#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "azsl/protocol.hpp"

namespace azsl {

enum class Direction : std::uint8_t { Up = 0, Down = 1 };

// One channel message. `seq` is a logical timestamp (position in the
// session) so transcripts of seeded runs are reproducible.
struct RiskEntry {
    std::uint64_t seq = 0;
    Direction direction = Direction::Up;
    std::string kind;
    std::uint64_t bytes = 0;  // frame payload size
    wire::Risk risk = wire::Risk::Low;
    std::optional<wire::Scenario> scenario;
    std::vector<std::string> fields;  // "name:risk" for feedback responses

    bool operator==(const RiskEntry&) const = default;
};

// Append-only audit log of channel traffic. Appends are serialized.
class RiskLog {
public:
    RiskLog() = default;
    RiskLog(const RiskLog& other);
    RiskLog& operator=(const RiskLog& other);

    void append(RiskEntry entry);

    // Logs a request and its response, classifying both.
    void record_exchange(const wire::Frame& request, const wire::Frame& response);

    std::vector<RiskEntry> entries() const;
    std::size_t size() const;

    std::string to_json() const;
    static RiskLog from_json(const std::string& text);

    void save(const std::filesystem::path& path) const;
    static RiskLog load(const std::filesystem::path& path);

    std::uint64_t digest() const;

private:
    mutable std::mutex mu_;
    std::vector<RiskEntry> entries_;
};

// Risk classification of a single frame. Response scenarios come from the
// request they answer.
RiskEntry classify_frame(const wire::Frame& frame, Direction dir,
                         std::optional<wire::Scenario> scenario);

// Scenario announced by a request frame, if it parses.
std::optional<wire::Scenario> request_scenario(const wire::Frame& request);

}  // namespace azsl
