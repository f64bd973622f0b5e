#pragma once

// Channels carrying AZSP frames between client and teacher. The in-process
// channel pushes every frame through the same byte encoding as TCP.

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "azsl/protocol.hpp"
#include "azsl/risk_log.hpp"
#include "azsl/teacher.hpp"

namespace azsl {

class Channel {
public:
    virtual ~Channel() = default;

    // Sends one request frame and waits for its response. The exchange is
    // appended to the client-side transcript.
    wire::Frame round_trip(const wire::Frame& request);

    const RiskLog& transcript() const noexcept { return transcript_; }
    RiskLog& transcript() noexcept { return transcript_; }

protected:
    virtual std::vector<std::uint8_t> exchange_bytes(const std::vector<std::uint8_t>& request) = 0;

private:
    RiskLog transcript_;
};

class InProcessChannel final : public Channel {
public:
    // `server_log` receives the server-side view of each exchange.
    InProcessChannel(std::shared_ptr<const server::TeacherServer> server, RiskLog* server_log = nullptr);

protected:
    std::vector<std::uint8_t> exchange_bytes(const std::vector<std::uint8_t>& request) override;

private:
    std::shared_ptr<const server::TeacherServer> server_;
    RiskLog own_log_;
    RiskLog* server_log_;
};

class TcpChannel final : public Channel {
public:
    TcpChannel(const std::string& host, std::uint16_t port);
    ~TcpChannel() override;
    TcpChannel(const TcpChannel&) = delete;
    TcpChannel& operator=(const TcpChannel&) = delete;

    // Writes raw bytes and reads back one frame. Bypasses the transcript; for
    // probing the server with hand-made frames.
    wire::Frame send_raw(const std::vector<std::uint8_t>& bytes);

protected:
    std::vector<std::uint8_t> exchange_bytes(const std::vector<std::uint8_t>& request) override;

private:
    int fd_ = -1;
};

// Single-threaded AZSP server. Connections are handled one at a time, one
// request at a time.
class TcpServer {
public:
    // Binds and listens immediately; port 0 picks an ephemeral port.
    // Throws azsl::Error when the address is unavailable.
    TcpServer(std::shared_ptr<const server::TeacherServer> server, RiskLog& log,
              const std::string& host, std::uint16_t port);
    ~TcpServer();
    TcpServer(const TcpServer&) = delete;
    TcpServer& operator=(const TcpServer&) = delete;

    std::uint16_t port() const noexcept { return port_; }

    // Runs until stop() is called (or `external_stop` becomes true).
    void serve(const std::atomic<bool>* external_stop = nullptr);
    void stop() noexcept { stop_.store(true); }

    std::uint64_t frames_handled() const noexcept { return handled_.load(); }

private:
    void serve_connection(int fd, const std::atomic<bool>* external_stop);
    bool stopping(const std::atomic<bool>* external_stop) const;

    std::shared_ptr<const server::TeacherServer> server_;
    RiskLog& log_;
    int listen_fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stop_{false};
    std::atomic<std::uint64_t> handled_{0};
};

// Typed wrapper over a channel. Error frames become ProtocolError.
class FeedbackClient {
public:
    explicit FeedbackClient(Channel& channel) : channel_(channel) {}

    wire::FeedbackResponse request(const wire::FeedbackRequest& req);
    num::MlpParams request_weights(wire::Scenario scenario);

    Channel& channel() noexcept { return channel_; }

private:
    Channel& channel_;
};

}  // namespace azsl
