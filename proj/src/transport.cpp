#include "azsl/transport.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "azsl/error.hpp"

namespace azsl {

namespace {

constexpr int kPollMillis = 100;

std::string sys_error(const std::string& what) { return what + ": " + std::strerror(errno); }

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
    while (n > 0) {
        const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
        if (k < 0) {
            if (errno == EINTR) continue;
            throw Error(sys_error("send"));
        }
        data += k;
        n -= static_cast<std::size_t>(k);
    }
}

// Returns false on orderly EOF before any byte was read.
bool read_all(int fd, std::uint8_t* data, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t k = ::recv(fd, data + got, n - got, 0);
        if (k < 0) {
            if (errno == EINTR) continue;
            throw Error(sys_error("recv"));
        }
        if (k == 0) {
            if (got == 0) return false;
            throw Error("connection closed mid-frame");
        }
        got += static_cast<std::size_t>(k);
    }
    return true;
}

wire::Frame read_frame(int fd) {
    std::vector<std::uint8_t> header(wire::kHeaderSize);
    if (!read_all(fd, header.data(), header.size())) throw Error("connection closed by peer");
    const auto h = wire::decode_header(header);
    wire::Frame f{h.kind, std::vector<std::uint8_t>(h.length)};
    if (h.length > 0 && !read_all(fd, f.payload.data(), h.length)) throw Error("connection closed by peer");
    return f;
}

}  // namespace

// ---------------------------------------------------------------------------

wire::Frame Channel::round_trip(const wire::Frame& request) {
    const auto bytes = exchange_bytes(wire::encode_frame(request));
    wire::Frame response = wire::decode_frame(bytes);
    transcript_.record_exchange(request, response);
    return response;
}

InProcessChannel::InProcessChannel(std::shared_ptr<const server::TeacherServer> server, RiskLog* server_log)
    : server_(std::move(server)), server_log_(server_log ? server_log : &own_log_) {}

std::vector<std::uint8_t> InProcessChannel::exchange_bytes(const std::vector<std::uint8_t>& request) {
    wire::Frame response;
    try {
        response = server_->handle(wire::decode_frame(request), *server_log_);
    } catch (const ProtocolError& e) {
        response = wire::make_error_frame(e.code(), e.what());
    }
    return wire::encode_frame(response);
}

// ---------------------------------------------------------------------------

TcpChannel::TcpChannel(const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
        throw Error("resolve " + host + ": " + ::gai_strerror(rc));
    }
    for (addrinfo* p = res; p; p = p->ai_next) {
        fd_ = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
        if (fd_ < 0) continue;
        if (::connect(fd_, p->ai_addr, p->ai_addrlen) == 0) break;
        ::close(fd_);
        fd_ = -1;
    }
    ::freeaddrinfo(res);
    if (fd_ < 0) throw Error(sys_error("connect " + host + ":" + service));
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

TcpChannel::~TcpChannel() {
    if (fd_ >= 0) ::close(fd_);
}

std::vector<std::uint8_t> TcpChannel::exchange_bytes(const std::vector<std::uint8_t>& request) {
    write_all(fd_, request.data(), request.size());
    return wire::encode_frame(read_frame(fd_));
}

wire::Frame TcpChannel::send_raw(const std::vector<std::uint8_t>& bytes) {
    write_all(fd_, bytes.data(), bytes.size());
    return read_frame(fd_);
}

// ---------------------------------------------------------------------------

TcpServer::TcpServer(std::shared_ptr<const server::TeacherServer> server, RiskLog& log,
                     const std::string& host, std::uint16_t port)
    : server_(std::move(server)), log_(log) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(sys_error("socket"));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    const std::string h = host == "localhost" ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        throw Error("bad listen address '" + host + "'");
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(listen_fd_, 8) != 0) {
        const std::string msg = sys_error("bind " + host + ":" + std::to_string(port));
        ::close(listen_fd_);
        throw Error(msg);
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

TcpServer::~TcpServer() {
    if (listen_fd_ >= 0) ::close(listen_fd_);
}

bool TcpServer::stopping(const std::atomic<bool>* external_stop) const {
    return stop_.load() || (external_stop && external_stop->load());
}

void TcpServer::serve(const std::atomic<bool>* external_stop) {
    while (!stopping(external_stop)) {
        pollfd p{listen_fd_, POLLIN, 0};
        const int rc = ::poll(&p, 1, kPollMillis);
        if (rc < 0 && errno != EINTR) throw Error(sys_error("poll"));
        if (rc <= 0) continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) continue;
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        try {
            serve_connection(fd, external_stop);
        } catch (const std::exception&) {
            // peer vanished; keep serving others
        }
        ::close(fd);
    }
}

void TcpServer::serve_connection(int fd, const std::atomic<bool>* external_stop) {
    while (!stopping(external_stop)) {
        pollfd p{fd, POLLIN, 0};
        const int rc = ::poll(&p, 1, kPollMillis);
        if (rc < 0 && errno != EINTR) return;
        if (rc <= 0) continue;

        std::vector<std::uint8_t> header(wire::kHeaderSize);
        if (!read_all(fd, header.data(), header.size())) return;
        wire::FrameHeader h;
        try {
            h = wire::decode_header(header);
        } catch (const ProtocolError& e) {
            const auto err = wire::make_error_frame(e.code(), e.what());
            log_.append(classify_frame(err, Direction::Down, std::nullopt));
            const auto bytes = wire::encode_frame(err);
            write_all(fd, bytes.data(), bytes.size());
            return;
        }
        wire::Frame request{h.kind, std::vector<std::uint8_t>(h.length)};
        if (h.length > 0 && !read_all(fd, request.payload.data(), h.length)) return;

        const auto response = server_->handle(request, log_);
        const auto bytes = wire::encode_frame(response);
        handled_.fetch_add(1);
        write_all(fd, bytes.data(), bytes.size());
        if (response.kind == wire::MessageKind::Error) {
            const auto err = wire::decode_error(response.payload);
            if (err.code == wire::kMalformedFrame || err.code == wire::kOversizedFrame) return;
        }
    }
}

// ---------------------------------------------------------------------------

namespace {

[[noreturn]] void raise_error_frame(const wire::Frame& f) {
    const auto err = wire::decode_error(f.payload);
    throw ProtocolError(err.code, err.message);
}

}  // namespace

wire::FeedbackResponse FeedbackClient::request(const wire::FeedbackRequest& req) {
    const auto resp = channel_.round_trip({wire::MessageKind::FeedbackRequest, wire::encode(req)});
    if (resp.kind == wire::MessageKind::Error) raise_error_frame(resp);
    if (resp.kind != wire::MessageKind::FeedbackResponse) {
        throw ProtocolError(wire::kProtocolViolation, "expected feedback_response");
    }
    return wire::decode_feedback_response(resp.payload);
}

num::MlpParams FeedbackClient::request_weights(wire::Scenario scenario) {
    const auto resp =
        channel_.round_trip({wire::MessageKind::WeightRequest, wire::encode(wire::WeightRequest{scenario})});
    if (resp.kind == wire::MessageKind::Error) raise_error_frame(resp);
    if (resp.kind != wire::MessageKind::WeightBlob) {
        throw ProtocolError(wire::kProtocolViolation, "expected weight_blob");
    }
    try {
        return wire::decode_weights(resp.payload);
    } catch (const ParseError& e) {
        throw ProtocolError(wire::kMalformedFrame, e.what());
    }
}

}  // namespace azsl
