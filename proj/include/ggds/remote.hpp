#pragma once

#include "ggds/diffusion.hpp"
#include "ggds/wire.hpp"

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ggds {

/// Where a noise predictor listens: `host:port` (TCP), `unix:<path>`, or `stdio:<shell command>`
/// (spawned, frames over its stdin / stdout).
struct Endpoint {
    enum class Kind { Tcp, Unix, Stdio };
    Kind kind = Kind::Tcp;
    std::string host;
    int port = 0;
    std::string path;    ///< unix socket path
    std::string command; ///< stdio child command

    static Endpoint parse(const std::string &spec);
    std::string describe() const;
};

class RemoteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ConnectError : public RemoteError {
public:
    using RemoteError::RemoteError;
};
class TimeoutError : public RemoteError {
public:
    using RemoteError::RemoteError;
};
class RemoteVersionError : public RemoteError {
public:
    using RemoteError::RemoteError;
};
class ShapeMismatchError : public RemoteError {
public:
    ShapeMismatchError(std::vector<std::uint32_t> expected, std::vector<std::uint32_t> received);
    std::vector<std::uint32_t> expected, received;
};
class RemoteProtocolError : public RemoteError {
public:
    using RemoteError::RemoteError;
};
/// The server answered with an error frame.
class ServerError : public RemoteError {
public:
    using RemoteError::RemoteError;
};

struct RemoteOptions {
    std::chrono::milliseconds connect_timeout{5000};
    std::chrono::milliseconds request_timeout{60000};
};

/// One open byte stream to a predictor. Exactly one request is in flight at a time.
class Connection {
public:
    Connection(const Endpoint &endpoint, const RemoteOptions &opts = {});
    ~Connection();
    Connection(const Connection &) = delete;
    Connection &operator=(const Connection &) = delete;

    /// Sends one frame and waits for the reply frame; returns (type, payload).
    std::pair<wire::MessageType, std::vector<std::uint8_t>> exchange(const std::vector<std::uint8_t> &frame);
    const Endpoint &endpoint() const { return endpoint_; }

private:
    Endpoint endpoint_;
    RemoteOptions opts_;
    int read_fd_ = -1;
    int write_fd_ = -1;
    int child_ = -1;
};

/// Blocking helpers on a file descriptor, shared with test servers. A negative timeout waits
/// forever. Return false on clean end of stream before any byte was read.
void write_all(int fd, const std::uint8_t *data, std::size_t size, std::chrono::milliseconds timeout);
bool read_exact(int fd, std::uint8_t *data, std::size_t size, std::chrono::milliseconds timeout);

template <typename Scalar> struct DenoiserRequest {
    LatentImage<Scalar> latent;
    double alpha_bar = 1.0;
    Conditioning<Scalar> conditioning;
};

template <typename Scalar> wire::Request to_wire(const DenoiserRequest<Scalar> &req);

/// One-shot call: connect, send the request, return the same-shape prediction.
template <typename Scalar>
Image<Scalar> remote_eps(const Endpoint &endpoint, const DenoiserRequest<Scalar> &request,
                         const RemoteOptions &opts = {});
/// Same over an existing connection.
template <typename Scalar> Image<Scalar> remote_eps(Connection &connection, const DenoiserRequest<Scalar> &request);

/// Denoiser that forwards every prediction over one persistent connection.
template <typename Scalar> class RemoteDenoiser final : public Denoiser<Scalar> {
public:
    RemoteDenoiser(const Endpoint &endpoint, const RemoteOptions &opts = {})
        : connection_(std::make_unique<Connection>(endpoint, opts)) {}
    Image<Scalar> predict(const Image<Scalar> &zt, int t, double alpha_bar, const Conditioning<Scalar> &cond) override;

private:
    std::unique_ptr<Connection> connection_;
};

} // namespace ggds
