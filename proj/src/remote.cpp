#include "ggds/remote.hpp"

#include <cerrno>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <pthread.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

namespace ggds {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

Endpoint Endpoint::parse(const std::string &spec) {
    Endpoint e;
    if (spec.rfind("unix:", 0) == 0) {
        e.kind = Kind::Unix;
        e.path = spec.substr(5);
        require(!e.path.empty(), "unix endpoint needs a socket path");
        require(e.path.size() < sizeof(sockaddr_un{}.sun_path), "unix socket path too long: " + e.path);
        return e;
    }
    if (spec.rfind("stdio:", 0) == 0) {
        e.kind = Kind::Stdio;
        e.command = spec.substr(6);
        require(!e.command.empty(), "stdio endpoint needs a command");
        return e;
    }
    const auto colon = spec.rfind(':');
    require(colon != std::string::npos && colon > 0 && colon + 1 < spec.size(),
            "endpoint must be host:port, unix:<path> or stdio:<command>, got '" + spec + "'");
    e.kind = Kind::Tcp;
    e.host = spec.substr(0, colon);
    try {
        std::size_t used = 0;
        e.port = std::stoi(spec.substr(colon + 1), &used);
        require(used == spec.size() - colon - 1, "");
    } catch (const std::exception &) {
        throw InvalidArgument("bad port in endpoint '" + spec + "'");
    }
    require(e.port > 0 && e.port < 65536, "port out of range in endpoint '" + spec + "'");
    return e;
}

std::string Endpoint::describe() const {
    switch (kind) {
    case Kind::Tcp:
        return host + ":" + std::to_string(port);
    case Kind::Unix:
        return "unix:" + path;
    case Kind::Stdio:
        return "stdio:" + command;
    }
    return {};
}

ShapeMismatchError::ShapeMismatchError(std::vector<std::uint32_t> exp, std::vector<std::uint32_t> got)
    : RemoteError("shape mismatch: expected dims " + wire::dims_string(exp) + ", received " + wire::dims_string(got)),
      expected(std::move(exp)), received(std::move(got)) {}

// --- fd helpers -------------------------------------------------------------------------------------

namespace {

int remaining_ms(Clock::time_point deadline, bool forever) {
    if (forever)
        return -1;
    const auto left = std::chrono::duration_cast<milliseconds>(deadline - Clock::now()).count();
    return left > 0 ? int(left) : 0;
}

void wait_ready(int fd, short events, Clock::time_point deadline, bool forever, const char *what) {
    for (;;) {
        pollfd p{fd, events, 0};
        const int rc = ::poll(&p, 1, remaining_ms(deadline, forever));
        if (rc > 0)
            return;
        if (rc == 0)
            throw TimeoutError(std::string("timed out while ") + what);
        if (errno != EINTR)
            throw RemoteError(std::string("poll failed while ") + what + ": " + std::strerror(errno));
    }
}

void set_nonblocking(int fd, bool on) {
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, on ? (flags | O_NONBLOCK) : (flags & ~O_NONBLOCK));
}

int connect_socket(int family, const sockaddr *addr, socklen_t len, milliseconds timeout, const std::string &name) {
    const int fd = ::socket(family, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0)
        throw ConnectError("cannot create socket for " + name + ": " + std::strerror(errno));
    set_nonblocking(fd, true);
    int rc = ::connect(fd, addr, len);
    if (rc != 0 && errno != EINPROGRESS) {
        const int err = errno;
        ::close(fd);
        throw ConnectError("cannot connect to " + name + ": " + std::strerror(err));
    }
    if (rc != 0) {
        try {
            wait_ready(fd, POLLOUT, Clock::now() + timeout, false, ("connecting to " + name).c_str());
        } catch (const TimeoutError &) {
            ::close(fd);
            throw ConnectError("connection to " + name + " timed out");
        }
        int err = 0;
        socklen_t elen = sizeof(err);
        ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
        if (err != 0) {
            ::close(fd);
            throw ConnectError("cannot connect to " + name + ": " + std::strerror(err));
        }
    }
    return fd;
}

/// write() with SIGPIPE held back, so a dead reader surfaces as EPIPE instead of a signal.
ssize_t write_pipe(int fd, const std::uint8_t *data, std::size_t size) {
    sigset_t pipe_set, old_set;
    sigemptyset(&pipe_set);
    sigaddset(&pipe_set, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &pipe_set, &old_set);
    const ssize_t n = ::write(fd, data, size);
    const int err = errno;
    if (n < 0 && err == EPIPE) {
        const timespec zero{0, 0};
        sigtimedwait(&pipe_set, nullptr, &zero);
    }
    pthread_sigmask(SIG_SETMASK, &old_set, nullptr);
    errno = err;
    return n;
}

} // namespace

void write_all(int fd, const std::uint8_t *data, std::size_t size, milliseconds timeout) {
    const bool forever = timeout.count() < 0;
    const auto deadline = Clock::now() + (forever ? milliseconds(0) : timeout);
    std::size_t done = 0;
    while (done < size) {
        wait_ready(fd, POLLOUT, deadline, forever, "sending");
        const ssize_t n = ::send(fd, data + done, size - done, MSG_NOSIGNAL);
        if (n < 0 && errno == ENOTSOCK) {
            const ssize_t m = write_pipe(fd, data + done, size - done);
            if (m < 0 && errno != EINTR && errno != EAGAIN)
                throw RemoteError(std::string("write failed: ") + std::strerror(errno));
            done += m > 0 ? std::size_t(m) : 0;
            continue;
        }
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN)
                continue;
            throw RemoteError(std::string("send failed: ") + std::strerror(errno));
        }
        done += std::size_t(n);
    }
}

bool read_exact(int fd, std::uint8_t *data, std::size_t size, milliseconds timeout) {
    const bool forever = timeout.count() < 0;
    const auto deadline = Clock::now() + (forever ? milliseconds(0) : timeout);
    std::size_t done = 0;
    while (done < size) {
        wait_ready(fd, POLLIN, deadline, forever, "waiting for data");
        const ssize_t n = ::read(fd, data + done, size - done);
        if (n == 0) {
            if (done == 0)
                return false;
            throw RemoteProtocolError("stream closed mid-frame");
        }
        if (n < 0) {
            if (errno == EINTR || errno == EAGAIN)
                continue;
            throw RemoteError(std::string("read failed: ") + std::strerror(errno));
        }
        done += std::size_t(n);
    }
    return true;
}

// --- connection --------------------------------------------------------------------------------------

Connection::Connection(const Endpoint &endpoint, const RemoteOptions &opts) : endpoint_(endpoint), opts_(opts) {
    switch (endpoint.kind) {
    case Endpoint::Kind::Tcp: {
        addrinfo hints{};
        hints.ai_family = AF_UNSPEC;
        hints.ai_socktype = SOCK_STREAM;
        addrinfo *res = nullptr;
        const int rc = ::getaddrinfo(endpoint.host.c_str(), std::to_string(endpoint.port).c_str(), &hints, &res);
        if (rc != 0)
            throw ConnectError("cannot resolve " + endpoint.describe() + ": " + ::gai_strerror(rc));
        std::string last = "no addresses";
        for (addrinfo *ai = res; ai; ai = ai->ai_next) {
            try {
                read_fd_ = connect_socket(ai->ai_family, ai->ai_addr, ai->ai_addrlen, opts.connect_timeout,
                                          endpoint.describe());
                break;
            } catch (const ConnectError &e) {
                last = e.what();
            }
        }
        ::freeaddrinfo(res);
        if (read_fd_ < 0)
            throw ConnectError(last);
        int one = 1;
        ::setsockopt(read_fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        write_fd_ = read_fd_;
        break;
    }
    case Endpoint::Kind::Unix: {
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        std::strncpy(addr.sun_path, endpoint.path.c_str(), sizeof(addr.sun_path) - 1);
        read_fd_ = write_fd_ = connect_socket(AF_UNIX, reinterpret_cast<sockaddr *>(&addr), sizeof(addr),
                                              opts.connect_timeout, endpoint.describe());
        break;
    }
    case Endpoint::Kind::Stdio: {
        int to_child[2], from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0)
            throw ConnectError(std::string("pipe failed: ") + std::strerror(errno));
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
            ::close(to_child[0]);
            ::close(to_child[1]);
            throw ConnectError(std::string("pipe failed: ") + std::strerror(errno));
        }
        const pid_t pid = ::fork();
        if (pid < 0)
            throw ConnectError(std::string("fork failed: ") + std::strerror(errno));
        if (pid == 0) {
            ::dup2(to_child[0], STDIN_FILENO);
            ::dup2(from_child[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", endpoint.command.c_str(), static_cast<char *>(nullptr));
            ::_exit(127);
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        write_fd_ = to_child[1];
        read_fd_ = from_child[0];
        child_ = pid;
        break;
    }
    }
}

Connection::~Connection() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_)
        ::close(write_fd_);
    if (read_fd_ >= 0)
        ::close(read_fd_);
    if (child_ > 0) {
        int status = 0;
        // Closing stdin is the shutdown signal; give the child a moment, then make sure.
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(child_, &status, WNOHANG) == child_)
                return;
            ::usleep(10000);
        }
        ::kill(child_, SIGTERM);
        ::waitpid(child_, &status, 0);
    }
}

std::pair<wire::MessageType, std::vector<std::uint8_t>> Connection::exchange(const std::vector<std::uint8_t> &frame) {
    const auto name = endpoint_.describe();
    try {
        write_all(write_fd_, frame.data(), frame.size(), opts_.request_timeout);
        std::array<std::uint8_t, wire::kHeaderSize> head;
        if (!read_exact(read_fd_, head.data(), head.size(), opts_.request_timeout))
            throw RemoteProtocolError("server closed the connection without replying");
        wire::FrameHeader h;
        try {
            h = wire::parse_header(head);
        } catch (const wire::VersionError &e) {
            throw RemoteVersionError(std::string("server ") + name + ": " + e.what());
        } catch (const wire::ProtocolError &e) {
            throw RemoteProtocolError(std::string("server ") + name + ": " + e.what());
        }
        std::vector<std::uint8_t> payload(h.length);
        if (h.length > 0 && !read_exact(read_fd_, payload.data(), payload.size(), opts_.request_timeout))
            throw RemoteProtocolError("stream closed mid-frame");
        return {h.type, std::move(payload)};
    } catch (const TimeoutError &e) {
        throw TimeoutError(std::string("request to ") + name + " " + e.what());
    }
}

// --- typed calls --------------------------------------------------------------------------------------

template <typename Scalar> wire::Request to_wire(const DenoiserRequest<Scalar> &req) {
    const Image<Scalar> &z = req.latent.data;
    wire::Request w;
    require(req.latent.t >= 0, "latent noise level must be non-negative");
    w.t = std::uint32_t(req.latent.t);
    w.alpha_bar = req.alpha_bar;
    w.dims = {std::uint32_t(z.height), std::uint32_t(z.width), std::uint32_t(z.channels)};
    w.latent.assign(z.data.data(), z.data.data() + z.size());
    if (!req.conditioning.disparity.empty()) {
        const auto &d = req.conditioning.disparity;
        if (d.width != z.width || d.height != z.height || d.channels != 1)
            throw InvalidArgument("disparity conditioning " + shape_string(d) + " does not match latent " +
                                  shape_string(z));
        w.disparity = std::vector<float>(d.data.data(), d.data.data() + d.size());
    }
    w.text = req.conditioning.text;
    return w;
}

template <typename Scalar> Image<Scalar> remote_eps(Connection &connection, const DenoiserRequest<Scalar> &request) {
    const wire::Request w = to_wire(request);
    const auto payload = wire::encode_request(w);
    auto [type, reply] = connection.exchange(wire::frame(wire::MessageType::Request, payload));
    if (type == wire::MessageType::Error) {
        std::string msg;
        try {
            msg = wire::decode_error(reply);
        } catch (const wire::ProtocolError &e) {
            throw RemoteProtocolError(std::string("malformed error frame: ") + e.what());
        }
        if (msg.find("version") != std::string::npos)
            throw RemoteVersionError("server rejected request: " + msg);
        throw ServerError("server error: " + msg);
    }
    if (type != wire::MessageType::Response)
        throw RemoteProtocolError("unexpected message type " + std::to_string(int(type)) + " in reply");
    wire::Response resp;
    try {
        resp = wire::decode_response(reply);
    } catch (const wire::ProtocolError &e) {
        throw RemoteProtocolError(std::string("malformed response: ") + e.what());
    }
    if (resp.dims != w.dims)
        throw ShapeMismatchError(w.dims, resp.dims);
    Image<Scalar> out(request.latent.data.width, request.latent.data.height, request.latent.data.channels);
    for (std::size_t i = 0; i < resp.eps.size(); ++i)
        out.data[Eigen::Index(i)] = Scalar(resp.eps[i]);
    return out;
}

template <typename Scalar>
Image<Scalar> remote_eps(const Endpoint &endpoint, const DenoiserRequest<Scalar> &request, const RemoteOptions &opts) {
    Connection conn(endpoint, opts);
    return remote_eps(conn, request);
}

template <typename Scalar>
Image<Scalar> RemoteDenoiser<Scalar>::predict(const Image<Scalar> &zt, int t, double alpha_bar,
                                              const Conditioning<Scalar> &cond) {
    DenoiserRequest<Scalar> req;
    req.latent.data = zt;
    req.latent.t = t;
    req.alpha_bar = alpha_bar;
    req.conditioning = cond;
    return remote_eps(*connection_, req);
}

#define GGDS_INSTANTIATE_REMOTE(S)                                                                                \
    template wire::Request to_wire<S>(const DenoiserRequest<S> &);                                                \
    template Image<S> remote_eps<S>(Connection &, const DenoiserRequest<S> &);                                    \
    template Image<S> remote_eps<S>(const Endpoint &, const DenoiserRequest<S> &, const RemoteOptions &);         \
    template class RemoteDenoiser<S>;

GGDS_INSTANTIATE_REMOTE(float)
GGDS_INSTANTIATE_REMOTE(double)

} // namespace ggds
