#include "ggds/remote.hpp"
#include "ggds/toy.hpp"
#include "support/loopback_server.hpp"

#include <gtest/gtest.h>

using namespace ggds;
using namespace std::chrono_literals;

namespace {

Image<double> random_latent(Rng &rng, int w, int h, int c) {
    std::normal_distribution<double> n;
    Image<double> img(w, h, c);
    for (Eigen::Index i = 0; i < img.size(); ++i)
        img.data[i] = n(rng);
    return img;
}

AnalyticPrior<double> test_prior(Rng &rng, int w, int h) {
    return AnalyticPrior<double>::gaussian(random_latent(rng, w, h, 3).data, ArrayX<double>::Constant(3, 0.7));
}

DenoiserRequest<double> make_request(const Image<double> &z, int t, const DiffusionSchedule &s) {
    DenoiserRequest<double> req;
    req.latent.data = z;
    req.latent.t = t;
    req.alpha_bar = s.alpha_bar[t];
    return req;
}

int free_port() {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr *>(&addr), sizeof(addr));
    socklen_t len = sizeof(addr);
    ::getsockname(fd, reinterpret_cast<sockaddr *>(&addr), &len);
    ::close(fd);
    return ntohs(addr.sin_port);
}

} // namespace

TEST(Wire, RequestRoundTripIsBitExact) {
    wire::Request req;
    req.t = 417;
    req.alpha_bar = 0.123456789012345;
    req.dims = {2, 3, 3};
    for (int i = 0; i < 18; ++i)
        req.latent.push_back(float(i) * 0.25f - 1.5f);
    req.disparity = std::vector<float>{0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 0.6f};
    req.text = "a street at dusk";
    const auto bytes = wire::encode_request(req);
    const auto back = wire::decode_request(bytes);
    EXPECT_EQ(back.t, req.t);
    EXPECT_EQ(back.alpha_bar, req.alpha_bar);
    EXPECT_EQ(back.dims, req.dims);
    EXPECT_EQ(back.latent, req.latent);
    EXPECT_EQ(back.disparity, req.disparity);
    EXPECT_EQ(back.text, req.text);
}

TEST(Wire, LayoutMatchesProtocol) {
    wire::Request req;
    req.t = 0x01020304;
    req.alpha_bar = 0.5;
    req.dims = {1, 1, 1};
    req.latent = {1.0f};
    req.text = "hi";
    const auto payload = wire::encode_request(req);
    const std::vector<std::uint8_t> expect = {0x04, 0x03, 0x02, 0x01,                         // t
                                              0, 0, 0, 0, 0, 0, 0xE0, 0x3F,                   // 0.5
                                              3, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,          // rank, dims
                                              2,                                              // flags
                                              0, 0, 0x80, 0x3F,                               // 1.0f
                                              2, 0, 0, 0, 'h', 'i'};                          // text
    EXPECT_EQ(payload, expect);
    const auto f = wire::frame(wire::MessageType::Request, payload);
    ASSERT_EQ(f.size(), wire::kHeaderSize + payload.size());
    EXPECT_EQ(std::string(f.begin(), f.begin() + 4), "GGDS");
    EXPECT_EQ(f[4], 1);
    EXPECT_EQ(f[5], 1);
    EXPECT_EQ(f[6], payload.size());
    EXPECT_EQ(f[7], 0);
}

TEST(Wire, HeaderErrors) {
    auto f = wire::frame(wire::MessageType::Response, std::vector<std::uint8_t>{});
    EXPECT_NO_THROW(wire::parse_header(f));
    f[4] = 2;
    EXPECT_THROW(wire::parse_header(f), wire::VersionError);
    f[4] = 1;
    f[0] = 'X';
    EXPECT_THROW(wire::parse_header(f), wire::ProtocolError);
    f[0] = 'G';
    f[5] = 9;
    EXPECT_THROW(wire::parse_header(f), wire::ProtocolError);
}

TEST(Wire, TruncatedAndTrailingPayloads) {
    wire::Response r{{2, 2, 1}, {1, 2, 3, 4}};
    auto bytes = wire::encode_response(r);
    EXPECT_EQ(wire::decode_response(bytes).eps, r.eps);
    auto cut = bytes;
    cut.pop_back();
    EXPECT_THROW(wire::decode_response(cut), wire::ProtocolError);
    bytes.push_back(0);
    EXPECT_THROW(wire::decode_response(bytes), wire::ProtocolError);
    EXPECT_EQ(wire::decode_error(wire::encode_error("oops")), "oops");
}

TEST(Endpoint, Parsing) {
    auto e = Endpoint::parse("localhost:7070");
    EXPECT_EQ(e.kind, Endpoint::Kind::Tcp);
    EXPECT_EQ(e.port, 7070);
    EXPECT_EQ(Endpoint::parse("unix:/tmp/x.sock").path, "/tmp/x.sock");
    EXPECT_EQ(Endpoint::parse("stdio:python3 bridge.py").command, "python3 bridge.py");
    EXPECT_THROW(Endpoint::parse("nohost"), InvalidArgument);
    EXPECT_THROW(Endpoint::parse("host:99999"), InvalidArgument);
    EXPECT_THROW(Endpoint::parse("host:12ab"), InvalidArgument);
}

TEST(Remote, LoopbackMatchesAnalyticEps) {
    Rng rng(1);
    const auto s = make_cosine_schedule(1000);
    const auto prior = test_prior(rng, 6, 5);
    for (bool unix_socket : {false, true}) {
        check::LoopbackServer server(prior, s, check::Fault::None, unix_socket);
        for (int t : {1, 300, 800}) {
            const auto z = random_latent(rng, 6, 5, 3);
            const auto got = remote_eps(Endpoint::parse(server.endpoint()), make_request(z, t, s));
            const auto want = analytic_eps(z, t, prior, s);
            EXPECT_LE((got.data - want.data).abs().maxCoeff(), 1e-5);
        }
    }
}

TEST(Remote, SequentialRequestsOnOneConnection) {
    Rng rng(2);
    const auto s = make_linear_schedule(1000);
    const auto prior = test_prior(rng, 4, 4);
    check::LoopbackServer server(prior, s);
    RemoteDenoiser<double> remote(Endpoint::parse(server.endpoint()));
    AnalyticDenoiser<double> local(prior, s);
    const auto z = random_latent(rng, 4, 4, 3);
    const auto a = ddim_denoise_n(z, 700, 5, remote, {}, s);
    const auto b = ddim_denoise_n(z, 700, 5, local, {}, s);
    EXPECT_LE((a.data - b.data).abs().maxCoeff(), 1e-4);
    EXPECT_EQ(server.requests_served(), 5);
}

TEST(Remote, ConditioningTravels) {
    Rng rng(3);
    const auto s = make_linear_schedule(1000);
    check::LoopbackServer server(test_prior(rng, 4, 2), s);
    auto req = make_request(random_latent(rng, 4, 2, 3), 10, s);
    req.conditioning.disparity = Image<double>(4, 2, 1, 0.25);
    req.conditioning.text = "suburban road";
    EXPECT_NO_THROW(remote_eps(Endpoint::parse(server.endpoint()), req));
    req.conditioning.disparity = Image<double>(3, 2, 1);
    EXPECT_THROW(remote_eps(Endpoint::parse(server.endpoint()), req), InvalidArgument);
}

TEST(Remote, AbsentServerIsConnectError) {
    Rng rng(4);
    const auto s = make_linear_schedule(10);
    const auto req = make_request(random_latent(rng, 2, 2, 3), 1, s);
    EXPECT_THROW(remote_eps(Endpoint::parse("127.0.0.1:" + std::to_string(free_port())), req), ConnectError);
    EXPECT_THROW(remote_eps(Endpoint::parse("unix:/nonexistent/ggds.sock"), req), ConnectError);
}

TEST(Remote, WrongDimsIsShapeMismatch) {
    Rng rng(5);
    const auto s = make_linear_schedule(100);
    check::LoopbackServer server(test_prior(rng, 3, 2), s, check::Fault::WrongDims);
    try {
        remote_eps(Endpoint::parse(server.endpoint()), make_request(random_latent(rng, 3, 2, 3), 5, s));
        FAIL();
    } catch (const ShapeMismatchError &e) {
        EXPECT_EQ(e.expected, (std::vector<std::uint32_t>{2, 3, 3}));
        EXPECT_EQ(e.received, (std::vector<std::uint32_t>{2, 4, 3}));
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3, 3]"), std::string::npos);
        EXPECT_NE(msg.find("[2, 4, 3]"), std::string::npos);
    }
}

TEST(Remote, VersionMismatch) {
    Rng rng(6);
    const auto s = make_linear_schedule(100);
    check::LoopbackServer server(test_prior(rng, 2, 2), s, check::Fault::WrongVersion);
    EXPECT_THROW(remote_eps(Endpoint::parse(server.endpoint()), make_request(random_latent(rng, 2, 2, 3), 5, s)),
                 RemoteVersionError);
}

TEST(Remote, ServerErrorFrame) {
    Rng rng(7);
    const auto s = make_linear_schedule(100);
    check::LoopbackServer server(test_prior(rng, 2, 2), s, check::Fault::ErrorFrame);
    try {
        remote_eps(Endpoint::parse(server.endpoint()), make_request(random_latent(rng, 2, 2, 3), 5, s));
        FAIL();
    } catch (const ServerError &e) {
        EXPECT_NE(std::string(e.what()).find("backend exploded"), std::string::npos);
    }
}

TEST(Remote, GarbageReplyIsProtocolError) {
    Rng rng(8);
    const auto s = make_linear_schedule(100);
    check::LoopbackServer server(test_prior(rng, 2, 2), s, check::Fault::Garbage);
    EXPECT_THROW(remote_eps(Endpoint::parse(server.endpoint()), make_request(random_latent(rng, 2, 2, 3), 5, s)),
                 RemoteProtocolError);
}

TEST(Remote, SilentServerTimesOut) {
    Rng rng(9);
    const auto s = make_linear_schedule(100);
    check::LoopbackServer server(test_prior(rng, 2, 2), s, check::Fault::Silent);
    RemoteOptions opts;
    opts.request_timeout = 150ms;
    EXPECT_THROW(
        remote_eps(Endpoint::parse(server.endpoint()), make_request(random_latent(rng, 2, 2, 3), 5, s), opts),
        TimeoutError);
}

TEST(Remote, StdioChildProcess) {
    Rng rng(10);
    const auto s = make_linear_schedule(1000);
    RemoteDenoiser<double> remote(Endpoint::parse(std::string("stdio:") + GGDS_STDIO_SERVER));
    const auto prior = AnalyticPrior<double>::gaussian(ArrayX<double>::Zero(1), ArrayX<double>::Ones(1));
    for (int t : {5, 500}) {
        const auto z = random_latent(rng, 3, 3, 3);
        const auto got = remote.predict(z, t, s.alpha_bar[t], {});
        EXPECT_LE((got.data - analytic_eps(z, t, prior, s).data).abs().maxCoeff(), 1e-5);
    }
}

TEST(Remote, StdioChildThatExitsIsAnError) {
    Rng rng(11);
    const auto s = make_linear_schedule(100);
    RemoteDenoiser<double> remote(Endpoint::parse("stdio:exit 0"));
    EXPECT_THROW(remote.predict(random_latent(rng, 2, 2, 3), 5, s.alpha_bar[5], {}), RemoteError);
}

TEST(Remote, ServerSurvivesBadVersionFrame) {
    Rng rng(12);
    const auto s = make_linear_schedule(100);
    const auto prior = test_prior(rng, 2, 2);
    check::LoopbackServer server(prior, s);
    Connection conn(Endpoint::parse(server.endpoint()));
    wire::Request req;
    req.dims = {2, 2, 3};
    req.latent.assign(12, 0.5f);
    req.t = 5;
    req.alpha_bar = s.alpha_bar[5];
    auto [type, payload] = conn.exchange(wire::frame(wire::MessageType::Request, wire::encode_request(req), 2));
    EXPECT_EQ(type, wire::MessageType::Error);
    EXPECT_NE(wire::decode_error(payload).find("version"), std::string::npos);
    auto [type2, payload2] = conn.exchange(wire::frame(wire::MessageType::Request, wire::encode_request(req)));
    EXPECT_EQ(type2, wire::MessageType::Response);
    EXPECT_EQ(wire::decode_response(payload2).dims, req.dims);
}
