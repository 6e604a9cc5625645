#include "ggds/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>

namespace ggds::wire {

namespace {

class Writer {
public:
    void u8(std::uint8_t v) { out.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i)
            out.push_back(std::uint8_t(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i)
            out.push_back(std::uint8_t(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f32s(const std::vector<float> &v) {
        out.reserve(out.size() + 4 * v.size());
        for (float x : v)
            f32(x);
    }
    void bytes(const std::string &s) { out.insert(out.end(), s.begin(), s.end()); }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}
    void need(std::size_t n, const char *what) const {
        if (data_.size() - pos_ < n)
            throw ProtocolError(std::string("truncated payload while reading ") + what);
    }
    std::uint8_t u8(const char *what) {
        need(1, what);
        return data_[pos_++];
    }
    std::uint32_t u32(const char *what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= std::uint32_t(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char *what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= std::uint64_t(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64(const char *what) { return std::bit_cast<double>(u64(what)); }
    std::vector<float> f32s(std::size_t n, const char *what) {
        if (n > (data_.size() - pos_) / 4)
            throw ProtocolError(std::string("truncated payload while reading ") + what);
        std::vector<float> v(n);
        for (auto &x : v)
            x = std::bit_cast<float>(u32(what));
        return v;
    }
    std::string str(const char *what) {
        const std::uint32_t n = u32(what);
        need(n, what);
        std::string s(reinterpret_cast<const char *>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void finish() const {
        if (pos_ != data_.size())
            throw ProtocolError(std::to_string(data_.size() - pos_) + " trailing bytes in payload");
    }

private:
    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

std::vector<std::uint32_t> read_dims(Reader &r) {
    const std::uint8_t rank = r.u8("rank");
    std::vector<std::uint32_t> dims(rank);
    for (auto &d : dims)
        d = r.u32("dims");
    return dims;
}

void write_dims(Writer &w, const std::vector<std::uint32_t> &dims) {
    if (dims.size() > 255)
        throw ProtocolError("tensor rank above 255");
    w.u8(std::uint8_t(dims.size()));
    for (auto d : dims)
        w.u32(d);
}

} // namespace

std::size_t element_count(const std::vector<std::uint32_t> &dims) {
    std::size_t n = 1;
    for (auto d : dims) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d)
            throw ProtocolError("tensor dims overflow");
        n *= d;
    }
    return n;
}

std::size_t disparity_count(const std::vector<std::uint32_t> &dims) {
    if (dims.size() < 2)
        return element_count(dims);
    return element_count({dims[0], dims[1]});
}

std::string dims_string(const std::vector<std::uint32_t> &dims) {
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i)
        s += (i ? ", " : "") + std::to_string(dims[i]);
    return s + "]";
}

std::vector<std::uint8_t> frame(MessageType type, std::span<const std::uint8_t> payload, std::uint8_t version) {
    if (payload.size() > kMaxPayload)
        throw ProtocolError("payload of " + std::to_string(payload.size()) + " bytes exceeds frame limit");
    Writer w;
    w.out.assign(kMagic.begin(), kMagic.end());
    w.u8(version);
    w.u8(std::uint8_t(type));
    w.u32(std::uint32_t(payload.size()));
    w.out.insert(w.out.end(), payload.begin(), payload.end());
    return w.out;
}

FrameHeader parse_header(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kHeaderSize)
        throw ProtocolError("truncated frame header");
    if (!std::equal(kMagic.begin(), kMagic.end(), bytes.begin()))
        throw ProtocolError("bad frame magic");
    FrameHeader h;
    h.version = bytes[4];
    if (h.version != kVersion)
        throw VersionError(h.version);
    const std::uint8_t type = bytes[5];
    if (type < 1 || type > 3)
        throw ProtocolError("unknown message type " + std::to_string(type));
    h.type = MessageType(type);
    Reader r(bytes.subspan(6, 4));
    h.length = r.u32("length");
    if (h.length > kMaxPayload)
        throw ProtocolError("frame length " + std::to_string(h.length) + " exceeds limit");
    return h;
}

std::vector<std::uint8_t> encode_request(const Request &req) {
    if (req.latent.size() != element_count(req.dims))
        throw ProtocolError("latent has " + std::to_string(req.latent.size()) + " values for dims " +
                            dims_string(req.dims));
    if (req.disparity && req.disparity->size() != disparity_count(req.dims))
        throw ProtocolError("disparity has " + std::to_string(req.disparity->size()) + " values, expected " +
                            std::to_string(disparity_count(req.dims)));
    Writer w;
    w.u32(req.t);
    w.f64(req.alpha_bar);
    write_dims(w, req.dims);
    w.u8(std::uint8_t((req.disparity ? 1 : 0) | (req.text ? 2 : 0)));
    w.f32s(req.latent);
    if (req.disparity)
        w.f32s(*req.disparity);
    if (req.text) {
        w.u32(std::uint32_t(req.text->size()));
        w.bytes(*req.text);
    }
    return w.out;
}

Request decode_request(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    Request req;
    req.t = r.u32("t");
    req.alpha_bar = r.f64("alpha_bar");
    req.dims = read_dims(r);
    const std::uint8_t flags = r.u8("flags");
    if (flags & ~3u)
        throw ProtocolError("unknown request flags " + std::to_string(flags));
    req.latent = r.f32s(element_count(req.dims), "latent");
    if (flags & 1)
        req.disparity = r.f32s(disparity_count(req.dims), "disparity");
    if (flags & 2)
        req.text = r.str("text");
    r.finish();
    return req;
}

std::vector<std::uint8_t> encode_response(const Response &resp) {
    if (resp.eps.size() != element_count(resp.dims))
        throw ProtocolError("response tensor size does not match dims " + dims_string(resp.dims));
    Writer w;
    write_dims(w, resp.dims);
    w.f32s(resp.eps);
    return w.out;
}

Response decode_response(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    Response resp;
    resp.dims = read_dims(r);
    resp.eps = r.f32s(element_count(resp.dims), "eps");
    r.finish();
    return resp;
}

std::vector<std::uint8_t> encode_error(const std::string &message) {
    Writer w;
    w.u32(std::uint32_t(message.size()));
    w.bytes(message);
    return w.out;
}

std::string decode_error(std::span<const std::uint8_t> payload) {
    Reader r(payload);
    std::string s = r.str("error message");
    r.finish();
    return s;
}

} // namespace ggds::wire
