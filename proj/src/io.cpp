#include "ggds/io.hpp"

#include "ggds/sh.hpp"

#include <json.hpp>
#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace ggds {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_bytes(std::vector<std::uint8_t> &out, const void *p, std::size_t n) {
    const auto *b = static_cast<const std::uint8_t *>(p);
    out.insert(out.end(), b, b + n);
}

// The host is little-endian; these stay correct as long as that holds.
static_assert(std::endian::native == std::endian::little, "little-endian host required");

template <typename T> void put(std::vector<std::uint8_t> &out, T v) { put_bytes(out, &v, sizeof(T)); }

template <typename T> T get(const std::vector<std::uint8_t> &in, std::size_t &pos, const std::string &what) {
    if (pos + sizeof(T) > in.size())
        throw TruncatedError(what + ": file is truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::vector<std::string> ply_property_names(int sh_rows) {
    std::vector<std::string> names = {"x",    "y",    "z",  "tu_x", "tu_y", "tu_z",   "tv_x",
                                      "tv_y", "tv_z", "su", "sv",   "opacity"};
    for (int i = 0; i < 3 * sh_rows; ++i)
        names.push_back("sh_" + std::to_string(i));
    return names;
}

struct PlyHeader {
    std::size_t count = 0;
    int sh_rows = 0;
    std::vector<std::string> comments;
    std::size_t body = 0;
};

PlyHeader parse_ply_header(const std::vector<std::uint8_t> &bytes, const std::string &path) {
    const std::string marker = "end_header\n";
    const std::string head(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 1 << 20));
    if (head.rfind("ply\n", 0) != 0)
        throw MagicError(path + ": not a PLY file");
    const auto end = head.find(marker);
    if (end == std::string::npos)
        throw TruncatedError(path + ": PLY header has no end_header");
    PlyHeader h;
    h.body = end + marker.size();
    std::istringstream in(head.substr(4, end - 4));
    std::string line;
    std::vector<std::string> props;
    bool have_vertex = false;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt, ver;
            ls >> fmt >> ver;
            if (fmt != "binary_little_endian" || ver != "1.0")
                throw FormatVersionError(path + ": unsupported PLY format '" + fmt + " " + ver + "'");
        } else if (word == "comment") {
            h.comments.push_back(line.size() > 8 ? line.substr(8) : std::string());
        } else if (word == "element") {
            std::string name;
            ls >> name >> h.count;
            if (name != "vertex" || have_vertex)
                throw PropertyError(path + ": expected a single vertex element");
            have_vertex = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float")
                throw PropertyError(path + ": property '" + name + "' is not float");
            props.push_back(name);
        } else if (!word.empty()) {
            throw PropertyError(path + ": unexpected PLY header line '" + line + "'");
        }
    }
    if (!have_vertex)
        throw PropertyError(path + ": PLY has no vertex element");
    if (props.size() < 15 || (props.size() - 12) % 3 != 0)
        throw PropertyError(path + ": unexpected splat property count " + std::to_string(props.size()));
    h.sh_rows = int(props.size() - 12) / 3;
    bool valid_rows = false;
    for (int l = 0; l <= kMaxShDegree; ++l)
        valid_rows |= sh_coeff_count(l) == h.sh_rows;
    if (!valid_rows || props != ply_property_names(h.sh_rows))
        throw PropertyError(path + ": splat properties do not match the expected layout");
    return h;
}

template <typename Scalar>
std::vector<std::uint8_t> ply_bytes(const std::vector<Splat<Scalar>> &splats, const std::vector<std::string> &comments) {
    const int rows = splats.empty() ? 1 : int(splats.front().sh.rows());
    for (const auto &s : splats)
        require(s.sh.rows() == rows, "save_splats_ply: splats differ in SH degree");
    std::string header = "ply\nformat binary_little_endian 1.0\n";
    for (const auto &c : comments) {
        require(c.find('\n') == std::string::npos, "PLY comments cannot contain newlines");
        header += "comment " + c + "\n";
    }
    header += "element vertex " + std::to_string(splats.size()) + "\n";
    for (const auto &n : ply_property_names(rows))
        header += "property float " + n + "\n";
    header += "end_header\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + splats.size() * std::size_t(12 + 3 * rows) * 4);
    for (const auto &s : splats) {
        for (int k = 0; k < 3; ++k)
            put(out, float(s.center[k]));
        for (int k = 0; k < 3; ++k)
            put(out, float(s.tangent_u[k]));
        for (int k = 0; k < 3; ++k)
            put(out, float(s.tangent_v[k]));
        put(out, float(s.scale_u));
        put(out, float(s.scale_v));
        put(out, float(s.opacity));
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < 3; ++c)
                put(out, float(s.sh(r, c)));
    }
    return out;
}

template <typename Scalar>
std::vector<Splat<Scalar>> ply_splats(const std::vector<std::uint8_t> &bytes, const PlyHeader &h, const std::string &path) {
    const std::size_t per = std::size_t(12 + 3 * h.sh_rows) * 4;
    if (bytes.size() < h.body + h.count * per)
        throw TruncatedError(path + ": PLY body is truncated");
    if (bytes.size() > h.body + h.count * per)
        throw PropertyError(path + ": PLY has trailing bytes after the vertex data");
    std::vector<Splat<Scalar>> splats(h.count);
    std::size_t pos = h.body;
    for (auto &s : splats) {
        for (int k = 0; k < 3; ++k)
            s.center[k] = Scalar(get<float>(bytes, pos, path));
        for (int k = 0; k < 3; ++k)
            s.tangent_u[k] = Scalar(get<float>(bytes, pos, path));
        for (int k = 0; k < 3; ++k)
            s.tangent_v[k] = Scalar(get<float>(bytes, pos, path));
        s.scale_u = Scalar(get<float>(bytes, pos, path));
        s.scale_v = Scalar(get<float>(bytes, pos, path));
        s.opacity = Scalar(get<float>(bytes, pos, path));
        s.sh = typename Splat<Scalar>::ShBlock(h.sh_rows, 3);
        for (int r = 0; r < h.sh_rows; ++r)
            for (int c = 0; c < 3; ++c)
                s.sh(r, c) = Scalar(get<float>(bytes, pos, path));
    }
    return splats;
}

template <typename Scalar> std::vector<std::uint8_t> pfm_bytes(const Image<Scalar> &img) {
    require(img.channels == 1 || img.channels == 3, "save_pfm: image needs 1 or 3 channels");
    require(!img.empty(), "save_pfm: empty image");
    const std::string header =
        std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                put(out, float(img(x, y, c)));
    return out;
}

Image<float> parse_pfm(const std::vector<std::uint8_t> &bytes, const std::string &path) {
    std::size_t pos = 0;
    auto token = [&]() {
        while (pos < bytes.size() && std::isspace(bytes[pos]))
            ++pos;
        std::string t;
        while (pos < bytes.size() && !std::isspace(bytes[pos]))
            t += char(bytes[pos++]);
        if (t.empty())
            throw TruncatedError(path + ": PFM header is truncated");
        return t;
    };
    const std::string magic = token();
    int channels;
    if (magic == "PF")
        channels = 3;
    else if (magic == "Pf")
        channels = 1;
    else
        throw MagicError(path + ": not a PFM file");
    int w, h;
    double scale;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        scale = std::stod(token());
    } catch (const std::invalid_argument &) {
        throw PropertyError(path + ": malformed PFM header");
    }
    if (w <= 0 || h <= 0 || scale == 0.0)
        throw PropertyError(path + ": PFM dimensions or scale invalid");
    ++pos; // single whitespace byte before the raster
    const bool swap = scale > 0.0;
    const std::size_t need = std::size_t(w) * h * channels * 4;
    if (bytes.size() < pos + need)
        throw TruncatedError(path + ": PFM raster is truncated");
    Image<float> img(w, h, channels);
    for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                std::uint32_t u;
                std::memcpy(&u, bytes.data() + pos, 4);
                pos += 4;
                if (swap)
                    u = __builtin_bswap32(u);
                float f;
                std::memcpy(&f, &u, 4);
                img(x, y, c) = f;
            }
    return img;
}

std::string obj_text(const TriangleMesh &mesh) {
    std::string out;
    char buf[160];
    for (const auto &v : mesh.vertices) {
        std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x(), v.y(), v.z());
        out += buf;
    }
    for (const auto &f : mesh.faces) {
        std::snprintf(buf, sizeof(buf), "f %d %d %d\n", f[0] + 1, f[1] + 1, f[2] + 1);
        out += buf;
    }
    return out;
}

std::string sidecar(const std::string &ply_path, const char *suffix) {
    const fs::path p(ply_path);
    return p.stem().string() + suffix;
}

Eigen::Vector2d vec2(const json &j) {
    if (!j.is_array() || j.size() != 2)
        throw PropertyError("expected a 2-element array");
    return {j[0].get<double>(), j[1].get<double>()};
}

Eigen::Vector3d vec3(const json &j) {
    if (!j.is_array() || j.size() != 3)
        throw PropertyError("expected a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

std::vector<std::uint8_t> text_bytes(const std::string &s) { return {s.begin(), s.end()}; }

} // namespace

std::vector<std::uint8_t> read_file(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::string &path, const std::vector<std::uint8_t> &bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw std::runtime_error("cannot write '" + path + "'");
        out.write(reinterpret_cast<const char *>(bytes.data()), std::streamsize(bytes.size()));
        if (!out)
            throw std::runtime_error("write failed for '" + path + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec)
        throw std::runtime_error("cannot move '" + tmp + "' to '" + path + "': " + ec.message());
}

template <typename Scalar> void save_splats_ply(const std::string &path, const std::vector<Splat<Scalar>> &splats) {
    write_file_atomic(path, ply_bytes(splats, {}));
}

template <typename Scalar> std::vector<Splat<Scalar>> load_splats_ply(const std::string &path) {
    const auto bytes = read_file(path);
    return ply_splats<Scalar>(bytes, parse_ply_header(bytes, path), path);
}

template <typename Scalar> void save_scene(const std::string &path, const SceneModel<Scalar> &scene) {
    const fs::path dir = fs::path(path).parent_path();
    std::vector<std::string> comments = {"ggds scene", "cap " + std::to_string(scene.cap)};
    const std::string env_name = sidecar(path, ".env.pfm");
    write_file_atomic((dir / env_name).string(), pfm_bytes(scene.env.pixels));
    comments.push_back("env " + env_name);
    if (!scene.proxy.empty()) {
        const std::string proxy_name = sidecar(path, ".proxy.obj");
        write_file_atomic((dir / proxy_name).string(), text_bytes(obj_text(scene.proxy)));
        comments.push_back("proxy " + proxy_name);
    }
    for (const auto &[k, v] : scene.metadata) {
        require(!k.empty() && k.find_first_of(" \t\n") == std::string::npos, "metadata keys cannot contain whitespace");
        comments.push_back("meta " + k + " " + v);
    }
    write_file_atomic(path, ply_bytes(scene.splats, comments));
}

template <typename Scalar> SceneModel<Scalar> load_scene(const std::string &path) {
    const auto bytes = read_file(path);
    const PlyHeader h = parse_ply_header(bytes, path);
    SceneModel<Scalar> scene;
    scene.splats = ply_splats<Scalar>(bytes, h, path);
    const fs::path dir = fs::path(path).parent_path();
    for (const auto &c : h.comments) {
        const auto sp = c.find(' ');
        const std::string key = c.substr(0, sp);
        const std::string rest = sp == std::string::npos ? std::string() : c.substr(sp + 1);
        if (key == "cap") {
            scene.cap = std::stoull(rest);
        } else if (key == "env") {
            scene.env = EnvironmentMap<Scalar>(load_pfm((dir / rest).string()).template cast<Scalar>());
        } else if (key == "proxy") {
            scene.proxy = load_obj((dir / rest).string());
        } else if (key == "meta") {
            const auto s2 = rest.find(' ');
            scene.metadata[rest.substr(0, s2)] = s2 == std::string::npos ? std::string() : rest.substr(s2 + 1);
        }
    }
    return scene;
}

std::vector<std::uint8_t> encode_voxels(const VoxelGrid &grid) {
    grid.validate();
    std::vector<std::uint8_t> out = {'L', 'S', 'D', 'V', kVoxelFormatVersion};
    for (int k = 0; k < 3; ++k)
        put(out, grid.spec.origin[k]);
    put(out, grid.spec.voxel);
    for (int k = 0; k < 3; ++k)
        put(out, std::uint32_t(grid.spec.dims[k]));
    std::vector<std::uint8_t> bits((grid.occupancy.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < grid.occupancy.size(); ++i)
        if (grid.occupancy[i])
            bits[i / 8] |= std::uint8_t(1u << (i % 8));
    out.insert(out.end(), bits.begin(), bits.end());
    return out;
}

VoxelGrid decode_voxels(const std::vector<std::uint8_t> &bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "LSDV", 4) != 0)
        throw MagicError("voxel file does not start with LSDV");
    std::size_t pos = 4;
    const auto version = get<std::uint8_t>(bytes, pos, "voxel file");
    if (version != kVoxelFormatVersion)
        throw FormatVersionError("unsupported voxel file version " + std::to_string(version));
    GridSpec spec;
    for (int k = 0; k < 3; ++k)
        spec.origin[k] = get<double>(bytes, pos, "voxel file");
    spec.voxel = get<double>(bytes, pos, "voxel file");
    for (int k = 0; k < 3; ++k) {
        const auto d = get<std::uint32_t>(bytes, pos, "voxel file");
        if (d == 0 || d > 1u << 20)
            throw PropertyError("voxel file has invalid dims");
        spec.dims[k] = int(d);
    }
    if (!(spec.voxel > 0.0) || !std::isfinite(spec.voxel))
        throw PropertyError("voxel file has invalid voxel size");
    VoxelGrid grid(spec);
    const std::size_t nbytes = (grid.occupancy.size() + 7) / 8;
    if (bytes.size() < pos + nbytes)
        throw TruncatedError("voxel file: occupancy bits are truncated");
    if (bytes.size() > pos + nbytes)
        throw PropertyError("voxel file has trailing bytes");
    for (std::size_t i = 0; i < grid.occupancy.size(); ++i)
        grid.occupancy[i] = (bytes[pos + i / 8] >> (i % 8)) & 1u;
    return grid;
}

void save_voxels(const std::string &path, const VoxelGrid &grid) { write_file_atomic(path, encode_voxels(grid)); }

VoxelGrid load_voxels(const std::string &path) {
    try {
        return decode_voxels(read_file(path));
    } catch (const MagicError &e) {
        throw MagicError(path + ": " + e.what());
    } catch (const FormatVersionError &e) {
        throw FormatVersionError(path + ": " + e.what());
    } catch (const TruncatedError &e) {
        throw TruncatedError(path + ": " + e.what());
    } catch (const PropertyError &e) {
        throw PropertyError(path + ": " + e.what());
    }
}

template <typename Scalar> void save_pfm(const std::string &path, const Image<Scalar> &image) {
    write_file_atomic(path, pfm_bytes(image));
}

Image<float> load_pfm(const std::string &path) { return parse_pfm(read_file(path), path); }

void save_obj(const std::string &path, const TriangleMesh &mesh) {
    mesh.validate();
    write_file_atomic(path, text_bytes(obj_text(mesh)));
}

TriangleMesh load_obj(const std::string &path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open '" + path + "'");
    TriangleMesh mesh;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Eigen::Vector3d v;
            if (!(ls >> v.x() >> v.y() >> v.z()))
                throw PropertyError(path + ":" + std::to_string(lineno) + ": malformed vertex");
            mesh.vertices.push_back(v);
        } else if (tag == "f") {
            std::vector<int> idx;
            std::string tok;
            while (ls >> tok) {
                int i;
                try {
                    i = std::stoi(tok.substr(0, tok.find('/')));
                } catch (const std::exception &) {
                    throw PropertyError(path + ":" + std::to_string(lineno) + ": malformed face index");
                }
                idx.push_back(i > 0 ? i - 1 : int(mesh.vertices.size()) + i);
            }
            if (idx.size() < 3)
                throw PropertyError(path + ":" + std::to_string(lineno) + ": face needs 3 vertices");
            for (std::size_t k = 1; k + 1 < idx.size(); ++k)
                mesh.faces.emplace_back(idx[0], idx[k], idx[k + 1]);
        }
    }
    try {
        mesh.validate();
    } catch (const InvalidArgument &e) {
        throw PropertyError(path + ": " + e.what());
    }
    return mesh;
}

template <typename Scalar> void save_png(const std::string &path, const Image<Scalar> &image) {
    require(image.channels == 1 || image.channels == 3, "save_png: image needs 1 or 3 channels");
    require(!image.empty(), "save_png: empty image");
    std::vector<std::uint8_t> px(std::size_t(image.size()));
    for (Eigen::Index i = 0; i < image.size(); ++i) {
        const double v = std::clamp(double(image.data[i]), 0.0, 1.0);
        px[std::size_t(i)] = std::uint8_t(std::lround(v * 255.0));
    }
    png_image png{};
    png.version = PNG_IMAGE_VERSION;
    png.width = png_uint_32(image.width);
    png.height = png_uint_32(image.height);
    png.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    const std::string tmp = path + ".tmp";
    if (!png_image_write_to_file(&png, tmp.c_str(), 0, px.data(), 0, nullptr))
        throw std::runtime_error("cannot write PNG '" + path + "': " + png.message);
    fs::rename(tmp, path);
}

MapLayout parse_map_layout(const std::string &text) {
    try {
        const json j = json::parse(text);
        MapLayout m;
        const auto &e = j.at("extent");
        if (!e.is_array() || e.size() != 4)
            throw PropertyError("extent must have 4 numbers");
        m.extent = Eigen::Vector4d(e[0].get<double>(), e[1].get<double>(), e[2].get<double>(), e[3].get<double>());
        for (const auto &r : j.value("roads", json::array())) {
            RoadPolyline road;
            for (const auto &p : r.at("points"))
                road.points.push_back(vec2(p));
            road.width = r.at("width").get<double>();
            m.roads.push_back(std::move(road));
        }
        for (const auto &b : j.value("buildings", json::array())) {
            Footprint f;
            for (const auto &p : b.at("polygon"))
                f.polygon.push_back(vec2(p));
            f.height = b.at("height").get<double>();
            m.buildings.push_back(std::move(f));
        }
        m.validate();
        return m;
    } catch (const json::exception &e) {
        throw PropertyError(std::string("map layout: ") + e.what());
    } catch (const InvalidArgument &e) {
        throw PropertyError(e.what());
    }
}

MapLayout load_map_layout(const std::string &path) {
    const auto bytes = read_file(path);
    return parse_map_layout(std::string(bytes.begin(), bytes.end()));
}

std::string format_map_layout(const MapLayout &m) {
    json j;
    j["extent"] = {m.extent[0], m.extent[1], m.extent[2], m.extent[3]};
    j["roads"] = json::array();
    for (const auto &r : m.roads) {
        json pts = json::array();
        for (const auto &p : r.points)
            pts.push_back({p.x(), p.y()});
        j["roads"].push_back({{"points", pts}, {"width", r.width}});
    }
    j["buildings"] = json::array();
    for (const auto &b : m.buildings) {
        json pts = json::array();
        for (const auto &p : b.polygon)
            pts.push_back({p.x(), p.y()});
        j["buildings"].push_back({{"polygon", pts}, {"height", b.height}});
    }
    return j.dump(2) + "\n";
}

void TrajectorySpec::validate() const {
    require(!cameras.empty(), "trajectory needs at least one pose");
    require(fps > 0.0 && std::isfinite(fps), "trajectory fps must be positive");
    for (const auto &c : cameras) {
        c.validate();
        require(c.width == cameras.front().width && c.height == cameras.front().height,
                "trajectory resolutions must be uniform");
    }
}

TrajectorySpec parse_trajectory(const std::string &text) {
    try {
        const json j = json::parse(text);
        TrajectorySpec t;
        t.fps = j.value("fps", 30.0);
        for (const auto &p : j.at("poses")) {
            const Eigen::Vector3d pos = vec3(p.at("position"));
            const double fov = p.at("fov_deg").get<double>() * pi_v<double> / 180.0;
            const int w = p.at("width").get<int>(), h = p.at("height").get<int>();
            Camera<double> cam;
            if (p.contains("look_at")) {
                cam = Camera<double>::look_at(pos, vec3(p.at("look_at")), fov, w, h);
            } else if (p.contains("quaternion")) {
                const auto &q = p.at("quaternion");
                if (!q.is_array() || q.size() != 4)
                    throw PropertyError("quaternion must have 4 numbers");
                const Eigen::Quaterniond qq(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                                            q[3].get<double>());
                require(qq.norm() > 0.0, "quaternion must be nonzero");
                cam.position = pos;
                cam.rotation = qq.normalized().toRotationMatrix().transpose();
                cam.fov_y = fov;
                cam.width = w;
                cam.height = h;
            } else {
                throw PropertyError("pose needs look_at or quaternion");
            }
            t.cameras.push_back(cam);
        }
        t.validate();
        return t;
    } catch (const json::exception &e) {
        throw PropertyError(std::string("trajectory: ") + e.what());
    } catch (const InvalidArgument &e) {
        throw PropertyError(std::string("trajectory: ") + e.what());
    }
}

TrajectorySpec load_trajectory(const std::string &path) {
    const auto bytes = read_file(path);
    return parse_trajectory(std::string(bytes.begin(), bytes.end()));
}

std::string format_trajectory(const TrajectorySpec &t) {
    json j;
    j["fps"] = t.fps;
    j["poses"] = json::array();
    for (const auto &c : t.cameras) {
        const Eigen::Quaterniond q(Eigen::Matrix3d(c.rotation.transpose()));
        j["poses"].push_back({{"position", {c.position.x(), c.position.y(), c.position.z()}},
                              {"quaternion", {q.w(), q.x(), q.y(), q.z()}},
                              {"fov_deg", c.fov_y * 180.0 / pi_v<double>},
                              {"width", c.width},
                              {"height", c.height}});
    }
    return j.dump(2) + "\n";
}

void write_manifest(const std::string &path, const RunManifest &m) {
    auto existing = [](const std::vector<std::string> &files) {
        json a = json::array();
        for (const auto &f : files)
            if (fs::exists(f))
                a.push_back(f);
        return a;
    };
    json j;
    j["command"] = m.command;
    j["seed"] = m.seed;
    j["git_describe"] = m.git_describe;
    j["config"] = m.config;
    if (!m.loss_log.empty() && fs::exists(m.loss_log))
        j["loss_log"] = m.loss_log;
    j["checkpoints"] = existing(m.checkpoints);
    j["outputs"] = existing(m.outputs);
    write_file_atomic(path, text_bytes(j.dump(2) + "\n"));
}

#define GGDS_INSTANTIATE_IO(S)                                                                                    \
    template void save_scene<S>(const std::string &, const SceneModel<S> &);                                      \
    template SceneModel<S> load_scene<S>(const std::string &);                                                    \
    template void save_splats_ply<S>(const std::string &, const std::vector<Splat<S>> &);                        \
    template std::vector<Splat<S>> load_splats_ply<S>(const std::string &);                                       \
    template void save_pfm<S>(const std::string &, const Image<S> &);                                             \
    template void save_png<S>(const std::string &, const Image<S> &);

GGDS_INSTANTIATE_IO(float)
GGDS_INSTANTIATE_IO(double)

} // namespace ggds
