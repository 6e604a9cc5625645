#pragma once

#include "ggds/camera.hpp"
#include "ggds/image.hpp"
#include "ggds/layout.hpp"
#include "ggds/scene.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ggds {

/// Base of every load failure.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// Wrong magic bytes or header signature.
class MagicError : public FormatError {
public:
    using FormatError::FormatError;
};
/// Recognized format, unsupported version.
class FormatVersionError : public FormatError {
public:
    using FormatError::FormatError;
};
/// File ends before the declared payload.
class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};
/// Header properties, dimensions or fields do not match what the reader expects.
class PropertyError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Binary little-endian PLY with one vertex per splat: x y z, tu_x..tu_z, tv_x..tv_z, su, sv,
/// opacity, sh_0..sh_{3(L+1)^2-1} as f32. Header comments carry the cap, metadata and the names
/// of the sidecar environment map (PFM) and proxy mesh (OBJ) written next to it.
template <typename Scalar> void save_scene(const std::string &path, const SceneModel<Scalar> &scene);
template <typename Scalar> SceneModel<Scalar> load_scene(const std::string &path);

/// Splats only, no sidecars.
template <typename Scalar> void save_splats_ply(const std::string &path, const std::vector<Splat<Scalar>> &splats);
template <typename Scalar> std::vector<Splat<Scalar>> load_splats_ply(const std::string &path);

constexpr std::uint8_t kVoxelFormatVersion = 1;
/// `LSDV` | version u8 | origin 3 x f64 | voxel f64 | dims 3 x u32 | occupancy bits, LSB first.
void save_voxels(const std::string &path, const VoxelGrid &grid);
VoxelGrid load_voxels(const std::string &path);
std::vector<std::uint8_t> encode_voxels(const VoxelGrid &grid);
VoxelGrid decode_voxels(const std::vector<std::uint8_t> &bytes);

/// 1- or 3-channel PFM, little-endian (negative scale), rows stored bottom to top.
template <typename Scalar> void save_pfm(const std::string &path, const Image<Scalar> &image);
Image<float> load_pfm(const std::string &path);

/// ASCII OBJ with 17 significant digits; loading triangulates polygons as fans.
void save_obj(const std::string &path, const TriangleMesh &mesh);
TriangleMesh load_obj(const std::string &path);

/// 8-bit RGB (3 channels) or gray (1 channel); values clamped to [0, 1] and rounded.
template <typename Scalar> void save_png(const std::string &path, const Image<Scalar> &image);

/// JSON: {"roads": [{"points": [[x, y], ...], "width": w}], "buildings": [{"polygon": [...],
/// "height": h}], "extent": [xmin, ymin, xmax, ymax]}.
MapLayout parse_map_layout(const std::string &json_text);
MapLayout load_map_layout(const std::string &path);
std::string format_map_layout(const MapLayout &map);

/// Ordered camera poses with uniform resolution.
struct TrajectorySpec {
    std::vector<Camera<double>> cameras;
    double fps = 30.0;
    void validate() const;
};

/// JSON: {"fps": f, "poses": [{"position": [x, y, z], "look_at": [x, y, z] | "quaternion": [w, x, y, z],
/// "fov_deg": f, "width": w, "height": h}]}. The quaternion is the camera-to-world rotation.
TrajectorySpec parse_trajectory(const std::string &json_text);
TrajectorySpec load_trajectory(const std::string &path);
std::string format_trajectory(const TrajectorySpec &spec);

struct RunManifest {
    std::string command;
    std::string config;
    std::uint64_t seed = 0;
    std::string git_describe;
    std::string loss_log;
    std::vector<std::string> checkpoints;
    std::vector<std::string> outputs;
};

/// Writes the manifest as JSON, listing only the files that exist at write time.
void write_manifest(const std::string &path, const RunManifest &manifest);

/// Writes to a temporary sibling and renames over `path`, so readers never see a partial file.
void write_file_atomic(const std::string &path, const std::vector<std::uint8_t> &bytes);
std::vector<std::uint8_t> read_file(const std::string &path);

} // namespace ggds
