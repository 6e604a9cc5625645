#pragma once

#include "ggds/common.hpp"
#include "ggds/diffusion.hpp"
#include "ggds/scene.hpp"

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

namespace ggds {

struct RoadPolyline {
    std::vector<Eigen::Vector2d> points;
    double width = 6.0;
};

struct Footprint {
    std::vector<Eigen::Vector2d> polygon;
    double height = 8.0;
};

/// Road map and building footprints in meters; extent = (xmin, ymin, xmax, ymax).
struct MapLayout {
    std::vector<RoadPolyline> roads;
    std::vector<Footprint> buildings;
    Eigen::Vector4d extent{0, 0, 0, 0};

    void validate() const;
    double width() const { return extent[2] - extent[0]; }
    double depth() const { return extent[3] - extent[1]; }
};

/// Axis-aligned voxel lattice. Voxel (i, j, k) spans origin + voxel * [i, i+1) x [j, j+1) x [k, k+1).
struct GridSpec {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();
    double voxel = 0.5;
    std::array<int, 3> dims{1, 1, 1};

    /// Covers the map extent with the ground layer at k = 0 directly below z = 0 and room for
    /// max_height meters above it (max_height <= 0 takes the tallest footprint).
    static GridSpec covering(const MapLayout &map, double voxel, double max_height);
    std::size_t count() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }
    std::size_t index(int i, int j, int k) const { return std::size_t(i) + std::size_t(dims[0]) * (j + std::size_t(dims[1]) * k); }
    Eigen::Vector3d center(int i, int j, int k) const { return origin + voxel * Eigen::Vector3d(i + 0.5, j + 0.5, k + 0.5); }
    void validate() const;
};

/// Dense occupancy, one byte (0 or 1) per voxel, x fastest then y then z.
struct VoxelGrid {
    GridSpec spec;
    std::vector<std::uint8_t> occupancy;

    VoxelGrid() = default;
    explicit VoxelGrid(const GridSpec &s) : spec(s), occupancy(s.count(), 0) {}

    bool at(int i, int j, int k) const { return occupancy[spec.index(i, j, k)] != 0; }
    void set(int i, int j, int k, bool v) { occupancy[spec.index(i, j, k)] = v ? 1 : 0; }
    std::size_t occupied() const;
    bool operator==(const VoxelGrid &o) const;
    void validate() const;
};

struct ExtrudeOptions {
    double jitter_rate = 0.0; ///< probability per candidate cell of facade / vegetation noise
};

struct ExtrudeResult {
    VoxelGrid grid;
    int warnings = 0; ///< footprints clipped against the map extent
};

ExtrudeResult extrude_layout(const MapLayout &map, const GridSpec &spec, std::uint64_t seed,
                             const ExtrudeOptions &opts = {});

/// Voxels a chunk must reproduce verbatim: mask[i] != 0 fixes occupancy[i] to values[i].
struct ChunkConstraint {
    std::vector<std::uint8_t> mask;
    std::vector<std::uint8_t> values;
};

/// Produces one chunk's occupancy conditioned on the map and on already-generated voxels.
class ChunkGenerator {
public:
    virtual ~ChunkGenerator() = default;
    virtual VoxelGrid generate(const MapLayout &map, const GridSpec &chunk, const ChunkConstraint &constraint,
                               std::uint64_t seed) = 0;
};

class ExtrudeGenerator final : public ChunkGenerator {
public:
    explicit ExtrudeGenerator(ExtrudeOptions opts = {}) : opts_(opts) {}
    VoxelGrid generate(const MapLayout &map, const GridSpec &chunk, const ChunkConstraint &constraint,
                       std::uint64_t seed) override;
    int warnings() const { return warnings_; }

private:
    ExtrudeOptions opts_;
    int warnings_ = 0;
};

/// DDIM sampling over occupancy logits with inpainting of the constrained voxels. The latent is
/// the chunk laid out as a (dims_y x dims_x x dims_z) image. With no denoiser supplied, a Gaussian
/// prior centered on the extruded layout's logits stands in for a trained voxel model.
class DenoiserVoxelSampler final : public ChunkGenerator {
public:
    struct Options {
        int steps = 10;
        double logit_scale = 4.0;
        double prior_stddev = 0.5;
        ExtrudeOptions extrude;
    };
    DenoiserVoxelSampler(const DiffusionSchedule &schedule, Options opts);
    DenoiserVoxelSampler(const DiffusionSchedule &schedule, Options opts, Denoiser<double> &denoiser);

    VoxelGrid generate(const MapLayout &map, const GridSpec &chunk, const ChunkConstraint &constraint,
                       std::uint64_t seed) override;

private:
    const DiffusionSchedule *schedule_;
    Options opts_;
    Denoiser<double> *external_ = nullptr;
};

struct ChunkRecord {
    std::array<int, 2> offset{0, 0}; ///< voxel offset of the chunk in the full grid
    VoxelGrid grid;                  ///< chunk as produced (after constraint enforcement)
};

struct ChunkedOptions {
    double chunk_extent = 100.0; ///< meters per chunk side
    int overlap = 8;             ///< voxels shared with the previous chunk along each axis
    bool keep_chunks = false;
};

struct ChunkedResult {
    VoxelGrid grid;
    std::array<int, 2> chunk_dims{0, 0};
    std::vector<ChunkRecord> chunks; ///< filled when keep_chunks is set
};

/// Generates the full grid chunk by chunk (x fastest, then y), each chunk constrained to match
/// every voxel already produced by earlier chunks.
ChunkedResult generate_chunked(ChunkGenerator &generator, const MapLayout &map, const GridSpec &full,
                               const ChunkedOptions &opts, std::uint64_t seed);

/// Marching cubes on the once box-filtered occupancy field; triangles wind so normals point
/// from occupied to empty space. All-empty or all-full grids give an empty mesh.
TriangleMesh extract_surface(const VoxelGrid &grid, double iso = 0.5);

/// Mesh checks used by tests and the CLI.
struct MeshTopology {
    std::size_t vertices = 0, edges = 0, faces = 0;
    std::size_t boundary_edges = 0;   ///< used by exactly one face
    std::size_t nonmanifold_edges = 0; ///< used by more than two faces
    long euler() const { return long(vertices) - long(edges) + long(faces); }
    bool closed_manifold() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};
MeshTopology mesh_topology(const TriangleMesh &mesh);
double signed_volume(const TriangleMesh &mesh);

} // namespace ggds
