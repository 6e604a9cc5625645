#include "ggds/layout.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ggds;

namespace {

MapLayout square_map(double size) {
    MapLayout m;
    m.extent = Eigen::Vector4d(0, 0, size, size);
    return m;
}

Footprint rect(double x0, double y0, double x1, double y1, double h) {
    return {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, h};
}

VoxelGrid sphere_grid(double radius_vox, double voxel) {
    GridSpec s;
    const int n = int(2 * radius_vox) + 6;
    s.dims = {n, n, n};
    s.voxel = voxel;
    VoxelGrid g(s);
    const double c = 0.5 * n;
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j)
            for (int i = 0; i < n; ++i) {
                const Eigen::Vector3d p(i + 0.5 - c, j + 0.5 - c, k + 0.5 - c);
                g.set(i, j, k, p.norm() <= radius_vox);
            }
    return g;
}

void expect_valid_mesh(const TriangleMesh &mesh) {
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        for (int e = 0; e < 3; ++e) {
            ASSERT_GE(mesh.faces[f][e], 0);
            ASSERT_LT(std::size_t(mesh.faces[f][e]), mesh.vertices.size());
        }
        EXPECT_GT(mesh.face_area(f), 0.0);
    }
}

} // namespace

TEST(Extrude, EmptyMapIsGroundPlaneOnly) {
    const MapLayout m = square_map(20);
    const GridSpec s = GridSpec::covering(m, 1.0, 5.0);
    const auto r = extrude_layout(m, s, 7);
    EXPECT_EQ(r.grid.occupied(), std::size_t(s.dims[0] * s.dims[1]));
    for (int j = 0; j < s.dims[1]; ++j)
        for (int i = 0; i < s.dims[0]; ++i)
            EXPECT_TRUE(r.grid.at(i, j, 0));
    EXPECT_EQ(r.warnings, 0);
}

TEST(Extrude, RectangularFootprintMatchesExtrusionArithmetic) {
    MapLayout m = square_map(30);
    m.buildings.push_back(rect(5, 5, 15, 15, 8));
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto g = extrude_layout(m, s, 1).grid;
    std::size_t above = 0;
    for (int k = 1; k < s.dims[2]; ++k)
        for (int j = 0; j < s.dims[1]; ++j)
            for (int i = 0; i < s.dims[0]; ++i) {
                const Eigen::Vector3d c = s.center(i, j, k);
                const bool expect = c.x() > 5 && c.x() < 15 && c.y() > 5 && c.y() < 15 && c.z() > 0 && c.z() < 8;
                EXPECT_EQ(g.at(i, j, k), expect) << i << "," << j << "," << k;
                above += g.at(i, j, k);
            }
    EXPECT_EQ(above, 10u * 10u * 8u);
}

TEST(Extrude, FractionalHeightRoundsUpToWholeLayers) {
    MapLayout m = square_map(10);
    m.buildings.push_back(rect(0, 0, 2, 2, 2.1));
    const auto g = extrude_layout(m, GridSpec::covering(m, 1.0, 0.0), 1).grid;
    EXPECT_TRUE(g.at(0, 0, 3));
    EXPECT_FALSE(g.at(0, 0, 4));
}

TEST(Extrude, RoadCorridorHasNothingAboveGround) {
    MapLayout m = square_map(40);
    m.buildings.push_back(rect(0, 0, 40, 40, 6)); // block covering the whole map
    m.roads.push_back({{{0, 20}, {40, 20}}, 6.0});
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    ExtrudeOptions jitter;
    jitter.jitter_rate = 0.5;
    const auto g = extrude_layout(m, s, 3, jitter).grid;
    for (int j = 0; j < s.dims[1]; ++j)
        for (int i = 0; i < s.dims[0]; ++i) {
            const Eigen::Vector3d c = s.center(i, j, 0);
            const bool corridor = std::abs(c.y() - 20.0) <= 3.0;
            EXPECT_TRUE(g.at(i, j, 0));
            for (int k = 1; k < s.dims[2]; ++k)
                if (corridor)
                    EXPECT_FALSE(g.at(i, j, k)) << i << "," << j << "," << k;
            if (!corridor)
                EXPECT_TRUE(g.at(i, j, 1));
        }
}

TEST(Extrude, DiagonalRoadUsesPointSegmentDistance) {
    MapLayout m = square_map(20);
    m.buildings.push_back(rect(0, 0, 20, 20, 3));
    m.roads.push_back({{{0, 0}, {20, 20}}, 4.0});
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto g = extrude_layout(m, s, 0).grid;
    for (int j = 0; j < s.dims[1]; ++j)
        for (int i = 0; i < s.dims[0]; ++i) {
            const Eigen::Vector2d c = s.center(i, j, 1).head<2>();
            const double dist = std::abs(c.x() - c.y()) / std::sqrt(2.0);
            EXPECT_EQ(g.at(i, j, 1), dist > 2.0) << i << "," << j;
        }
}

TEST(Extrude, FootprintOutsideExtentIsClippedWithWarning) {
    MapLayout m = square_map(10);
    m.buildings.push_back(rect(8, 8, 14, 14, 2));
    m.buildings.push_back(rect(1, 1, 3, 3, 2));
    GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    s.dims[0] += 4; // grid overhangs the extent
    s.dims[1] += 4;
    const auto r = extrude_layout(m, s, 0);
    EXPECT_EQ(r.warnings, 1);
    for (int j = 0; j < s.dims[1]; ++j)
        for (int i = 0; i < s.dims[0]; ++i)
            if (i >= 10 || j >= 10)
                for (int k = 0; k < s.dims[2]; ++k)
                    EXPECT_FALSE(r.grid.at(i, j, k));
    EXPECT_TRUE(r.grid.at(9, 9, 1));
}

TEST(Extrude, WithoutJitterSeedDoesNotMatter) {
    MapLayout m = square_map(20);
    m.buildings.push_back(rect(2, 3, 9, 11, 5));
    m.roads.push_back({{{0, 15}, {20, 15}}, 3.0});
    const GridSpec s = GridSpec::covering(m, 0.5, 0.0);
    EXPECT_TRUE(extrude_layout(m, s, 1).grid == extrude_layout(m, s, 99).grid);
}

TEST(Extrude, JitterIsSeededAndNearItsRate) {
    const MapLayout m = square_map(50);
    const GridSpec s = GridSpec::covering(m, 0.5, 4.0);
    ExtrudeOptions o;
    o.jitter_rate = 0.2;
    const auto a = extrude_layout(m, s, 5, o).grid;
    EXPECT_TRUE(a == extrude_layout(m, s, 5, o).grid);
    EXPECT_FALSE(a == extrude_layout(m, s, 6, o).grid);
    std::size_t layer1 = 0;
    for (int j = 0; j < s.dims[1]; ++j)
        for (int i = 0; i < s.dims[0]; ++i)
            layer1 += a.at(i, j, 1);
    const double rate = double(layer1) / (s.dims[0] * s.dims[1]);
    EXPECT_NEAR(rate, 0.2, 0.02);
}

TEST(Extrude, RejectsInvalidMaps) {
    MapLayout m = square_map(10);
    m.buildings.push_back({{{0, 0}, {4, 4}, {4, 0}, {0, 4}}, 3}); // bow tie
    EXPECT_THROW(GridSpec::covering(m, 1.0, 0.0), InvalidArgument);
    m = square_map(10);
    m.roads.push_back({{{0, 0}, {1, 1}}, -1});
    EXPECT_THROW(m.validate(), InvalidArgument);
    m = square_map(10);
    m.buildings.push_back(rect(0, 0, 1, 1, 0));
    EXPECT_THROW(m.validate(), InvalidArgument);
    EXPECT_THROW(GridSpec::covering(square_map(10), 0.0, 1.0), InvalidArgument);
}

TEST(Chunked, SingleChunkEqualsGeneratorOnFullMap) {
    MapLayout m = square_map(40);
    m.buildings.push_back(rect(5, 5, 20, 12, 6));
    const GridSpec s = GridSpec::covering(m, 0.5, 0.0);
    ExtrudeOptions o;
    o.jitter_rate = 0.1;
    ExtrudeGenerator gen(o);
    ChunkedOptions co;
    co.chunk_extent = 100.0; // larger than the map: single-chunk fallback
    const auto r = generate_chunked(gen, m, s, co, 11);
    EXPECT_TRUE(r.grid == extrude_layout(m, s, 11, o).grid);
    EXPECT_EQ(r.chunk_dims[0], s.dims[0]);
}

TEST(Chunked, HundredMeterChunksAtHalfMeterAre200Voxels) {
    const MapLayout m = square_map(300);
    const GridSpec s = GridSpec::covering(m, 0.5, 2.0);
    ExtrudeGenerator gen;
    ChunkedOptions co;
    co.chunk_extent = 100.0;
    co.overlap = 8;
    co.keep_chunks = true;
    const auto r = generate_chunked(gen, m, s, co, 0);
    EXPECT_EQ(r.chunk_dims[0], 200);
    EXPECT_EQ(r.chunk_dims[1], 200);
    for (const auto &c : r.chunks) {
        EXPECT_EQ(c.grid.spec.dims[0], 200);
        EXPECT_EQ(c.grid.spec.dims[1], 200);
    }
    // 600 voxels with stride 192: offsets 0, 192, 384, 400 (last clamped).
    EXPECT_EQ(r.chunks.size(), 16u);
    EXPECT_EQ(r.chunks.back().offset[0], 400);
}

TEST(Chunked, ChunkedExtrusionEqualsWholeMapExtrusion) {
    MapLayout m = square_map(60);
    m.buildings.push_back(rect(10, 10, 35, 22, 7));
    m.roads.push_back({{{0, 30}, {60, 40}}, 5.0});
    const GridSpec s = GridSpec::covering(m, 0.5, 0.0);
    ExtrudeOptions o;
    o.jitter_rate = 0.15;
    ExtrudeGenerator gen(o);
    ChunkedOptions co;
    co.chunk_extent = 25.0;
    co.overlap = 6;
    EXPECT_TRUE(generate_chunked(gen, m, s, co, 4).grid == extrude_layout(m, s, 4, o).grid);
}

TEST(Chunked, OverlapSlabsAreBitIdenticalUnderSampler) {
    MapLayout m = square_map(30);
    m.buildings.push_back(rect(4, 4, 26, 12, 3));
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto schedule = make_linear_schedule(1000);
    DenoiserVoxelSampler::Options so;
    so.prior_stddev = 3.0; // wide prior so chunks disagree unless constrained
    DenoiserVoxelSampler gen(schedule, so);
    ChunkedOptions co;
    co.chunk_extent = 16.0;
    co.overlap = 8;
    co.keep_chunks = true;
    const auto r = generate_chunked(gen, m, s, co, 21);
    ASSERT_GE(r.chunks.size(), 4u);
    std::size_t compared = 0;
    for (std::size_t a = 0; a < r.chunks.size(); ++a)
        for (std::size_t b = a + 1; b < r.chunks.size(); ++b) {
            const auto &A = r.chunks[a];
            const auto &B = r.chunks[b];
            for (int k = 0; k < s.dims[2]; ++k)
                for (int gy = 0; gy < s.dims[1]; ++gy)
                    for (int gx = 0; gx < s.dims[0]; ++gx) {
                        const int ax = gx - A.offset[0], ay = gy - A.offset[1];
                        const int bx = gx - B.offset[0], by = gy - B.offset[1];
                        const auto &da = A.grid.spec.dims;
                        if (ax < 0 || ay < 0 || bx < 0 || by < 0 || ax >= da[0] || ay >= da[1] || bx >= da[0] ||
                            by >= da[1])
                            continue;
                        ASSERT_EQ(A.grid.at(ax, ay, k), B.grid.at(bx, by, k));
                        ++compared;
                    }
        }
    EXPECT_GT(compared, 0u);
    // Each stitched voxel comes from the chunk that last covered it, and all of them agree.
    for (const auto &c : r.chunks)
        for (int k = 0; k < s.dims[2]; ++k)
            for (int j = 0; j < c.grid.spec.dims[1]; ++j)
                for (int i = 0; i < c.grid.spec.dims[0]; ++i)
                    ASSERT_EQ(c.grid.at(i, j, k), r.grid.at(c.offset[0] + i, c.offset[1] + j, k));
}

TEST(Chunked, SamplerOutputVariesWithSeedButRepeatsForSameSeed) {
    MapLayout m = square_map(20);
    m.buildings.push_back(rect(3, 3, 12, 9, 4));
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto schedule = make_linear_schedule(1000);
    DenoiserVoxelSampler::Options so;
    so.prior_stddev = 3.0;
    DenoiserVoxelSampler gen(schedule, so);
    ChunkedOptions co;
    co.chunk_extent = 12.0;
    co.overlap = 4;
    const auto a = generate_chunked(gen, m, s, co, 8).grid;
    EXPECT_TRUE(a == generate_chunked(gen, m, s, co, 8).grid);
    EXPECT_FALSE(a == generate_chunked(gen, m, s, co, 9).grid);
}

TEST(Chunked, NarrowPriorReproducesTheLayout) {
    MapLayout m = square_map(20);
    m.buildings.push_back(rect(3, 3, 12, 9, 4));
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto schedule = make_linear_schedule(1000);
    DenoiserVoxelSampler::Options so;
    so.prior_stddev = 0.05;
    DenoiserVoxelSampler gen(schedule, so);
    ChunkedOptions co;
    co.chunk_extent = 12.0;
    co.overlap = 4;
    EXPECT_TRUE(generate_chunked(gen, m, s, co, 2).grid == extrude_layout(m, s, 2).grid);
}

TEST(Chunked, RejectsBadOverlap) {
    const MapLayout m = square_map(40);
    const GridSpec s = GridSpec::covering(m, 1.0, 2.0);
    ExtrudeGenerator gen;
    ChunkedOptions co;
    co.chunk_extent = 10.0;
    co.overlap = 0;
    EXPECT_THROW(generate_chunked(gen, m, s, co, 0), InvalidArgument);
    co.overlap = -3;
    EXPECT_THROW(generate_chunked(gen, m, s, co, 0), InvalidArgument);
    co.overlap = 10;
    EXPECT_THROW(generate_chunked(gen, m, s, co, 0), InvalidArgument);
    co.overlap = 9;
    EXPECT_NO_THROW(generate_chunked(gen, m, s, co, 0));
}

TEST(Chunked, DenoiserFailureCarriesStep) {
    struct Broken : Denoiser<double> {
        Image<double> predict(const Image<double> &, int, double, const Conditioning<double> &) override {
            throw std::runtime_error("boom");
        }
    } broken;
    const MapLayout m = square_map(8);
    const auto schedule = make_linear_schedule(100);
    DenoiserVoxelSampler gen(schedule, {}, broken);
    ChunkedOptions co;
    try {
        generate_chunked(gen, m, GridSpec::covering(m, 1.0, 2.0), co, 0);
        FAIL() << "expected DenoiserStepError";
    } catch (const DenoiserStepError &e) {
        EXPECT_EQ(e.step, 0);
        EXPECT_EQ(e.level, 100);
    }
}

TEST(Surface, EmptyAndFullGridsGiveEmptyMesh) {
    GridSpec s;
    s.dims = {4, 4, 4};
    VoxelGrid g(s);
    EXPECT_TRUE(extract_surface(g).empty());
    std::fill(g.occupancy.begin(), g.occupancy.end(), 1);
    EXPECT_TRUE(extract_surface(g).empty());
}

TEST(Surface, SingleVoxelIsClosedSphereTopology) {
    GridSpec s;
    s.dims = {3, 3, 3};
    VoxelGrid g(s);
    g.set(1, 1, 1, true);
    const TriangleMesh mesh = extract_surface(g, 0.02);
    ASSERT_FALSE(mesh.empty());
    expect_valid_mesh(mesh);
    const auto topo = mesh_topology(mesh);
    EXPECT_TRUE(topo.closed_manifold());
    EXPECT_EQ(topo.euler(), 2);
    EXPECT_GT(signed_volume(mesh), 0.0);
}

TEST(Surface, NormalsPointFromOccupiedToEmpty) {
    const VoxelGrid g = sphere_grid(5, 1.0);
    const TriangleMesh mesh = extract_surface(g);
    const double c = 0.5 * g.spec.dims[0];
    std::size_t outward = 0;
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const Eigen::Vector3d centroid = (mesh.vertices[mesh.faces[f][0]] + mesh.vertices[mesh.faces[f][1]] +
                                          mesh.vertices[mesh.faces[f][2]]) / 3.0;
        outward += mesh.face_normal(f).dot(centroid - Eigen::Vector3d::Constant(c)) > 0.0;
    }
    EXPECT_EQ(outward, mesh.faces.size());
}

TEST(Surface, SphereAreaMatchesAnalytic) {
    for (double voxel : {1.0, 0.5}) {
        const VoxelGrid g = sphere_grid(10, voxel);
        const TriangleMesh mesh = extract_surface(g);
        expect_valid_mesh(mesh);
        EXPECT_TRUE(mesh_topology(mesh).closed_manifold());
        EXPECT_EQ(mesh_topology(mesh).euler(), 2);
        const double analytic = 4.0 * pi_v<double> * 100.0 * voxel * voxel;
        EXPECT_LT(std::abs(mesh.surface_area() - analytic) / analytic, 0.15);
        const double vol = 4.0 / 3.0 * pi_v<double> * 1000.0 * voxel * voxel * voxel;
        EXPECT_NEAR(signed_volume(mesh) / vol, 1.0, 0.15);
    }
}

TEST(Surface, RandomBlobsAreWatertightAndNondegenerate) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        GridSpec s;
        s.dims = {9, 8, 7};
        VoxelGrid g(s);
        std::bernoulli_distribution coin(0.35);
        for (auto &v : g.occupancy)
            v = coin(rng);
        const TriangleMesh mesh = extract_surface(g, 0.5);
        expect_valid_mesh(mesh);
        const auto topo = mesh_topology(mesh);
        EXPECT_EQ(topo.nonmanifold_edges, 0u);
        EXPECT_EQ(topo.boundary_edges, 0u);
    }
}

TEST(Surface, LayoutMeshEnclosesBuildingVolume) {
    MapLayout m = square_map(20);
    m.buildings.push_back(rect(5, 5, 15, 15, 8));
    const GridSpec s = GridSpec::covering(m, 1.0, 0.0);
    const auto g = extrude_layout(m, s, 0).grid;
    const TriangleMesh mesh = extract_surface(g);
    expect_valid_mesh(mesh);
    EXPECT_TRUE(mesh_topology(mesh).closed_manifold());
    const double solid = double(g.occupied());
    EXPECT_NEAR(signed_volume(mesh) / solid, 1.0, 0.3);
}

TEST(Surface, RejectsIsoOutsideUnitInterval) {
    GridSpec s;
    VoxelGrid g(s);
    EXPECT_THROW(extract_surface(g, 0.0), InvalidArgument);
    EXPECT_THROW(extract_surface(g, 1.0), InvalidArgument);
}
