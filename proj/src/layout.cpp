#include "ggds/layout.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace ggds {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Uniform [0, 1) keyed on the seed and the world-aligned cell, so any chunking sees the same draw.
double cell_uniform(std::uint64_t seed, long long gi, long long gj, long long gk) {
    std::uint64_t h = splitmix(seed);
    h = splitmix(h ^ std::uint64_t(gi));
    h = splitmix(h ^ std::uint64_t(gj));
    h = splitmix(h ^ std::uint64_t(gk));
    return double(h >> 11) * 0x1.0p-53;
}

bool inside_polygon(const std::vector<Eigen::Vector2d> &poly, const Eigen::Vector2d &p) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto &a = poly[i];
        const auto &b = poly[j];
        if ((a.y() > p.y()) != (b.y() > p.y()) &&
            p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x())
            in = !in;
    }
    return in;
}

double segment_distance(const Eigen::Vector2d &p, const Eigen::Vector2d &a, const Eigen::Vector2d &b) {
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
    return (p - (a + t * ab)).norm();
}

bool on_road(const MapLayout &map, const Eigen::Vector2d &p) {
    for (const auto &road : map.roads) {
        const double r = 0.5 * road.width;
        if (road.points.size() == 1 && (p - road.points[0]).norm() <= r)
            return true;
        for (std::size_t s = 0; s + 1 < road.points.size(); ++s)
            if (segment_distance(p, road.points[s], road.points[s + 1]) <= r)
                return true;
    }
    return false;
}

bool in_extent(const MapLayout &map, const Eigen::Vector2d &p) {
    return p.x() >= map.extent[0] && p.x() <= map.extent[2] && p.y() >= map.extent[1] && p.y() <= map.extent[3];
}

bool segments_cross(const Eigen::Vector2d &a, const Eigen::Vector2d &b, const Eigen::Vector2d &c,
                    const Eigen::Vector2d &d) {
    auto orient = [](const Eigen::Vector2d &p, const Eigen::Vector2d &q, const Eigen::Vector2d &r) {
        const double v = (q - p).x() * (r - p).y() - (q - p).y() * (r - p).x();
        return (v > 0) - (v < 0);
    };
    return orient(a, b, c) * orient(a, b, d) < 0 && orient(c, d, a) * orient(c, d, b) < 0;
}

bool simple_polygon(const std::vector<Eigen::Vector2d> &poly) {
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            if (j == i + 1 || (i == 0 && j == n - 1))
                continue;
            if (segments_cross(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]))
                return false;
        }
    return true;
}

void check_constraint(const ChunkConstraint &c, const GridSpec &spec) {
    require(c.mask.size() == c.values.size(), "chunk constraint: mask and values differ in length");
    require(c.mask.empty() || c.mask.size() == spec.count(), "chunk constraint: size does not match chunk");
}

void enforce(VoxelGrid &grid, const ChunkConstraint &c) {
    for (std::size_t i = 0; i < c.mask.size(); ++i)
        if (c.mask[i])
            grid.occupancy[i] = c.values[i] ? 1 : 0;
}

} // namespace

void MapLayout::validate() const {
    require(extent[2] > extent[0] && extent[3] > extent[1], "map layout: extent must have positive area");
    for (const auto &r : roads) {
        require(r.width > 0.0, "map layout: road width must be positive");
        require(!r.points.empty(), "map layout: road has no points");
    }
    for (const auto &b : buildings) {
        require(b.height > 0.0, "map layout: building height must be positive");
        require(b.polygon.size() >= 3, "map layout: footprint needs at least 3 vertices");
        require(simple_polygon(b.polygon), "map layout: footprint polygon self-intersects");
    }
}

GridSpec GridSpec::covering(const MapLayout &map, double voxel, double max_height) {
    map.validate();
    require(voxel > 0.0, "grid spec: voxel size must be positive");
    if (max_height <= 0.0) {
        max_height = 0.0;
        for (const auto &b : map.buildings)
            max_height = std::max(max_height, b.height);
    }
    GridSpec s;
    s.voxel = voxel;
    s.origin = Eigen::Vector3d(map.extent[0], map.extent[1], -voxel);
    s.dims = {std::max(1, int(std::ceil(map.width() / voxel - 1e-9))),
              std::max(1, int(std::ceil(map.depth() / voxel - 1e-9))),
              2 + int(std::ceil(max_height / voxel - 1e-9))};
    return s;
}

void GridSpec::validate() const {
    require(voxel > 0.0 && std::isfinite(voxel), "grid spec: voxel size must be positive");
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "grid spec: dims must be positive");
}

std::size_t VoxelGrid::occupied() const {
    return std::size_t(std::count_if(occupancy.begin(), occupancy.end(), [](std::uint8_t v) { return v != 0; }));
}

bool VoxelGrid::operator==(const VoxelGrid &o) const {
    return spec.dims == o.spec.dims && spec.voxel == o.spec.voxel && spec.origin == o.spec.origin &&
           occupancy == o.occupancy;
}

void VoxelGrid::validate() const {
    spec.validate();
    require(occupancy.size() == spec.count(), "voxel grid: occupancy length does not match dims");
}

ExtrudeResult extrude_layout(const MapLayout &map, const GridSpec &spec, std::uint64_t seed,
                             const ExtrudeOptions &opts) {
    map.validate();
    spec.validate();
    require(opts.jitter_rate >= 0.0 && opts.jitter_rate <= 1.0, "extrude_layout: jitter rate must lie in [0, 1]");
    ExtrudeResult out{VoxelGrid(spec), 0};
    for (const auto &b : map.buildings)
        if (std::any_of(b.polygon.begin(), b.polygon.end(), [&](const auto &p) { return !in_extent(map, p); }))
            ++out.warnings;

    const double v = spec.voxel;
    for (int j = 0; j < spec.dims[1]; ++j)
        for (int i = 0; i < spec.dims[0]; ++i) {
            const Eigen::Vector3d c = spec.center(i, j, 0);
            const Eigen::Vector2d p = c.head<2>();
            if (!in_extent(map, p))
                continue;
            const bool road = on_road(map, p);
            int top = 0; // highest occupied building layer in this column
            if (!road)
                for (const auto &b : map.buildings)
                    if (inside_polygon(b.polygon, p))
                        top = std::max(top, int(std::ceil(b.height / v - 1e-9)));
            const long long gi = (long long)std::floor(c.x() / v);
            const long long gj = (long long)std::floor(c.y() / v);
            for (int k = 0; k < spec.dims[2]; ++k) {
                // Layer 0 is the ground slab just below z = 0; layer L spans [(L - 1) v, L v).
                const long long layer = (long long)std::floor(spec.center(i, j, k).z() / v) + 1;
                bool occ = layer == 0 || (layer >= 1 && layer <= top);
                if (!occ && !road && top == 0 && opts.jitter_rate > 0.0 && (layer == 1 || layer == 2))
                    occ = cell_uniform(seed, gi, gj, layer) < opts.jitter_rate / double(layer);
                if (occ)
                    out.grid.set(i, j, k, true);
            }
        }
    return out;
}

VoxelGrid ExtrudeGenerator::generate(const MapLayout &map, const GridSpec &chunk, const ChunkConstraint &constraint,
                                     std::uint64_t seed) {
    check_constraint(constraint, chunk);
    ExtrudeResult r = extrude_layout(map, chunk, seed, opts_);
    warnings_ = r.warnings;
    enforce(r.grid, constraint);
    return std::move(r.grid);
}

DenoiserVoxelSampler::DenoiserVoxelSampler(const DiffusionSchedule &schedule, Options opts)
    : schedule_(&schedule), opts_(opts) {
    schedule.validate();
    require(opts.steps >= 1, "voxel sampler: steps must be positive");
    require(opts.prior_stddev > 0.0, "voxel sampler: prior stddev must be positive");
}

DenoiserVoxelSampler::DenoiserVoxelSampler(const DiffusionSchedule &schedule, Options opts, Denoiser<double> &denoiser)
    : DenoiserVoxelSampler(schedule, opts) {
    external_ = &denoiser;
}

VoxelGrid DenoiserVoxelSampler::generate(const MapLayout &map, const GridSpec &chunk,
                                         const ChunkConstraint &constraint, std::uint64_t seed) {
    check_constraint(constraint, chunk);
    const auto &d = chunk.dims;
    // Latent texel (x = i, y = j) holds the column's dims_z logits as channels.
    auto to_latent = [&](const std::vector<double> &vox) {
        Image<double> img(d[0], d[1], d[2]);
        for (int k = 0; k < d[2]; ++k)
            for (int j = 0; j < d[1]; ++j)
                for (int i = 0; i < d[0]; ++i)
                    img(i, j, k) = vox[chunk.index(i, j, k)];
        return img;
    };

    const VoxelGrid base = extrude_layout(map, chunk, seed, opts_.extrude).grid;
    std::vector<double> logits(chunk.count());
    for (std::size_t n = 0; n < logits.size(); ++n)
        logits[n] = opts_.logit_scale * (base.occupancy[n] ? 1.0 : -1.0);
    const Image<double> mean = to_latent(logits);

    std::vector<double> known(chunk.count(), 0.0);
    std::vector<std::uint8_t> known_mask(chunk.count(), 0);
    for (std::size_t n = 0; n < constraint.mask.size(); ++n)
        if (constraint.mask[n]) {
            known_mask[n] = 1;
            known[n] = opts_.logit_scale * (constraint.values[n] ? 1.0 : -1.0);
        }
    const Image<double> known_img = to_latent(known);
    std::vector<double> mask_d(known_mask.begin(), known_mask.end());
    const Image<double> mask_img = to_latent(mask_d);

    AnalyticDenoiser<double> fallback(
        AnalyticPrior<double>::gaussian(mean.data, ArrayX<double>::Constant(1, opts_.prior_stddev)), *schedule_);
    Denoiser<double> &den = external_ ? *external_ : fallback;

    std::uint64_t s = splitmix(seed ^ 0x766f78656c73ull);
    s = splitmix(s ^ std::uint64_t((long long)std::llround(chunk.origin.x() / chunk.voxel)));
    s = splitmix(s ^ std::uint64_t((long long)std::llround(chunk.origin.y() / chunk.voxel)));
    std::mt19937_64 rng(s);
    std::normal_distribution<double> normal;
    auto gaussian = [&] {
        Image<double> e(d[0], d[1], d[2]);
        for (Eigen::Index n = 0; n < e.data.size(); ++n)
            e.data[n] = normal(rng);
        return e;
    };

    const int T = schedule_->T;
    const std::vector<int> levels = ddim_levels(T, opts_.steps);
    Image<double> z = gaussian();
    const Conditioning<double> cond;
    auto inpaint = [&](Image<double> &zt, int t) {
        const Image<double> noisy = add_noise(known_img, gaussian(), t, *schedule_);
        for (Eigen::Index n = 0; n < zt.data.size(); ++n)
            if (mask_img.data[n] != 0.0)
                zt.data[n] = noisy.data[n];
    };
    for (std::size_t step = levels.size() - 1; step > 0; --step) {
        const int hi = levels[step], lo = levels[step - 1];
        inpaint(z, hi);
        const double a_hi = schedule_->at(hi), a_lo = schedule_->at(lo);
        Image<double> eps;
        try {
            eps = den.predict(z, hi, a_hi, cond);
        } catch (...) {
            std::throw_with_nested(DenoiserStepError("voxel sampler: denoiser failed", int(levels.size() - 1 - step), hi));
        }
        require_same_shape(eps, z, "voxel sampler: denoiser output");
        const ArrayX<double> x0 = (z.data - std::sqrt(1.0 - a_hi) * eps.data) / std::sqrt(a_hi);
        z.data = std::sqrt(a_lo) * x0 + std::sqrt(1.0 - a_lo) * eps.data;
    }

    VoxelGrid out(chunk);
    for (int k = 0; k < d[2]; ++k)
        for (int j = 0; j < d[1]; ++j)
            for (int i = 0; i < d[0]; ++i)
                out.set(i, j, k, z(i, j, k) > 0.0);
    enforce(out, constraint);
    return out;
}

ChunkedResult generate_chunked(ChunkGenerator &generator, const MapLayout &map, const GridSpec &full,
                               const ChunkedOptions &opts, std::uint64_t seed) {
    map.validate();
    full.validate();
    require(opts.chunk_extent > 0.0, "generate_chunked: chunk extent must be positive");
    require(opts.overlap > 0, "generate_chunked: overlap must be positive");
    const int cdim = int(std::llround(opts.chunk_extent / full.voxel));
    require(cdim >= 1, "generate_chunked: chunk extent is smaller than one voxel");

    ChunkedResult out;
    out.grid = VoxelGrid(full);
    std::array<std::vector<int>, 2> offsets;
    for (int a = 0; a < 2; ++a) {
        const int dim = full.dims[a];
        const int c = std::min(cdim, dim);
        out.chunk_dims[a] = c;
        if (c == dim) {
            offsets[a] = {0};
            continue;
        }
        require(opts.overlap < c, "generate_chunked: overlap must be smaller than the chunk");
        const int stride = c - opts.overlap;
        for (int o = 0;; o += stride) {
            offsets[a].push_back(std::min(o, dim - c));
            if (o + c >= dim)
                break;
        }
    }

    std::vector<std::uint8_t> done(full.count(), 0);
    for (int oy : offsets[1])
        for (int ox : offsets[0]) {
            GridSpec cs = full;
            cs.dims = {out.chunk_dims[0], out.chunk_dims[1], full.dims[2]};
            cs.origin = full.origin + full.voxel * Eigen::Vector3d(ox, oy, 0);
            ChunkConstraint constraint{std::vector<std::uint8_t>(cs.count(), 0),
                                       std::vector<std::uint8_t>(cs.count(), 0)};
            for (int k = 0; k < cs.dims[2]; ++k)
                for (int j = 0; j < cs.dims[1]; ++j)
                    for (int i = 0; i < cs.dims[0]; ++i) {
                        const std::size_t g = full.index(ox + i, oy + j, k);
                        if (done[g]) {
                            constraint.mask[cs.index(i, j, k)] = 1;
                            constraint.values[cs.index(i, j, k)] = out.grid.occupancy[g];
                        }
                    }
            VoxelGrid chunk = generator.generate(map, cs, constraint, seed);
            require(chunk.spec.dims == cs.dims && chunk.occupancy.size() == cs.count(),
                    "generate_chunked: generator returned a grid of the wrong shape");
            enforce(chunk, constraint);
            for (int k = 0; k < cs.dims[2]; ++k)
                for (int j = 0; j < cs.dims[1]; ++j)
                    for (int i = 0; i < cs.dims[0]; ++i) {
                        const std::size_t g = full.index(ox + i, oy + j, k);
                        out.grid.occupancy[g] = chunk.occupancy[cs.index(i, j, k)] ? 1 : 0;
                        done[g] = 1;
                    }
            if (opts.keep_chunks)
                out.chunks.push_back({{ox, oy}, std::move(chunk)});
        }
    return out;
}

} // namespace ggds
