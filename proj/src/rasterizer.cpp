#include "ggds/rasterizer.hpp"

#include "ggds/parallel.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace ggds {

template <typename Scalar>
RenderBuffers<Scalar>::RenderBuffers(int width, int height)
    : color(width, height, 3), disparity(width, height, 1), normal(width, height, 3), alpha(width, height, 1),
      distortion(width, height, 1) {}

template <typename Scalar> RenderAdjoint<Scalar> RenderAdjoint<Scalar>::zeros(int width, int height) {
    RenderAdjoint a;
    a.color = Image<Scalar>(width, height, 3);
    a.disparity = Image<Scalar>(width, height, 1);
    a.normal = Image<Scalar>(width, height, 3);
    a.alpha = Image<Scalar>(width, height, 1);
    a.distortion = Image<Scalar>(width, height, 1);
    return a;
}

template <typename Scalar> bool SplatGradient<Scalar>::all_finite() const {
    return center.allFinite() && tangent_u.allFinite() && tangent_v.allFinite() && std::isfinite(scale_u) &&
           std::isfinite(scale_v) && std::isfinite(opacity) && sh.allFinite();
}

template <typename Scalar> bool SplatGradient<Scalar>::is_zero() const {
    return center.isZero(0) && tangent_u.isZero(0) && tangent_v.isZero(0) && scale_u == 0 && scale_v == 0 &&
           opacity == 0 && (sh.size() == 0 || sh.isZero(0));
}

template <typename Scalar> Vec3<Scalar> pixel_direction_world(const Camera<Scalar> &camera, int px, int py) {
    return (camera.rotation.transpose() * camera.pixel_ray(px, py)).normalized();
}

namespace {

constexpr double kCutoffSq = 9.0; // 3 sigma in (u, v)

/// Splat data transformed into camera space once per pass.
template <typename Scalar> struct Prepared {
    Vec3<Scalar> p, tu, tv, n;
    Scalar su, sv, o;
    Vec3<Scalar> raw_color, color;
    Vec3<Scalar> view_dir; ///< world, camera -> center, unit
    Scalar view_len;
    Scalar center_depth;
    Scalar near_depth; ///< no 3 sigma hit lies in front of this camera depth
    Scalar ndp;        ///< n . p
    Vec3<Scalar> tus, tvs; ///< tangents divided by their scales
    bool finite;
};

template <typename Scalar> struct Hit {
    Scalar depth, alpha, gauss, u, v, denom;
    int index;
    int slot;
};

/// Contiguous per-tile copy of the fields the per-pixel loop reads.
template <typename Scalar> struct TileSplat {
    Vec3<Scalar> p, tus, tvs, n, color;
    Vec3<Scalar> cu, cv; ///< u * (n . d) = cu . d and v * (n . d) = cv . d for any ray d
    Scalar o, near_depth, ndp;
    int index;
    int x0, y0, x1, y1; ///< conservative pixel box
    /// Divide-free test of the 3 sigma footprint with slack, so it never rejects a true hit.
    bool may_hit(const Vec3<Scalar> &d) const {
        const Scalar a = cu.dot(d), b = cv.dot(d), c = n.dot(d);
        return a * a + b * b <= Scalar(kCutoffSq * 1.01) * c * c;
    }
};

/// Tile splat whose pixel box spans one pixel row.
struct RowItem {
    int j, x0, x1;
};

template <typename Scalar> inline Vec3<Scalar> facing(const Vec3<Scalar> &n, Scalar denom) {
    return denom > 0 ? Vec3<Scalar>(-n) : n;
}

template <typename Scalar>
std::vector<Prepared<Scalar>> prepare(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera) {
    std::vector<Prepared<Scalar>> out(scene.splats.size());
    const Mat3<Scalar> &R = camera.rotation;
    Scalar basis[sh_coeff_count(kMaxShDegree)];
    for (std::size_t i = 0; i < scene.splats.size(); ++i) {
        const Splat<Scalar> &s = scene.splats[i];
        Prepared<Scalar> &q = out[i];
        Vec3<Scalar> tu = s.tangent_u, tv = s.tangent_v;
        orthonormalize_tangents(tu, tv);
        q.p = camera.to_camera(s.center);
        q.tu = R * tu;
        q.tv = R * tv;
        q.n = q.tu.cross(q.tv);
        q.su = s.scale_u;
        q.sv = s.scale_v;
        q.o = s.opacity;
        q.center_depth = -q.p.z();
        q.ndp = q.n.dot(q.p);
        q.tus = q.tu / q.su;
        q.tvs = q.tv / q.sv;
        q.near_depth = q.center_depth - Scalar(3) * std::hypot(q.su * q.tu.z(), q.sv * q.tv.z());

        const Vec3<Scalar> v = s.center - camera.position;
        q.view_len = v.norm();
        q.view_dir = q.view_len > 0 ? Vec3<Scalar>(v / q.view_len) : Vec3<Scalar>::UnitZ();
        const int degree = s.sh_degree();
        sh_basis(degree, q.view_dir, basis);
        q.raw_color.setZero();
        for (int k = 0; k < sh_coeff_count(degree); ++k)
            q.raw_color += basis[k] * s.sh.row(k).transpose();
        q.color = q.raw_color.cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
        q.finite = q.p.allFinite() && q.n.allFinite() && std::isfinite(q.su) && std::isfinite(q.sv) && q.su > 0 &&
                   q.sv > 0 && std::isfinite(q.o) && q.color.allFinite();
    }
    return out;
}

template <typename Scalar, typename S>
inline bool intersect(const S &s, const Vec3<Scalar> &d, Scalar near_plane, Scalar far_plane,
                      Hit<Scalar> &h) {
    const Scalar denom = s.n.dot(d);
    if (!(std::abs(denom) > Scalar(1e-12)))
        return false;
    const Scalar depth = s.ndp / denom;
    if (!(depth >= near_plane && depth <= far_plane))
        return false;
    const Vec3<Scalar> q = depth * d - s.p;
    const Scalar u = s.tus.dot(q);
    const Scalar v = s.tvs.dot(q);
    const Scalar r2 = u * u + v * v;
    if (!(r2 <= Scalar(kCutoffSq)))
        return false;
    h.depth = depth;
    h.gauss = std::exp(Scalar(-0.5) * r2);
    h.alpha = s.o * h.gauss;
    h.u = u;
    h.v = v;
    h.denom = denom;
    return true;
}

template <typename Scalar> inline bool hit_less(const Hit<Scalar> &a, const Hit<Scalar> &b) {
    return a.depth < b.depth || (a.depth == b.depth && a.index < b.index);
}

template <typename Scalar> struct PixelResult {
    Vec3<Scalar> color;
    Scalar disparity;
    Vec3<Scalar> normal;
    Scalar alpha;
    Scalar distortion;
    int used;
};

/// Front-to-back accumulation of sorted hits.
template <typename Scalar> struct Compositor {
    Scalar T = 1, D = 0, A = 0, dist = 0, W = 0, M1 = 0, M2 = 0;
    Vec3<Scalar> C = Vec3<Scalar>::Zero(), M = Vec3<Scalar>::Zero();
    int used = 0;

    /// Returns false once transmittance has dropped below `floor`.
    template <typename S> bool add(const Hit<Scalar> &h, const S &s, Scalar floor) {
        const Scalar w = T * h.alpha;
        const Scalar m = Scalar(1) / h.depth;
        C += w * s.color;
        D += w * m;
        M += w * facing(s.n, h.denom);
        A += w;
        dist += w * (m * m * W - 2 * m * M1 + M2);
        W += w;
        M1 += w * m;
        M2 += w * m * m;
        T *= Scalar(1) - h.alpha;
        ++used;
        return !(T < floor);
    }

    PixelResult<Scalar> finish(const Vec3<Scalar> &env) const {
        PixelResult<Scalar> r;
        r.color = C + T * env;
        r.disparity = D;
        const Scalar len = M.norm();
        r.normal = len > 0 ? Vec3<Scalar>(M / len) : Vec3<Scalar>::Zero();
        r.alpha = A;
        r.distortion = dist;
        r.used = used;
        return r;
    }
};

template <typename Scalar>
PixelResult<Scalar> composite(const Hit<Scalar> *hits, int n, const std::vector<Prepared<Scalar>> &prepared,
                              const Vec3<Scalar> &env, Scalar floor) {
    Compositor<Scalar> c;
    for (int i = 0; i < n; ++i)
        if (!c.add(hits[i], prepared[hits[i].index], floor))
            break;
    return c.finish(env);
}

template <typename Scalar>
inline Vec3<Scalar> background(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera, int px, int py,
                               EnvSampling sampling) {
    const Vec3<Scalar> dir = camera.rotation.transpose() * camera.pixel_ray(px, py);
    return env_query(scene.env, dir, sampling).cwiseMax(Scalar(0)).cwiseMin(Scalar(1));
}

template <typename Scalar>
void store(RenderBuffers<Scalar> &out, int x, int y, const PixelResult<Scalar> &r) {
    out.color.pixel(x, y) = r.color.array();
    out.disparity(x, y) = r.disparity;
    out.normal.pixel(x, y) = r.normal.array();
    out.alpha(x, y) = r.alpha;
    out.distortion(x, y) = r.distortion;
}

// --- screen-space binning ----------------------------------------------------------------------

struct PixelBox {
    int x0, y0, x1, y1; // inclusive
    double radius;
    bool empty() const { return x1 < x0 || y1 < y0; }
};

/// Conservative pixel bounds of a planar convex polygon given in camera space, after clipping
/// against the near plane.
template <typename Scalar>
PixelBox polygon_box(const Vec3<double> *pts, int count, const Camera<Scalar> &camera) {
    const double near_plane = double(camera.near_plane);
    std::array<Vec3<double>, 12> clipped;
    int m = 0;
    for (int i = 0; i < count; ++i) {
        const Vec3<double> &a = pts[i], &b = pts[(i + 1) % count];
        const double da = -a.z() - near_plane, db = -b.z() - near_plane;
        if (da >= 0)
            clipped[m++] = a;
        if ((da >= 0) != (db >= 0)) {
            const double t = da / (da - db);
            clipped[m++] = a + t * (b - a);
        }
    }
    PixelBox box{0, 0, -1, -1, 0.0};
    if (m == 0)
        return box;
    bool all_far = true;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    const double f = double(camera.focal());
    for (int i = 0; i < m; ++i) {
        const double depth = std::max(-clipped[i].z(), near_plane);
        all_far = all_far && depth > double(camera.far_plane);
        const double px = f * clipped[i].x() / depth + 0.5 * camera.width - 0.5;
        const double py = -f * clipped[i].y() / depth + 0.5 * camera.height - 0.5;
        xmin = std::min(xmin, px);
        xmax = std::max(xmax, px);
        ymin = std::min(ymin, py);
        ymax = std::max(ymax, py);
    }
    if (all_far || !std::isfinite(xmin + xmax + ymin + ymax))
        return box;
    box.radius = 0.5 * std::max(xmax - xmin, ymax - ymin);
    const double lo_x = std::max(std::floor(xmin) - 1, -1.0), hi_x = std::min(std::ceil(xmax) + 1, double(camera.width));
    const double lo_y = std::max(std::floor(ymin) - 1, -1.0),
                 hi_y = std::min(std::ceil(ymax) + 1, double(camera.height));
    box.x0 = std::max(0, int(lo_x));
    box.x1 = std::min(camera.width - 1, int(hi_x));
    box.y0 = std::max(0, int(lo_y));
    box.y1 = std::min(camera.height - 1, int(hi_y));
    return box;
}

template <typename Scalar> PixelBox splat_box(const Prepared<Scalar> &s, const Camera<Scalar> &camera) {
    if (!s.finite)
        return PixelBox{0, 0, -1, -1, 0.0};
    const Vec3<double> p = s.p.template cast<double>();
    const Vec3<double> a = 3.0 * double(s.su) * s.tu.template cast<double>();
    const Vec3<double> b = 3.0 * double(s.sv) * s.tv.template cast<double>();
    const Vec3<double> corners[4] = {p - a - b, p + a - b, p + a + b, p - a + b};
    return polygon_box(corners, 4, camera);
}

struct TileBins {
    int tile_size = 8;
    int tiles_x = 0, tiles_y = 0;
    std::vector<int> offsets; ///< tiles + 1 entries
    std::vector<int> items;
    std::vector<PixelBox> boxes; ///< per splat

    int count() const { return tiles_x * tiles_y; }
    int begin(int t) const { return offsets[t]; }
    int end(int t) const { return offsets[t + 1]; }
};

TileBins bin_boxes(const std::vector<PixelBox> &boxes, int width, int height, int tile_size) {
    TileBins bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    std::vector<int> counts(bins.count() + 1, 0);
    auto for_tiles = [&](const PixelBox &b, auto &&fn) {
        if (b.empty())
            return;
        for (int ty = b.y0 / tile_size; ty <= b.y1 / tile_size; ++ty)
            for (int tx = b.x0 / tile_size; tx <= b.x1 / tile_size; ++tx)
                fn(ty * bins.tiles_x + tx);
    };
    for (const auto &b : boxes)
        for_tiles(b, [&](int t) { ++counts[t + 1]; });
    bins.offsets.assign(bins.count() + 1, 0);
    for (int t = 0; t < bins.count(); ++t)
        bins.offsets[t + 1] = bins.offsets[t] + counts[t + 1];
    bins.items.resize(bins.offsets.back());
    std::vector<int> cursor(bins.offsets.begin(), bins.offsets.end() - 1);
    for (int i = 0; i < int(boxes.size()); ++i)
        for_tiles(boxes[i], [&](int t) { bins.items[cursor[t]++] = i; });
    return bins;
}

template <typename Scalar>
TileBins bin_splats(const std::vector<Prepared<Scalar>> &prepared, const Camera<Scalar> &camera, int tile_size,
                    std::vector<Scalar> *radius) {
    std::vector<PixelBox> boxes(prepared.size());
    for (std::size_t i = 0; i < prepared.size(); ++i)
        boxes[i] = splat_box(prepared[i], camera);
    if (radius) {
        radius->resize(prepared.size());
        for (std::size_t i = 0; i < prepared.size(); ++i)
            (*radius)[i] = boxes[i].empty() ? Scalar(0) : Scalar(boxes[i].radius);
    }
    TileBins bins = bin_boxes(boxes, camera.width, camera.height, tile_size);
    bins.boxes = std::move(boxes);
    // Near-to-far per tile keeps per-pixel hit lists nearly sorted.
    for (int t = 0; t < bins.count(); ++t)
        std::sort(bins.items.begin() + bins.begin(t), bins.items.begin() + bins.end(t), [&](int a, int b) {
            const Scalar da = prepared[a].near_depth, db = prepared[b].near_depth;
            return da < db || (da == db && a < b);
        });
    return bins;
}

template <typename Scalar> void sort_hits(std::vector<Hit<Scalar>> &hits) {
    // Lists arrive nearly sorted; insertion sort is linear in that case.
    for (std::size_t i = 1; i < hits.size(); ++i) {
        Hit<Scalar> h = hits[i];
        std::size_t j = i;
        while (j > 0 && hit_less(h, hits[j - 1])) {
            hits[j] = hits[j - 1];
            --j;
        }
        hits[j] = h;
    }
}

// --- backward -----------------------------------------------------------------------------------

/// Camera-space gradient accumulator for one splat.
template <typename Scalar> struct Accum {
    Vec3<Scalar> p = Vec3<Scalar>::Zero(), tu = Vec3<Scalar>::Zero(), tv = Vec3<Scalar>::Zero(),
                 color = Vec3<Scalar>::Zero();
    Scalar su = 0, sv = 0, o = 0;

    Accum &operator+=(const Accum &b) {
        p += b.p;
        tu += b.tu;
        tv += b.tv;
        color += b.color;
        su += b.su;
        sv += b.sv;
        o += b.o;
        return *this;
    }
};

template <typename Scalar> struct PixelAdjoint {
    Vec3<Scalar> color = Vec3<Scalar>::Zero();
    Scalar disparity = 0;
    Vec3<Scalar> normal = Vec3<Scalar>::Zero();
    Scalar alpha = 0;
    Scalar distortion = 0;
};

template <typename Scalar>
PixelAdjoint<Scalar> pixel_adjoint(const RenderAdjoint<Scalar> &adj, int x, int y) {
    PixelAdjoint<Scalar> a;
    if (!adj.color.empty())
        a.color = adj.color.pixel(x, y).matrix();
    if (!adj.disparity.empty())
        a.disparity = adj.disparity(x, y);
    if (!adj.normal.empty())
        a.normal = adj.normal.pixel(x, y).matrix();
    if (!adj.alpha.empty())
        a.alpha = adj.alpha(x, y);
    if (!adj.distortion.empty())
        a.distortion = adj.distortion(x, y);
    return a;
}

/// Reverse-mode pass over one pixel's sorted hits. `acc` is indexed by Hit::slot.
template <typename Scalar>
void backprop_pixel(const Hit<Scalar> *hits, int used, const std::vector<Prepared<Scalar>> &prepared,
                    const Vec3<Scalar> &env, const Vec3<Scalar> &d, const PixelAdjoint<Scalar> &g, Accum<Scalar> *acc,
                    std::vector<Scalar> &transmittance) {
    if (used == 0)
        return;
    transmittance.resize(used);
    Scalar T = 1, W = 0, M1 = 0, M2 = 0;
    Vec3<Scalar> M = Vec3<Scalar>::Zero();
    for (int i = 0; i < used; ++i) {
        const Hit<Scalar> &h = hits[i];
        transmittance[i] = T;
        const Scalar w = T * h.alpha, m = Scalar(1) / h.depth;
        M += w * facing(prepared[h.index].n, h.denom);
        W += w;
        M1 += w * m;
        M2 += w * m * m;
        T *= Scalar(1) - h.alpha;
    }
    const Scalar mlen = M.norm();
    Vec3<Scalar> gM = Vec3<Scalar>::Zero();
    if (mlen > 0) {
        const Vec3<Scalar> N = M / mlen;
        gM = (g.normal - N * N.dot(g.normal)) / mlen;
    }

    Scalar behind = g.color.dot(env);
    for (int i = used - 1; i >= 0; --i) {
        const Hit<Scalar> &h = hits[i];
        const Prepared<Scalar> &s = prepared[h.index];
        Accum<Scalar> &a = acc[h.slot];
        const Scalar Ti = transmittance[i];
        const Scalar m = Scalar(1) / h.depth;
        const Scalar sign = h.denom > 0 ? Scalar(-1) : Scalar(1);
        const Vec3<Scalar> nf = sign * s.n;
        const Scalar pair = m * m * W - 2 * m * M1 + M2;

        const Scalar gi = g.color.dot(s.color) + g.disparity * m + gM.dot(nf) + g.alpha + g.distortion * pair;
        const Scalar d_alpha = Ti * (gi - behind);
        behind = h.alpha * gi + (Scalar(1) - h.alpha) * behind;

        const Scalar w = Ti * h.alpha;
        a.color += w * g.color;
        const Scalar d_m = w * g.disparity + g.distortion * 2 * w * (m * W - M1);
        const Vec3<Scalar> d_nf = w * gM;

        // alpha = o * exp(-(u^2 + v^2) / 2)
        a.o += d_alpha * h.gauss;
        const Scalar d_r2 = Scalar(-0.5) * h.gauss * d_alpha * s.o;
        const Scalar du = 2 * h.u * d_r2, dv = 2 * h.v * d_r2;
        const Vec3<Scalar> q = h.depth * d - s.p;
        a.su -= h.u / s.su * du;
        a.sv -= h.v / s.sv * dv;
        a.tu += q * (du / s.su);
        a.tv += q * (dv / s.sv);
        const Vec3<Scalar> dq = s.tu * (du / s.su) + s.tv * (dv / s.sv);
        a.p -= dq;
        // depth = (n.p) / (n.d); disparity m = 1 / depth
        const Scalar d_depth = d.dot(dq) - d_m / (h.depth * h.depth);
        a.p += d_depth / h.denom * s.n;
        const Vec3<Scalar> dn = -d_depth / h.denom * q + sign * d_nf;
        a.tu += s.tv.cross(dn);
        a.tv += dn.cross(s.tu);
    }
}

/// Camera-space accumulators -> gradients of the stored (world, raw) splat parameters.
template <typename Scalar>
SplatGradient<Scalar> finish_gradient(const Splat<Scalar> &s, const Prepared<Scalar> &q, const Accum<Scalar> &a,
                                      const Camera<Scalar> &camera) {
    SplatGradient<Scalar> g;
    const int degree = s.sh_degree();
    const int nsh = sh_coeff_count(degree);
    g.sh = Splat<Scalar>::ShBlock::Zero(nsh, 3);
    g.scale_u = a.su;
    g.scale_v = a.sv;
    g.opacity = a.o;

    Vec3<Scalar> d_raw = a.color;
    for (int c = 0; c < 3; ++c)
        if (!(q.raw_color[c] > 0 && q.raw_color[c] < 1))
            d_raw[c] = 0;
    Scalar basis[sh_coeff_count(kMaxShDegree)];
    Vec3<Scalar> basis_grad[sh_coeff_count(kMaxShDegree)];
    sh_basis_with_gradient(degree, q.view_dir, basis, basis_grad);
    Vec3<Scalar> d_dir = Vec3<Scalar>::Zero();
    for (int k = 0; k < nsh; ++k) {
        g.sh.row(k) = basis[k] * d_raw.transpose();
        if (k > 0)
            d_dir += basis_grad[k] * s.sh.row(k).dot(d_raw.transpose());
    }
    const Mat3<Scalar> Rt = camera.rotation.transpose();
    g.center = Rt * a.p;
    if (degree > 0 && q.view_len > 0)
        g.center += (d_dir - q.view_dir * q.view_dir.dot(d_dir)) / q.view_len;

    // Gram-Schmidt: e = a/|a|, w = b - (b.e) e, f = w/|w|.
    const Vec3<Scalar> gu = Rt * a.tu, gv = Rt * a.tv;
    const Scalar la = s.tangent_u.norm();
    const Vec3<Scalar> e = s.tangent_u / la;
    const Vec3<Scalar> w = s.tangent_v - s.tangent_v.dot(e) * e;
    const Scalar lw = w.norm();
    if (!(la > Scalar(1e-12)) || !(lw > Scalar(1e-12))) {
        g.tangent_u.setZero();
        g.tangent_v.setZero();
        return g;
    }
    const Vec3<Scalar> f = w / lw;
    const Vec3<Scalar> dw = (gv - f * f.dot(gv)) / lw;
    g.tangent_v = dw - e * e.dot(dw);
    const Vec3<Scalar> ge = gu - s.tangent_v * e.dot(dw) - s.tangent_v.dot(e) * dw;
    g.tangent_u = (ge - e * e.dot(ge)) / la;
    return g;
}

template <typename Scalar>
void gather_tile(const TileBins &bins, int t, const std::vector<Prepared<Scalar>> &prepared,
                 std::vector<TileSplat<Scalar>> &local) {
    local.clear();
    for (int k = bins.begin(t); k < bins.end(t); ++k) {
        const int idx = bins.items[k];
        const Prepared<Scalar> &q = prepared[idx];
        const PixelBox &b = bins.boxes[idx];
        const Vec3<Scalar> cu = q.ndp * q.tus - q.tus.dot(q.p) * q.n;
        const Vec3<Scalar> cv = q.ndp * q.tvs - q.tvs.dot(q.p) * q.n;
        local.push_back({q.p, q.tus, q.tvs, q.n, q.color, cu, cv, q.o, q.near_depth, q.ndp, idx, b.x0, b.y0, b.x1, b.y1});
    }
}

template <typename Scalar>
void row_items(const std::vector<TileSplat<Scalar>> &local, int y, std::vector<RowItem> &row) {
    row.clear();
    for (int j = 0; j < int(local.size()); ++j)
        if (y >= local[j].y0 && y <= local[j].y1)
            row.push_back({j, local[j].x0, local[j].x1});
}

/// Intersects the row's tile splats with the ray, near to far by hit depth (slots relative to `first`).
template <typename Scalar>
void tile_hits(const std::vector<TileSplat<Scalar>> &local, const std::vector<RowItem> &row, int first,
               const Camera<Scalar> &camera, int x, const Vec3<Scalar> &d, std::vector<Hit<Scalar>> &hits) {
    hits.clear();
    Hit<Scalar> h;
    for (const RowItem &r : row) {
        if (x < r.x0 || x > r.x1)
            continue;
        const int j = r.j;
        if (local[j].may_hit(d) && intersect(local[j], d, camera.near_plane, camera.far_plane, h)) {
            h.index = local[j].index;
            h.slot = first + j;
            hits.push_back(h);
        }
    }
    sort_hits(hits);
}

/// Same result as compositing every hit in depth order with `floor`, but visits splats by their
/// nearest possible depth and finalizes a pending hit as soon as no unvisited splat can land in
/// front of it, so the walk stops once the pixel is opaque.
template <typename Scalar>
PixelResult<Scalar> composite_early(const std::vector<TileSplat<Scalar>> &local, const std::vector<RowItem> &row,
                                    int first, const Camera<Scalar> &camera, int x, const Vec3<Scalar> &d,
                                    const Vec3<Scalar> &env, Scalar floor, std::vector<Hit<Scalar>> &pending) {
    // Pending hits stay sorted from `head` on; they arrive nearly in order, so insertion is cheap.
    Compositor<Scalar> c;
    pending.clear();
    std::size_t head = 0;
    Hit<Scalar> h;
    for (const RowItem &r : row) {
        if (x < r.x0 || x > r.x1)
            continue;
        const int j = r.j;
        const TileSplat<Scalar> &s = local[j];
        if (!s.may_hit(d))
            continue;
        for (; head < pending.size() && pending[head].depth < s.near_depth; ++head)
            if (!c.add(pending[head], local[pending[head].slot - first], floor))
                return c.finish(env);
        if (intersect(s, d, camera.near_plane, camera.far_plane, h)) {
            h.index = s.index;
            h.slot = first + j;
            pending.push_back(h);
            for (std::size_t i = pending.size() - 1; i > head && hit_less(pending[i], pending[i - 1]); --i)
                std::swap(pending[i], pending[i - 1]);
        }
    }
    for (; head < pending.size(); ++head)
        if (!c.add(pending[head], local[pending[head].slot - first], floor))
            break;
    return c.finish(env);
}

template <typename Scalar> void check_scene_shape(const SceneModel<Scalar> &scene) {
    const int degree = scene.sh_degree();
    for (const auto &s : scene.splats)
        require(s.sh_degree() == degree, "all splats must share one SH degree");
}

} // namespace

template <typename Scalar>
RenderBuffers<Scalar> render(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                             const RenderSettings &settings) {
    camera.validate();
    require(settings.tile_size >= 1, "tile size must be positive");
    check_scene_shape(scene);
    const auto prepared = prepare(scene, camera);
    RenderBuffers<Scalar> out(camera.width, camera.height);
    const TileBins bins = bin_splats(prepared, camera, settings.tile_size, &out.screen_radius);
    const Scalar floor = Scalar(settings.transmittance_floor);

    parallel_for(bins.count(), settings.threads, [&](int t) {
        std::vector<Hit<Scalar>> hits;
        std::vector<TileSplat<Scalar>> tile;
        std::vector<RowItem> row;
        gather_tile(bins, t, prepared, tile);
        const int tx = t % bins.tiles_x, ty = t / bins.tiles_x;
        const int x_end = std::min(camera.width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(camera.height, (ty + 1) * bins.tile_size);
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            row_items(tile, y, row);
            for (int x = tx * bins.tile_size; x < x_end; ++x) {
                const Vec3<Scalar> d = camera.pixel_ray(x, y);
                const auto env = background(scene, camera, x, y, settings.env_sampling);
                if (floor > 0) {
                    store(out, x, y, composite_early(tile, row, bins.begin(t), camera, x, d, env, floor, hits));
                } else {
                    tile_hits(tile, row, bins.begin(t), camera, x, d, hits);
                    store(out, x, y, composite(hits.data(), int(hits.size()), prepared, env, floor));
                }
            }
        }
    });
    return out;
}

template <typename Scalar>
RenderBuffers<Scalar> render_reference(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                                       const RenderSettings &settings) {
    camera.validate();
    check_scene_shape(scene);
    if (scene.splats.size() > kReferenceSplatLimit)
        throw InvalidArgument("render_reference is limited to " + std::to_string(kReferenceSplatLimit) +
                              " splats, scene has " + std::to_string(scene.splats.size()));
    const auto prepared = prepare(scene, camera);
    RenderBuffers<Scalar> out(camera.width, camera.height);
    const Scalar floor = Scalar(settings.transmittance_floor);
    std::vector<Hit<Scalar>> hits;
    for (int y = 0; y < camera.height; ++y) {
        for (int x = 0; x < camera.width; ++x) {
            const Vec3<Scalar> d = camera.pixel_ray(x, y);
            hits.clear();
            Hit<Scalar> h;
            for (int i = 0; i < int(prepared.size()); ++i) {
                if (intersect(prepared[i], d, camera.near_plane, camera.far_plane, h)) {
                    h.index = i;
                    h.slot = i;
                    hits.push_back(h);
                }
            }
            std::sort(hits.begin(), hits.end(), hit_less<Scalar>);
            const auto env = background(scene, camera, x, y, settings.env_sampling);
            store(out, x, y, composite(hits.data(), int(hits.size()), prepared, env, floor));
        }
    }
    return out;
}

template <typename Scalar>
SplatGradients<Scalar> backward(const SceneModel<Scalar> &scene, const Camera<Scalar> &camera,
                                const RenderAdjoint<Scalar> &adjoint, const RenderSettings &settings) {
    camera.validate();
    check_scene_shape(scene);
    auto check = [&](const Image<Scalar> &img, int channels, const char *name) {
        if (img.empty())
            return;
        if (img.width != camera.width || img.height != camera.height || img.channels != channels)
            throw InvalidArgument(std::string("backward: ") + name + " adjoint is " + shape_string(img) +
                                  ", camera expects " + shape_string(camera.width, camera.height, channels));
    };
    check(adjoint.color, 3, "color");
    check(adjoint.disparity, 1, "disparity");
    check(adjoint.normal, 3, "normal");
    check(adjoint.alpha, 1, "alpha");
    check(adjoint.distortion, 1, "distortion");

    const auto prepared = prepare(scene, camera);
    const TileBins bins = bin_splats<Scalar>(prepared, camera, settings.tile_size, nullptr);
    const Scalar floor = Scalar(settings.transmittance_floor);
    std::vector<Accum<Scalar>> local(bins.items.size());

    parallel_for(bins.count(), settings.threads, [&](int t) {
        std::vector<Hit<Scalar>> hits;
        std::vector<Scalar> transmittance;
        std::vector<TileSplat<Scalar>> tile;
        std::vector<RowItem> row;
        gather_tile(bins, t, prepared, tile);
        const int tx = t % bins.tiles_x, ty = t / bins.tiles_x;
        const int x_end = std::min(camera.width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(camera.height, (ty + 1) * bins.tile_size);
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            row_items(tile, y, row);
            for (int x = tx * bins.tile_size; x < x_end; ++x) {
                const Vec3<Scalar> d = camera.pixel_ray(x, y);
                tile_hits(tile, row, bins.begin(t), camera, x, d, hits);
                if (hits.empty())
                    continue;
                const auto env = background(scene, camera, x, y, settings.env_sampling);
                const int used = composite(hits.data(), int(hits.size()), prepared, env, floor).used;
                backprop_pixel(hits.data(), used, prepared, env, d, pixel_adjoint(adjoint, x, y), local.data(),
                               transmittance);
            }
        }
    });

    std::vector<Accum<Scalar>> total(scene.splats.size());
    for (std::size_t k = 0; k < bins.items.size(); ++k)
        total[bins.items[k]] += local[k];

    SplatGradients<Scalar> grads;
    grads.splats.resize(scene.splats.size());
    parallel_for(int(scene.splats.size()), settings.threads, [&](int i) {
        grads.splats[i] = finish_gradient(scene.splats[i], prepared[i], total[i], camera);
    });
    return grads;
}

// --- proxy mesh buffers -------------------------------------------------------------------------

template <typename Scalar>
RenderBuffers<Scalar> render_mesh_buffers(const TriangleMesh &mesh, const Camera<Scalar> &camera,
                                          const RenderSettings &settings) {
    camera.validate();
    mesh.validate();
    RenderBuffers<Scalar> out(camera.width, camera.height);
    const Camera<double> cam = camera.template cast<double>();
    const std::size_t nf = mesh.faces.size();
    std::vector<std::array<Vec3<double>, 3>> tris(nf);
    std::vector<PixelBox> boxes(nf);
    for (std::size_t f = 0; f < nf; ++f) {
        for (int k = 0; k < 3; ++k)
            tris[f][k] = cam.to_camera(mesh.vertices[mesh.faces[f][k]]);
        boxes[f] = polygon_box(tris[f].data(), 3, cam);
    }
    const TileBins bins = bin_boxes(boxes, camera.width, camera.height, settings.tile_size);

    parallel_for(bins.count(), settings.threads, [&](int t) {
        const int tx = t % bins.tiles_x, ty = t / bins.tiles_x;
        const int x_end = std::min(camera.width, (tx + 1) * bins.tile_size);
        const int y_end = std::min(camera.height, (ty + 1) * bins.tile_size);
        for (int y = ty * bins.tile_size; y < y_end; ++y) {
            for (int x = tx * bins.tile_size; x < x_end; ++x) {
                const Vec3<double> d = cam.pixel_ray(x, y);
                double best = std::numeric_limits<double>::infinity();
                int best_face = -1;
                for (int k = bins.begin(t); k < bins.end(t); ++k) {
                    const int f = bins.items[k];
                    const auto &v = tris[f];
                    // Moller-Trumbore from the camera origin.
                    const Vec3<double> e1 = v[1] - v[0], e2 = v[2] - v[0];
                    const Vec3<double> pv = d.cross(e2);
                    const double det = e1.dot(pv);
                    if (std::abs(det) < 1e-300)
                        continue;
                    const Vec3<double> tv = -v[0];
                    const double bu = tv.dot(pv) / det;
                    if (bu < -1e-12 || bu > 1 + 1e-12)
                        continue;
                    const Vec3<double> qv = tv.cross(e1);
                    const double bv = d.dot(qv) / det;
                    if (bv < -1e-12 || bu + bv > 1 + 1e-12)
                        continue;
                    const double depth = e2.dot(qv) / det;
                    if (depth < cam.near_plane || depth > cam.far_plane)
                        continue;
                    if (depth < best) {
                        best = depth;
                        best_face = f;
                    }
                }
                if (best_face < 0)
                    continue;
                const auto &v = tris[best_face];
                Vec3<double> n = (v[1] - v[0]).cross(v[2] - v[0]).normalized();
                if (n.dot(d) > 0)
                    n = -n;
                out.disparity(x, y) = Scalar(1.0 / best);
                out.normal.pixel(x, y) = n.cast<Scalar>().array();
                out.alpha(x, y) = Scalar(1);
            }
        }
    });
    return out;
}

#define GGDS_INSTANTIATE_RASTER(S)                                                                                \
    template struct RenderBuffers<S>;                                                                             \
    template struct RenderAdjoint<S>;                                                                             \
    template struct SplatGradient<S>;                                                                             \
    template Vec3<S> pixel_direction_world<S>(const Camera<S> &, int, int);                                       \
    template RenderBuffers<S> render<S>(const SceneModel<S> &, const Camera<S> &, const RenderSettings &);        \
    template RenderBuffers<S> render_reference<S>(const SceneModel<S> &, const Camera<S> &,                       \
                                                  const RenderSettings &);                                        \
    template SplatGradients<S> backward<S>(const SceneModel<S> &, const Camera<S> &, const RenderAdjoint<S> &,    \
                                           const RenderSettings &);                                               \
    template RenderBuffers<S> render_mesh_buffers<S>(const TriangleMesh &, const Camera<S> &, const RenderSettings &);

GGDS_INSTANTIATE_RASTER(float)
GGDS_INSTANTIATE_RASTER(double)

} // namespace ggds
