#include "tofdetect/volume.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>

#include "tofdetect/error.hpp"

namespace tofd {

namespace {

void check_dims(Index3 dims) {
    if (dims.x < 1 || dims.y < 1 || dims.z < 1) {
        std::ostringstream os;
        os << "volume dims must be >= 1, got (" << dims.x << ", " << dims.y << ", " << dims.z << ")";
        fail(ErrorKind::InvalidArgument, os.str());
    }
}

void check_spacing(Vec3 s) {
    if (!(s.x > 0.0 && s.y > 0.0 && s.z > 0.0) || !std::isfinite(s.x) || !std::isfinite(s.y) ||
        !std::isfinite(s.z))
        fail(ErrorKind::InvalidArgument, "volume spacing must be finite and > 0");
}

void check_same_dims(Index3 a, Index3 b, const char* what) {
    if (a != b) fail(ErrorKind::GeometryMismatch, std::string(what) + ": mask dimensions differ");
}

int clamp_index(long long v, int n) { return static_cast<int>(std::clamp<long long>(v, 0, n - 1)); }

int round_half_up(double v) { return static_cast<int>(std::floor(v + 0.5)); }

float sample_trilinear(const Volume& vol, double x, double y, double z) {
    const Index3 d = vol.dims();
    x = std::clamp(x, 0.0, static_cast<double>(d.x - 1));
    y = std::clamp(y, 0.0, static_cast<double>(d.y - 1));
    z = std::clamp(z, 0.0, static_cast<double>(d.z - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const int z0 = static_cast<int>(std::floor(z));
    const int x1 = std::min(x0 + 1, d.x - 1);
    const int y1 = std::min(y0 + 1, d.y - 1);
    const int z1 = std::min(z0 + 1, d.z - 1);
    const double fx = x - x0, fy = y - y0, fz = z - z0;
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(vol.at(x0, y0, z0), vol.at(x1, y0, z0), fx);
    const double c10 = lerp(vol.at(x0, y1, z0), vol.at(x1, y1, z0), fx);
    const double c01 = lerp(vol.at(x0, y0, z1), vol.at(x1, y0, z1), fx);
    const double c11 = lerp(vol.at(x0, y1, z1), vol.at(x1, y1, z1), fx);
    return static_cast<float>(lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz));
}

}  // namespace

// ---------------------------------------------------------------- containers

Volume::Volume(Index3 dims, Vec3 spacing, float fill) : dims_(dims), spacing_(spacing) {
    check_dims(dims);
    check_spacing(spacing);
    if (!std::isfinite(fill)) fail(ErrorKind::InvalidArgument, "volume fill value must be finite");
    voxels_.assign(dims.product(), fill);
}

Volume::Volume(Index3 dims, Vec3 spacing, std::vector<float> voxels)
    : dims_(dims), spacing_(spacing), voxels_(std::move(voxels)) {
    check_dims(dims);
    check_spacing(spacing);
    if (voxels_.size() != dims.product()) {
        std::ostringstream os;
        os << "voxel count " << voxels_.size() << " does not match dims product " << dims.product();
        fail(ErrorKind::InvalidArgument, os.str());
    }
    for (float v : voxels_)
        if (!std::isfinite(v)) fail(ErrorKind::InvalidArgument, "volume contains a non-finite value");
}

std::pair<float, float> Volume::min_max() const {
    if (voxels_.empty()) return {0.0f, 0.0f};
    const auto [lo, hi] = std::minmax_element(voxels_.begin(), voxels_.end());
    return {*lo, *hi};
}

BinaryMask::BinaryMask(Index3 dims, bool fill) : dims_(dims) {
    check_dims(dims);
    bits_.assign(dims.product(), fill ? 1 : 0);
}

std::size_t BinaryMask::count() const noexcept {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    check_same_dims(a.dims(), b.dims(), "mask_union");
    BinaryMask out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] || b[i]);
    return out;
}

BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
    check_same_dims(a.dims(), b.dims(), "mask_intersection");
    BinaryMask out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] && b[i]);
    return out;
}

BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b) {
    check_same_dims(a.dims(), b.dims(), "mask_difference");
    BinaryMask out(a.dims());
    for (std::size_t i = 0; i < a.size(); ++i) out.set(i, a[i] && !b[i]);
    return out;
}

bool is_subset(const BinaryMask& inner, const BinaryMask& outer) {
    check_same_dims(inner.dims(), outer.dims(), "is_subset");
    for (std::size_t i = 0; i < inner.size(); ++i)
        if (inner[i] && !outer[i]) return false;
    return true;
}

// ---------------------------------------------------------------- transforms

Vec3 GeometricTransform::to_original(Vec3 t) const noexcept {
    return {crop_offset.x + (t.x + 0.5) * scale.x - 0.5, crop_offset.y + (t.y + 0.5) * scale.y - 0.5,
            crop_offset.z + (t.z + 0.5) * scale.z - 0.5};
}

Vec3 GeometricTransform::to_target(Vec3 o) const noexcept {
    return {(o.x - crop_offset.x + 0.5) / scale.x - 0.5, (o.y - crop_offset.y + 0.5) / scale.y - 0.5,
            (o.z - crop_offset.z + 0.5) / scale.z - 0.5};
}

bool GeometricTransform::is_identity() const noexcept {
    return crop_offset == Index3{} && scale == Vec3{1.0, 1.0, 1.0} && original_dims == target_dims;
}

// ---------------------------------------------------------------- intensity

Volume normalize_intensity(const Volume& vol, float target_max) {
    if (!(target_max > 0.0f)) fail(ErrorKind::InvalidArgument, "target_max must be > 0");
    const auto [lo, hi] = vol.min_max();
    if (lo == hi) fail(ErrorKind::ConstantVolume, "cannot normalize a constant volume");
    const double k = static_cast<double>(target_max) / (static_cast<double>(hi) - lo);
    std::vector<float> out(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) {
        out[i] = static_cast<float>((static_cast<double>(vol[i]) - lo) * k);
        if (vol[i] == hi) out[i] = target_max;
    }
    return Volume(vol.dims(), vol.spacing(), std::move(out));
}

Volume histogram_equalize(const Volume& vol, int bins) {
    if (bins < 2) fail(ErrorKind::InvalidArgument, "histogram_equalize needs bins >= 2");
    const auto [lo, hi] = vol.min_max();
    if (lo == hi) fail(ErrorKind::ConstantVolume, "cannot equalize a constant volume");
    const double range = static_cast<double>(hi) - lo;
    const double width = range / bins;
    auto bin_of = [&](float v, double& frac) {
        const double pos = (static_cast<double>(v) - lo) / width;
        const int b = std::clamp(static_cast<int>(std::floor(pos)), 0, bins - 1);
        frac = std::clamp(pos - b, 0.0, 1.0);
        return b;
    };
    std::vector<double> hist(bins, 0.0);
    for (float v : vol.data()) {
        double f;
        hist[bin_of(v, f)] += 1.0;
    }
    std::vector<double> below(bins + 1, 0.0);  // below[b] = count in bins < b
    for (int b = 0; b < bins; ++b) below[b + 1] = below[b] + hist[b];
    const double total = below[bins];

    std::vector<float> out(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i) {
        double f;
        const int b = bin_of(vol[i], f);
        // CDF interpolated linearly inside the bin; the minimum maps to lo, the maximum to hi.
        const double cdf = below[b] + hist[b] * f;
        out[i] = static_cast<float>(lo + range * (cdf / total));
        if (vol[i] == hi) out[i] = hi;
        if (vol[i] == lo) out[i] = lo;
    }
    return Volume(vol.dims(), vol.spacing(), std::move(out));
}

int effective_kernel_width(int max_kernel_width) {
    int w = std::max(3, max_kernel_width);
    if (w % 2 == 0) ++w;
    return w;
}

std::vector<double> discrete_gaussian_kernel(double variance, int max_kernel_width) {
    if (!(variance > 0.0)) fail(ErrorKind::InvalidArgument, "gaussian variance must be > 0");
    const int w = effective_kernel_width(max_kernel_width);
    const int r = w / 2;
    std::vector<double> k(w);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-static_cast<double>(i) * i / (2.0 * variance));
        sum += k[i + r];
    }
    for (double& v : k) v /= sum;
    return k;
}

Volume gaussian_smooth_discrete(const Volume& vol, double variance, int max_kernel_width) {
    const std::vector<double> kernel = discrete_gaussian_kernel(variance, max_kernel_width);
    const int r = static_cast<int>(kernel.size()) / 2;
    const Index3 d = vol.dims();
    std::vector<double> cur(vol.data().begin(), vol.data().end());
    std::vector<double> next(cur.size());

    // One separable pass per axis, clamp-to-edge borders.
    for (int axis = 0; axis < 3; ++axis) {
        const int n = axis == 0 ? d.x : axis == 1 ? d.y : d.z;
        const std::size_t stride = axis == 0 ? 1 : axis == 1 ? static_cast<std::size_t>(d.x)
                                                             : static_cast<std::size_t>(d.x) * d.y;
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    const int pos = axis == 0 ? x : axis == 1 ? y : z;
                    const std::size_t base = linear_index(d, x, y, z) - static_cast<std::size_t>(pos) * stride;
                    double acc = 0.0;
                    for (int k = -r; k <= r; ++k) {
                        const int p = clamp_index(pos + k, n);
                        acc += kernel[k + r] * cur[base + static_cast<std::size_t>(p) * stride];
                    }
                    next[linear_index(d, x, y, z)] = acc;
                }
        std::swap(cur, next);
    }
    std::vector<float> out(cur.size());
    std::transform(cur.begin(), cur.end(), out.begin(), [](double v) { return static_cast<float>(v); });
    return Volume(d, vol.spacing(), std::move(out));
}

// ---------------------------------------------------------------- geometry

std::pair<Volume, GeometricTransform> resize_to(const Volume& vol, Index3 target, Interpolation interp,
                                                const GeometricTransform* prior) {
    check_dims(target);
    const Index3 d = vol.dims();
    const Vec3 scale{static_cast<double>(d.x) / target.x, static_cast<double>(d.y) / target.y,
                     static_cast<double>(d.z) / target.z};
    const GeometricTransform local{{}, scale, d, target};

    Volume out(target, {vol.spacing().x * scale.x, vol.spacing().y * scale.y, vol.spacing().z * scale.z});
    for (int z = 0; z < target.z; ++z)
        for (int y = 0; y < target.y; ++y)
            for (int x = 0; x < target.x; ++x) {
                const Vec3 o = local.to_original({double(x), double(y), double(z)});
                if (interp == Interpolation::Nearest) {
                    out.at(x, y, z) = vol.at(clamp_index(round_half_up(o.x), d.x), clamp_index(round_half_up(o.y), d.y),
                                             clamp_index(round_half_up(o.z), d.z));
                } else {
                    out.at(x, y, z) = sample_trilinear(vol, o.x, o.y, o.z);
                }
            }

    GeometricTransform t = local;
    if (prior != nullptr) {
        t.crop_offset = prior->crop_offset;
        t.scale = {prior->scale.x * scale.x, prior->scale.y * scale.y, prior->scale.z * scale.z};
        t.original_dims = prior->original_dims;
    }
    return {std::move(out), t};
}

std::pair<Volume, GeometricTransform> resample_isotropic(const Volume& vol, Interpolation interp) {
    const Vec3 s = vol.spacing();
    const double m = std::min({s.x, s.y, s.z});
    const Index3 d = vol.dims();
    auto scaled = [m](int n, double sp) { return std::max(1, static_cast<int>(std::lround(n * sp / m))); };
    const Index3 target{scaled(d.x, s.x), scaled(d.y, s.y), scaled(d.z, s.z)};
    auto [out, t] = resize_to(vol, target, interp);
    // Spacing is m by construction; store it exactly rather than via the ratio.
    Volume iso(out.dims(), {m, m, m}, std::vector<float>(out.data().begin(), out.data().end()));
    return {std::move(iso), t};
}

std::pair<Volume, GeometricTransform> crop(const Volume& vol, Index3 offset, Index3 dims) {
    check_dims(dims);
    const Index3 d = vol.dims();
    if (offset.x < 0 || offset.y < 0 || offset.z < 0 || offset.x + dims.x > d.x || offset.y + dims.y > d.y ||
        offset.z + dims.z > d.z)
        fail(ErrorKind::InvalidArgument, "crop window exceeds volume bounds");
    Volume out(dims, vol.spacing());
    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) out.at(x, y, z) = vol.at(x + offset.x, y + offset.y, z + offset.z);
    return {std::move(out), GeometricTransform{offset, {1.0, 1.0, 1.0}, d, dims}};
}

BinaryMask resize_mask(const BinaryMask& mask, Index3 target) {
    check_dims(target);
    const Index3 d = mask.dims();
    const GeometricTransform t{{}, {double(d.x) / target.x, double(d.y) / target.y, double(d.z) / target.z}, d, target};
    BinaryMask out(target);
    for (int z = 0; z < target.z; ++z)
        for (int y = 0; y < target.y; ++y)
            for (int x = 0; x < target.x; ++x) {
                const Vec3 o = t.to_original({double(x), double(y), double(z)});
                out.set(x, y, z, mask.at(clamp_index(round_half_up(o.x), d.x), clamp_index(round_half_up(o.y), d.y),
                                         clamp_index(round_half_up(o.z), d.z)));
            }
    return out;
}

Volume flip_transverse(const Volume& vol) {
    const Index3 d = vol.dims();
    Volume out(d, vol.spacing());
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) out.at(x, y, d.z - 1 - z) = vol.at(x, y, z);
    return out;
}

BinaryMask flip_transverse(const BinaryMask& mask) {
    const Index3 d = mask.dims();
    BinaryMask out(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) out.set(x, y, d.z - 1 - z, mask.at(x, y, z));
    return out;
}

BinaryMask spherical_dilate(const BinaryMask& mask, double radius) {
    if (!(radius >= 0.0)) fail(ErrorKind::InvalidArgument, "dilation radius must be >= 0");
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    std::vector<Index3> offsets;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx)
                if (dx * dx + dy * dy + dz * dz <= r2 + 1e-9) offsets.push_back({dx, dy, dz});

    const Index3 d = mask.dims();
    BinaryMask out(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                if (!mask.at(x, y, z)) continue;
                for (const Index3& o : offsets) {
                    const int nx = x + o.x, ny = y + o.y, nz = z + o.z;
                    if (in_bounds(d, nx, ny, nz)) out.set(nx, ny, nz);
                }
            }
    return out;
}

std::vector<ConnectedComponent> connected_components(const BinaryMask& mask, Connectivity conn) {
    const Index3 d = mask.dims();
    std::vector<Index3> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (conn == Connectivity::Six && manhattan != 1) continue;
                offsets.push_back({dx, dy, dz});
            }

    std::vector<std::uint8_t> visited(mask.size(), 0);
    std::vector<ConnectedComponent> comps;
    std::deque<std::size_t> queue;
    // Scan order is x-fastest, so components come out sorted by (min z, min y, min x).
    for (std::size_t start = 0; start < mask.size(); ++start) {
        if (!mask[start] || visited[start]) continue;
        ConnectedComponent c;
        visited[start] = 1;
        queue.push_back(start);
        while (!queue.empty()) {
            const std::size_t i = queue.front();
            queue.pop_front();
            c.voxel_indices.push_back(i);
            const Index3 p = unravel_index(d, i);
            for (const Index3& o : offsets) {
                const int nx = p.x + o.x, ny = p.y + o.y, nz = p.z + o.z;
                if (!in_bounds(d, nx, ny, nz)) continue;
                const std::size_t j = linear_index(d, nx, ny, nz);
                if (mask[j] && !visited[j]) {
                    visited[j] = 1;
                    queue.push_back(j);
                }
            }
        }
        std::sort(c.voxel_indices.begin(), c.voxel_indices.end());

        double sx = 0, sy = 0, sz = 0;
        int zmin = std::numeric_limits<int>::max(), zmax = std::numeric_limits<int>::min();
        for (std::size_t i : c.voxel_indices) {
            const Index3 p = unravel_index(d, i);
            sx += p.x;
            sy += p.y;
            sz += p.z;
            zmin = std::min(zmin, p.z);
            zmax = std::max(zmax, p.z);
        }
        const double n = static_cast<double>(c.voxel_indices.size());
        c.centroid = {sx / n, sy / n, sz / n};
        c.z_min = zmin;
        c.z_extent = zmax - zmin + 1;
        double r2 = 0.0;
        for (std::size_t i : c.voxel_indices) {
            const Index3 p = unravel_index(d, i);
            const double dx = p.x - c.centroid.x, dy = p.y - c.centroid.y;
            r2 = std::max(r2, dx * dx + dy * dy);
        }
        c.max_planar_radius = std::sqrt(r2);
        comps.push_back(std::move(c));
    }
    return comps;
}

BinaryMask remap_mask(const BinaryMask& mask, const GeometricTransform& t) {
    if (mask.dims() != t.target_dims) fail(ErrorKind::GeometryMismatch, "mask dims differ from transform target dims");
    const Index3 od = t.original_dims;
    const Index3 td = t.target_dims;
    BinaryMask out(od);
    // Pull: every original voxel looks up its nearest target voxel.
    for (int z = 0; z < od.z; ++z)
        for (int y = 0; y < od.y; ++y)
            for (int x = 0; x < od.x; ++x) {
                const Vec3 p = t.to_target({double(x), double(y), double(z)});
                const int tx = round_half_up(p.x), ty = round_half_up(p.y), tz = round_half_up(p.z);
                if (in_bounds(td, tx, ty, tz) && mask.at(tx, ty, tz)) out.set(x, y, z);
            }
    // Push: set voxels that no original voxel sampled still land somewhere.
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        const Index3 q = unravel_index(td, i);
        const Vec3 o = t.to_original({double(q.x), double(q.y), double(q.z)});
        const int ox = round_half_up(o.x), oy = round_half_up(o.y), oz = round_half_up(o.z);
        if (in_bounds(od, ox, oy, oz)) out.set(ox, oy, oz);
    }
    return out;
}

Volume remap_volume(const Volume& vol, const GeometricTransform& t) {
    if (vol.dims() != t.target_dims) fail(ErrorKind::GeometryMismatch, "volume dims differ from transform target dims");
    const Index3 od = t.original_dims;
    const Index3 td = t.target_dims;
    const Vec3 s = vol.spacing();
    Volume out(od, {s.x / t.scale.x, s.y / t.scale.y, s.z / t.scale.z});
    for (int z = 0; z < od.z; ++z)
        for (int y = 0; y < od.y; ++y)
            for (int x = 0; x < od.x; ++x) {
                const Vec3 p = t.to_target({double(x), double(y), double(z)});
                const int tx = round_half_up(p.x), ty = round_half_up(p.y), tz = round_half_up(p.z);
                if (in_bounds(td, tx, ty, tz)) out.at(x, y, z) = vol.at(tx, ty, tz);
            }
    return out;
}

Volume apply_mask(const Volume& vol, const BinaryMask& mask) {
    if (vol.dims() != mask.dims()) fail(ErrorKind::GeometryMismatch, "apply_mask: mask dims differ from volume");
    std::vector<float> out(vol.data().begin(), vol.data().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (!mask[i]) out[i] = 0.0f;
    return Volume(vol.dims(), vol.spacing(), std::move(out));
}

}  // namespace tofd
