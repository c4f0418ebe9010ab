#include "tofdetect/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "tofdetect/error.hpp"
#include "tofdetect/rng.hpp"

namespace tofd {
namespace {

Vec3 sub(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
Vec3 add(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
Vec3 scaled(Vec3 a, double s) { return {a.x * s, a.y * s, a.z * s}; }
double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
Vec3 cross(Vec3 a, Vec3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }

double distance_to_segment(Vec3 a, Vec3 b, Vec3 p) {
    const Vec3 ab = sub(b, a);
    const double len2 = dot(ab, ab);
    double t = len2 > 0.0 ? dot(sub(p, a), ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return norm(sub(p, add(a, scaled(ab, t))));
}

bool finite3(Vec3 v) { return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z); }

// Point and unit tangent at arclength fraction s of the polyline.
std::pair<Vec3, Vec3> polyline_at(const std::vector<Vec3>& pts, double s) {
    double total = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i) total += norm(sub(pts[i], pts[i - 1]));
    double want = s * total;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        const Vec3 seg = sub(pts[i], pts[i - 1]);
        const double len = norm(seg);
        if (want <= len || i + 1 == pts.size()) {
            const double t = len > 0.0 ? std::clamp(want / len, 0.0, 1.0) : 0.0;
            return {add(pts[i - 1], scaled(seg, t)), len > 0.0 ? scaled(seg, 1.0 / len) : Vec3{0, 0, 1}};
        }
        want -= len;
    }
    return {pts.front(), {0, 0, 1}};
}

}  // namespace

void validate(const PhantomSpec& spec) {
    const auto bad = [](const std::string& msg) { fail(ErrorKind::SpecInvalid, msg); };
    if (spec.dims.x < 1 || spec.dims.y < 1 || spec.dims.z < 1) bad("dims must be >= 1");
    if (!(spec.spacing.x > 0 && spec.spacing.y > 0 && spec.spacing.z > 0)) bad("spacing must be > 0");
    if (!std::isfinite(spec.background_mean)) bad("background mean must be finite");
    if (!(spec.noise_std >= 0.0) || !std::isfinite(spec.noise_std)) bad("noise std must be >= 0");
    for (std::size_t i = 0; i < spec.vessels.size(); ++i) {
        const VesselSpec& v = spec.vessels[i];
        const std::string tag = "vessel " + std::to_string(i);
        if (v.points.empty()) bad(tag + ": polyline has no points");
        for (const Vec3& p : v.points)
            if (!finite3(p)) bad(tag + ": non-finite control point");
        if (!(v.radius > 0.0)) bad(tag + ": radius must be > 0");
        if (!(v.peak > spec.background_mean)) bad(tag + ": peak must exceed the background mean");
    }
    for (std::size_t i = 0; i < spec.aneurysms.size(); ++i) {
        const AneurysmSpec& a = spec.aneurysms[i];
        const std::string tag = "aneurysm " + std::to_string(i);
        if (!(a.radius > 0.0)) bad(tag + ": radius must be > 0");
        if (!(a.peak > spec.background_mean)) bad(tag + ": peak must exceed the background mean");
        const Vec3 c = a.center;
        if (!finite3(c) || c.x < 0 || c.y < 0 || c.z < 0 || c.x > spec.dims.x - 1 || c.y > spec.dims.y - 1 ||
            c.z > spec.dims.z - 1)
            bad(tag + ": center out of bounds");
    }
}

double gaussian_profile(double d, double radius, double peak) {
    const double s = radius / 2.0;
    return peak * std::exp(-(d * d) / (2.0 * s * s));
}

double distance_to_polyline(const std::vector<Vec3>& points, Vec3 p) {
    if (points.size() == 1) return norm(sub(p, points.front()));
    double best = INFINITY;
    for (std::size_t i = 1; i < points.size(); ++i) best = std::min(best, distance_to_segment(points[i - 1], points[i], p));
    return best;
}

Phantom generate_phantom(const PhantomSpec& spec) {
    validate(spec);
    const Index3 dims = spec.dims;
    const std::size_t n = dims.product();
    std::vector<double> intensity(n, spec.background_mean);
    BinaryMask vessel_gt(dims);
    std::vector<std::vector<std::size_t>> aneurysm_voxels(spec.aneurysms.size());

    for (int z = 0; z < dims.z; ++z)
        for (int y = 0; y < dims.y; ++y)
            for (int x = 0; x < dims.x; ++x) {
                const std::size_t i = linear_index(dims, x, y, z);
                const Vec3 p{double(x), double(y), double(z)};
                for (const VesselSpec& v : spec.vessels) {
                    const double c = gaussian_profile(distance_to_polyline(v.points, p), v.radius, v.peak);
                    intensity[i] += c;
                    if (c >= 0.5 * v.peak) vessel_gt.set(i);
                }
                for (std::size_t a = 0; a < spec.aneurysms.size(); ++a) {
                    const AneurysmSpec& s = spec.aneurysms[a];
                    const double c = gaussian_profile(norm(sub(p, s.center)), s.radius, s.peak);
                    intensity[i] += c;
                    if (c >= 0.5 * s.peak) aneurysm_voxels[a].push_back(i);
                }
            }

    if (spec.noise_std > 0.0) {
        Rng rng = Rng::derived(spec.seed, "noise");
        for (double& v : intensity) v += spec.noise_std * rng.normal();
    }

    Phantom out;
    std::vector<float> voxels(n);
    std::transform(intensity.begin(), intensity.end(), voxels.begin(), [](double v) { return static_cast<float>(v); });
    out.volume = Volume(dims, spec.spacing, std::move(voxels));
    out.vessel_gt = std::move(vessel_gt);

    BinaryMask claimed(dims);
    for (std::size_t a = 0; a < spec.aneurysms.size(); ++a) {
        if (aneurysm_voxels[a].empty())
            fail(ErrorKind::SpecInvalid, "aneurysm " + std::to_string(a) + " is too small to cover a voxel");
        for (std::size_t i : aneurysm_voxels[a]) {
            if (claimed[i]) fail(ErrorKind::SpecInvalid, "aneurysm " + std::to_string(a) + " overlaps another");
            claimed.set(i);
        }
        const AneurysmSpec& s = spec.aneurysms[a];
        const double mm = std::min({spec.spacing.x, spec.spacing.y, spec.spacing.z});
        out.aneurysms.push_back({std::move(aneurysm_voxels[a]), s.center, 2.0 * kHalfPeakFraction * s.radius * mm});
    }
    return out;
}

PhantomSpec draw_phantom_spec(const DatasetTemplate& t, bool positive, std::uint64_t seed) {
    Rng rng(seed);
    PhantomSpec spec;
    spec.dims = t.dims;
    spec.spacing = t.spacing;
    spec.background_mean = t.background_mean;
    spec.noise_std = t.noise_std;
    spec.seed = Rng::mix(seed);

    // Vessels run roughly along z, the way large arteries cross axial slices.
    const int cp = std::max(2, t.control_points);
    for (int v = 0; v < t.vessels; ++v) {
        VesselSpec vs;
        vs.radius = rng.uniform(t.vessel_radius_min, t.vessel_radius_max);
        vs.peak = rng.uniform(t.peak_min, t.peak_max);
        double x = rng.uniform(0.3, 0.7) * (t.dims.x - 1);
        double y = rng.uniform(0.3, 0.7) * (t.dims.y - 1);
        for (int k = 0; k < cp; ++k) {
            const double z = -0.1 * t.dims.z + 1.2 * t.dims.z * k / (cp - 1);
            vs.points.push_back({x, y, z});
            x = std::clamp(x + rng.uniform(-0.12, 0.12) * t.dims.x, 0.2 * t.dims.x, 0.8 * (t.dims.x - 1));
            y = std::clamp(y + rng.uniform(-0.12, 0.12) * t.dims.y, 0.2 * t.dims.y, 0.8 * (t.dims.y - 1));
        }
        spec.vessels.push_back(std::move(vs));
    }

    if (positive && !spec.vessels.empty()) {
        const VesselSpec& host = spec.vessels[rng.below(spec.vessels.size())];
        // Attach to the wall: a random point on the middle of the centerline,
        // pushed out perpendicular to the tangent by at most one vessel radius.
        const auto [p, tangent] = polyline_at(host.points, rng.uniform(0.4, 0.6));
        Vec3 ref = std::abs(tangent.z) < 0.9 ? Vec3{0, 0, 1} : Vec3{1, 0, 0};
        Vec3 u = cross(tangent, ref);
        u = scaled(u, 1.0 / norm(u));
        const Vec3 w = cross(tangent, u);
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const Vec3 dir = add(scaled(u, std::cos(phi)), scaled(w, std::sin(phi)));
        AneurysmSpec a;
        a.center = add(p, scaled(dir, rng.uniform(0.5, 1.0) * host.radius));
        a.center.x = std::clamp(a.center.x, 0.0, t.dims.x - 1.0);
        a.center.y = std::clamp(a.center.y, 0.0, t.dims.y - 1.0);
        a.center.z = std::clamp(a.center.z, 0.0, t.dims.z - 1.0);
        a.radius = rng.uniform(t.aneurysm_radius_min, t.aneurysm_radius_max);
        a.peak = host.peak * rng.uniform(0.9, 1.1);
        spec.aneurysms.push_back(a);
    }
    return spec;
}

std::vector<Phantom> generate_dataset(int n_cases, double aneurysm_rate, const DatasetTemplate& tmpl,
                                      std::uint64_t seed) {
    if (n_cases < 1) fail(ErrorKind::InvalidArgument, "generate_dataset: n_cases must be >= 1");
    if (!(aneurysm_rate >= 0.0 && aneurysm_rate <= 1.0))
        fail(ErrorKind::InvalidArgument, "generate_dataset: rate must be in [0, 1]");
    const auto n_pos = static_cast<std::size_t>(std::llround(aneurysm_rate * n_cases));
    std::vector<int> order(n_cases);
    for (int i = 0; i < n_cases; ++i) order[i] = i;
    Rng pick = Rng::derived(seed, "positives");
    pick.shuffle(order);
    std::vector<bool> positive(n_cases, false);
    for (std::size_t i = 0; i < n_pos; ++i) positive[order[i]] = true;

    std::vector<Phantom> out;
    out.reserve(n_cases);
    const Rng base(seed);
    for (int i = 0; i < n_cases; ++i) {
        Phantom ph = generate_phantom(draw_phantom_spec(tmpl, positive[i], base.derived(std::uint64_t(i)).seed()));
        char id[32];
        std::snprintf(id, sizeof id, "case_%03d", i);
        ph.case_id = id;
        out.push_back(std::move(ph));
    }
    return out;
}

}  // namespace tofd
