#include "tofdetect/voi.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>

#include "tofdetect/error.hpp"

namespace tofd {

BitPlane BitPlane::from_mask(const BinaryMask& mask, int z) {
    const Index3 d = mask.dims();
    BitPlane p{d.x, d.y, std::vector<std::uint8_t>(static_cast<std::size_t>(d.x) * d.y)};
    for (int y = 0; y < d.y; ++y)
        for (int x = 0; x < d.x; ++x) p.bits[static_cast<std::size_t>(y) * d.x + x] = mask.at(x, y, z) ? 1 : 0;
    return p;
}

BinaryMask threshold_binarize(const Volume& vol, double threshold) {
    BinaryMask out(vol.dims());
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (vol[i] >= threshold) out.set(i);
    return out;
}

std::pair<int, int> middle_slice_range(int nz, double fraction) {
    if (nz < 1) fail(ErrorKind::InvalidArgument, "middle_slice_range needs nz >= 1");
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(ErrorKind::InvalidArgument, "slice fraction must be in (0, 1]");
    const int count = std::clamp(static_cast<int>(std::lround(fraction * nz)), 1, nz);
    const int lower_margin = (nz - count) / 2;
    return {lower_margin, lower_margin + count - 1};
}

Point2 slice_center(int nx, int ny) { return {(nx - 1) / 2.0, (ny - 1) / 2.0}; }

double center_to_edge(int nx, int ny, double angle) {
    const Point2 c = slice_center(nx, ny);
    const double ux = std::cos(angle), uy = std::sin(angle);
    double t = std::numeric_limits<double>::infinity();
    // Image occupies [-0.5, n - 0.5] on each axis.
    if (std::abs(ux) > 1e-12) t = std::min(t, ((ux > 0 ? nx - 0.5 : -0.5) - c.x) / ux);
    if (std::abs(uy) > 1e-12) t = std::min(t, ((uy > 0 ? ny - 0.5 : -0.5) - c.y) / uy);
    return t;
}

namespace {

struct Step {
    double t;  // signed position along the line, center at 0
};

// Steps along one line: transitions between consecutive unit samples.
// A step is located at the foreground sample of the transition.
std::vector<Step> line_steps(const BitPlane& slice, double angle) {
    const Point2 c = slice_center(slice.nx, slice.ny);
    const double ux = std::cos(angle), uy = std::sin(angle);
    auto sample = [&](int t, bool& inside) {
        const int x = static_cast<int>(std::floor(c.x + t * ux + 0.5));
        const int y = static_cast<int>(std::floor(c.y + t * uy + 0.5));
        inside = x >= 0 && y >= 0 && x < slice.nx && y < slice.ny;
        return inside && slice.at(x, y);
    };
    int t_min = 0, t_max = 0;
    bool inside = true;
    while (true) {
        sample(t_max + 1, inside);
        if (!inside) break;
        ++t_max;
    }
    while (true) {
        sample(t_min - 1, inside);
        if (!inside) break;
        --t_min;
    }
    std::vector<Step> steps;
    bool prev = sample(t_min, inside);
    for (int t = t_min + 1; t <= t_max; ++t) {
        const bool cur = sample(t, inside);
        if (cur != prev) steps.push_back({static_cast<double>(cur ? t : t - 1)});
        prev = cur;
    }
    return steps;
}

Point2 along(Point2 c, double angle, double t) { return {c.x + t * std::cos(angle), c.y + t * std::sin(angle)}; }

}  // namespace

std::vector<LineSteps> radial_step_points(const BitPlane& slice, int n_lines) {
    if (n_lines < 1) fail(ErrorKind::InvalidArgument, "radial_step_points needs n_lines >= 1");
    const Point2 c = slice_center(slice.nx, slice.ny);
    std::vector<LineSteps> out;
    out.reserve(n_lines);
    for (int k = 0; k < n_lines; ++k) {
        const double angle = k * std::numbers::pi / n_lines;
        LineSteps ls{angle, std::nullopt};
        const std::vector<Step> steps = line_steps(slice, angle);
        if (steps.size() >= 2) {
            const Step* pos = nullptr;
            const Step* neg = nullptr;
            for (const Step& s : steps) {
                if (s.t >= 0 && (pos == nullptr || s.t > pos->t)) pos = &s;
                if (s.t < 0 && (neg == nullptr || s.t < neg->t)) neg = &s;
            }
            if (pos != nullptr && neg != nullptr) {
                ls.points = std::pair{along(c, angle, pos->t), along(c, angle, neg->t)};
            } else {
                std::vector<Step> sorted = steps;
                std::stable_sort(sorted.begin(), sorted.end(),
                                 [](const Step& a, const Step& b) { return std::abs(a.t) > std::abs(b.t); });
                ls.points = std::pair{along(c, angle, sorted[0].t), along(c, angle, sorted[1].t)};
            }
        }
        out.push_back(ls);
    }
    return out;
}

void fill_polygon(const std::vector<Point2>& poly, int z, BinaryMask& out) {
    const Index3 d = out.dims();
    const std::size_t n = poly.size();
    if (n < 3) return;
    std::vector<double> xs;
    for (int y = 0; y < d.y; ++y) {
        xs.clear();
        const double yc = y;
        for (std::size_t i = 0; i < n; ++i) {
            const Point2& a = poly[i];
            const Point2& b = poly[(i + 1) % n];
            if ((a.y > yc) != (b.y > yc)) xs.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[i])));
            const int x1 = std::min(d.x - 1, static_cast<int>(std::floor(xs[i + 1])));
            for (int x = x0; x <= x1; ++x) out.set(x, y, z);
        }
    }
}

SeedTemplate build_seed_template(const BinaryMask& bin, std::pair<int, int> z_range, int n_lines,
                                 double min_radius_fraction) {
    if (!(min_radius_fraction > 0.0 && min_radius_fraction < 1.0))
        fail(ErrorKind::InvalidArgument, "min_radius_fraction must be in (0, 1)");
    const Index3 d = bin.dims();
    const auto [z_lo, z_hi] = z_range;
    if (z_lo < 0 || z_hi >= d.z || z_lo > z_hi) fail(ErrorKind::InvalidArgument, "z range outside volume");

    SeedTemplate tpl{{}, z_lo, z_hi, BinaryMask(d), BinaryMask(d)};
    const Point2 c = slice_center(d.x, d.y);
    for (int z = z_lo; z <= z_hi; ++z) {
        const std::vector<LineSteps> lines = radial_step_points(BitPlane::from_mask(bin, z), n_lines);
        // Vertex k lies on ray angle k * pi / n_lines; rays n..2n-1 point the opposite way.
        std::vector<Point2> polygon(2 * static_cast<std::size_t>(n_lines));
        for (int k = 0; k < n_lines; ++k) {
            const double angle = lines[k].angle;
            for (int side = 0; side < 2; ++side) {
                const double ray = angle + side * std::numbers::pi;
                const double ux = std::cos(ray), uy = std::sin(ray);
                const double min_dist = min_radius_fraction * center_to_edge(d.x, d.y, ray);
                double best = -1.0;
                if (lines[k].points) {
                    for (const Point2& p : {lines[k].points->first, lines[k].points->second}) {
                        const double proj = (p.x - c.x) * ux + (p.y - c.y) * uy;
                        if (proj >= 0.0 && proj > best && (side == 0 || proj > 0.0)) best = proj;
                    }
                }
                const double dist = best >= min_dist ? best : min_dist;
                polygon[static_cast<std::size_t>(side) * n_lines + k] = {c.x + dist * ux, c.y + dist * uy};
            }
        }
        fill_polygon(polygon, z, tpl.region);
        tpl.boundary_points.push_back(std::move(polygon));
    }
    tpl.seeds = mask_intersection(tpl.region, bin);
    return tpl;
}

GaussianStats seed_statistics(const Volume& vol, const BinaryMask& seeds) {
    if (vol.dims() != seeds.dims()) fail(ErrorKind::GeometryMismatch, "seed mask dims differ from volume");
    // Welford accumulation.
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        if (!seeds[i]) continue;
        ++n;
        const double v = vol[i];
        const double delta = v - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (v - mean);
    }
    if (n == 0) fail(ErrorKind::EmptySeeds, "seed template contains no foreground voxels");
    return {mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n)))};
}

IntensityWindow gaussian_window(const GaussianStats& stats, double z_factor) {
    if (!(z_factor > 0.0)) fail(ErrorKind::InvalidArgument, "z_factor must be > 0");
    return {stats.mu - z_factor * stats.sigma, stats.mu + z_factor * stats.sigma};
}

BinaryMask region_grow(const Volume& vol, const BinaryMask& seeds, const IntensityWindow& window) {
    if (vol.dims() != seeds.dims()) fail(ErrorKind::GeometryMismatch, "seed mask dims differ from volume");
    const Index3 d = vol.dims();
    BinaryMask out(d);
    std::deque<std::size_t> queue;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        if (seeds[i] && window.contains(vol[i])) {
            out.set(i);
            queue.push_back(i);
        }
    }
    static constexpr int kOffsets[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    while (!queue.empty()) {
        const Index3 p = unravel_index(d, queue.front());
        queue.pop_front();
        for (const auto& o : kOffsets) {
            const int x = p.x + o[0], y = p.y + o[1], z = p.z + o[2];
            if (!in_bounds(d, x, y, z)) continue;
            const std::size_t j = linear_index(d, x, y, z);
            if (!out[j] && window.contains(vol[j])) {
                out.set(j);
                queue.push_back(j);
            }
        }
    }
    return out;
}

VoiResult extract_voi(const Volume& vol_raw, const VoiParams& params) {
    const Volume normalized = normalize_intensity(vol_raw, params.target_max);
    const BinaryMask bin = threshold_binarize(normalized, params.threshold);
    const auto z_range = middle_slice_range(normalized.dims().z, params.slice_fraction);
    const SeedTemplate tpl = build_seed_template(bin, z_range, params.n_lines, params.min_radius_fraction);
    const GaussianStats stats = seed_statistics(normalized, tpl.seeds);
    const IntensityWindow window = gaussian_window(stats, params.z_factor);
    const BinaryMask grown = region_grow(normalized, tpl.seeds, window);
    BinaryMask vessel = spherical_dilate(grown, params.dilation_radius);
    Volume masked = apply_mask(normalized, vessel);
    return {std::move(vessel), std::move(masked), stats, window};
}

}  // namespace tofd
