#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "tofdetect/volume.hpp"

namespace tofd {

struct GaussianStats {
    double mu = 0.0;
    double sigma = 0.0;
};

struct IntensityWindow {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const noexcept { return v >= lo && v <= hi; }
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Single transverse slice of a binary image, x-fastest.
struct BitPlane {
    int nx = 0;
    int ny = 0;
    std::vector<std::uint8_t> bits;

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * nx + x] != 0; }
    static BitPlane from_mask(const BinaryMask& mask, int z);
};

/// Two farthest step points of one line through the slice center.
struct LineSteps {
    double angle = 0.0;  // radians in [0, pi)
    std::optional<std::pair<Point2, Point2>> points;
};

struct SeedTemplate {
    /// Boundary polygon per slice of the z range (index 0 = z_lo), 2 points per line.
    std::vector<std::vector<Point2>> boundary_points;
    int z_lo = 0;
    int z_hi = -1;
    BinaryMask region;
    BinaryMask seeds;
};

struct VoiParams {
    float target_max = 1024.0f;
    double threshold = 300.0;
    double slice_fraction = 0.6;
    int n_lines = 12;
    double min_radius_fraction = 0.25;
    double z_factor = 1.28;
    double dilation_radius = 1.0;
};

struct VoiResult {
    BinaryMask vessel_mask;
    Volume masked_volume;
    GaussianStats stats;
    IntensityWindow window;
};

BinaryMask threshold_binarize(const Volume& vol, double threshold);

/// Inclusive (z_lo, z_hi) of the centered slab holding round(fraction * nz) slices.
std::pair<int, int> middle_slice_range(int nz, double fraction);

/// Slice center used by the radial construction.
Point2 slice_center(int nx, int ny);

/// Distance from the slice center to the image border along direction `angle`.
double center_to_edge(int nx, int ny, double angle);

std::vector<LineSteps> radial_step_points(const BitPlane& slice, int n_lines);

SeedTemplate build_seed_template(const BinaryMask& bin, std::pair<int, int> z_range, int n_lines,
                                 double min_radius_fraction);

/// Fills the polygon on one z plane of `out` (even-odd rule on voxel centers).
void fill_polygon(const std::vector<Point2>& polygon, int z, BinaryMask& out);

GaussianStats seed_statistics(const Volume& vol, const BinaryMask& seeds);

IntensityWindow gaussian_window(const GaussianStats& stats, double z_factor = 1.28);

/// 6-connected flood from in-window seeds through in-window voxels.
BinaryMask region_grow(const Volume& vol, const BinaryMask& seeds, const IntensityWindow& window);

VoiResult extract_voi(const Volume& vol_raw, const VoiParams& params = {});

}  // namespace tofd
