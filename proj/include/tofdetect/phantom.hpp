#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tofdetect/volume.hpp"

namespace tofd {

struct VesselSpec {
    std::vector<Vec3> points;  // polyline control points, voxel coordinates
    double radius = 3.0;       // voxels
    double peak = 800.0;
};

struct AneurysmSpec {
    Vec3 center;
    double radius = 3.0;
    double peak = 800.0;
};

struct PhantomSpec {
    Index3 dims{32, 32, 32};
    Vec3 spacing{1.0, 1.0, 1.0};
    std::vector<VesselSpec> vessels;
    std::vector<AneurysmSpec> aneurysms;
    double background_mean = 100.0;
    double noise_std = 0.0;
    std::uint64_t seed = 0;
};

/// Throws SpecInvalid for the first violated constraint.
void validate(const PhantomSpec& spec);

struct PlantedAneurysm {
    std::vector<std::size_t> voxels;  // linear indices, sorted
    Vec3 center;
    double max_diameter_mm = 0.0;
};

struct Phantom {
    std::string case_id;
    Volume volume;
    BinaryMask vessel_gt;
    std::vector<PlantedAneurysm> aneurysms;
};

/// Radius (in units of the structure radius) of the half-peak iso-surface
/// of peak * exp(-d^2 / (2 (r/2)^2)).
inline constexpr double kHalfPeakFraction = 0.58870501125773734;  // sqrt(2 ln 2) / 2

/// Unnoised intensity of one structure at distance d from its axis or center.
double gaussian_profile(double d, double radius, double peak);

/// Distance from p to the polyline (a single point when it has one vertex).
double distance_to_polyline(const std::vector<Vec3>& points, Vec3 p);

Phantom generate_phantom(const PhantomSpec& spec);

/// Ranges the dataset generator draws each case from.
struct DatasetTemplate {
    Index3 dims{32, 32, 32};
    Vec3 spacing{1.0, 1.0, 1.0};
    int vessels = 2;
    int control_points = 4;
    double vessel_radius_min = 2.5;
    double vessel_radius_max = 3.5;
    double peak_min = 700.0;
    double peak_max = 900.0;
    double aneurysm_radius_min = 3.0;
    double aneurysm_radius_max = 4.5;
    double background_mean = 100.0;
    double noise_std = 15.0;
};

/// Draws the spec for case `index`; `positive` plants one aneurysm on a vessel wall.
PhantomSpec draw_phantom_spec(const DatasetTemplate& tmpl, bool positive, std::uint64_t seed);

/// n_cases phantoms, round(rate * n_cases) of them positive, chosen by a seeded shuffle.
std::vector<Phantom> generate_dataset(int n_cases, double aneurysm_rate, const DatasetTemplate& tmpl,
                                      std::uint64_t seed);

}  // namespace tofd
