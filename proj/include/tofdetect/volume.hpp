#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace tofd {

/// Integer voxel triple. Also used for grid dimensions.
struct Index3 {
    int x = 0;
    int y = 0;
    int z = 0;

    auto operator<=>(const Index3&) const = default;
    std::size_t product() const noexcept {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
};

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    bool operator==(const Vec3&) const = default;
};

/// Linear offset of (x, y, z) in an x-fastest grid.
inline std::size_t linear_index(Index3 dims, int x, int y, int z) noexcept {
    return (static_cast<std::size_t>(z) * dims.y + y) * dims.x + x;
}
inline Index3 unravel_index(Index3 dims, std::size_t i) noexcept {
    const int x = static_cast<int>(i % dims.x);
    const int y = static_cast<int>((i / dims.x) % dims.y);
    const int z = static_cast<int>(i / (static_cast<std::size_t>(dims.x) * dims.y));
    return {x, y, z};
}
inline bool in_bounds(Index3 dims, int x, int y, int z) noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < dims.x && y < dims.y && z < dims.z;
}

/// Dense scalar grid with physical spacing (mm per voxel), x-fastest order.
class Volume {
public:
    Volume() = default;
    Volume(Index3 dims, Vec3 spacing, float fill = 0.0f);
    Volume(Index3 dims, Vec3 spacing, std::vector<float> voxels);

    Index3 dims() const noexcept { return dims_; }
    Vec3 spacing() const noexcept { return spacing_; }
    std::size_t size() const noexcept { return voxels_.size(); }

    float& at(int x, int y, int z) { return voxels_[linear_index(dims_, x, y, z)]; }
    float at(int x, int y, int z) const { return voxels_[linear_index(dims_, x, y, z)]; }
    float& operator[](std::size_t i) { return voxels_[i]; }
    float operator[](std::size_t i) const { return voxels_[i]; }

    std::span<float> data() noexcept { return voxels_; }
    std::span<const float> data() const noexcept { return voxels_; }
    const std::vector<float>& voxels() const noexcept { return voxels_; }

    std::pair<float, float> min_max() const;

    bool operator==(const Volume&) const = default;

private:
    Index3 dims_{};
    Vec3 spacing_{1.0, 1.0, 1.0};
    std::vector<float> voxels_;
};

/// One flag per voxel, same geometry convention as Volume.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(Index3 dims, bool fill = false);

    Index3 dims() const noexcept { return dims_; }
    std::size_t size() const noexcept { return bits_.size(); }

    bool at(int x, int y, int z) const { return bits_[linear_index(dims_, x, y, z)] != 0; }
    void set(int x, int y, int z, bool v = true) { bits_[linear_index(dims_, x, y, z)] = v ? 1 : 0; }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }

    std::size_t count() const noexcept;
    bool empty() const noexcept { return count() == 0; }
    std::span<const std::uint8_t> bits() const noexcept { return bits_; }

    bool operator==(const BinaryMask&) const = default;

private:
    Index3 dims_{};
    std::vector<std::uint8_t> bits_;
};

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_difference(const BinaryMask& a, const BinaryMask& b);
/// true when every set voxel of `inner` is set in `outer`.
bool is_subset(const BinaryMask& inner, const BinaryMask& outer);

/// Maps between an original image grid and a cropped/resized grid.
///
/// Voxel centers are aligned: target coordinate t corresponds to original
/// coordinate crop_offset + (t + 0.5) * scale - 0.5 on every axis.
struct GeometricTransform {
    Index3 crop_offset{};
    Vec3 scale{1.0, 1.0, 1.0};
    Index3 original_dims{};
    Index3 target_dims{};

    static GeometricTransform identity(Index3 dims) { return {{}, {1.0, 1.0, 1.0}, dims, dims}; }

    Vec3 to_original(Vec3 target) const noexcept;
    Vec3 to_target(Vec3 original) const noexcept;
    bool is_identity() const noexcept;
};

struct ConnectedComponent {
    std::vector<std::size_t> voxel_indices;
    Vec3 centroid;
    int z_min = 0;
    int z_extent = 0;
    double max_planar_radius = 0.0;
};

enum class Interpolation { Nearest, Trilinear };
enum class Connectivity { Six = 6, TwentySix = 26 };

/// Affine intensity map onto [0, target_max]. Throws ConstantVolume.
Volume normalize_intensity(const Volume& vol, float target_max);

std::pair<Volume, GeometricTransform> resample_isotropic(const Volume& vol,
                                                         Interpolation interp = Interpolation::Trilinear);

/// Resizes to target_dims. `prior` is a transform already applied to `vol`
/// (e.g. a crop); the result composes it so to_original reaches the first grid.
std::pair<Volume, GeometricTransform> resize_to(const Volume& vol, Index3 target_dims,
                                                Interpolation interp = Interpolation::Trilinear,
                                                const GeometricTransform* prior = nullptr);

std::pair<Volume, GeometricTransform> crop(const Volume& vol, Index3 offset, Index3 dims);

/// Nearest-neighbour resize of a mask; geometry follows resize_to.
BinaryMask resize_mask(const BinaryMask& mask, Index3 target_dims);

/// Flip across the transverse (x-y) plane: z -> nz-1-z.
Volume flip_transverse(const Volume& vol);
BinaryMask flip_transverse(const BinaryMask& mask);

Volume histogram_equalize(const Volume& vol, int bins);

/// Number of taps actually used for a requested maximum kernel width.
int effective_kernel_width(int max_kernel_width);
/// Sampled Gaussian exp(-k^2 / 2 variance), renormalized to unit sum.
std::vector<double> discrete_gaussian_kernel(double variance, int max_kernel_width);
Volume gaussian_smooth_discrete(const Volume& vol, double variance, int max_kernel_width);

BinaryMask spherical_dilate(const BinaryMask& mask, double radius);

std::vector<ConnectedComponent> connected_components(const BinaryMask& mask, Connectivity conn);

/// Maps a target-space mask back onto transform.original_dims.
BinaryMask remap_mask(const BinaryMask& mask, const GeometricTransform& transform);
/// Nearest-neighbour remap of a scalar map (e.g. a likelihood) back to original dims.
Volume remap_volume(const Volume& vol, const GeometricTransform& transform);

/// Volume with every voxel outside `mask` set to 0.
Volume apply_mask(const Volume& vol, const BinaryMask& mask);

}  // namespace tofd
