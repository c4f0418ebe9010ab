#include "tofdetect/detection.hpp"

#include <algorithm>
#include <cmath>

#include "tofdetect/error.hpp"
#include "tofdetect/training.hpp"

namespace tofd {

LikelihoodMap predict_likelihood(const Model<float>& model, const Volume& raw, const VoiParams& voi) {
    const VoiResult v = extract_voi(raw, voi);
    const int side = model.config().input_dims;
    GeometricTransform t;
    const Tensor<float> input = network_input(v.masked_volume, side, &t);
    const Tensor<float> probs = model.predict(input);
    if (probs.c() < 2) fail(ErrorKind::ShapeMismatch, "model has no aneurysm channel");

    const Index3 target{side, side, side};
    const BinaryMask region = v.vessel_mask.dims() == target ? v.vessel_mask : resize_mask(v.vessel_mask, target);
    const Vec3 sp = raw.spacing();
    Volume out(target, {sp.x * t.scale.x, sp.y * t.scale.y, sp.z * t.scale.z});
    const float* p = probs.plane(0, kAneurysm);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = region[i] ? p[i] : 0.0f;
    return {std::move(out), t};
}

BinaryMask binarize_likelihood(const Volume& likelihood, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        fail(ErrorKind::InvalidArgument, "binarization threshold must lie in (0, 1)");
    BinaryMask out(likelihood.dims());
    for (std::size_t i = 0; i < likelihood.size(); ++i)
        if (static_cast<double>(likelihood[i]) > threshold) out.set(i);
    return out;
}

int box_side_for_radius(double r, const DetectionParams& params) {
    if (r <= params.planar_radius_limit) return params.min_box_side;
    int side = static_cast<int>(std::ceil(2.0 * r - 1e-9));
    if (side % 2) ++side;
    return side;
}

std::vector<Detection> boxes_from_mask(const BinaryMask& mask, const DetectionParams& params, const Volume* scores) {
    if (scores && scores->dims() != mask.dims())
        fail(ErrorKind::GeometryMismatch, "boxes_from_mask: score map dims differ from the mask");
    const Index3 dims = mask.dims();
    std::vector<Detection> out;
    const std::vector<ConnectedComponent> comps = connected_components(mask, Connectivity::TwentySix);
    for (std::size_t k = 0; k < comps.size(); ++k) {
        const ConnectedComponent& c = comps[k];
        Detection d;
        d.component_id = static_cast<int>(k);
        d.center = {static_cast<int>(std::floor(c.centroid.x + 0.5)), static_cast<int>(std::floor(c.centroid.y + 0.5)),
                    static_cast<int>(std::floor(c.centroid.z + 0.5))};
        const int side = box_side_for_radius(c.max_planar_radius, params);
        // Voxel range [lo, hi) per axis before clipping.
        int lo[3] = {d.center.x - side / 2, d.center.y - side / 2, c.z_min};
        int hi[3] = {lo[0] + side, lo[1] + side, c.z_min + c.z_extent};
        const int lim[3] = {dims.x, dims.y, dims.z};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::clamp(lo[a], 0, lim[a]);
            hi[a] = std::clamp(hi[a], 0, lim[a]);
        }
        d.box_min = {lo[0], lo[1], lo[2]};
        d.box_size = {hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
        if (scores) {
            float best = 0.0f;
            for (std::size_t i : c.voxel_indices) best = std::max(best, (*scores)[i]);
            d.score = std::clamp(static_cast<double>(best), 0.0, 1.0);
        }
        out.push_back(d);
    }
    std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return out;
}

std::vector<Detection> detect(const Model<float>& model, const Volume& raw, const DetectionParams& params) {
    const LikelihoodMap like = predict_likelihood(model, raw, params.voi);
    const BinaryMask bin = binarize_likelihood(like.probability, params.threshold);
    if (like.transform.is_identity()) return boxes_from_mask(bin, params, &like.probability);
    const BinaryMask original = remap_mask(bin, like.transform);
    const Volume scores = remap_volume(like.probability, like.transform);
    return boxes_from_mask(original, params, &scores);
}

}  // namespace tofd
