#pragma once

#include <utility>
#include <vector>

#include "tofdetect/model.hpp"
#include "tofdetect/voi.hpp"
#include "tofdetect/volume.hpp"

namespace tofd {

struct DetectionParams {
    double threshold = 0.5;
    /// Components whose planar radius is at most this get the fixed in-plane box.
    double planar_radius_limit = 30.0;
    int min_box_side = 60;
    VoiParams voi;
};

struct Detection {
    Index3 box_min;   // original-image voxels, after clipping
    Index3 box_size;  // (w, l, H)
    double score = 0.0;
    int component_id = 0;
    Index3 center;    // rounded component centroid

    bool contains(int x, int y, int z) const noexcept {
        return x >= box_min.x && y >= box_min.y && z >= box_min.z && x < box_min.x + box_size.x &&
               y < box_min.y + box_size.y && z < box_min.z + box_size.z;
    }
};

struct LikelihoodMap {
    Volume probability;  // aneurysm-channel probability in model space, 0 outside the VOI
    GeometricTransform transform;
};

/// extract_voi -> resize to the model side -> forward -> aneurysm channel.
LikelihoodMap predict_likelihood(const Model<float>& model, const Volume& raw, const VoiParams& voi = {});

/// Strict: a voxel is set iff its probability exceeds `threshold`.
BinaryMask binarize_likelihood(const Volume& likelihood, double threshold = 0.5);

/// In-plane box side for a component of planar radius r: the fixed side
/// while r <= limit, otherwise 2r rounded up to an even integer.
int box_side_for_radius(double r, const DetectionParams& params);

/// One box per 26-connected component. `scores`, when given, is sampled at
/// the component's voxels and the maximum becomes the detection score.
std::vector<Detection> boxes_from_mask(const BinaryMask& mask, const DetectionParams& params = {},
                                       const Volume* scores = nullptr);

/// Full inference on one raw volume; detections sorted by descending score.
std::vector<Detection> detect(const Model<float>& model, const Volume& raw, const DetectionParams& params = {});

}  // namespace tofd
