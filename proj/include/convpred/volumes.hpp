#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "convpred/audit.hpp"

namespace convpred::volumes {

// Orientation codes are three-letter axis labels (e.g. "RAS", "LPS"):
// one letter per storage axis, naming the anatomical direction in which
// that index increases. R/L map to the first world axis, A/P to the
// second, S/I to the third; R, A, S are the positive directions.
bool orientation_valid(const std::string& code);

struct VolumeMeta {
    std::array<int, 3> shape{0, 0, 0};
    std::string orientation = "RAS";
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
};

// Dense 3D scalar field. Storage follows the NIfTI convention: the first
// index varies fastest, i.e. voxel (i,j,k) lives at i + nx*(j + ny*k).
struct Volume {
    std::vector<float> data;
    VolumeMeta meta;

    static Volume zeros(std::array<int, 3> shape);

    int64_t nvox() const {
        return static_cast<int64_t>(meta.shape[0]) * meta.shape[1] * meta.shape[2];
    }
    float& at(int i, int j, int k) {
        return data[static_cast<size_t>(i) +
                    static_cast<size_t>(meta.shape[0]) *
                        (static_cast<size_t>(j) + static_cast<size_t>(meta.shape[1]) * k)];
    }
    float at(int i, int j, int k) const {
        return data[static_cast<size_t>(i) +
                    static_cast<size_t>(meta.shape[0]) *
                        (static_cast<size_t>(j) + static_cast<size_t>(meta.shape[1]) * k)];
    }
    std::string digest() const;
};

// Per-axis inclusive index ranges.
struct BoundingBox {
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{0, 0, 0};

    std::array<int, 3> extents() const {
        return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    }
    bool operator==(const BoundingBox&) const = default;
};

// Axis permutation + flips onto RAS. Pure relabeling of voxels, no
// resampling; the intensity multiset is unchanged.
Volume reorient_to_ras(const Volume& v);

// Inverse relabeling: stores a RAS volume under another axis code, so that
// reorient_to_ras(store_with_orientation(v, code)) == v.
Volume store_with_orientation(const Volume& ras, const std::string& code);

// Tightest box holding all voxels with intensity > threshold.
// Throws DataError("empty brain mask") when nothing exceeds the threshold.
BoundingBox brain_bbox(const Volume& v, float threshold = 0.0f);

// Union box across a corpus: per-axis min of lows, max of highs.
BoundingBox global_bbox(const std::vector<BoundingBox>& boxes);

// Extracts the box. Regions of the box outside the volume are zero-filled
// and a "crop_padded" audit note is emitted.
Volume crop(const Volume& v, const BoundingBox& box, AuditLog* audit = nullptr);

// Stride-2 subsample starting at index 0; output length is ceil(n/2) per
// axis. When sigma > 0 a separable Gaussian is applied first to reduce
// aliasing.
Volume downsample2(const Volume& v, double smooth_sigma = 0.0);

// Z-score over the nonzero mask; background voxels stay exactly 0.
// Throws DataError on constant (zero-variance) foreground.
Volume normalize_intensity(const Volume& v);

struct PreprocessOptions {
    float threshold = 0.0f;
    double smooth_sigma = 0.0;
    bool normalize = true;
};

// crop -> downsample2 -> normalize, the per-volume tail of the pipeline
// once the corpus-wide box is known.
Volume preprocess_volume(const Volume& v, const BoundingBox& box, const PreprocessOptions& opts,
                         AuditLog* audit = nullptr);

}  // namespace convpred::volumes
