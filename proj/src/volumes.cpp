#include "convpred/volumes.hpp"

#include <algorithm>
#include <cmath>

#include "convpred/common.hpp"

namespace convpred::volumes {

namespace {

// Maps an orientation letter to (world axis, sign).
bool axis_of(char c, int& axis, int& sign) {
    switch (c) {
        case 'R': axis = 0; sign = +1; return true;
        case 'L': axis = 0; sign = -1; return true;
        case 'A': axis = 1; sign = +1; return true;
        case 'P': axis = 1; sign = -1; return true;
        case 'S': axis = 2; sign = +1; return true;
        case 'I': axis = 2; sign = -1; return true;
        default: return false;
    }
}

}  // namespace

bool orientation_valid(const std::string& code) {
    if (code.size() != 3) return false;
    bool seen[3] = {false, false, false};
    for (char c : code) {
        int axis, sign;
        if (!axis_of(c, axis, sign)) return false;
        if (seen[axis]) return false;
        seen[axis] = true;
    }
    return true;
}

Volume Volume::zeros(std::array<int, 3> shape) {
    Volume v;
    v.meta.shape = shape;
    v.data.assign(static_cast<size_t>(shape[0]) * shape[1] * shape[2], 0.0f);
    return v;
}

std::string Volume::digest() const {
    Digest d;
    d.update(meta.orientation);
    for (int s : meta.shape) d.update_pod(s);
    for (double s : meta.spacing) d.update_pod(s);
    d.update(data.data(), data.size() * sizeof(float));
    return d.hex();
}

Volume reorient_to_ras(const Volume& v) {
    const std::string& code = v.meta.orientation;
    if (!orientation_valid(code))
        throw DataError("invalid orientation code '" + code + "'");
    if (code == "RAS") return v;

    // src_axis[w]: which input axis lands on world axis w; flip[w]: reversed?
    int src_axis[3];
    bool flip[3];
    for (int a = 0; a < 3; ++a) {
        int w = 0, sign = 0;
        axis_of(code[static_cast<size_t>(a)], w, sign);
        src_axis[w] = a;
        flip[w] = sign < 0;
    }

    Volume out;
    out.meta.orientation = "RAS";
    for (int w = 0; w < 3; ++w) {
        out.meta.shape[w] = v.meta.shape[src_axis[w]];
        out.meta.spacing[w] = v.meta.spacing[src_axis[w]];
    }
    out.data.resize(v.data.size());

    const auto& in_shape = v.meta.shape;
    int idx_in[3];
    for (int k = 0; k < in_shape[2]; ++k) {
        idx_in[2] = k;
        for (int j = 0; j < in_shape[1]; ++j) {
            idx_in[1] = j;
            for (int i = 0; i < in_shape[0]; ++i) {
                idx_in[0] = i;
                int o[3];
                for (int w = 0; w < 3; ++w) {
                    int src = idx_in[src_axis[w]];
                    o[w] = flip[w] ? out.meta.shape[w] - 1 - src : src;
                }
                out.at(o[0], o[1], o[2]) = v.at(i, j, k);
            }
        }
    }
    return out;
}

Volume store_with_orientation(const Volume& ras, const std::string& code) {
    if (ras.meta.orientation != "RAS")
        throw DataError("store_with_orientation: input must be RAS");
    if (!orientation_valid(code))
        throw DataError("invalid orientation code '" + code + "'");
    if (code == "RAS") return ras;

    Volume out;
    out.meta.orientation = code;
    int world[3], sign[3];
    for (int a = 0; a < 3; ++a) {
        axis_of(code[static_cast<size_t>(a)], world[a], sign[a]);
        out.meta.shape[a] = ras.meta.shape[world[a]];
        out.meta.spacing[a] = ras.meta.spacing[world[a]];
    }
    out.data.resize(ras.data.size());
    int idx[3];
    for (int k = 0; k < out.meta.shape[2]; ++k) {
        idx[2] = k;
        for (int j = 0; j < out.meta.shape[1]; ++j) {
            idx[1] = j;
            for (int i = 0; i < out.meta.shape[0]; ++i) {
                idx[0] = i;
                int o[3];
                for (int a = 0; a < 3; ++a)
                    o[world[a]] = sign[a] < 0 ? out.meta.shape[a] - 1 - idx[a] : idx[a];
                out.at(i, j, k) = ras.at(o[0], o[1], o[2]);
            }
        }
    }
    return out;
}

BoundingBox brain_bbox(const Volume& v, float threshold) {
    if (threshold < 0.0f) throw ConfigError("brain mask threshold must be >= 0");
    BoundingBox box;
    box.lo = {v.meta.shape[0], v.meta.shape[1], v.meta.shape[2]};
    box.hi = {-1, -1, -1};
    for (int k = 0; k < v.meta.shape[2]; ++k)
        for (int j = 0; j < v.meta.shape[1]; ++j)
            for (int i = 0; i < v.meta.shape[0]; ++i)
                if (v.at(i, j, k) > threshold) {
                    box.lo[0] = std::min(box.lo[0], i);
                    box.lo[1] = std::min(box.lo[1], j);
                    box.lo[2] = std::min(box.lo[2], k);
                    box.hi[0] = std::max(box.hi[0], i);
                    box.hi[1] = std::max(box.hi[1], j);
                    box.hi[2] = std::max(box.hi[2], k);
                }
    if (box.hi[0] < 0) throw DataError("empty brain mask");
    return box;
}

BoundingBox global_bbox(const std::vector<BoundingBox>& boxes) {
    if (boxes.empty()) throw DataError("global_bbox: no boxes");
    BoundingBox out = boxes.front();
    for (const auto& b : boxes)
        for (int a = 0; a < 3; ++a) {
            out.lo[a] = std::min(out.lo[a], b.lo[a]);
            out.hi[a] = std::max(out.hi[a], b.hi[a]);
        }
    return out;
}

Volume crop(const Volume& v, const BoundingBox& box, AuditLog* audit) {
    for (int a = 0; a < 3; ++a)
        if (box.lo[a] > box.hi[a]) throw DataError("crop: degenerate box");

    auto ext = box.extents();
    Volume out = Volume::zeros(ext);
    out.meta.orientation = v.meta.orientation;
    out.meta.spacing = v.meta.spacing;

    bool padded = false;
    for (int k = 0; k < ext[2]; ++k) {
        int sk = box.lo[2] + k;
        for (int j = 0; j < ext[1]; ++j) {
            int sj = box.lo[1] + j;
            for (int i = 0; i < ext[0]; ++i) {
                int si = box.lo[0] + i;
                if (si >= 0 && si < v.meta.shape[0] && sj >= 0 && sj < v.meta.shape[1] &&
                    sk >= 0 && sk < v.meta.shape[2]) {
                    out.at(i, j, k) = v.at(si, sj, sk);
                } else {
                    padded = true;
                }
            }
        }
    }
    if (padded && audit) {
        audit->note("crop_padded",
                    {{"box", std::to_string(box.lo[0]) + ":" + std::to_string(box.hi[0]) + "," +
                                 std::to_string(box.lo[1]) + ":" + std::to_string(box.hi[1]) +
                                 "," + std::to_string(box.lo[2]) + ":" + std::to_string(box.hi[2])},
                     {"volume_shape", std::to_string(v.meta.shape[0]) + "x" +
                                          std::to_string(v.meta.shape[1]) + "x" +
                                          std::to_string(v.meta.shape[2])}});
    }
    return out;
}

namespace {

Volume gaussian_smooth(const Volume& v, double sigma) {
    int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int t = -radius; t <= radius; ++t) {
        double w = std::exp(-0.5 * (t / sigma) * (t / sigma));
        kernel[static_cast<size_t>(t + radius)] = w;
        sum += w;
    }
    for (double& w : kernel) w /= sum;

    Volume cur = v;
    for (int axis = 0; axis < 3; ++axis) {
        Volume next = Volume::zeros(cur.meta.shape);
        next.meta = cur.meta;
        const auto& sh = cur.meta.shape;
        for (int k = 0; k < sh[2]; ++k)
            for (int j = 0; j < sh[1]; ++j)
                for (int i = 0; i < sh[0]; ++i) {
                    double acc = 0.0;
                    for (int t = -radius; t <= radius; ++t) {
                        int p[3] = {i, j, k};
                        p[axis] += t;
                        if (p[axis] < 0 || p[axis] >= sh[axis]) continue;  // zero boundary
                        acc += kernel[static_cast<size_t>(t + radius)] *
                               cur.at(p[0], p[1], p[2]);
                    }
                    next.at(i, j, k) = static_cast<float>(acc);
                }
        cur = std::move(next);
    }
    return cur;
}

}  // namespace

Volume downsample2(const Volume& v, double smooth_sigma) {
    const Volume* src = &v;
    Volume smoothed;
    if (smooth_sigma > 0.0) {
        smoothed = gaussian_smooth(v, smooth_sigma);
        src = &smoothed;
    }
    std::array<int, 3> out_shape;
    for (int a = 0; a < 3; ++a) out_shape[a] = (v.meta.shape[a] + 1) / 2;

    Volume out = Volume::zeros(out_shape);
    out.meta.orientation = v.meta.orientation;
    for (int a = 0; a < 3; ++a) out.meta.spacing[a] = v.meta.spacing[a] * 2.0;
    for (int k = 0; k < out_shape[2]; ++k)
        for (int j = 0; j < out_shape[1]; ++j)
            for (int i = 0; i < out_shape[0]; ++i)
                out.at(i, j, k) = src->at(2 * i, 2 * j, 2 * k);
    return out;
}

Volume normalize_intensity(const Volume& v) {
    double sum = 0.0, sumsq = 0.0;
    int64_t n = 0;
    for (float x : v.data) {
        if (x != 0.0f) {
            sum += x;
            sumsq += static_cast<double>(x) * x;
            ++n;
        }
    }
    if (n == 0) throw DataError("empty brain mask");
    double mean = sum / static_cast<double>(n);
    double var = sumsq / static_cast<double>(n) - mean * mean;
    if (var <= 1e-12) throw DataError("zero-variance volume");
    double inv_std = 1.0 / std::sqrt(var);

    Volume out = v;
    for (float& x : out.data)
        if (x != 0.0f) x = static_cast<float>((x - mean) * inv_std);
    return out;
}

Volume preprocess_volume(const Volume& v, const BoundingBox& box, const PreprocessOptions& opts,
                         AuditLog* audit) {
    Volume out = crop(v, box, audit);
    out = downsample2(out, opts.smooth_sigma);
    if (opts.normalize) out = normalize_intensity(out);
    return out;
}

}  // namespace convpred::volumes
