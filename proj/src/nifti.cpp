#include "convpred/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>

#include "convpred/common.hpp"

namespace convpred::nifti {

namespace {

struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code;
    int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t DT_UINT8 = 2;
constexpr int16_t DT_INT16 = 4;
constexpr int16_t DT_INT32 = 8;
constexpr int16_t DT_FLOAT32 = 16;
constexpr int16_t DT_FLOAT64 = 64;

template <typename T>
void swap_bytes(T& v) {
    char* p = reinterpret_cast<char*>(&v);
    for (size_t i = 0; i + 1 + i < sizeof(T); ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
    swap_bytes(h.sizeof_hdr);
    swap_bytes(h.extents);
    swap_bytes(h.session_error);
    for (auto& d : h.dim) swap_bytes(d);
    swap_bytes(h.intent_p1);
    swap_bytes(h.intent_p2);
    swap_bytes(h.intent_p3);
    swap_bytes(h.intent_code);
    swap_bytes(h.datatype);
    swap_bytes(h.bitpix);
    swap_bytes(h.slice_start);
    for (auto& d : h.pixdim) swap_bytes(d);
    swap_bytes(h.vox_offset);
    swap_bytes(h.scl_slope);
    swap_bytes(h.scl_inter);
    swap_bytes(h.slice_end);
    swap_bytes(h.cal_max);
    swap_bytes(h.cal_min);
    swap_bytes(h.slice_duration);
    swap_bytes(h.toffset);
    swap_bytes(h.glmax);
    swap_bytes(h.glmin);
    swap_bytes(h.qform_code);
    swap_bytes(h.sform_code);
    swap_bytes(h.quatern_b);
    swap_bytes(h.quatern_c);
    swap_bytes(h.quatern_d);
    swap_bytes(h.qoffset_x);
    swap_bytes(h.qoffset_y);
    swap_bytes(h.qoffset_z);
    for (auto& d : h.srow_x) swap_bytes(d);
    for (auto& d : h.srow_y) swap_bytes(d);
    for (auto& d : h.srow_z) swap_bytes(d);
}

// World direction of each voxel axis, columns of a 3x3 matrix.
using DirMatrix = std::array<std::array<double, 3>, 3>;  // [row][col]

DirMatrix sform_dirs(const Nifti1Header& h) {
    return {{{h.srow_x[0], h.srow_x[1], h.srow_x[2]},
             {h.srow_y[0], h.srow_y[1], h.srow_y[2]},
             {h.srow_z[0], h.srow_z[1], h.srow_z[2]}}};
}

DirMatrix qform_dirs(const Nifti1Header& h) {
    double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a2 = 1.0 - (b * b + c * c + d * d);
    double a = a2 > 0.0 ? std::sqrt(a2) : 0.0;
    double qfac = h.pixdim[0] < 0.0f ? -1.0 : 1.0;
    DirMatrix r = {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
                    {2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)},
                    {2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c}}};
    for (int row = 0; row < 3; ++row) {
        r[row][0] *= h.pixdim[1];
        r[row][1] *= h.pixdim[2];
        r[row][2] *= h.pixdim[3] * qfac;
    }
    return r;
}

// Reduces direction cosines to a three-letter code; oblique input rejected.
std::string orientation_from_dirs(const DirMatrix& m) {
    static const char pos_letter[3] = {'R', 'A', 'S'};
    static const char neg_letter[3] = {'L', 'P', 'I'};
    const double tol = 1e-3;
    std::string code = "???";
    bool used[3] = {false, false, false};
    for (int col = 0; col < 3; ++col) {
        double norm = std::sqrt(m[0][col] * m[0][col] + m[1][col] * m[1][col] +
                                m[2][col] * m[2][col]);
        if (norm <= 0.0) throw DataError("oblique orientation unsupported");
        int best = 0;
        for (int row = 1; row < 3; ++row)
            if (std::abs(m[row][col]) > std::abs(m[best][col])) best = row;
        for (int row = 0; row < 3; ++row)
            if (row != best && std::abs(m[row][col]) / norm > tol)
                throw DataError("oblique orientation unsupported");
        if (used[best]) throw DataError("oblique orientation unsupported");
        used[best] = true;
        code[static_cast<size_t>(col)] =
            m[best][col] > 0 ? pos_letter[best] : neg_letter[best];
    }
    return code;
}

class GzReader {
public:
    explicit GzReader(const std::filesystem::path& path) {
        f_ = gzopen(path.string().c_str(), "rb");
        if (!f_) throw DataError("cannot open volume: " + path.string());
    }
    ~GzReader() {
        if (f_) gzclose(f_);
    }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read(void* buf, size_t n, const std::string& what) {
        size_t done = 0;
        char* p = static_cast<char*>(buf);
        while (done < n) {
            unsigned chunk = static_cast<unsigned>(std::min<size_t>(n - done, 1u << 30));
            int got = gzread(f_, p + done, chunk);
            if (got <= 0) throw DataError("truncated NIfTI file while reading " + what);
            done += static_cast<size_t>(got);
        }
    }
    void skip(size_t n) {
        char buf[4096];
        while (n > 0) {
            size_t chunk = std::min(n, sizeof(buf));
            read(buf, chunk, "header extension");
            n -= chunk;
        }
    }

private:
    gzFile f_ = nullptr;
};

template <typename T>
void convert_data(GzReader& r, std::vector<float>& out, int64_t n, bool swap) {
    std::vector<T> raw(static_cast<size_t>(n));
    r.read(raw.data(), raw.size() * sizeof(T), "voxel data");
    if (swap && sizeof(T) > 1)
        for (auto& v : raw) swap_bytes(v);
    out.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[static_cast<size_t>(i)] = static_cast<float>(raw[static_cast<size_t>(i)]);
}

}  // namespace

volumes::Volume read_volume(const std::filesystem::path& path) {
    GzReader r(path);
    Nifti1Header h{};
    r.read(&h, sizeof(h), "header");

    bool swap = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348)
            throw DataError("not a NIfTI-1 file: " + path.string());
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0 && std::strncmp(h.magic, "ni1", 3) != 0)
        throw DataError("bad NIfTI magic in " + path.string());
    if (h.dim[0] < 3)
        throw DataError("expected a 3D volume: " + path.string());
    for (int d = 4; d <= h.dim[0]; ++d)
        if (h.dim[d] > 1)
            throw DataError("expected a single 3D volume, got a time series: " + path.string());

    volumes::Volume v;
    v.meta.shape = {h.dim[1], h.dim[2], h.dim[3]};
    for (int a = 0; a < 3; ++a) {
        double s = h.pixdim[a + 1];
        v.meta.spacing[static_cast<size_t>(a)] = s > 0 ? s : 1.0;
    }
    if (h.sform_code > 0) {
        v.meta.orientation = orientation_from_dirs(sform_dirs(h));
    } else if (h.qform_code > 0) {
        v.meta.orientation = orientation_from_dirs(qform_dirs(h));
    } else {
        v.meta.orientation = "RAS";
    }

    int64_t offset = static_cast<int64_t>(h.vox_offset);
    if (offset > 348) r.skip(static_cast<size_t>(offset - 348));

    int64_t n = v.nvox();
    switch (h.datatype) {
        case DT_UINT8: convert_data<uint8_t>(r, v.data, n, swap); break;
        case DT_INT16: convert_data<int16_t>(r, v.data, n, swap); break;
        case DT_INT32: convert_data<int32_t>(r, v.data, n, swap); break;
        case DT_FLOAT32: convert_data<float>(r, v.data, n, swap); break;
        case DT_FLOAT64: convert_data<double>(r, v.data, n, swap); break;
        default:
            throw DataError("unsupported NIfTI datatype " + std::to_string(h.datatype) +
                            " in " + path.string());
    }

    if (h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f))
        for (float& x : v.data) x = x * h.scl_slope + h.scl_inter;

    for (float x : v.data)
        if (!std::isfinite(x)) throw DataError("non-finite intensities in " + path.string());
    return v;
}

void write_volume(const std::filesystem::path& path, const volumes::Volume& v) {
    if (!volumes::orientation_valid(v.meta.orientation))
        throw DataError("invalid orientation code '" + v.meta.orientation + "'");

    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(v.meta.shape[0]);
    h.dim[2] = static_cast<int16_t>(v.meta.shape[1]);
    h.dim[3] = static_cast<int16_t>(v.meta.shape[2]);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = DT_FLOAT32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(v.meta.spacing[static_cast<size_t>(a)]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.xyzt_units = 2;  // millimetres
    h.sform_code = 1;
    h.qform_code = 0;

    // Axis-aligned sform from the orientation code.
    float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
    for (int col = 0; col < 3; ++col) {
        char c = v.meta.orientation[static_cast<size_t>(col)];
        int axis = (c == 'R' || c == 'L') ? 0 : (c == 'A' || c == 'P') ? 1 : 2;
        int sign = (c == 'R' || c == 'A' || c == 'S') ? 1 : -1;
        rows[axis][col] = static_cast<float>(sign * v.meta.spacing[static_cast<size_t>(col)]);
    }
    std::memcpy(h.magic, "n+1", 4);

    const char pad[4] = {0, 0, 0, 0};
    if (path.has_parent_path()) ensure_dir(path.parent_path());
    bool gz = path.extension() == ".gz";
    if (gz) {
        gzFile f = gzopen(path.string().c_str(), "wb6");
        if (!f) throw DataError("cannot write volume: " + path.string());
        bool ok = gzwrite(f, &h, sizeof(h)) == static_cast<int>(sizeof(h)) &&
                  gzwrite(f, pad, 4) == 4;
        size_t nbytes = v.data.size() * sizeof(float);
        size_t done = 0;
        const char* p = reinterpret_cast<const char*>(v.data.data());
        while (ok && done < nbytes) {
            unsigned chunk = static_cast<unsigned>(std::min<size_t>(nbytes - done, 1u << 30));
            ok = gzwrite(f, p + done, chunk) == static_cast<int>(chunk);
            done += chunk;
        }
        gzclose(f);
        if (!ok) throw DataError("failed writing volume: " + path.string());
    } else {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw DataError("cannot write volume: " + path.string());
        out.write(reinterpret_cast<const char*>(&h), sizeof(h));
        out.write(pad, 4);
        out.write(reinterpret_cast<const char*>(v.data.data()),
                  static_cast<std::streamsize>(v.data.size() * sizeof(float)));
        if (!out) throw DataError("failed writing volume: " + path.string());
    }
}

}  // namespace convpred::nifti
