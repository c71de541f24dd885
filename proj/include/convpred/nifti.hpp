#pragma once

#include <filesystem>

#include "convpred/volumes.hpp"

namespace convpred::nifti {

// Reads a NIfTI-1 volume (.nii or .nii.gz, plain files accepted too).
// Intensities are converted to float with scl_slope/scl_inter applied.
// The orientation code is derived from the sform (or qform) direction
// cosines; matrices that are not axis-aligned within 1e-3 are rejected
// with "oblique orientation unsupported".
volumes::Volume read_volume(const std::filesystem::path& path);

// Writes float32 data with an axis-aligned sform built from the volume's
// orientation code and spacing. ".gz" suffix selects gzip output.
void write_volume(const std::filesystem::path& path, const volumes::Volume& v);

}  // namespace convpred::nifti
