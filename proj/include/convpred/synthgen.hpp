#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "convpred/csv.hpp"
#include "convpred/volumes.hpp"

namespace convpred::synthgen {

struct SynthConfig {
    uint64_t seed = 7;
    int n_subjects = 40;
    double converter_fraction = 0.5;  // of the MCI-screened subjects
    double nc_fraction = 0.0;         // subjects that stay NC throughout
    double ad_fraction = 0.0;         // subjects already AD at screening
    std::vector<int> visit_months = {0, 12, 24, 36, 48, 60, 72, 84};
    std::array<int, 3> volume_shape = {16, 16, 16};
    int n_clinical_features = 3;
    double clinical_separation = 2.0;  // mean shift per severity level
    double missing_rate = 0.03;
    double ventricle_base = 0.10;  // fraction of the smallest dim
    double ventricle_step = 0.04;  // growth per severity level
    double noise_level = 0.05;
    // "RAS" stores everything in RAS; "mixed" cycles through several
    // axis codes so reorientation is exercised end to end.
    std::string orientations = "RAS";
};

void validate_synth_config(const SynthConfig& cfg);

// Disease severity drives the ventricle size: NC < stable MCI <
// pre-conversion MCI < AD.
enum class Severity { NC = 0, StableMci = 1, PreConversionMci = 2, Ad = 3 };

// Ellipsoidal brain with an interior dark ventricle and exact-zero
// background. Deterministic in (cfg.seed, stream).
volumes::Volume generate_volume(Severity severity, const SynthConfig& cfg, uint64_t stream);

struct GeneratedCohort {
    CsvTable visit_table;  // subject_id, month, diagnosis, volume_path, feat..., sex
    std::vector<std::pair<std::string, int>> volume_keys;  // aligned with volumes
    std::vector<volumes::Volume> volumes;
    int n_converters = 0;
    int n_stable = 0;
    int n_nc = 0;
    int n_ad = 0;
};

GeneratedCohort generate_cohort(const SynthConfig& cfg);

// visits.csv + volumes/raw/*.nii.gz + manifest.csv under `dir`.
void write_workspace(const GeneratedCohort& g, const std::filesystem::path& dir);

// Digest over every generated file, for determinism checks.
std::string workspace_digest(const std::filesystem::path& dir);

}  // namespace convpred::synthgen
