#include "convpred/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "convpred/common.hpp"
#include "convpred/nifti.hpp"

namespace convpred::synthgen {

void validate_synth_config(const SynthConfig& cfg) {
    if (cfg.n_subjects < 1) throw ConfigError("synth: n_subjects must be >= 1");
    if (!(cfg.converter_fraction >= 0.0 && cfg.converter_fraction <= 1.0))
        throw ConfigError("synth: converter_fraction must be in [0,1]");
    if (!(cfg.nc_fraction >= 0.0 && cfg.ad_fraction >= 0.0 &&
          cfg.nc_fraction + cfg.ad_fraction <= 1.0))
        throw ConfigError("synth: nc_fraction + ad_fraction must be in [0,1]");
    if (cfg.visit_months.empty() || cfg.visit_months.front() != 0)
        throw ConfigError("synth: visit_months must start at the screening month 0");
    for (size_t i = 1; i < cfg.visit_months.size(); ++i)
        if (cfg.visit_months[i] <= cfg.visit_months[i - 1])
            throw ConfigError("synth: visit_months must be strictly increasing");
    for (int d : cfg.volume_shape)
        if (d < 8) throw DataError("synth: volume shape too small for the ellipsoids");
    if (cfg.n_clinical_features < 1)
        throw ConfigError("synth: n_clinical_features must be >= 1");
    if (cfg.orientations != "RAS" && cfg.orientations != "mixed")
        throw ConfigError("synth: orientations must be 'RAS' or 'mixed'");
}

volumes::Volume generate_volume(Severity severity, const SynthConfig& cfg, uint64_t stream) {
    for (int d : cfg.volume_shape)
        if (d < 8) throw DataError("synth: volume shape too small for the ellipsoids");

    Rng rng(cfg.seed, mix_seed(0x564f4cULL, stream));
    auto shape = cfg.volume_shape;
    volumes::Volume v = volumes::Volume::zeros(shape);

    double cx = (shape[0] - 1) / 2.0, cy = (shape[1] - 1) / 2.0, cz = (shape[2] - 1) / 2.0;
    double ax = 0.42 * shape[0], ay = 0.42 * shape[1], az = 0.42 * shape[2];
    int min_dim = std::min({shape[0], shape[1], shape[2]});
    double vr = (cfg.ventricle_base + cfg.ventricle_step * static_cast<int>(severity)) * min_dim;

    for (int k = 0; k < shape[2]; ++k)
        for (int j = 0; j < shape[1]; ++j)
            for (int i = 0; i < shape[0]; ++i) {
                double dx = (i - cx) / ax, dy = (j - cy) / ay, dz = (k - cz) / az;
                if (dx * dx + dy * dy + dz * dz > 1.0) continue;  // background stays 0
                double r2 = (i - cx) * (i - cx) + (j - cy) * (j - cy) + (k - cz) * (k - cz);
                bool ventricle = r2 <= vr * vr;
                double base = ventricle ? 0.35 : 1.0;
                double val = base + cfg.noise_level * rng.normal();
                v.at(i, j, k) = static_cast<float>(std::max(val, 0.05));
            }
    return v;
}

namespace {

const char* kMixedCodes[4] = {"RAS", "LPS", "ASR", "PIR"};

enum class SubjectKind { Nc, StableMci, Converter, Ad };

std::string subject_name(int idx) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "s%03d", idx);
    return buf;
}

}  // namespace

GeneratedCohort generate_cohort(const SynthConfig& cfg) {
    validate_synth_config(cfg);
    GeneratedCohort g;

    const int n = cfg.n_subjects;
    int n_nc = static_cast<int>(std::lround(cfg.nc_fraction * n));
    int n_ad = static_cast<int>(std::lround(cfg.ad_fraction * n));
    int n_mci = n - n_nc - n_ad;
    int n_conv = static_cast<int>(std::lround(cfg.converter_fraction * n_mci));

    // deterministic class assignment over shuffled subject indices
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng assign_rng(cfg.seed, 0x41535347ULL);
    assign_rng.shuffle(order);
    std::vector<SubjectKind> kind(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        SubjectKind k;
        if (i < n_nc)
            k = SubjectKind::Nc;
        else if (i < n_nc + n_ad)
            k = SubjectKind::Ad;
        else if (i < n_nc + n_ad + n_conv)
            k = SubjectKind::Converter;
        else
            k = SubjectKind::StableMci;
        kind[static_cast<size_t>(order[static_cast<size_t>(i)])] = k;
    }
    g.n_nc = n_nc;
    g.n_ad = n_ad;
    g.n_converters = n_conv;
    g.n_stable = n_mci - n_conv;

    CsvTable& t = g.visit_table;
    t.header = {"subject_id", "month", "diagnosis", "volume_path"};
    for (int f = 0; f < cfg.n_clinical_features; ++f)
        t.header.push_back("feat" + std::to_string(f));
    t.header.push_back("sex");

    const int n_visits = static_cast<int>(cfg.visit_months.size());
    for (int s = 0; s < n; ++s) {
        std::string id = subject_name(s);
        Rng subj_rng(cfg.seed, mix_seed(0x53554246ULL, static_cast<uint64_t>(s)));
        int convert_at = -1;
        if (kind[static_cast<size_t>(s)] == SubjectKind::Converter)
            convert_at = static_cast<int>(subj_rng.uniform_int(1, n_visits - 1));
        std::string sex = subj_rng.uniform() < 0.5 ? "M" : "F";

        // severity level feeding the clinical feature means
        double clin_level;
        switch (kind[static_cast<size_t>(s)]) {
            case SubjectKind::Nc: clin_level = -1.0; break;
            case SubjectKind::StableMci: clin_level = 0.0; break;
            case SubjectKind::Converter: clin_level = 1.0; break;
            case SubjectKind::Ad: clin_level = 2.0; break;
        }

        for (int vi = 0; vi < n_visits; ++vi) {
            int month = cfg.visit_months[static_cast<size_t>(vi)];
            std::string diag;
            Severity sev;
            switch (kind[static_cast<size_t>(s)]) {
                case SubjectKind::Nc:
                    diag = "NC";
                    sev = Severity::NC;
                    break;
                case SubjectKind::Ad:
                    diag = "AD";
                    sev = Severity::Ad;
                    break;
                case SubjectKind::StableMci:
                    diag = "MCI";
                    sev = Severity::StableMci;
                    break;
                case SubjectKind::Converter:
                    if (vi >= convert_at) {
                        diag = "AD";
                        sev = Severity::Ad;
                    } else {
                        diag = "MCI";
                        sev = Severity::PreConversionMci;
                    }
                    break;
            }

            std::string vol_path = "volumes/raw/" + id + "_m" + std::to_string(month) + ".nii.gz";
            std::vector<std::string> row = {id, std::to_string(month), diag, vol_path};
            for (int f = 0; f < cfg.n_clinical_features; ++f) {
                if (subj_rng.uniform() < cfg.missing_rate) {
                    row.push_back("");
                } else {
                    double v = subj_rng.normal(clin_level * cfg.clinical_separation, 1.0);
                    row.push_back(format_double(v, 6));
                }
            }
            row.push_back(sex);
            t.rows.push_back(std::move(row));

            uint64_t stream = mix_seed(static_cast<uint64_t>(s), static_cast<uint64_t>(vi));
            volumes::Volume vol = generate_volume(sev, cfg, stream);
            if (cfg.orientations == "mixed")
                vol = volumes::store_with_orientation(vol, kMixedCodes[s % 4]);
            g.volume_keys.push_back({id, month});
            g.volumes.push_back(std::move(vol));
        }
    }
    return g;
}

void write_workspace(const GeneratedCohort& g, const std::filesystem::path& dir) {
    ensure_dir(dir);
    write_csv(dir / "visits.csv", g.visit_table);

    CsvTable manifest;
    manifest.header = {"subject_id", "month", "input_path", "output_path", "status"};
    for (size_t i = 0; i < g.volumes.size(); ++i) {
        const auto& [id, month] = g.volume_keys[i];
        std::string rel = "volumes/raw/" + id + "_m" + std::to_string(month) + ".nii.gz";
        nifti::write_volume(dir / rel, g.volumes[i]);
        manifest.rows.push_back({id, std::to_string(month), rel, "", "raw"});
    }
    write_csv(dir / "manifest.csv", manifest);
}

std::string workspace_digest(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    Digest d;
    for (const auto& f : files) {
        d.update(std::filesystem::relative(f, dir).string());
        d.update(digest_file(f));
    }
    return d.hex();
}

}  // namespace convpred::synthgen
