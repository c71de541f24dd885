#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "convpred/cohort.hpp"
#include "convpred/common.hpp"
#include "convpred/synthgen.hpp"

using namespace convpred;
using namespace convpred::synthgen;

TEST_CASE("generation is byte-deterministic under a fixed seed") {
    SynthConfig cfg;
    cfg.n_subjects = 8;
    cfg.visit_months = {0, 12, 24, 36, 48, 60, 72};
    auto a = generate_cohort(cfg);
    auto b = generate_cohort(cfg);
    CHECK(to_csv(a.visit_table) == to_csv(b.visit_table));
    REQUIRE(a.volumes.size() == b.volumes.size());
    for (size_t i = 0; i < a.volumes.size(); ++i)
        CHECK(a.volumes[i].digest() == b.volumes[i].digest());

    SynthConfig other = cfg;
    other.seed = 8;
    auto c = generate_cohort(other);
    CHECK(to_csv(a.visit_table) != to_csv(c.visit_table));
}

TEST_CASE("converter count is exact by construction") {
    SynthConfig cfg;
    cfg.n_subjects = 40;
    cfg.converter_fraction = 0.5;
    auto g = generate_cohort(cfg);
    CHECK(g.n_converters == 20);
    CHECK(g.n_stable == 20);

    // count AD-transitioning subjects from the table itself
    int c_subj = g.visit_table.require_column("subject_id");
    int c_diag = g.visit_table.require_column("diagnosis");
    std::set<std::string> with_ad, all;
    for (const auto& row : g.visit_table.rows) {
        all.insert(row[static_cast<size_t>(c_subj)]);
        if (row[static_cast<size_t>(c_diag)] == "AD")
            with_ad.insert(row[static_cast<size_t>(c_subj)]);
    }
    CHECK(with_ad.size() == 20);
    CHECK(all.size() == 40);
}

TEST_CASE("zero converter fraction produces no AD diagnoses") {
    SynthConfig cfg;
    cfg.n_subjects = 10;
    cfg.converter_fraction = 0.0;
    auto g = generate_cohort(cfg);
    int c_diag = g.visit_table.require_column("diagnosis");
    for (const auto& row : g.visit_table.rows)
        CHECK(row[static_cast<size_t>(c_diag)] == "MCI");
}

TEST_CASE("generated volumes have exact-zero background") {
    SynthConfig cfg;
    auto v = generate_volume(Severity::Ad, cfg, 1);
    CHECK(v.at(0, 0, 0) == 0.0f);
    CHECK(v.at(15, 15, 15) == 0.0f);
    int nonzero = 0;
    for (float x : v.data)
        if (x != 0.0f) ++nonzero;
    CHECK(nonzero > 100);  // brain occupies a solid interior
}

TEST_CASE("ventricles grow with severity") {
    SynthConfig cfg;
    auto dark_voxels = [&](Severity sev, uint64_t stream) {
        auto v = generate_volume(sev, cfg, stream);
        int n = 0;
        for (float x : v.data)
            if (x != 0.0f && x < 0.6f) ++n;
        return n;
    };
    double nc = 0, ad = 0;
    for (uint64_t s = 0; s < 50; ++s) {
        nc += dark_voxels(Severity::NC, s);
        ad += dark_voxels(Severity::Ad, 1000 + s);
    }
    CHECK(ad / 50.0 > nc / 50.0);
}

TEST_CASE("volumes too small for the ellipsoids are rejected") {
    SynthConfig cfg;
    cfg.volume_shape = {4, 16, 16};
    CHECK_THROWS_AS(generate_volume(Severity::NC, cfg, 0), DataError);
}

TEST_CASE("generated table passes cohort ingestion and yields both classes") {
    SynthConfig cfg;
    cfg.n_subjects = 20;
    cfg.converter_fraction = 0.5;
    cfg.missing_rate = 0.0;
    auto g = generate_cohort(cfg);
    auto ds = cohort::build_conversion_dataset(g.visit_table, cohort::CohortConfig{});
    CHECK(ds.stats.subjects_converged > 0);
    CHECK(ds.stats.subjects_stable > 0);
    CHECK(ds.stats.samples_converged > 0);
    CHECK(ds.stats.samples_stable > 0);
    // every example refers to a generated volume key
    std::set<std::pair<std::string, int>> keys(g.volume_keys.begin(), g.volume_keys.end());
    for (const auto& ex : ds.examples)
        CHECK(keys.count({ex.subject_id, ex.month}) == 1);
}

TEST_CASE("nc and ad fractions add screening-excluded subjects") {
    SynthConfig cfg;
    cfg.n_subjects = 20;
    cfg.nc_fraction = 0.2;
    cfg.ad_fraction = 0.2;
    cfg.converter_fraction = 0.5;
    auto g = generate_cohort(cfg);
    CHECK(g.n_nc == 4);
    CHECK(g.n_ad == 4);
    CHECK(g.n_converters == 6);
    CHECK(g.n_stable == 6);

    auto ds = cohort::build_conversion_dataset(g.visit_table, cohort::CohortConfig{});
    CHECK(ds.stats.subjects_excluded >= 8);
    CHECK(ds.audit.count("screening_exclusion") >= 8);
}

TEST_CASE("mixed orientations reorient back to identical RAS fields") {
    SynthConfig ras_cfg;
    ras_cfg.n_subjects = 4;
    ras_cfg.visit_months = {0, 12};
    SynthConfig mixed_cfg = ras_cfg;
    mixed_cfg.orientations = "mixed";

    auto a = generate_cohort(ras_cfg);
    auto b = generate_cohort(mixed_cfg);
    REQUIRE(a.volumes.size() == b.volumes.size());
    bool any_non_ras = false;
    for (size_t i = 0; i < a.volumes.size(); ++i) {
        if (b.volumes[i].meta.orientation != "RAS") any_non_ras = true;
        auto restored = volumes::reorient_to_ras(b.volumes[i]);
        CHECK(restored.data == a.volumes[i].data);
    }
    CHECK(any_non_ras);
}

TEST_CASE("workspace writes are deterministic") {
    auto base = std::filesystem::temp_directory_path() / "convpred_test_synth";
    std::filesystem::remove_all(base);
    SynthConfig cfg;
    cfg.n_subjects = 4;
    cfg.visit_months = {0, 12};
    auto g = generate_cohort(cfg);
    write_workspace(g, base / "w1");
    write_workspace(g, base / "w2");
    CHECK(workspace_digest(base / "w1") == workspace_digest(base / "w2"));
    CHECK(std::filesystem::exists(base / "w1" / "visits.csv"));
    CHECK(std::filesystem::exists(base / "w1" / "manifest.csv"));
    auto manifest = read_csv(base / "w1" / "manifest.csv");
    CHECK(manifest.rows.size() == 8);
    for (const auto& row : manifest.rows)
        CHECK(std::filesystem::exists(base / "w1" / row[2]));
}
