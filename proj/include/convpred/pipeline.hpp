#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "convpred/config.hpp"

namespace convpred::pipeline {

// Workspace layout under cfg.paths.work_dir:
//   prep/volumes/*.nii.gz, prep/manifest.csv, prep/summary.json, prep/audit.ndjson
//   cohort/examples.json, cohort/stats.json, cohort/audit.ndjson
//   embedding/checkpoint.ckpt(+.json), embedding/history.csv, embedding/embeddings.csv
//   cnn/<arch>_fold<k>.ckpt(+.json), cnn/<arch>_fold<k>_history.csv
//   tabular/<source>_<kind>.json, tabular/<source>_transform.json
//   results/results.csv, results/table.txt, results/scores.csv,
//   results/fold_plans.json, results/audit.ndjson
//   figures/*.png, figures/*.csv

std::filesystem::path prep_manifest_path(const config::ExperimentConfig& cfg);
std::filesystem::path embeddings_csv_path(const config::ExperimentConfig& cfg);
std::filesystem::path results_csv_path(const config::ExperimentConfig& cfg);

// Generates the synthetic workspace (visits.csv, raw volumes, manifest.csv)
// plus a ready-to-run config.json inside `out_dir`.
void run_synth(const synthgen::SynthConfig& synth_cfg, const std::filesystem::path& out_dir);

void run_preprocess(const config::ExperimentConfig& cfg);
cohort::CohortStats run_build_cohort(const config::ExperimentConfig& cfg);
void run_train_embedding(const config::ExperimentConfig& cfg);
void run_extract_embeddings(const config::ExperimentConfig& cfg);
void run_train_cnn(const config::ExperimentConfig& cfg, const std::string& arch, int fold_index);
void run_train_tabular(const config::ExperimentConfig& cfg, const std::string& data_source,
                       const std::string& kind);
void run_evaluate(const config::ExperimentConfig& cfg);
void run_visualize(const config::ExperimentConfig& cfg);
// Renders measured results next to the reference expectations file.
std::string run_report(const config::ExperimentConfig& cfg,
                       const std::filesystem::path& reference_path);

}  // namespace convpred::pipeline
