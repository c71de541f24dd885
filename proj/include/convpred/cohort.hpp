#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convpred/audit.hpp"
#include "convpred/csv.hpp"

namespace convpred::cohort {

enum class Diagnosis { NC, MCI, AD };

Diagnosis parse_diagnosis(const std::string& s);
std::string to_string(Diagnosis d);

struct VisitRecord {
    std::string subject_id;
    int month = 0;  // months since the screening visit; month 0 is screening
    Diagnosis diagnosis = Diagnosis::MCI;
    std::vector<std::string> clinical;  // raw cells, aligned to the table's clinical columns
    std::string volume_ref;             // empty when no volume is available
};

struct SubjectTimeline {
    std::string subject_id;
    std::vector<VisitRecord> visits;  // strictly increasing months
};

struct CohortConfig {
    int horizon_months = 60;
    // MCI subjects that revert to NC and never reach AD stay in the stable
    // class when true; when false such timelines are excluded entirely.
    bool treat_reversion_as_stable = true;
};

enum class ConversionLabel { Stable = 0, Converged = 1 };

struct ConversionExample {
    std::string subject_id;
    int month = 0;
    ConversionLabel label = ConversionLabel::Stable;
    std::optional<int> months_to_conversion;  // converged examples only
    std::vector<std::string> clinical;
    std::string volume_ref;
};

struct CohortStats {
    int subjects_screened = 0;
    int subjects_excluded = 0;
    int subjects_stable = 0;
    int subjects_converged = 0;
    int samples_stable = 0;
    int samples_converged = 0;
};

struct ConversionDataset {
    std::vector<std::string> clinical_columns;
    std::vector<ConversionExample> examples;
    CohortStats stats;
    AuditLog audit;
};

struct ScreenResult {
    std::vector<SubjectTimeline> kept;
    AuditLog audit;  // one "screening_exclusion" entry per removed subject
};

// Keeps exactly the timelines whose month-0 diagnosis is MCI. Timelines with
// no month-0 visit, or screening NC/AD, are excluded with a reason.
ScreenResult screen_subjects(const std::vector<SubjectTimeline>& timelines);

// Applies the prediction-horizon labeling rules to one screened timeline.
//
// Converters (any AD visit): t_AD is the month of the first AD visit; every
// MCI visit with 0 < t_AD - month <= horizon becomes a converged example,
// earlier MCI visits are dropped. Non-converters: every MCI visit with
// t_last - month >= horizon becomes a stable example, later visits are
// censored. A non-AD diagnosis after an AD visit rejects the whole timeline
// with a "reversal_reject" audit entry.
std::vector<ConversionExample> label_timeline(const SubjectTimeline& timeline,
                                              const CohortConfig& cfg,
                                              AuditLog* audit = nullptr);

// Groups visit-table rows into timelines, screens and labels them.
// Rows lacking a volume reference or with no clinical value at all are
// dropped before labeling. Duplicate (subject_id, month) keys are fatal.
ConversionDataset build_conversion_dataset(const CsvTable& visit_table, const CohortConfig& cfg);

// Parses one visit table row set into timelines without labeling;
// exposed for the embedding corpus, which needs every diagnosis.
std::vector<SubjectTimeline> timelines_from_table(const CsvTable& visit_table,
                                                  std::vector<std::string>* clinical_columns,
                                                  AuditLog* audit,
                                                  bool drop_incomplete = true);

std::string dataset_to_json(const ConversionDataset& ds);
ConversionDataset dataset_from_json(const std::string& text);
std::string stats_to_json(const CohortStats& s);

}  // namespace convpred::cohort
