#include "convpred/cohort.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <set>

#include "convpred/common.hpp"

namespace convpred::cohort {

using nlohmann::json;

Diagnosis parse_diagnosis(const std::string& s) {
    if (s == "NC") return Diagnosis::NC;
    if (s == "MCI") return Diagnosis::MCI;
    if (s == "AD") return Diagnosis::AD;
    throw DataError("invalid diagnosis '" + s + "' (expected NC, MCI or AD)");
}

std::string to_string(Diagnosis d) {
    switch (d) {
        case Diagnosis::NC: return "NC";
        case Diagnosis::MCI: return "MCI";
        case Diagnosis::AD: return "AD";
    }
    return "?";
}

ScreenResult screen_subjects(const std::vector<SubjectTimeline>& timelines) {
    ScreenResult out;
    for (const auto& tl : timelines) {
        const VisitRecord* screening = nullptr;
        for (const auto& v : tl.visits)
            if (v.month == 0) {
                screening = &v;
                break;
            }
        if (!screening) {
            out.audit.note("screening_exclusion",
                           {{"subject_id", tl.subject_id}, {"reason", "missing screening visit"}});
            continue;
        }
        if (screening->diagnosis == Diagnosis::NC) {
            out.audit.note("screening_exclusion",
                           {{"subject_id", tl.subject_id}, {"reason", "screening NC"}});
            continue;
        }
        if (screening->diagnosis == Diagnosis::AD) {
            out.audit.note("screening_exclusion",
                           {{"subject_id", tl.subject_id}, {"reason", "screening AD"}});
            continue;
        }
        out.kept.push_back(tl);
    }
    return out;
}

std::vector<ConversionExample> label_timeline(const SubjectTimeline& timeline,
                                              const CohortConfig& cfg, AuditLog* audit) {
    if (cfg.horizon_months <= 0) throw ConfigError("horizon_months must be positive");
    if (timeline.visits.empty()) return {};

    // Reject diagnosis reversals after AD.
    const VisitRecord* first_ad = nullptr;
    for (const auto& v : timeline.visits) {
        if (!first_ad && v.diagnosis == Diagnosis::AD) first_ad = &v;
        if (first_ad && v.diagnosis != Diagnosis::AD) {
            if (audit)
                audit->note("reversal_reject", {{"subject_id", timeline.subject_id},
                                                {"reason", "diagnosis reversal after AD"},
                                                {"month", std::to_string(v.month)}});
            return {};
        }
    }

    if (!cfg.treat_reversion_as_stable && !first_ad) {
        bool mci_seen = false;
        for (const auto& v : timeline.visits) {
            if (v.diagnosis == Diagnosis::MCI) mci_seen = true;
            if (mci_seen && v.diagnosis == Diagnosis::NC) {
                if (audit)
                    audit->note("reversion_excluded", {{"subject_id", timeline.subject_id},
                                                       {"month", std::to_string(v.month)}});
                return {};
            }
        }
    }

    std::vector<ConversionExample> out;
    if (first_ad) {
        int t_ad = first_ad->month;
        for (const auto& v : timeline.visits) {
            if (v.diagnosis != Diagnosis::MCI) continue;
            int gap = t_ad - v.month;
            if (gap <= 0) continue;
            if (gap > cfg.horizon_months) continue;  // visit earlier than t_AD - H
            ConversionExample ex;
            ex.subject_id = v.subject_id;
            ex.month = v.month;
            ex.label = ConversionLabel::Converged;
            ex.months_to_conversion = gap;
            ex.clinical = v.clinical;
            ex.volume_ref = v.volume_ref;
            out.push_back(std::move(ex));
        }
    } else {
        int t_last = timeline.visits.back().month;
        for (const auto& v : timeline.visits) {
            if (v.diagnosis != Diagnosis::MCI) continue;
            if (t_last - v.month < cfg.horizon_months) continue;  // censored
            ConversionExample ex;
            ex.subject_id = v.subject_id;
            ex.month = v.month;
            ex.label = ConversionLabel::Stable;
            ex.clinical = v.clinical;
            ex.volume_ref = v.volume_ref;
            out.push_back(std::move(ex));
        }
    }
    return out;
}

std::vector<SubjectTimeline> timelines_from_table(const CsvTable& table,
                                                  std::vector<std::string>* clinical_columns,
                                                  AuditLog* audit, bool drop_incomplete) {
    int c_subject = table.require_column("subject_id");
    int c_month = table.require_column("month");
    int c_diag = table.require_column("diagnosis");
    int c_vol = table.require_column("volume_path");

    std::vector<int> clin_cols;
    std::vector<std::string> clin_names;
    for (size_t i = 0; i < table.header.size(); ++i) {
        int ci = static_cast<int>(i);
        if (ci == c_subject || ci == c_month || ci == c_diag || ci == c_vol) continue;
        clin_cols.push_back(ci);
        clin_names.push_back(table.header[i]);
    }
    if (clinical_columns) *clinical_columns = clin_names;

    std::map<std::string, SubjectTimeline> by_subject;
    std::set<std::pair<std::string, int>> seen;
    std::vector<std::string> duplicates;

    for (const auto& row : table.rows) {
        VisitRecord v;
        v.subject_id = row[static_cast<size_t>(c_subject)];
        long long month;
        if (!parse_int(row[static_cast<size_t>(c_month)], month) || month < 0)
            throw DataError("invalid month '" + row[static_cast<size_t>(c_month)] +
                            "' for subject " + v.subject_id);
        v.month = static_cast<int>(month);
        v.diagnosis = parse_diagnosis(row[static_cast<size_t>(c_diag)]);
        v.volume_ref = row[static_cast<size_t>(c_vol)];
        for (int ci : clin_cols) v.clinical.push_back(row[static_cast<size_t>(ci)]);

        if (!seen.insert({v.subject_id, v.month}).second) {
            duplicates.push_back(v.subject_id + "/" + std::to_string(v.month));
            continue;
        }

        if (drop_incomplete) {
            bool has_clinical = false;
            for (const auto& cell : v.clinical)
                if (!trim(cell).empty()) {
                    has_clinical = true;
                    break;
                }
            if (clin_cols.empty()) has_clinical = true;
            if (v.volume_ref.empty() || !has_clinical) {
                if (audit)
                    audit->note("visit_dropped_missing_data",
                                {{"subject_id", v.subject_id},
                                 {"month", std::to_string(v.month)},
                                 {"missing", v.volume_ref.empty() ? "volume" : "clinical"}});
                continue;
            }
        }

        auto& tl = by_subject[v.subject_id];
        tl.subject_id = v.subject_id;
        tl.visits.push_back(std::move(v));
    }

    if (!duplicates.empty()) {
        std::string keys;
        for (size_t i = 0; i < duplicates.size() && i < 10; ++i) {
            if (i) keys += ", ";
            keys += duplicates[i];
        }
        throw DataError("duplicate (subject_id, month) rows: " + keys);
    }

    std::vector<SubjectTimeline> out;
    out.reserve(by_subject.size());
    for (auto& [id, tl] : by_subject) {
        std::sort(tl.visits.begin(), tl.visits.end(),
                  [](const VisitRecord& a, const VisitRecord& b) { return a.month < b.month; });
        out.push_back(std::move(tl));
    }
    return out;
}

ConversionDataset build_conversion_dataset(const CsvTable& visit_table, const CohortConfig& cfg) {
    ConversionDataset ds;
    auto timelines = timelines_from_table(visit_table, &ds.clinical_columns, &ds.audit, true);

    auto screened = screen_subjects(timelines);
    ds.audit.merge(screened.audit);
    ds.stats.subjects_screened = static_cast<int>(timelines.size());
    ds.stats.subjects_excluded = static_cast<int>(timelines.size() - screened.kept.size());

    for (const auto& tl : screened.kept) {
        auto examples = label_timeline(tl, cfg, &ds.audit);
        if (examples.empty()) continue;
        bool converged = examples.front().label == ConversionLabel::Converged;
        if (converged)
            ++ds.stats.subjects_converged;
        else
            ++ds.stats.subjects_stable;
        for (auto& ex : examples) {
            if (ex.label == ConversionLabel::Converged)
                ++ds.stats.samples_converged;
            else
                ++ds.stats.samples_stable;
            ds.examples.push_back(std::move(ex));
        }
    }
    return ds;
}

namespace {

json example_to_json(const ConversionExample& ex) {
    json j;
    j["subject_id"] = ex.subject_id;
    j["month"] = ex.month;
    j["label"] = ex.label == ConversionLabel::Converged ? 1 : 0;
    if (ex.months_to_conversion)
        j["months_to_conversion"] = *ex.months_to_conversion;
    j["clinical"] = ex.clinical;
    j["volume_ref"] = ex.volume_ref;
    return j;
}

}  // namespace

std::string stats_to_json(const CohortStats& s) {
    json j;
    j["subjects_screened"] = s.subjects_screened;
    j["subjects_excluded"] = s.subjects_excluded;
    j["subjects_stable"] = s.subjects_stable;
    j["subjects_converged"] = s.subjects_converged;
    j["samples_stable"] = s.samples_stable;
    j["samples_converged"] = s.samples_converged;
    return j.dump(2);
}

std::string dataset_to_json(const ConversionDataset& ds) {
    json j;
    j["clinical_columns"] = ds.clinical_columns;
    j["stats"] = json::parse(stats_to_json(ds.stats));
    json arr = json::array();
    for (const auto& ex : ds.examples) arr.push_back(example_to_json(ex));
    j["examples"] = arr;
    return j.dump(2);
}

ConversionDataset dataset_from_json(const std::string& text) {
    json j = json::parse(text);
    ConversionDataset ds;
    ds.clinical_columns = j.at("clinical_columns").get<std::vector<std::string>>();
    const json& st = j.at("stats");
    ds.stats.subjects_screened = st.value("subjects_screened", 0);
    ds.stats.subjects_excluded = st.value("subjects_excluded", 0);
    ds.stats.subjects_stable = st.value("subjects_stable", 0);
    ds.stats.subjects_converged = st.value("subjects_converged", 0);
    ds.stats.samples_stable = st.value("samples_stable", 0);
    ds.stats.samples_converged = st.value("samples_converged", 0);
    for (const auto& je : j.at("examples")) {
        ConversionExample ex;
        ex.subject_id = je.at("subject_id").get<std::string>();
        ex.month = je.at("month").get<int>();
        ex.label = je.at("label").get<int>() == 1 ? ConversionLabel::Converged
                                                  : ConversionLabel::Stable;
        if (je.contains("months_to_conversion"))
            ex.months_to_conversion = je.at("months_to_conversion").get<int>();
        ex.clinical = je.at("clinical").get<std::vector<std::string>>();
        ex.volume_ref = je.at("volume_ref").get<std::string>();
        ds.examples.push_back(std::move(ex));
    }
    return ds;
}

}  // namespace convpred::cohort
