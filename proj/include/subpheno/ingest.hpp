#pragma once

// Cohort construction: parse the input CSVs, assign delirium labels from the
// three triggers (ICD code, positive CAM-ICU screen, haloperidol), apply the
// exclusion cascade, and reduce to one index admission per patient.

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/csv.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

// ICD codes whose presence labels an admission as delirium. Closed list;
// matching is exact string equality after trimming.
inline const std::set<std::string>& default_delirium_icd_codes() {
    static const std::set<std::string> codes = {
        // ICD-9
        "290.11", "290.3", "290.41", "291.0", "291.1", "292.81", "292.89",
        "293.0", "293.1", "308.9", "780.09",
        // ICD-10
        "F05", "F01.51", "F02.81", "F03.91", "F10.221", "F10.231", "F10.921",
        "F10.96", "F10.121", "F11.121", "F11.221", "F11.921", "F12.121",
        "F12.221", "F12.921", "F13.121", "F13.221", "F13.231", "F13.921",
        "F13.931", "F14.121", "F14.221", "F14.921", "F15.121", "F15.221",
        "F15.921", "F16.121", "F16.221", "F16.921", "F18.121", "F18.221",
        "F18.921", "F19.121", "F19.221", "F19.231", "F19.921", "F19.931",
        "R41.0", "F43.0",
    };
    return codes;
}

struct CohortSpec {
    std::set<std::string> delirium_icd_codes = default_delirium_icd_codes();
    // Sensory/cognitive-disability codes are site-specific; default empty.
    std::set<std::string> disqualifying_icd_codes = {};
    double min_age = 18.0;
    double min_los_days = 1.0;
    double exclude_delirium_within_hours = 24.0;

    std::vector<std::string> validate() const {
        std::vector<std::string> v;
        if (min_age <= 0) v.push_back("min_age must be positive");
        if (min_los_days <= 0) v.push_back("min_los_days must be positive");
        if (exclude_delirium_within_hours <= 0)
            v.push_back("exclude_delirium_within_hours must be positive");
        if (delirium_icd_codes.empty()) v.push_back("delirium_icd_codes empty");
        return v;
    }
};

enum class ExclusionReason : std::uint8_t {
    AGE,
    LOS,
    DISQUALIFYING_ICD,
    NO_MEASUREMENTS,
    EARLY_DELIRIUM,
    NOT_INDEX,
};

inline const char* to_string(ExclusionReason r) {
    switch (r) {
        case ExclusionReason::AGE: return "AGE";
        case ExclusionReason::LOS: return "LOS";
        case ExclusionReason::DISQUALIFYING_ICD: return "DISQUALIFYING_ICD";
        case ExclusionReason::NO_MEASUREMENTS: return "NO_MEASUREMENTS";
        case ExclusionReason::EARLY_DELIRIUM: return "EARLY_DELIRIUM";
        case ExclusionReason::NOT_INDEX: return "NOT_INDEX";
    }
    return "?";
}

struct Cohort {
    std::vector<AdmissionRecord> admissions;  // sorted by admission_id
    std::map<std::string, std::vector<Measurement>> measurements;
    std::map<std::string, bool> delirium_label;
    std::map<std::string, ExclusionReason> exclusion_log;  // removed admissions

    const AdmissionRecord* find(const std::string& admission_id) const {
        auto it = std::lower_bound(admissions.begin(), admissions.end(), admission_id,
                                   [](const AdmissionRecord& a, const std::string& id) {
                                       return a.admission_id < id;
                                   });
        if (it != admissions.end() && it->admission_id == admission_id) return &*it;
        return nullptr;
    }

    std::size_t measurement_count(const std::string& admission_id) const {
        auto it = measurements.find(admission_id);
        return it == measurements.end() ? 0 : it->second.size();
    }
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = s.find_first_not_of(" \t");
    std::size_t e = s.find_last_not_of(" \t");
    if (b == std::string_view::npos) return {};
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& field) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= field.size()) {
        std::size_t pos = field.find(';', start);
        std::string item = trim(pos == std::string::npos
                                    ? field.substr(start)
                                    : field.substr(start, pos - start));
        if (!item.empty()) out.push_back(std::move(item));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_bool01(const std::string& field, const char* column) {
    if (field == "0") return false;
    if (field == "1") return true;
    throw ParseError(std::string("column '") + column + "' must be 0 or 1, got '" +
                     field + "'");
}

}  // namespace detail

inline const std::vector<std::string>& admissions_header() {
    static const std::vector<std::string> h = {
        "admission_id", "patient_id", "age", "gender", "admit_time",
        "discharge_time", "admission_type", "ventilation", "icd_codes",
        "cam_icu_positive_times", "haloperidol_given", "died_in_hospital",
        "total_admission_count", "admission_rank_order"};
    return h;
}

inline const std::vector<std::string>& measurements_header() {
    static const std::vector<std::string> h = {"admission_id", "variable_id", "value",
                                               "abnormal", "time"};
    return h;
}

inline std::vector<AdmissionRecord> parse_admissions(const std::string& path) {
    csv::Reader r(path);
    csv::expect_header(r, admissions_header());
    std::vector<AdmissionRecord> out;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != admissions_header().size())
            r.fail("expected " + std::to_string(admissions_header().size()) +
                   " columns, got " + std::to_string(f.size()));
        for (std::size_t i = 0; i < f.size(); ++i) {
            // list columns may legitimately be empty
            if (f[i].empty() && i != 8 && i != 9)
                r.fail("empty value in column '" + admissions_header()[i] + "'");
        }
        AdmissionRecord a;
        try {
            a.admission_id = f[0];
            a.patient_id = f[1];
            a.age = parse_double(f[2]);
            a.gender = parse_gender(f[3]);
            a.admit_time = parse_timestamp(f[4]);
            a.discharge_time = parse_timestamp(f[5]);
            a.admission_type = parse_admission_type(f[6]);
            a.ventilation = detail::parse_bool01(f[7], "ventilation");
            for (auto& code : detail::split_list(f[8])) a.icd_codes.insert(code);
            for (auto& t : detail::split_list(f[9]))
                a.cam_icu_positive_times.push_back(parse_timestamp(t));
            a.haloperidol_given = detail::parse_bool01(f[10], "haloperidol_given");
            a.died_in_hospital = detail::parse_bool01(f[11], "died_in_hospital");
            a.total_admission_count = static_cast<int>(parse_int(f[12]));
            a.admission_rank_order = static_cast<int>(parse_int(f[13]));
        } catch (const ParseError& e) {
            r.fail(e.what());
        }
        out.push_back(std::move(a));
    }
    std::sort(out.begin(), out.end(), [](const AdmissionRecord& a, const AdmissionRecord& b) {
        return a.admission_id < b.admission_id;
    });
    return out;
}

struct MeasurementParseResult {
    std::vector<Measurement> measurements;
    std::size_t dropped_unknown_variable = 0;
};

inline MeasurementParseResult parse_measurements(const std::string& path) {
    const FeatureCatalog& cat = feature_catalog();
    csv::Reader r(path);
    csv::expect_header(r, measurements_header());
    MeasurementParseResult out;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != measurements_header().size())
            r.fail("expected 5 columns, got " + std::to_string(f.size()));
        int var = cat.index_of(f[1]);
        if (var < 0) {
            ++out.dropped_unknown_variable;
            continue;
        }
        Measurement m;
        try {
            m.admission_id = f[0];
            m.variable = var;
            m.value = parse_double(f[2]);
            m.abnormal = detail::parse_bool01(f[3], "abnormal");
            m.time = parse_timestamp(f[4]);
        } catch (const ParseError& e) {
            r.fail(e.what());
        }
        if (!std::isfinite(m.value)) r.fail("non-finite measurement value");
        out.measurements.push_back(std::move(m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Labeling and exclusions
// ---------------------------------------------------------------------------

struct DeliriumLabel {
    bool delirious = false;
    bool icd_trigger = false;
    bool cam_icu_trigger = false;
    bool haloperidol_trigger = false;
};

// Pure function of the record and spec. Triggers are inclusive-or; all that
// fired are recorded for provenance.
inline DeliriumLabel label_delirium(const AdmissionRecord& r, const CohortSpec& spec) {
    DeliriumLabel l;
    for (const auto& code : r.icd_codes) {
        if (spec.delirium_icd_codes.count(detail::trim(code))) {
            l.icd_trigger = true;
            break;
        }
    }
    l.cam_icu_trigger = !r.cam_icu_positive_times.empty();
    l.haloperidol_trigger = r.haloperidol_given;
    l.delirious = l.icd_trigger || l.cam_icu_trigger || l.haloperidol_trigger;
    return l;
}

inline Cohort assign_labels(std::vector<AdmissionRecord> admissions,
                            std::vector<Measurement> measurements,
                            const CohortSpec& spec) {
    Cohort c;
    c.admissions = std::move(admissions);
    std::sort(c.admissions.begin(), c.admissions.end(),
              [](const AdmissionRecord& a, const AdmissionRecord& b) {
                  return a.admission_id < b.admission_id;
              });
    for (auto& m : measurements) c.measurements[m.admission_id].push_back(std::move(m));
    for (const auto& a : c.admissions)
        c.delirium_label[a.admission_id] = label_delirium(a, spec).delirious;
    return c;
}

// Applies the exclusion cascade at admission level. Each removed admission is
// logged with the first matching reason in the order AGE, LOS,
// DISQUALIFYING_ICD, NO_MEASUREMENTS, EARLY_DELIRIUM. Idempotent.
inline Cohort apply_exclusions(const Cohort& in, const CohortSpec& spec) {
    Cohort out;
    out.exclusion_log = in.exclusion_log;
    for (const auto& a : in.admissions) {
        std::optional<ExclusionReason> reason;
        if (a.age < spec.min_age) {
            reason = ExclusionReason::AGE;
        } else if (a.los_days() < spec.min_los_days) {
            reason = ExclusionReason::LOS;
        } else {
            for (const auto& code : a.icd_codes) {
                if (spec.disqualifying_icd_codes.count(detail::trim(code))) {
                    reason = ExclusionReason::DISQUALIFYING_ICD;
                    break;
                }
            }
            if (!reason && in.measurement_count(a.admission_id) == 0)
                reason = ExclusionReason::NO_MEASUREMENTS;
            if (!reason && in.delirium_label.at(a.admission_id)) {
                // Early-onset check uses CAM-ICU timestamps only; the other
                // triggers carry no timing information.
                const std::int64_t cutoff =
                    a.admit_time +
                    static_cast<std::int64_t>(spec.exclude_delirium_within_hours * 3600.0);
                for (std::int64_t t : a.cam_icu_positive_times) {
                    if (t < cutoff) {
                        reason = ExclusionReason::EARLY_DELIRIUM;
                        break;
                    }
                }
            }
        }
        if (reason) {
            out.exclusion_log.emplace(a.admission_id, *reason);
        } else {
            out.admissions.push_back(a);
            auto it = in.measurements.find(a.admission_id);
            if (it != in.measurements.end()) out.measurements[a.admission_id] = it->second;
            out.delirium_label[a.admission_id] = in.delirium_label.at(a.admission_id);
        }
    }
    return out;
}

// Keeps one index admission per patient: the earliest delirious admission for
// patients with any delirious stay, otherwise the earliest admission. Ties on
// admit_time break by admission_id ascending.
inline Cohort select_index_admissions(const Cohort& in) {
    std::map<std::string, const AdmissionRecord*> index;  // patient_id -> chosen
    auto better = [&](const AdmissionRecord* cand, const AdmissionRecord* cur) {
        if (cand->admit_time != cur->admit_time) return cand->admit_time < cur->admit_time;
        return cand->admission_id < cur->admission_id;
    };
    for (const auto& a : in.admissions) {
        bool cand_delirious = in.delirium_label.at(a.admission_id);
        auto it = index.find(a.patient_id);
        if (it == index.end()) {
            index[a.patient_id] = &a;
            continue;
        }
        bool cur_delirious = in.delirium_label.at(it->second->admission_id);
        if (cand_delirious != cur_delirious) {
            if (cand_delirious) it->second = &a;  // delirious stays take precedence
        } else if (better(&a, it->second)) {
            it->second = &a;
        }
    }
    Cohort out;
    out.exclusion_log = in.exclusion_log;
    for (const auto& a : in.admissions) {
        if (index.at(a.patient_id) != &a) {
            out.exclusion_log.emplace(a.admission_id, ExclusionReason::NOT_INDEX);
            continue;
        }
        out.admissions.push_back(a);
        auto it = in.measurements.find(a.admission_id);
        if (it != in.measurements.end()) out.measurements[a.admission_id] = it->second;
        out.delirium_label[a.admission_id] = in.delirium_label.at(a.admission_id);
    }
    return out;
}

}  // namespace subpheno
