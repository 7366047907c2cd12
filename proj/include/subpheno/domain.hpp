#pragma once

// Core data types shared by every stage: the physiological variable catalog,
// admission/measurement records, the feature matrix, and cluster assignments.
//
// The catalog is a fixed list of 51 base variables (with reference means and
// standard deviations in their canonical units) plus 6 derived ratios and the
// 5 demographic predictors used by the outcome models. It is immutable and
// identical across runs; downstream joins key on the stable snake_case ids.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/csv.hpp"

namespace subpheno {

struct VariableId {
    std::string id;            // stable snake_case key
    std::string display_name;  // human-readable name
    std::string unit;
    double normal_mean;        // global imputation default
    double normal_sd;          // reference spread, used by the synthetic generator
};

struct RatioId {
    std::string id;
    std::string display_name;
    std::string numerator;    // VariableId::id
    std::string denominator;  // VariableId::id
};

enum class Gender : std::uint8_t { M, F };
enum class AdmissionType : std::uint8_t { EMER, OBSERVATION, SURGICAL, ELECTIVE };

inline const char* to_string(Gender g) { return g == Gender::M ? "M" : "F"; }
inline const char* to_string(AdmissionType t) {
    switch (t) {
        case AdmissionType::EMER: return "EMER";
        case AdmissionType::OBSERVATION: return "OBSERVATION";
        case AdmissionType::SURGICAL: return "SURGICAL";
        case AdmissionType::ELECTIVE: return "ELECTIVE";
    }
    return "?";
}

inline Gender parse_gender(std::string_view s) {
    if (s == "M") return Gender::M;
    if (s == "F") return Gender::F;
    throw ParseError("unknown gender: '" + std::string(s) + "'");
}

inline AdmissionType parse_admission_type(std::string_view s) {
    if (s == "EMER") return AdmissionType::EMER;
    if (s == "OBSERVATION") return AdmissionType::OBSERVATION;
    if (s == "SURGICAL") return AdmissionType::SURGICAL;
    if (s == "ELECTIVE") return AdmissionType::ELECTIVE;
    throw ParseError("unknown admission_type: '" + std::string(s) + "'");
}

struct AdmissionRecord {
    std::string admission_id;
    std::string patient_id;
    double age = 0.0;  // years
    Gender gender = Gender::M;
    std::int64_t admit_time = 0;
    std::int64_t discharge_time = 0;
    AdmissionType admission_type = AdmissionType::EMER;
    bool ventilation = false;
    std::set<std::string> icd_codes;
    std::vector<std::int64_t> cam_icu_positive_times;
    bool haloperidol_given = false;
    bool died_in_hospital = false;
    int total_admission_count = 1;
    int admission_rank_order = 1;

    double los_days() const {
        return static_cast<double>(discharge_time - admit_time) / kSecondsPerDay;
    }
};

struct Measurement {
    std::string admission_id;
    int variable = -1;  // index into the base catalog
    double value = 0.0;
    bool abnormal = false;
    std::int64_t time = 0;
};

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

class FeatureCatalog {
public:
    FeatureCatalog();

    const std::vector<VariableId>& variables() const { return variables_; }
    const std::vector<RatioId>& ratios() const { return ratios_; }
    const std::vector<std::string>& demographic_ids() const { return demographics_; }

    std::size_t n_base() const { return variables_.size(); }
    std::size_t n_ratio() const { return ratios_.size(); }

    // Index of a base variable id, or -1 when absent.
    int index_of(std::string_view id) const {
        auto it = index_.find(std::string(id));
        return it == index_.end() ? -1 : it->second;
    }
    const VariableId& variable(std::size_t i) const { return variables_[i]; }

    // Ratio definitions resolved to base indices (numerator, denominator).
    const std::vector<std::pair<int, int>>& ratio_indices() const { return ratio_idx_; }

    // Column ids for the 57-column physiological matrix (base then ratios).
    std::vector<std::string> feature_column_ids() const {
        std::vector<std::string> cols;
        cols.reserve(n_base() + n_ratio());
        for (const auto& v : variables_) cols.push_back(v.id);
        for (const auto& r : ratios_) cols.push_back(r.id);
        return cols;
    }

    // Display name for any feature or demographic id (falls back to the id).
    std::string display_name(std::string_view id) const;

    // CSV export: id,display_name,unit,normal_mean. Stable byte-for-byte.
    std::string to_csv() const {
        std::string out = "id,display_name,unit,normal_mean\n";
        for (const auto& v : variables_) {
            out += v.id;
            out += ',';
            out += csv::quote_field(v.display_name);
            out += ',';
            out += v.unit;
            out += ',';
            out += format_double(v.normal_mean);
            out += '\n';
        }
        return out;
    }

private:
    std::vector<VariableId> variables_;
    std::vector<RatioId> ratios_;
    std::vector<std::string> demographics_;
    std::map<std::string, int> index_;
    std::vector<std::pair<int, int>> ratio_idx_;
};

inline FeatureCatalog::FeatureCatalog() {
    variables_ = {
        {"weight", "Weight", "kg", 80.87, 23.31},
        {"heart_rate", "Heart Rate", "bpm", 88.41, 19.98},
        {"blood_pressure_systolic", "Blood Pressure, Systolic", "mmHg", 125.43, 24.77},
        {"blood_pressure_diastolic", "Blood Pressure, Diastolic", "mmHg", 69.17, 17.93},
        {"blood_pressure_mean", "Blood Pressure, Mean", "mmHg", 83.13, 20.38},
        {"temperature", "Temperature", "Celsius", 36.84, 1.31},
        {"blood_albumin", "Blood Albumin", "g/dL", 4.08, 0.39},
        {"alkaline_phosphatase", "Alkaline Phosphatase", "IU/L", 77.01, 20.16},
        {"alanine_transaminase", "Alanine Transaminase (ALT)", "IU/L", 20.63, 41.99},
        {"aspartate_aminotransferase", "Aspartate Aminotransferase (AST)", "IU/L", 24.35, 36.65},
        {"anion_gap", "Anion Gap", "mEq/L", 14.78, 2.62},
        {"base_excess", "Base Excess", "mEq/L", -1.07, 6.6},
        {"bicarbonate", "Bicarbonate", "mEq/L", 25.66, 2.5},
        {"blood_urea_nitrogen", "Blood Urea Nitrogen (BUN)", "mg/dL", 13.77, 3.88},
        {"calcium", "Calcium", "mg/dL", 9.09, 0.89},
        {"chloride", "Chloride", "mEq/L", 102.33, 3.23},
        {"creatine_kinase", "Creatine Kinase/Phosphokinase", "IU/L", 104.46, 163.38},
        {"creatinine", "Creatinine", "mg/dL", 0.85, 0.19},
        {"fio2", "Fraction Of Inspired O2 (FiO2)", "%", 74.36, 26.83},
        {"glucose", "Glucose", "mg/dL", 113.44, 53.1},
        {"hematocrit", "Hematocrit", "%", 40.42, 4.29},
        {"hemoglobin", "Hemoglobin", "g/dL", 13.74, 1.35},
        {"inr", "International Normalized Ratio", "-", 1.04, 0.24},
        {"lactate", "Lactate", "mmol/L", 1.4, 0.37},
        {"lactate_dehydrogenase", "Lactate Dehydrogenase", "IU/L", 193.01, 61.26},
        {"magnesium", "Magnesium", "mg/dL", 2.01, 0.23},
        {"mean_corpuscular_hemoglobin", "Mean Corpuscular Hemoglobin", "pg", 29.72, 1.4},
        {"mean_corpuscular_hemoglobin_concentration",
         "Mean Corpuscular Hemoglobin Concentration", "g/dL", 33.31, 1.01},
        {"mean_corpuscular_volume", "Mean Corpuscular Volume", "fL", 89.9, 4.18},
        {"basophils", "Basophils", "K/uL", 0.17, 0.24},
        {"eosinophils", "Eosinophils", "K/uL", 0.14, 0.16},
        {"lymphocytes", "Lymphocytes", "K/uL", 2.0, 0.76},
        {"monocytes", "Monocytes", "K/uL", 0.54, 0.34},
        {"neutrophils", "Neutrophils", "K/uL", 4.59, 2.66},
        {"pao2", "Partial Pressure Of O2 (PaO2)", "mmHg", 95.09, 9.61},
        {"paco2", "Partial Pressure Of CO2", "mmHg", 40.07, 14.71},
        {"peep", "Positive End-Expiratory Pressure", "-", 5.88, 5.3},
        {"ph", "PH", "-", 7.4, 0.08},
        {"platelets", "Platelets", "K/uL", 250.48, 66.37},
        {"potassium", "Potassium", "mEq/L", 4.16, 0.45},
        {"prothrombin_time", "Prothrombin Time", "sec", 11.72, 1.38},
        {"partial_prothrombin_time", "Partial Prothrombin Time", "sec", 29.15, 3.85},
        {"red_blood_cells", "Red Blood Cells (RBC)", "m/uL", 4.7, 0.41},
        {"red_cell_distribution_width", "Red Cell Distribution Width", "%", 13.63, 0.92},
        {"so2", "Saturated O2 (SO2)", "%", 93.93, 11.46},
        {"sodium", "Sodium", "mEq/L", 138.92, 2.93},
        {"total_bilirubin", "Total Bilirubin", "mg/dL", 0.55, 0.33},
        {"total_co2", "Total CO2", "mEq/L", 25.35, 2.67},
        {"troponin", "Troponin", "ng/mL", 0.01, 0.5},
        {"urea_nitrogen", "Urea Nitrogen", "mg/dL", 13.54, 3.76},
        {"white_blood_cells", "White Blood Cells", "K/uL", 7.56, 1.8},
    };
    ratios_ = {
        {"ast_alt_ratio", "AST:ALT", "aspartate_aminotransferase", "alanine_transaminase"},
        {"bun_creatinine_ratio", "BUN:Creatinine", "blood_urea_nitrogen", "creatinine"},
        {"fio2_pao2_ratio", "FiO2:PaO2", "fio2", "pao2"},
        {"so2_fio2_ratio", "SO2:FiO2", "so2", "fio2"},
        {"neutrophil_lymphocyte_ratio", "Neutrophils:Lymphocytes", "neutrophils", "lymphocytes"},
        {"platelet_rbc_ratio", "Platelets:RBC", "platelets", "red_blood_cells"},
    };
    demographics_ = {"age", "gender", "ventilation", "total_admission_count",
                     "admission_rank_order"};
    for (std::size_t i = 0; i < variables_.size(); ++i)
        index_.emplace(variables_[i].id, static_cast<int>(i));
    for (const auto& r : ratios_) {
        int num = index_of(r.numerator);
        int den = index_of(r.denominator);
        if (num < 0 || den < 0) throw std::logic_error("ratio references unknown variable");
        ratio_idx_.emplace_back(num, den);
    }
}

inline std::string FeatureCatalog::display_name(std::string_view id) const {
    int i = index_of(id);
    if (i >= 0) return variables_[static_cast<std::size_t>(i)].display_name;
    for (const auto& r : ratios_)
        if (r.id == id) return r.display_name;
    static const std::map<std::string, std::string> demo = {
        {"age", "Age"},
        {"gender", "Gender"},
        {"ventilation", "Ventilation"},
        {"total_admission_count", "Patients' Total Admissions"},
        {"admission_rank_order", "Admission Rank Order"},
    };
    auto it = demo.find(std::string(id));
    return it != demo.end() ? it->second : std::string(id);
}

// The one shared catalog instance.
inline const FeatureCatalog& feature_catalog() {
    static const FeatureCatalog catalog;
    return catalog;
}

// ---------------------------------------------------------------------------
// Feature matrix
// ---------------------------------------------------------------------------

struct ScalerState {
    std::vector<std::string> column_ids;
    std::vector<double> mean;
    std::vector<double> std;  // population std; 0 only for constant columns
};

struct FeatureMatrix {
    std::vector<std::string> row_ids;
    std::vector<std::string> column_ids;
    std::vector<double> values;        // row-major, NaN marks missing pre-imputation
    std::vector<std::uint8_t> missing; // 1 where the value was absent/imputed
    std::optional<ScalerState> scaler;

    std::size_t n_rows() const { return row_ids.size(); }
    std::size_t n_cols() const { return column_ids.size(); }

    double& at(std::size_t r, std::size_t c) { return values[r * n_cols() + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * n_cols() + c]; }
    bool is_missing(std::size_t r, std::size_t c) const {
        return missing[r * n_cols() + c] != 0;
    }
    const double* row(std::size_t r) const { return values.data() + r * n_cols(); }

    int col_index(std::string_view id) const {
        for (std::size_t c = 0; c < column_ids.size(); ++c)
            if (column_ids[c] == id) return static_cast<int>(c);
        return -1;
    }

    static FeatureMatrix zeros(std::vector<std::string> rows, std::vector<std::string> cols) {
        FeatureMatrix m;
        m.row_ids = std::move(rows);
        m.column_ids = std::move(cols);
        m.values.assign(m.n_rows() * m.n_cols(), 0.0);
        m.missing.assign(m.n_rows() * m.n_cols(), 0);
        return m;
    }
};

// ---------------------------------------------------------------------------
// Cluster assignments
// ---------------------------------------------------------------------------

enum class ClusterMethod : std::uint8_t { kmeans, hierarchical };
enum class Metric : std::uint8_t { euclidean, cosine };

inline const char* to_string(ClusterMethod m) {
    return m == ClusterMethod::kmeans ? "kmeans" : "hierarchical";
}
inline const char* to_string(Metric m) {
    return m == Metric::euclidean ? "euclidean" : "cosine";
}

struct ClusterAssignment {
    std::vector<int> labels;  // per row, in [0, k)
    int k = 0;
    ClusterMethod method = ClusterMethod::kmeans;
    Metric metric = Metric::euclidean;
    double objective = 0.0;  // inertia for k-means, cut merge height for hierarchical

    std::vector<std::size_t> cluster_sizes() const {
        std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
        for (int l : labels) sizes[static_cast<std::size_t>(l)]++;
        return sizes;
    }
};

// ---------------------------------------------------------------------------
// Record validation: violations are data, not exceptions.
// ---------------------------------------------------------------------------

inline std::vector<std::string> validate_record(const AdmissionRecord& r) {
    std::vector<std::string> v;
    if (r.admission_id.empty()) v.push_back("empty admission_id");
    if (r.patient_id.empty()) v.push_back("empty patient_id");
    if (!(r.age >= 0.0) || !std::isfinite(r.age)) v.push_back("age not a finite non-negative number");
    if (r.discharge_time < r.admit_time) v.push_back("negative LOS: discharge before admit");
    if (r.total_admission_count < 1) v.push_back("total_admission_count < 1");
    if (r.admission_rank_order < 1) v.push_back("admission_rank_order < 1");
    if (r.admission_rank_order > r.total_admission_count)
        v.push_back("admission_rank_order exceeds total_admission_count");
    return v;
}

}  // namespace subpheno
