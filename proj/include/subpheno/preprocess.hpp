#pragma once

// Feature engineering: per-admission aggregation with abnormal-value
// preference, ratio derivation, mean imputation, and z-score standardization.
//
// The pipeline order is fixed: aggregate -> derive ratios -> impute ->
// standardize. Ratios are computed from measured values only; a ratio whose
// inputs are missing stays missing until imputation.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/csv.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

constexpr double kRatioDenominatorFloor = 1e-9;

// Per-variable aggregate for one admission: if any measurement of a variable
// carries the abnormal flag, the feature is the mean of the abnormal values;
// otherwise the mean of the normal values. Variables never measured stay
// missing (NaN). Permutation-invariant in measurement order.
inline std::vector<double> aggregate_admission(const std::vector<Measurement>& ms) {
    const std::size_t d = feature_catalog().n_base();
    std::vector<double> abnormal_sum(d, 0.0), normal_sum(d, 0.0);
    std::vector<std::size_t> abnormal_n(d, 0), normal_n(d, 0);
    for (const auto& m : ms) {
        auto v = static_cast<std::size_t>(m.variable);
        if (m.abnormal) {
            abnormal_sum[v] += m.value;
            abnormal_n[v]++;
        } else {
            normal_sum[v] += m.value;
            normal_n[v]++;
        }
    }
    std::vector<double> out(d, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t v = 0; v < d; ++v) {
        if (abnormal_n[v] > 0)
            out[v] = abnormal_sum[v] / static_cast<double>(abnormal_n[v]);
        else if (normal_n[v] > 0)
            out[v] = normal_sum[v] / static_cast<double>(normal_n[v]);
    }
    return out;
}

// Assembles the 51-column base matrix for the given admissions (rows in the
// order supplied; callers pass admission-id-sorted cohorts).
inline FeatureMatrix build_base_matrix(
    const std::vector<std::string>& admission_ids,
    const std::map<std::string, std::vector<Measurement>>& measurements) {
    const FeatureCatalog& cat = feature_catalog();
    std::vector<std::string> cols;
    for (const auto& v : cat.variables()) cols.push_back(v.id);
    FeatureMatrix m = FeatureMatrix::zeros(admission_ids, cols);
    static const std::vector<Measurement> kNone;
    for (std::size_t r = 0; r < admission_ids.size(); ++r) {
        auto it = measurements.find(admission_ids[r]);
        const auto& ms = it == measurements.end() ? kNone : it->second;
        std::vector<double> agg = aggregate_admission(ms);
        for (std::size_t c = 0; c < agg.size(); ++c) {
            m.at(r, c) = agg[c];
            m.missing[r * m.n_cols() + c] = std::isnan(agg[c]) ? 1 : 0;
        }
    }
    return m;
}

struct RatioStats {
    std::size_t zero_denominator_warnings = 0;
};

// Appends the six ratio columns. A ratio is present only when numerator and
// denominator are both present and the denominator is not (near) zero.
inline FeatureMatrix derive_ratios(const FeatureMatrix& base, RatioStats* stats = nullptr) {
    const FeatureCatalog& cat = feature_catalog();
    if (base.n_cols() != cat.n_base())
        throw std::invalid_argument("derive_ratios expects the 51-column base matrix");
    FeatureMatrix m = FeatureMatrix::zeros(base.row_ids, cat.feature_column_ids());
    const std::size_t nb = cat.n_base();
    for (std::size_t r = 0; r < base.n_rows(); ++r) {
        for (std::size_t c = 0; c < nb; ++c) {
            m.at(r, c) = base.at(r, c);
            m.missing[r * m.n_cols() + c] = base.missing[r * nb + c];
        }
        for (std::size_t j = 0; j < cat.n_ratio(); ++j) {
            auto [num, den] = cat.ratio_indices()[j];
            double a = base.at(r, static_cast<std::size_t>(num));
            double b = base.at(r, static_cast<std::size_t>(den));
            std::size_t cell = r * m.n_cols() + nb + j;
            if (std::isnan(a) || std::isnan(b)) {
                m.values[cell] = std::numeric_limits<double>::quiet_NaN();
                m.missing[cell] = 1;
            } else if (std::abs(b) <= kRatioDenominatorFloor) {
                m.values[cell] = std::numeric_limits<double>::quiet_NaN();
                m.missing[cell] = 1;
                if (stats) stats->zero_denominator_warnings++;
            } else {
                m.values[cell] = a / b;
                m.missing[cell] = 0;
            }
        }
    }
    return m;
}

// Mean of normal-flagged measurements per variable over the whole input
// population; variables with no normal measurement fall back to the catalog
// default.
inline std::map<std::string, double> compute_global_normal_means(
    const std::vector<Measurement>& all) {
    const FeatureCatalog& cat = feature_catalog();
    std::vector<double> sum(cat.n_base(), 0.0);
    std::vector<std::size_t> n(cat.n_base(), 0);
    for (const auto& m : all) {
        if (!m.abnormal) {
            sum[static_cast<std::size_t>(m.variable)] += m.value;
            n[static_cast<std::size_t>(m.variable)]++;
        }
    }
    std::map<std::string, double> out;
    for (std::size_t v = 0; v < cat.n_base(); ++v)
        out[cat.variable(v).id] =
            n[v] > 0 ? sum[v] / static_cast<double>(n[v]) : cat.variable(v).normal_mean;
    return out;
}

// Imputation means for every column of a 57-column matrix: base columns take
// the supplied global normal means; ratio columns take the mean of observed
// ratio cells (pooled over all supplied matrices), falling back to the ratio
// of the base means.
inline std::map<std::string, double> imputation_means(
    const std::vector<const FeatureMatrix*>& population,
    const std::map<std::string, double>& normal_means) {
    const FeatureCatalog& cat = feature_catalog();
    std::map<std::string, double> means = normal_means;
    for (std::size_t j = 0; j < cat.n_ratio(); ++j) {
        const auto& ratio = cat.ratios()[j];
        std::size_t col = cat.n_base() + j;
        double sum = 0.0;
        std::size_t n = 0;
        for (const FeatureMatrix* m : population) {
            for (std::size_t r = 0; r < m->n_rows(); ++r) {
                if (!m->is_missing(r, col)) {
                    sum += m->at(r, col);
                    ++n;
                }
            }
        }
        if (n > 0) {
            means[ratio.id] = sum / static_cast<double>(n);
        } else {
            double num = normal_means.at(ratio.numerator);
            double den = normal_means.at(ratio.denominator);
            if (std::abs(den) <= kRatioDenominatorFloor)
                throw std::runtime_error("no imputation mean available for " + ratio.id);
            means[ratio.id] = num / den;
        }
    }
    return means;
}

inline std::map<std::string, double> imputation_means(
    const FeatureMatrix& combined, const std::map<std::string, double>& normal_means) {
    return imputation_means(std::vector<const FeatureMatrix*>{&combined}, normal_means);
}

// Fills every missing cell with its column mean. Observed cells are left
// bit-identical; the mask marks exactly the imputed cells.
inline FeatureMatrix impute(const FeatureMatrix& in, const std::map<std::string, double>& means) {
    FeatureMatrix m = in;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        auto it = means.find(m.column_ids[c]);
        bool have_mean = it != means.end() && std::isfinite(it->second);
        for (std::size_t r = 0; r < m.n_rows(); ++r) {
            std::size_t cell = r * m.n_cols() + c;
            if (m.missing[cell]) {
                if (!have_mean)
                    throw std::runtime_error("no imputation mean for column " + m.column_ids[c]);
                m.values[cell] = it->second;
            } else if (std::isnan(m.values[cell])) {
                throw std::runtime_error("unmasked NaN in column " + m.column_ids[c]);
            }
        }
    }
    return m;
}

// z = (x - mean) / std with population std (divisor n). Constant columns map
// to zero. Requires a fully imputed matrix.
inline std::pair<FeatureMatrix, ScalerState> standardize(const FeatureMatrix& in) {
    FeatureMatrix m = in;
    ScalerState s;
    s.column_ids = m.column_ids;
    s.mean.resize(m.n_cols());
    s.std.resize(m.n_cols());
    const std::size_t n = m.n_rows();
    if (n == 0) throw std::invalid_argument("standardize: empty matrix");
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double v = m.at(r, c);
            if (std::isnan(v)) throw std::runtime_error("standardize: NaN present, impute first");
            sum += v;
        }
        double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double d = m.at(r, c) - mean;
            ss += d * d;
        }
        double sd = std::sqrt(ss / static_cast<double>(n));
        s.mean[c] = mean;
        s.std[c] = sd;
        for (std::size_t r = 0; r < n; ++r)
            m.at(r, c) = sd > 0.0 ? (m.at(r, c) - mean) / sd : 0.0;
    }
    m.scaler = s;
    return {std::move(m), std::move(s)};
}

// Applies a previously fitted scaler without refitting. Column ids must match
// exactly (same order).
inline FeatureMatrix apply_scaler(const FeatureMatrix& in, const ScalerState& s) {
    if (in.column_ids != s.column_ids)
        throw std::invalid_argument("apply_scaler: column ids do not match scaler");
    FeatureMatrix m = in;
    for (std::size_t c = 0; c < m.n_cols(); ++c) {
        for (std::size_t r = 0; r < m.n_rows(); ++r) {
            double v = m.at(r, c);
            m.at(r, c) = s.std[c] > 0.0 ? (v - s.mean[c]) / s.std[c] : 0.0;
        }
    }
    m.scaler = s;
    return m;
}

// ---------------------------------------------------------------------------
// CSV round trip: matrix + sidecar mask + scaler.
// ---------------------------------------------------------------------------

inline void write_matrix_csv(const FeatureMatrix& m, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> row;
    row.push_back("row_id");
    for (const auto& c : m.column_ids) row.push_back(c);
    w.row(row);
    for (std::size_t r = 0; r < m.n_rows(); ++r) {
        row.clear();
        row.push_back(m.row_ids[r]);
        for (std::size_t c = 0; c < m.n_cols(); ++c) row.push_back(format_double(m.at(r, c)));
        w.row(row);
    }
}

inline void write_mask_csv(const FeatureMatrix& m, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> row;
    row.push_back("row_id");
    for (const auto& c : m.column_ids) row.push_back(c);
    w.row(row);
    for (std::size_t r = 0; r < m.n_rows(); ++r) {
        row.clear();
        row.push_back(m.row_ids[r]);
        for (std::size_t c = 0; c < m.n_cols(); ++c)
            row.push_back(m.is_missing(r, c) ? "1" : "0");
        w.row(row);
    }
}

inline void write_scaler_csv(const ScalerState& s, const std::string& path) {
    csv::Writer w(path);
    w.row({"column_id", "mean", "std"});
    for (std::size_t c = 0; c < s.column_ids.size(); ++c)
        w.row({s.column_ids[c], format_double(s.mean[c]), format_double(s.std[c])});
}

inline FeatureMatrix read_matrix_csv(const std::string& path) {
    csv::Reader r(path);
    std::vector<std::string> header;
    if (!r.next(header) || header.empty() || header[0] != "row_id")
        r.fail("expected matrix header starting with row_id");
    FeatureMatrix m;
    m.column_ids.assign(header.begin() + 1, header.end());
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != header.size()) r.fail("ragged row");
        m.row_ids.push_back(f[0]);
        for (std::size_t c = 1; c < f.size(); ++c) {
            try {
                m.values.push_back(f[c] == "nan" ? std::numeric_limits<double>::quiet_NaN()
                                                 : parse_double(f[c]));
            } catch (const ParseError& e) {
                r.fail(e.what());
            }
        }
    }
    m.missing.assign(m.values.size(), 0);
    for (std::size_t i = 0; i < m.values.size(); ++i)
        if (std::isnan(m.values[i])) m.missing[i] = 1;
    return m;
}

inline ScalerState read_scaler_csv(const std::string& path) {
    csv::Reader r(path);
    csv::expect_header(r, {"column_id", "mean", "std"});
    ScalerState s;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 3) r.fail("expected 3 columns");
        s.column_ids.push_back(f[0]);
        s.mean.push_back(parse_double(f[1]));
        s.std.push_back(parse_double(f[2]));
    }
    return s;
}

}  // namespace subpheno
