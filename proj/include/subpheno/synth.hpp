#pragma once

// Deterministic synthetic cohort generator with planted subgroup structure.
// Case rows draw their physiology from a Gaussian mixture in z-space (centers
// rescaled to a configured minimum separation); measurements repeat with
// small noise and carry abnormal flags from a z-threshold rule, so the
// abnormal-preference aggregation downstream has real work to do. Per-
// subgroup signal features shift case rows only, planting a subgroup-specific
// delirium signal. Ground truth is emitted alongside for oracle checks.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/csv.hpp"
#include "subpheno/domain.hpp"
#include "subpheno/ingest.hpp"

namespace subpheno {

struct SignalSpec {
    int subgroup = 0;
    std::string feature;  // base catalog variable
    double effect = 1.5;  // shift of case rows, in within-cluster sigmas
};

struct SynthSpec {
    std::size_t n_cases = 2000;
    std::size_t n_noncases = 20000;
    int k_planted = 4;
    double separation = 7.0;                 // min pairwise center distance, z units
    std::vector<double> cluster_spreads;     // per cluster, default 1.0
    std::vector<double> mixture_weights;     // default uniform
    std::vector<SignalSpec> delirium_signal; // default: one feature per subgroup
    double missing_rate = 0.1;
    double abnormal_threshold = 1.5;  // |z| above this flags a measurement abnormal
    int measurements_min = 1;
    int measurements_max = 3;
    double repeat_noise = 0.05;  // within-admission repeat noise, z units
    std::uint64_t seed = 20240105;

    std::vector<std::string> validate() const {
        std::vector<std::string> v;
        if (k_planted < 2) v.push_back("k_planted must be >= 2");
        if (n_cases < 1) v.push_back("n_cases must be >= 1");
        if (!(missing_rate >= 0.0 && missing_rate < 1.0))
            v.push_back("missing_rate must be in [0, 1)");
        if (!mixture_weights.empty()) {
            if (mixture_weights.size() != static_cast<std::size_t>(k_planted))
                v.push_back("mixture_weights size must equal k_planted");
            double sum = 0.0;
            for (double w : mixture_weights) {
                if (w < 0.0) v.push_back("mixture_weights must be non-negative");
                sum += w;
            }
            if (std::abs(sum - 1.0) > 1e-9) v.push_back("mixture_weights must sum to 1");
        }
        if (!cluster_spreads.empty() &&
            cluster_spreads.size() != static_cast<std::size_t>(k_planted))
            v.push_back("cluster_spreads size must equal k_planted");
        for (const auto& s : delirium_signal) {
            if (s.subgroup < 0 || s.subgroup >= k_planted)
                v.push_back("signal subgroup out of range");
            if (feature_catalog().index_of(s.feature) < 0)
                v.push_back("signal feature not in catalog: " + s.feature);
        }
        if (measurements_min < 1 || measurements_max < measurements_min)
            v.push_back("measurement repeat range invalid");
        return v;
    }

    std::vector<double> weights() const {
        if (!mixture_weights.empty()) return mixture_weights;
        return std::vector<double>(static_cast<std::size_t>(k_planted),
                                   1.0 / static_cast<double>(k_planted));
    }
    std::vector<double> spreads() const {
        if (!cluster_spreads.empty()) return cluster_spreads;
        return std::vector<double>(static_cast<std::size_t>(k_planted), 1.0);
    }
    std::vector<SignalSpec> signals() const {
        if (!delirium_signal.empty()) return delirium_signal;
        static const std::vector<std::string> pool = {
            "glucose", "lactate", "blood_urea_nitrogen", "aspartate_aminotransferase",
            "troponin", "hemoglobin", "sodium", "platelets"};
        std::vector<SignalSpec> out;
        for (int g = 0; g < k_planted; ++g)
            out.push_back({g, pool[static_cast<std::size_t>(g) % pool.size()], 1.5});
        return out;
    }
};

inline SynthSpec desk_preset() { return SynthSpec{}; }

inline SynthSpec paper_scale_preset() {
    SynthSpec s;
    s.n_cases = 10066;
    s.n_noncases = 114324;
    s.k_planted = 4;
    s.mixture_weights = {0.54, 0.03, 0.30, 0.13};
    return s;
}

struct GroundTruthRow {
    std::string admission_id;
    int planted_subgroup = 0;
    bool is_case = false;
    std::vector<std::string> planted_signal_features;
};

struct SynthOutput {
    std::string admissions_path;
    std::string measurements_path;
    std::string ground_truth_path;
    std::vector<GroundTruthRow> ground_truth;
};

namespace detail {

// Per-variable sd used for generation. Capped relative to the mean so
// positive-valued quantities stay positive under the +-3 truncated draws
// below; without the cap, skewed catalog sds (ALT: mean 20.6, sd 42) push
// ratio denominators through zero and the derived ratio columns grow wild
// tails that drown the planted cluster geometry.
inline double generation_sd(const VariableId& v) {
    if (v.normal_mean > 0.0) return std::min(v.normal_sd, v.normal_mean / 3.5);
    return v.normal_sd;
}

constexpr double kZTruncation = 3.0;

inline double truncated_normal(Rng& rng) {
    double z;
    do {
        z = rng.normal();
    } while (std::abs(z) > kZTruncation);
    return z;
}

// Cluster centers in z-space, rescaled so the minimum pairwise distance
// equals the configured separation.
inline std::vector<double> planted_centers(const SynthSpec& spec, std::size_t d) {
    Rng rng = Rng(spec.seed).child("centers");
    const auto k = static_cast<std::size_t>(spec.k_planted);
    std::vector<double> centers(k * d);
    for (auto& v : centers) v = rng.normal();
    double min_dist = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = a + 1; b < k; ++b) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double diff = centers[a * d + j] - centers[b * d + j];
                s += diff * diff;
            }
            min_dist = std::min(min_dist, std::sqrt(s));
        }
    if (min_dist > 0.0)
        for (auto& v : centers) v *= spec.separation / min_dist;
    return centers;
}

inline std::string padded_id(char prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%07zu", prefix, i);
    return buf;
}

}  // namespace detail

// Writes admissions.csv, measurements.csv and ground_truth.csv under out_dir.
inline SynthOutput generate_cohort(const SynthSpec& spec, const std::string& out_dir) {
    auto violations = spec.validate();
    if (!violations.empty())
        throw std::invalid_argument("invalid synth spec: " + violations.front());
    const FeatureCatalog& cat = feature_catalog();
    const std::size_t d = cat.n_base();
    const auto k = static_cast<std::size_t>(spec.k_planted);
    const std::vector<double> centers = detail::planted_centers(spec, d);
    const std::vector<double> weights = spec.weights();
    const std::vector<double> spreads = spec.spreads();
    const std::vector<SignalSpec> signals = spec.signals();

    // Signal lookup: subgroup -> (variable index -> effect).
    std::vector<std::map<int, double>> signal_of(k);
    std::vector<std::vector<std::string>> signal_names(k);
    for (const auto& s : signals) {
        signal_of[static_cast<std::size_t>(s.subgroup)][cat.index_of(s.feature)] = s.effect;
        signal_names[static_cast<std::size_t>(s.subgroup)].push_back(s.feature);
    }

    std::filesystem::create_directories(out_dir);
    SynthOutput out;
    out.admissions_path = out_dir + "/admissions.csv";
    out.measurements_path = out_dir + "/measurements.csv";
    out.ground_truth_path = out_dir + "/ground_truth.csv";

    csv::Writer adm(out.admissions_path);
    adm.row(admissions_header());
    csv::Writer mea(out.measurements_path);
    mea.row(measurements_header());
    csv::Writer gt(out.ground_truth_path);
    gt.row({"admission_id", "planted_subgroup", "planted_signal_features"});

    const std::int64_t t_base = parse_timestamp("2019-01-01T00:00:00Z");
    static const char* kFillerCodes[] = {"I10", "E11.9", "N17.9", "J18.9"};
    static const char* kCaseCodes[] = {"F05", "293.0", "F10.231", "R41.0"};
    const Rng master(spec.seed);
    const std::size_t n_total = spec.n_cases + spec.n_noncases;

    for (std::size_t i = 0; i < n_total; ++i) {
        Rng rng = master.child(i);
        const bool is_case = i < spec.n_cases;
        // Subgroup from the mixture.
        double u = rng.uniform();
        std::size_t g = k - 1;
        double cum = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            cum += weights[c];
            if (u < cum) {
                g = c;
                break;
            }
        }

        const std::string aid = detail::padded_id('a', i);
        const std::string pid = detail::padded_id('p', i);
        const double age = 18.0 + std::floor(rng.uniform() * 73.0);
        const Gender gender = rng.uniform() < 0.5 ? Gender::M : Gender::F;
        const std::int64_t admit =
            t_base + static_cast<std::int64_t>(rng.uniform_int(365 * 24)) * 3600;
        const double los_days = 1.0 + std::exp(0.6 * rng.normal() + 1.8);
        const std::int64_t discharge =
            admit + static_cast<std::int64_t>(los_days * kSecondsPerDay);
        double u_type = rng.uniform();
        AdmissionType type = u_type < 0.55   ? AdmissionType::EMER
                             : u_type < 0.90 ? AdmissionType::OBSERVATION
                             : u_type < 0.96 ? AdmissionType::SURGICAL
                                             : AdmissionType::ELECTIVE;
        const double vent_rate =
            0.05 + 0.8 * static_cast<double>(g) / std::max(1.0, static_cast<double>(k - 1));
        const bool ventilation = rng.uniform() < vent_rate;
        const bool died = rng.uniform() < 0.02 + 0.03 * static_cast<double>(g);
        const int total_adm = 1 + static_cast<int>(rng.uniform_int(9));
        const int rank_order = 1 + static_cast<int>(rng.uniform_int(
                                       static_cast<std::uint64_t>(total_adm)));

        std::vector<std::string> icd;
        std::size_t n_filler = rng.uniform_int(3);
        for (std::size_t f = 0; f < n_filler; ++f)
            icd.push_back(kFillerCodes[rng.uniform_int(4)]);
        std::string cam_times;
        bool halo = false;
        if (is_case) {
            switch (i % 3) {
                case 0: icd.push_back(kCaseCodes[rng.uniform_int(4)]); break;
                case 1: {
                    // CAM-ICU positive strictly after the 24 h window.
                    double lo = 24.5, hi = std::max(25.0, los_days * 24.0 - 1.0);
                    double at = lo + rng.uniform() * (hi - lo);
                    cam_times = format_timestamp(
                        admit + static_cast<std::int64_t>(at * 3600.0));
                    break;
                }
                default: halo = true; break;
            }
            if (i % 5 == 0) halo = true;  // occasional double trigger
        }
        std::sort(icd.begin(), icd.end());
        icd.erase(std::unique(icd.begin(), icd.end()), icd.end());
        std::string icd_field;
        for (std::size_t c = 0; c < icd.size(); ++c) {
            if (c) icd_field += ';';
            icd_field += icd[c];
        }

        adm.row({aid, pid, format_double(age), to_string(gender), format_timestamp(admit),
                 format_timestamp(discharge), to_string(type), ventilation ? "1" : "0",
                 icd_field, cam_times, halo ? "1" : "0", died ? "1" : "0",
                 std::to_string(total_adm), std::to_string(rank_order)});

        // Measurements. Decide missingness up front; keep at least one
        // variable so the admission survives the no-measurement exclusion.
        std::vector<char> measured(d, 0);
        std::size_t n_measured = 0;
        for (std::size_t v = 0; v < d; ++v) {
            measured[v] = rng.uniform() >= spec.missing_rate ? 1 : 0;
            n_measured += measured[v];
        }
        if (n_measured == 0) measured[static_cast<std::size_t>(rng.uniform_int(d))] = 1;
        for (std::size_t v = 0; v < d; ++v) {
            if (!measured[v]) continue;
            double z = centers[g * d + v] + spreads[g] * detail::truncated_normal(rng);
            if (is_case) {
                auto it = signal_of[g].find(static_cast<int>(v));
                if (it != signal_of[g].end()) z += it->second * spreads[g];
            }
            const VariableId& var = cat.variable(v);
            const double sd = detail::generation_sd(var);
            int reps = spec.measurements_min +
                       static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(
                           spec.measurements_max - spec.measurements_min + 1)));
            for (int r = 0; r < reps; ++r) {
                double zr = z + spec.repeat_noise * rng.normal();
                double value = var.normal_mean + zr * sd;
                if (var.normal_mean > 0.0) value = std::max(value, 0.15 * var.normal_mean);
                bool abnormal = std::abs(zr) > spec.abnormal_threshold;
                std::int64_t at =
                    admit + static_cast<std::int64_t>(rng.uniform() *
                                                      (los_days * kSecondsPerDay - 1.0));
                mea.row({aid, var.id, format_double(value), abnormal ? "1" : "0",
                         format_timestamp(at)});
            }
        }

        GroundTruthRow row;
        row.admission_id = aid;
        row.planted_subgroup = static_cast<int>(g);
        row.is_case = is_case;
        if (is_case) row.planted_signal_features = signal_names[g];
        std::string features;
        for (std::size_t c = 0; c < row.planted_signal_features.size(); ++c) {
            if (c) features += ';';
            features += row.planted_signal_features[c];
        }
        gt.row({aid, std::to_string(row.planted_subgroup), features});
        out.ground_truth.push_back(std::move(row));
    }
    return out;
}

inline std::vector<GroundTruthRow> read_ground_truth(const std::string& path) {
    csv::Reader r(path);
    csv::expect_header(r, {"admission_id", "planted_subgroup", "planted_signal_features"});
    std::vector<GroundTruthRow> out;
    std::vector<std::string> f;
    while (r.next(f)) {
        if (f.size() != 3) r.fail("expected 3 columns");
        GroundTruthRow row;
        row.admission_id = f[0];
        row.planted_subgroup = static_cast<int>(parse_int(f[1]));
        row.planted_signal_features = detail::split_list(f[2]);
        // Case status is not stored here; recover it from the admission
        // triggers (label_delirium) when needed.
        out.push_back(std::move(row));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Self check
// ---------------------------------------------------------------------------

struct SelfCheckReport {
    bool passed = false;
    std::vector<std::string> failures;
    std::size_t admissions = 0;
    std::size_t measurements = 0;
    double empirical_missing_rate = 0.0;
    std::vector<double> empirical_weights;
};

// Verifies the generated files against the spec: mixture weights within 2
// percentage points, per-(subgroup, case-status) raw measurement means within
// 3 sigma/sqrt(n) of the planted centers, and the missingness rate within 1
// percentage point. Schema violations surface as failures, not exceptions.
inline SelfCheckReport self_check(const SynthSpec& spec, const std::string& dir) {
    SelfCheckReport rep;
    const FeatureCatalog& cat = feature_catalog();
    const std::size_t d = cat.n_base();
    const auto k = static_cast<std::size_t>(spec.k_planted);

    std::vector<AdmissionRecord> admissions;
    MeasurementParseResult meas;
    std::vector<GroundTruthRow> truth;
    try {
        admissions = parse_admissions(dir + "/admissions.csv");
        meas = parse_measurements(dir + "/measurements.csv");
        truth = read_ground_truth(dir + "/ground_truth.csv");
    } catch (const ParseError& e) {
        rep.failures.push_back(std::string("schema check failed: ") + e.what());
        return rep;
    }
    rep.admissions = admissions.size();
    rep.measurements = meas.measurements.size();
    if (meas.dropped_unknown_variable > 0)
        rep.failures.push_back("measurements reference unknown variables");
    if (admissions.size() != truth.size())
        rep.failures.push_back("ground truth row count differs from admissions");

    // Case status comes from the admission triggers, not the truth file.
    std::map<std::string, const GroundTruthRow*> by_id;
    for (auto& t : truth) by_id[t.admission_id] = &t;
    CohortSpec cohort_spec;
    std::map<std::string, bool> is_case;
    for (const auto& a : admissions)
        is_case[a.admission_id] = label_delirium(a, cohort_spec).delirious;

    // Mixture weights.
    const std::vector<double> weights = spec.weights();
    std::vector<double> counts(k, 0.0);
    for (const auto& t : truth) counts[static_cast<std::size_t>(t.planted_subgroup)] += 1.0;
    for (std::size_t g = 0; g < k; ++g) {
        double w = counts[g] / static_cast<double>(truth.size());
        rep.empirical_weights.push_back(w);
        if (std::abs(w - weights[g]) > 0.02)
            rep.failures.push_back("mixture weight of subgroup " + std::to_string(g) +
                                   " off by more than 2%: " + format_double(w));
    }

    // Raw measurement means per (subgroup, case-status, variable) against the
    // planted centers (signal shift applied for case rows).
    const std::vector<double> centers = detail::planted_centers(spec, d);
    const std::vector<double> spreads = spec.spreads();
    std::vector<std::map<int, double>> signal_of(k);
    for (const auto& s : spec.signals())
        signal_of[static_cast<std::size_t>(s.subgroup)][cat.index_of(s.feature)] = s.effect;

    // Repeated measurements within an admission share that admission's draw,
    // so the independent unit is the admission: average per admission first.
    // cell index: ((g * 2) + is_case) * d + v
    std::map<std::string, std::vector<std::pair<double, std::size_t>>> adm_sums;
    for (const auto& m : meas.measurements) {
        auto it = by_id.find(m.admission_id);
        if (it == by_id.end()) {
            rep.failures.push_back("measurement for unknown admission " + m.admission_id);
            return rep;
        }
        auto& per_var = adm_sums[m.admission_id];
        if (per_var.empty()) per_var.assign(d, {0.0, 0});
        per_var[static_cast<std::size_t>(m.variable)].first += m.value;
        per_var[static_cast<std::size_t>(m.variable)].second++;
    }
    std::vector<double> sum(k * 2 * d, 0.0);
    std::vector<std::size_t> n_meas(k * 2 * d, 0);  // admissions with the variable
    for (const auto& [aid, per_var] : adm_sums) {
        const GroundTruthRow& t = *by_id.at(aid);
        std::size_t base = ((static_cast<std::size_t>(t.planted_subgroup) * 2) +
                            (is_case.at(aid) ? 1 : 0)) *
                           d;
        for (std::size_t v = 0; v < d; ++v) {
            if (per_var[v].second == 0) continue;
            sum[base + v] += per_var[v].first / static_cast<double>(per_var[v].second);
            n_meas[base + v]++;
        }
    }
    std::size_t mean_checks = 0, mean_failures = 0;
    for (std::size_t g = 0; g < k; ++g)
        for (int status = 0; status < 2; ++status)
            for (std::size_t v = 0; v < d; ++v) {
                std::size_t cell = (g * 2 + static_cast<std::size_t>(status)) * d + v;
                if (n_meas[cell] < 10) continue;
                const VariableId& var = cat.variable(v);
                const double sd = detail::generation_sd(var);
                double z = centers[g * d + v];
                if (status == 1) {
                    auto it = signal_of[g].find(static_cast<int>(v));
                    if (it != signal_of[g].end()) z += it->second * spreads[g];
                }
                // Reference expectation by Monte Carlo under the exact
                // generation rule (truncated draws, positive floor), so the
                // check stays unbiased where the floor binds.
                Rng mc = Rng(spec.seed).child("selfcheck_mc").child(cell);
                double expected = 0.0;
                const int mc_draws = 40000;
                for (int t = 0; t < mc_draws; ++t) {
                    double zt = z + spreads[g] * detail::truncated_normal(mc) +
                                spec.repeat_noise * mc.normal();
                    double value = var.normal_mean + zt * sd;
                    if (var.normal_mean > 0.0)
                        value = std::max(value, 0.15 * var.normal_mean);
                    expected += value;
                }
                expected /= static_cast<double>(mc_draws);
                double sigma = std::sqrt(spreads[g] * spreads[g] +
                                         spec.repeat_noise * spec.repeat_noise) *
                               sd;
                double tol = 3.0 * sigma / std::sqrt(static_cast<double>(n_meas[cell]));
                double got = sum[cell] / static_cast<double>(n_meas[cell]);
                ++mean_checks;
                if (std::abs(got - expected) > tol) {
                    ++mean_failures;
                    rep.failures.push_back(
                        "mean of " + var.id + " in subgroup " + std::to_string(g) +
                        (status ? " (cases)" : " (non-cases)") + " off: got " +
                        format_double(got) + ", expected " + format_double(expected) +
                        " +- " + format_double(tol));
                }
            }
    (void)mean_checks;

    // Missingness: fraction of (admission, variable) pairs with no measurement.
    std::map<std::string, std::vector<char>> seen;
    for (const auto& a : admissions) seen[a.admission_id].assign(d, 0);
    for (const auto& m : meas.measurements)
        seen[m.admission_id][static_cast<std::size_t>(m.variable)] = 1;
    double present = 0.0;
    for (const auto& [id, flags] : seen)
        present += static_cast<double>(std::count(flags.begin(), flags.end(), 1));
    rep.empirical_missing_rate =
        1.0 - present / (static_cast<double>(admissions.size()) * static_cast<double>(d));
    if (std::abs(rep.empirical_missing_rate - spec.missing_rate) > 0.01)
        rep.failures.push_back("missingness rate off by more than 1%: " +
                               format_double(rep.empirical_missing_rate));

    rep.passed = rep.failures.empty();
    return rep;
}

}  // namespace subpheno
