#pragma once

// End-to-end orchestration: ingest -> preprocess -> subgroup discovery ->
// feature-set validation -> cluster expansion -> characterization ->
// subgroup-specific outcome models -> report bundle on disk.
//
// One master seed fans out to per-stage seeds (splitmix derivation), so any
// stage can be rerun in isolation. The case-cohort scaler is the only scaler
// applied downstream; non-case features are transformed with it, never refit.

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "subpheno/cluster.hpp"
#include "subpheno/common.hpp"
#include "subpheno/csv.hpp"
#include "subpheno/domain.hpp"
#include "subpheno/embed.hpp"
#include "subpheno/ingest.hpp"
#include "subpheno/learn.hpp"
#include "subpheno/preprocess.hpp"
#include "subpheno/stats.hpp"

namespace subpheno {

inline const char* kLibraryVersion = "0.1.0";

struct PipelineConfig {
    std::string admissions_path;
    std::string measurements_path;
    std::string out_dir;
    std::uint64_t master_seed = 20240105;
    unsigned threads = 0;  // 0 = hardware concurrency

    CohortSpec cohort;

    // Clustering
    Metric metric = Metric::euclidean;
    int k_min = 2;
    int k_max = 10;
    int kmeans_restarts = 10;
    int kmeans_max_iter = 300;
    std::size_t silhouette_subsample = 0;  // 0 = full
    double stability_kappa_threshold = 0.5;

    // t-SNE
    double tsne_perplexity = 30.0;
    int tsne_iterations = 1000;
    double tsne_learning_rate = 200.0;
    std::size_t tsne_max_points = 0;  // 0 = embed every case row

    // Models
    double logreg_l2 = 1.0;
    int logreg_max_iter = 500;
    int forest_trees = 200;
    int forest_max_depth = 8;
    int gbdt_rounds = 300;
    double gbdt_learning_rate = 0.1;
    int gbdt_max_depth = 4;
    double gbdt_l2_leaf = 1.0;
    double split_ratio = 0.8;
    double expansion_min_probability = 0.0;  // 0 = assign every non-case
    int f_report_positive = 0;  // class whose F is reported first; default majority (non-delirium)

    std::uint64_t stage_seed(std::string_view stage) const {
        return Rng(master_seed).child(stage).next_u64();
    }
};

// ---------------------------------------------------------------------------
// Stage results
// ---------------------------------------------------------------------------

struct IngestResult {
    Cohort cohort;  // index admissions only
    std::map<std::string, std::size_t> exclusion_counts;
    std::size_t dropped_measurements = 0;
    std::size_t parsed_admissions = 0;
    std::size_t n_cases = 0;
    std::size_t n_noncases = 0;
};

struct PreprocessResult {
    std::vector<std::string> case_ids;
    std::vector<std::string> noncase_ids;
    FeatureMatrix case_raw;      // imputed, unstandardized (physical units)
    FeatureMatrix case_std;      // standardized (clustering space)
    FeatureMatrix noncase_std;   // case-cohort scaler applied
    ScalerState scaler;
    std::map<std::string, double> imputation_mean_by_column;
};

struct EmbeddingResult {
    Metric metric = Metric::euclidean;
    std::vector<std::string> row_ids;
    std::vector<double> coords;       // n x 2
    std::vector<int> kmeans_labels;   // for the embedded rows
    std::vector<int> hier_labels;     // aligned to k-means label space
};

struct DiscoveryResult {
    int k = 0;
    ClusterAssignment kmeans_assignment;
    ClusterAssignment hier_assignment_aligned;
    KSelection selection;
    AgreementReport agreement;
    bool stable = false;
    std::vector<EmbeddingResult> embeddings;  // one per metric
};

struct FeatureSetValidation {
    GbdtModel model;
    double holdout_accuracy = 0.0;
    double holdout_macro_f = 0.0;
};

struct ExpansionResult {
    std::vector<int> labels;  // per non-case row; -1 when filtered out
    std::vector<std::size_t> histogram;
    std::size_t filtered_out = 0;
};

struct SubgroupProfile {
    std::string scope;  // "all" or "subgroup_<g>"
    std::size_t count = 0;
    double percent = 0.0;
    double los_days = 0.0;
    double age = 0.0;
    double mortality_pct = 0.0;
    double emergency_pct = 0.0;
    double total_admissions = 0.0;
    double rank_order = 0.0;
    double ventilation_pct = 0.0;
    std::vector<double> feature_means;  // unstandardized, 57 columns
};

struct CharacterizationResult {
    std::vector<SubgroupProfile> profiles;  // "all" first, then per subgroup
    std::vector<HeterogeneityRow> heterogeneity;
    std::map<std::string, double> categorical_p;  // chi-square across subgroups
};

struct ScopeMetrics {
    std::string scope;
    std::size_t n_delirium = 0;
    std::size_t n_nondelirium = 0;
    double delirium_pct = 0.0;
    // per model: f on the configured report class, on the other class, macro, auc
    std::map<std::string, std::array<double, 4>> model_metrics;  // lr/rf/gbdt
    bool skipped = false;
    std::string skip_reason;
};

struct ScopeImportance {
    std::string scope;
    std::vector<std::string> features;
    ImportanceRanking ranking;
};

struct ModelingResult {
    std::vector<ScopeMetrics> metrics;      // "all" first
    std::vector<ScopeImportance> importances;
};

struct ReportBundle {
    IngestResult ingest;
    PreprocessResult preprocess;
    DiscoveryResult discovery;
    FeatureSetValidation validation;
    ExpansionResult expansion;
    CharacterizationResult characterization;
    ModelingResult modeling;
    std::map<std::string, double> stage_seconds;
    PipelineConfig config;
};

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline IngestResult run_ingest(const PipelineConfig& cfg) {
    IngestResult res;
    auto admissions = parse_admissions(cfg.admissions_path);
    res.parsed_admissions = admissions.size();
    auto meas = parse_measurements(cfg.measurements_path);
    res.dropped_measurements = meas.dropped_unknown_variable;
    Cohort cohort = assign_labels(std::move(admissions), std::move(meas.measurements),
                                  cfg.cohort);
    cohort = apply_exclusions(cohort, cfg.cohort);
    cohort = select_index_admissions(cohort);
    for (const auto& [id, reason] : cohort.exclusion_log)
        res.exclusion_counts[to_string(reason)]++;
    for (const auto& a : cohort.admissions)
        (cohort.delirium_label.at(a.admission_id) ? res.n_cases : res.n_noncases)++;
    res.cohort = std::move(cohort);
    return res;
}

inline PreprocessResult run_preprocess(const IngestResult& ingest) {
    PreprocessResult res;
    const Cohort& cohort = ingest.cohort;
    for (const auto& a : cohort.admissions)
        (cohort.delirium_label.at(a.admission_id) ? res.case_ids : res.noncase_ids)
            .push_back(a.admission_id);
    if (res.case_ids.empty()) throw std::runtime_error("no case admissions after ingest");

    // Global normal means over the combined population (cases + non-cases).
    std::vector<Measurement> all;
    for (const auto& [id, ms] : cohort.measurements)
        all.insert(all.end(), ms.begin(), ms.end());
    auto normal_means = compute_global_normal_means(all);

    FeatureMatrix case_features = derive_ratios(build_base_matrix(res.case_ids, cohort.measurements));
    FeatureMatrix noncase_features =
        derive_ratios(build_base_matrix(res.noncase_ids, cohort.measurements));
    auto means = imputation_means({&case_features, &noncase_features}, normal_means);
    res.imputation_mean_by_column = means;

    res.case_raw = impute(case_features, means);
    auto [case_std, scaler] = standardize(res.case_raw);
    res.case_std = std::move(case_std);
    res.scaler = std::move(scaler);
    if (!res.noncase_ids.empty())
        res.noncase_std = apply_scaler(impute(noncase_features, means), res.scaler);
    else
        res.noncase_std = FeatureMatrix::zeros({}, res.case_std.column_ids);
    return res;
}

inline DiscoveryResult discover_subgroups(const FeatureMatrix& case_std,
                                          const PipelineConfig& cfg) {
    DiscoveryResult res;
    const unsigned threads = effective_threads(cfg.threads);

    SelectKOptions sopt;
    sopt.k_min = cfg.k_min;
    sopt.k_max = cfg.k_max;
    sopt.kmeans.restarts = cfg.kmeans_restarts;
    sopt.kmeans.max_iter = cfg.kmeans_max_iter;
    sopt.silhouette_subsample = cfg.silhouette_subsample;
    sopt.threads = threads;
    res.selection = select_k(case_std, ClusterMethod::kmeans, cfg.metric,
                             cfg.stage_seed("select_k"), sopt);
    res.k = res.selection.best_k;

    KMeansOptions kopt{cfg.kmeans_restarts, cfg.kmeans_max_iter, threads};
    res.kmeans_assignment =
        kmeans(case_std, res.k, cfg.metric, cfg.stage_seed("kmeans"), kopt).second;
    auto [dg, hier] = hierarchical(case_std, res.k, cfg.metric, threads);
    res.agreement = agreement_report(res.kmeans_assignment, hier);
    res.hier_assignment_aligned = apply_alignment(hier, res.agreement.alignment);
    res.stable = res.agreement.kappa >= cfg.stability_kappa_threshold;

    // 2D projections under both metrics; cluster labels painted afterwards.
    for (Metric metric : {Metric::euclidean, Metric::cosine}) {
        EmbeddingResult emb;
        emb.metric = metric;
        std::vector<std::size_t> rows(case_std.n_rows());
        std::iota(rows.begin(), rows.end(), 0);
        if (cfg.tsne_max_points > 0 && rows.size() > cfg.tsne_max_points) {
            Rng rng = Rng(cfg.stage_seed("tsne_subsample")).child(to_string(metric));
            rng.shuffle(rows);
            rows.resize(cfg.tsne_max_points);
            std::sort(rows.begin(), rows.end());
        }
        TsneConfig tcfg;
        tcfg.perplexity = cfg.tsne_perplexity;
        tcfg.iterations = cfg.tsne_iterations;
        tcfg.learning_rate = cfg.tsne_learning_rate;
        tcfg.metric = metric;
        tcfg.threads = threads;
        tcfg.seed = Rng(cfg.stage_seed("tsne")).child(to_string(metric)).next_u64();
        TsneResult t = tsne(take_rows(case_std, rows), tcfg);
        emb.coords = std::move(t.Y);
        for (std::size_t r : rows) {
            emb.row_ids.push_back(case_std.row_ids[r]);
            emb.kmeans_labels.push_back(res.kmeans_assignment.labels[r]);
            emb.hier_labels.push_back(res.hier_assignment_aligned.labels[r]);
        }
        res.embeddings.push_back(std::move(emb));
    }
    return res;
}

// Multiclass GBDT re-assignment of cases to their own clusters; the held-out
// quality certifies that the 57 features carry the subgroup structure.
inline FeatureSetValidation validate_feature_set(const FeatureMatrix& case_std,
                                                 const ClusterAssignment& assignment,
                                                 std::uint64_t seed,
                                                 const PipelineConfig& cfg) {
    for (std::size_t g = 0; g < static_cast<std::size_t>(assignment.k); ++g) {
        auto sizes = assignment.cluster_sizes();
        if (sizes[g] < 5)
            throw std::runtime_error("cluster " + std::to_string(g) +
                                     " has fewer than 5 members; cannot stratify");
    }
    auto split = train_test_split(assignment.labels, cfg.split_ratio, seed);
    GbdtOptions gopt{cfg.gbdt_rounds, cfg.gbdt_learning_rate, cfg.gbdt_max_depth,
                     cfg.gbdt_l2_leaf, effective_threads(cfg.threads)};
    FeatureSetValidation res;
    res.model = train_gbdt(take_rows(case_std, split.train),
                           take(assignment.labels, split.train), assignment.k, gopt);
    auto pred = predict_label(res.model, take_rows(case_std, split.test));
    auto truth = take(assignment.labels, split.test);
    res.holdout_accuracy = accuracy(truth, pred);
    res.holdout_macro_f = f_macro_multiclass(truth, pred, assignment.k);
    return res;
}

inline ExpansionResult expand_clusters(const GbdtModel& model,
                                       const FeatureMatrix& noncase_std,
                                       double min_probability = 0.0) {
    ExpansionResult res;
    res.histogram.assign(static_cast<std::size_t>(model.n_classes), 0);
    if (noncase_std.n_rows() == 0) return res;
    auto proba = predict_proba(model, noncase_std);
    const auto k = static_cast<std::size_t>(model.n_classes);
    res.labels.assign(noncase_std.n_rows(), -1);
    for (std::size_t i = 0; i < noncase_std.n_rows(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c)
            if (proba[i * k + c] > proba[i * k + best]) best = c;  // ties keep lower
        if (min_probability > 0.0 && proba[i * k + best] < min_probability) {
            res.filtered_out++;
            continue;
        }
        res.labels[i] = static_cast<int>(best);
        res.histogram[best]++;
    }
    return res;
}

namespace detail {

inline SubgroupProfile profile_of(const std::string& scope,
                                  const std::vector<const AdmissionRecord*>& records,
                                  const FeatureMatrix& raw,
                                  const std::vector<std::size_t>& rows,
                                  std::size_t total) {
    SubgroupProfile p;
    p.scope = scope;
    p.count = records.size();
    p.percent = total > 0 ? 100.0 * static_cast<double>(records.size()) /
                                static_cast<double>(total)
                          : 0.0;
    for (const AdmissionRecord* r : records) {
        p.los_days += r->los_days();
        p.age += r->age;
        p.mortality_pct += r->died_in_hospital ? 100.0 : 0.0;
        p.emergency_pct += r->admission_type == AdmissionType::EMER ? 100.0 : 0.0;
        p.total_admissions += r->total_admission_count;
        p.rank_order += r->admission_rank_order;
        p.ventilation_pct += r->ventilation ? 100.0 : 0.0;
    }
    if (!records.empty()) {
        auto n = static_cast<double>(records.size());
        p.los_days /= n;
        p.age /= n;
        p.mortality_pct /= n;
        p.emergency_pct /= n;
        p.total_admissions /= n;
        p.rank_order /= n;
        p.ventilation_pct /= n;
    }
    p.feature_means.assign(raw.n_cols(), 0.0);
    for (std::size_t r : rows)
        for (std::size_t c = 0; c < raw.n_cols(); ++c) p.feature_means[c] += raw.at(r, c);
    if (!rows.empty())
        for (auto& v : p.feature_means) v /= static_cast<double>(rows.size());
    return p;
}

// Chi-square with all-zero categories dropped; degenerate tables give p = 1.
inline double categorical_p(const std::vector<std::vector<double>>& table) {
    std::vector<std::vector<double>> kept;
    for (const auto& row : table) {
        double s = 0.0;
        for (double v : row) s += v;
        if (s > 0.0) kept.push_back(row);
    }
    if (kept.size() < 2) return 1.0;
    // Drop all-zero columns.
    std::size_t cols = kept[0].size();
    std::vector<std::size_t> keep_cols;
    for (std::size_t c = 0; c < cols; ++c) {
        double s = 0.0;
        for (const auto& row : kept) s += row[c];
        if (s > 0.0) keep_cols.push_back(c);
    }
    if (keep_cols.size() < 2) return 1.0;
    std::vector<std::vector<double>> final_table;
    for (const auto& row : kept) {
        std::vector<double> r;
        for (std::size_t c : keep_cols) r.push_back(row[c]);
        final_table.push_back(std::move(r));
    }
    return chi_square(final_table).p_value;
}

}  // namespace detail

inline CharacterizationResult characterize_subgroups(const Cohort& cohort,
                                                     const std::vector<std::string>& case_ids,
                                                     const FeatureMatrix& case_raw,
                                                     const FeatureMatrix& case_std,
                                                     const ClusterAssignment& assignment) {
    CharacterizationResult res;
    const auto k = static_cast<std::size_t>(assignment.k);
    std::vector<std::vector<const AdmissionRecord*>> records(k + 1);
    std::vector<std::vector<std::size_t>> rows(k + 1);
    for (std::size_t i = 0; i < case_ids.size(); ++i) {
        const AdmissionRecord* rec = cohort.find(case_ids[i]);
        if (!rec) throw std::logic_error("case admission missing from cohort");
        records[0].push_back(rec);
        rows[0].push_back(i);
        auto g = static_cast<std::size_t>(assignment.labels[i]) + 1;
        records[g].push_back(rec);
        rows[g].push_back(i);
    }
    res.profiles.push_back(
        detail::profile_of("all", records[0], case_raw, rows[0], case_ids.size()));
    for (std::size_t g = 0; g < k; ++g)
        res.profiles.push_back(detail::profile_of("subgroup_" + std::to_string(g),
                                                  records[g + 1], case_raw, rows[g + 1],
                                                  case_ids.size()));

    res.heterogeneity = heterogeneity_summary(case_std, assignment);

    // Categorical comparisons across subgroups.
    auto count_table = [&](auto&& category_of, std::size_t n_categories) {
        std::vector<std::vector<double>> t(n_categories, std::vector<double>(k, 0.0));
        for (std::size_t g = 0; g < k; ++g)
            for (const AdmissionRecord* r : records[g + 1])
                t[category_of(*r)][g] += 1.0;
        return t;
    };
    res.categorical_p["gender"] = detail::categorical_p(
        count_table([](const AdmissionRecord& r) { return r.gender == Gender::M ? 0u : 1u; }, 2));
    res.categorical_p["admission_type"] = detail::categorical_p(count_table(
        [](const AdmissionRecord& r) { return static_cast<unsigned>(r.admission_type); }, 4));
    res.categorical_p["ventilation"] = detail::categorical_p(
        count_table([](const AdmissionRecord& r) { return r.ventilation ? 1u : 0u; }, 2));
    res.categorical_p["mortality"] = detail::categorical_p(
        count_table([](const AdmissionRecord& r) { return r.died_in_hospital ? 1u : 0u; }, 2));
    return res;
}

// ---------------------------------------------------------------------------
// Subgroup-specific outcome models
// ---------------------------------------------------------------------------

// Combined 62-column design matrix: 57 standardized physiological features
// plus the 5 demographic predictors, the latter standardized over the
// combined population so logistic weights stay comparable across features.
inline FeatureMatrix build_design_matrix(const Cohort& cohort, const FeatureMatrix& case_std,
                                         const FeatureMatrix& noncase_std) {
    const FeatureCatalog& cat = feature_catalog();
    std::vector<std::string> cols = case_std.column_ids;
    for (const auto& id : cat.demographic_ids()) cols.push_back(id);
    std::vector<std::string> rows = case_std.row_ids;
    rows.insert(rows.end(), noncase_std.row_ids.begin(), noncase_std.row_ids.end());
    FeatureMatrix m = FeatureMatrix::zeros(rows, cols);
    const std::size_t d57 = case_std.n_cols();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const FeatureMatrix& src = i < case_std.n_rows() ? case_std : noncase_std;
        std::size_t r = i < case_std.n_rows() ? i : i - case_std.n_rows();
        for (std::size_t c = 0; c < d57; ++c) m.at(i, c) = src.at(r, c);
        const AdmissionRecord* rec = cohort.find(rows[i]);
        if (!rec) throw std::logic_error("admission missing from cohort");
        m.at(i, d57 + 0) = rec->age;
        m.at(i, d57 + 1) = rec->gender == Gender::F ? 1.0 : 0.0;
        m.at(i, d57 + 2) = rec->ventilation ? 1.0 : 0.0;
        m.at(i, d57 + 3) = rec->total_admission_count;
        m.at(i, d57 + 4) = rec->admission_rank_order;
    }
    // Standardize the demographic columns in place (population std).
    const std::size_t n = m.n_rows();
    for (std::size_t c = d57; c < m.n_cols(); ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < n; ++r) sum += m.at(r, c);
        double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
            double dv = m.at(r, c) - mean;
            ss += dv * dv;
        }
        double sd = std::sqrt(ss / static_cast<double>(n));
        for (std::size_t r = 0; r < n; ++r)
            m.at(r, c) = sd > 0.0 ? (m.at(r, c) - mean) / sd : 0.0;
    }
    return m;
}

inline ModelingResult train_subgroup_models(const FeatureMatrix& design,
                                            const std::vector<int>& delirium,
                                            const std::vector<int>& subgroup,
                                            int k, std::uint64_t seed,
                                            const PipelineConfig& cfg) {
    if (design.n_rows() != delirium.size() || delirium.size() != subgroup.size())
        throw std::invalid_argument("train_subgroup_models: size mismatch");
    ModelingResult res;
    const unsigned threads = effective_threads(cfg.threads);

    std::vector<std::pair<std::string, int>> scopes;
    scopes.emplace_back("all", -1);
    for (int g = 0; g < k; ++g) scopes.emplace_back("subgroup_" + std::to_string(g), g);

    for (const auto& [name, g] : scopes) {
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < subgroup.size(); ++i)
            if (g < 0 || subgroup[i] == g) rows.push_back(i);
        ScopeMetrics sm;
        sm.scope = name;
        std::vector<int> y = take(delirium, rows);
        sm.n_delirium = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
        sm.n_nondelirium = y.size() - sm.n_delirium;
        sm.delirium_pct = y.empty() ? 0.0
                                    : 100.0 * static_cast<double>(sm.n_delirium) /
                                          static_cast<double>(y.size());
        if (sm.n_delirium < 5 || sm.n_nondelirium < 5) {
            sm.skipped = true;
            sm.skip_reason = "fewer than 5 admissions in one outcome class";
            res.metrics.push_back(std::move(sm));
            continue;
        }
        FeatureMatrix X = take_rows(design, rows);
        std::uint64_t scope_seed = Rng(seed).child(name).next_u64();
        auto split = train_test_split(y, cfg.split_ratio, scope_seed);
        FeatureMatrix Xtr = take_rows(X, split.train), Xte = take_rows(X, split.test);
        std::vector<int> ytr = take(y, split.train), yte = take(y, split.test);

        auto lr = train_logreg(Xtr, ytr, cfg.logreg_l2, cfg.logreg_max_iter);
        ForestOptions fopt{cfg.forest_trees, cfg.forest_max_depth, 0, true, threads};
        auto rf = train_forest(Xtr, ytr, Rng(scope_seed).child("forest").next_u64(), fopt);
        GbdtOptions gopt{cfg.gbdt_rounds, cfg.gbdt_learning_rate, cfg.gbdt_max_depth,
                         cfg.gbdt_l2_leaf, threads};
        auto gb = train_gbdt(Xtr, ytr, 2, gopt);

        auto eval = [&](const auto& model) {
            auto proba = predict_proba(model, Xte);
            std::vector<int> pred(yte.size());
            std::vector<double> score(yte.size());
            for (std::size_t i = 0; i < yte.size(); ++i) {
                score[i] = proba[i * 2 + 1];
                pred[i] = score[i] > 0.5 ? 1 : 0;
            }
            int pos = cfg.f_report_positive;
            return std::array<double, 4>{f_score(yte, pred, pos),
                                         f_score(yte, pred, 1 - pos),
                                         f_macro(yte, pred), auroc(yte, score)};
        };
        sm.model_metrics["lr"] = eval(lr);
        sm.model_metrics["rf"] = eval(rf);
        sm.model_metrics["gbdt"] = eval(gb);
        res.metrics.push_back(std::move(sm));

        ScopeImportance si;
        si.scope = name;
        si.features = design.column_ids;
        si.ranking = ensemble_rank(
            {feature_importance(lr), feature_importance(rf), feature_importance(gb)});
        res.importances.push_back(std::move(si));
    }
    return res;
}

// ---------------------------------------------------------------------------
// Bundle output
// ---------------------------------------------------------------------------

inline void write_bundle(const ReportBundle& b, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        csv::Writer w(dir + "/assignments.csv");
        w.row({"admission_id", "label", "source"});
        const auto& pp = b.preprocess;
        for (std::size_t i = 0; i < pp.case_ids.size(); ++i)
            w.row({pp.case_ids[i],
                   std::to_string(b.discovery.kmeans_assignment.labels[i]), "case"});
        for (std::size_t i = 0; i < pp.noncase_ids.size(); ++i) {
            if (b.expansion.labels.empty() || b.expansion.labels[i] < 0) continue;
            w.row({pp.noncase_ids[i], std::to_string(b.expansion.labels[i]), "expanded"});
        }
    }
    {
        csv::Writer w(dir + "/silhouette.csv");
        w.row({"k", "mean_width"});
        for (const auto& [k, width] : b.discovery.selection.profile)
            w.row({std::to_string(k), format_double(width)});
    }
    {
        std::ofstream out(dir + "/kappa.json", std::ios::binary);
        nlohmann::json j;
        j["k"] = b.discovery.k;
        j["kappa"] = b.discovery.agreement.kappa;
        j["metric"] = to_string(b.config.metric);
        j["method_a"] = "kmeans";
        j["method_b"] = "hierarchical";
        j["alignment"] = b.discovery.agreement.alignment;
        j["stable"] = b.discovery.stable;
        j["stability_threshold"] = b.config.stability_kappa_threshold;
        out << j.dump(2) << "\n";
    }
    {
        csv::Writer w(dir + "/agreement.csv");
        std::vector<std::string> header = {"kcluster"};
        for (int c = 0; c < b.discovery.k; ++c) header.push_back("hcluster_" + std::to_string(c));
        w.row(header);
        for (int r = 0; r < b.discovery.k; ++r) {
            std::vector<std::string> row = {"kcluster_" + std::to_string(r)};
            for (int c = 0; c < b.discovery.k; ++c)
                row.push_back(format_double(
                    b.discovery.agreement.row_percent[static_cast<std::size_t>(r)]
                                                     [static_cast<std::size_t>(c)]));
            w.row(row);
        }
    }
    {
        csv::Writer w(dir + "/embedding.csv");
        w.row({"admission_id", "metric", "x", "y", "kmeans_label", "hier_label"});
        for (const auto& emb : b.discovery.embeddings)
            for (std::size_t i = 0; i < emb.row_ids.size(); ++i)
                w.row({emb.row_ids[i], to_string(emb.metric),
                       format_double(emb.coords[2 * i]), format_double(emb.coords[2 * i + 1]),
                       std::to_string(emb.kmeans_labels[i]),
                       std::to_string(emb.hier_labels[i])});
    }
    {
        csv::Writer w(dir + "/subgroup_profiles.csv");
        std::vector<std::string> header = {"statistic"};
        for (const auto& p : b.characterization.profiles) header.push_back(p.scope);
        w.row(header);
        auto stat_row = [&](const std::string& name, auto&& get) {
            std::vector<std::string> row = {name};
            for (const auto& p : b.characterization.profiles)
                row.push_back(format_double(get(p)));
            w.row(row);
        };
        stat_row("count", [](const SubgroupProfile& p) { return static_cast<double>(p.count); });
        stat_row("percent", [](const SubgroupProfile& p) { return p.percent; });
        stat_row("los_days", [](const SubgroupProfile& p) { return p.los_days; });
        stat_row("age", [](const SubgroupProfile& p) { return p.age; });
        stat_row("mortality_pct", [](const SubgroupProfile& p) { return p.mortality_pct; });
        stat_row("emergency_pct", [](const SubgroupProfile& p) { return p.emergency_pct; });
        stat_row("total_admissions",
                 [](const SubgroupProfile& p) { return p.total_admissions; });
        stat_row("rank_order", [](const SubgroupProfile& p) { return p.rank_order; });
        stat_row("ventilation_pct",
                 [](const SubgroupProfile& p) { return p.ventilation_pct; });
        const auto& cols = b.preprocess.case_raw.column_ids;
        for (std::size_t c = 0; c < cols.size(); ++c) {
            std::vector<std::string> row = {cols[c]};
            for (const auto& p : b.characterization.profiles)
                row.push_back(format_double(p.feature_means[c]));
            w.row(row);
        }
    }
    {
        csv::Writer w(dir + "/heterogeneity.csv");
        w.row({"feature", "std_of_means", "avg_neglog10_p", "highlighted"});
        for (const auto& r : b.characterization.heterogeneity)
            w.row({r.feature, format_double(r.std_of_means),
                   format_double(r.avg_neglog10_p), r.highlighted ? "1" : "0"});
    }
    {
        csv::Writer w(dir + "/model_metrics.csv");
        w.row({"scope", "delirium_n", "nondelirium_n", "delirium_pct", "model",
               "f_nondelirium", "f_delirium", "f_macro", "auroc"});
        for (const auto& sm : b.modeling.metrics) {
            if (sm.skipped) {
                w.row({sm.scope, std::to_string(sm.n_delirium),
                       std::to_string(sm.n_nondelirium), format_double(sm.delirium_pct),
                       "skipped", "", "", "", ""});
                continue;
            }
            for (const char* model : {"lr", "rf", "gbdt"}) {
                const auto& m = sm.model_metrics.at(model);
                int pos = b.config.f_report_positive;
                double f_non = pos == 0 ? m[0] : m[1];
                double f_del = pos == 0 ? m[1] : m[0];
                w.row({sm.scope, std::to_string(sm.n_delirium),
                       std::to_string(sm.n_nondelirium), format_double(sm.delirium_pct),
                       model, format_double(f_non), format_double(f_del),
                       format_double(m[2]), format_double(m[3])});
            }
        }
    }
    {
        csv::Writer w(dir + "/importance_ranks.csv");
        w.row({"scope", "feature", "lr_rank", "rf_rank", "gbdt_rank", "mean_rank"});
        for (const auto& si : b.modeling.importances)
            for (std::size_t j = 0; j < si.features.size(); ++j)
                w.row({si.scope, si.features[j],
                       format_double(si.ranking.per_model_ranks[0][j]),
                       format_double(si.ranking.per_model_ranks[1][j]),
                       format_double(si.ranking.per_model_ranks[2][j]),
                       format_double(si.ranking.mean_rank[j])});
    }
    {
        nlohmann::json j;
        j["version"] = kLibraryVersion;
        j["config"]["admissions"] = b.config.admissions_path;
        j["config"]["measurements"] = b.config.measurements_path;
        j["config"]["master_seed"] = b.config.master_seed;
        j["config"]["metric"] = to_string(b.config.metric);
        j["config"]["k_range"] = {b.config.k_min, b.config.k_max};
        j["config"]["threads"] = b.config.threads;
        j["config"]["tsne_max_points"] = b.config.tsne_max_points;
        j["config"]["silhouette_subsample"] = b.config.silhouette_subsample;
        j["config"]["expansion_min_probability"] = b.config.expansion_min_probability;
        j["seeds"]["select_k"] = b.config.stage_seed("select_k");
        j["seeds"]["kmeans"] = b.config.stage_seed("kmeans");
        j["seeds"]["tsne"] = b.config.stage_seed("tsne");
        j["seeds"]["validate"] = b.config.stage_seed("validate");
        j["seeds"]["models"] = b.config.stage_seed("models");
        j["counts"]["parsed_admissions"] = b.ingest.parsed_admissions;
        j["counts"]["cases"] = b.ingest.n_cases;
        j["counts"]["noncases"] = b.ingest.n_noncases;
        j["counts"]["dropped_measurements"] = b.ingest.dropped_measurements;
        j["counts"]["exclusions"] = b.ingest.exclusion_counts;
        j["counts"]["expansion_histogram"] = b.expansion.histogram;
        j["counts"]["expansion_filtered_out"] = b.expansion.filtered_out;
        j["discovery"]["k"] = b.discovery.k;
        j["discovery"]["kappa"] = b.discovery.agreement.kappa;
        j["discovery"]["stable_clustering"] = b.discovery.stable;
        j["validation"]["holdout_accuracy"] = b.validation.holdout_accuracy;
        j["validation"]["holdout_macro_f"] = b.validation.holdout_macro_f;
        j["characterization"]["categorical_p"] = b.characterization.categorical_p;
        // Methodological choices surfaced for the record.
        j["choices"]["exclusions_applied_at"] = "admission level, then index selection";
        j["choices"]["imputation_mean_source"] =
            "normal-flagged measurements over the combined population";
        j["choices"]["ratio_columns_standardized"] = true;
        j["choices"]["rank_test"] = "two-sided Mann-Whitney rank-sum, one-vs-rest";
        j["choices"]["f_report_positive_class"] = b.config.f_report_positive;
        j["stage_seconds"] = b.stage_seconds;
        std::ofstream out(dir + "/run_manifest.json", std::ios::binary);
        out << j.dump(2) << "\n";
    }
}

// ---------------------------------------------------------------------------
// Full pipeline
// ---------------------------------------------------------------------------

inline ReportBundle run_full_pipeline(const PipelineConfig& cfg) {
    if (cfg.admissions_path.empty() || cfg.measurements_path.empty())
        throw std::invalid_argument("pipeline config: input paths are required");
    if (!std::filesystem::exists(cfg.admissions_path))
        throw std::invalid_argument("missing input file: " + cfg.admissions_path);
    if (!std::filesystem::exists(cfg.measurements_path))
        throw std::invalid_argument("missing input file: " + cfg.measurements_path);
    auto spec_violations = cfg.cohort.validate();
    if (!spec_violations.empty())
        throw std::invalid_argument("cohort spec: " + spec_violations.front());

    ReportBundle b;
    b.config = cfg;
    using Clock = std::chrono::steady_clock;
    auto timed = [&](const char* stage, auto&& fn) {
        auto t0 = Clock::now();
        fn();
        b.stage_seconds[stage] =
            std::chrono::duration<double>(Clock::now() - t0).count();
    };
    auto wrap = [&](const char* stage, auto&& fn) {
        try {
            timed(stage, fn);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("stage '") + stage + "' failed: " + e.what());
        }
    };

    wrap("ingest", [&] { b.ingest = run_ingest(cfg); });
    wrap("preprocess", [&] { b.preprocess = run_preprocess(b.ingest); });
    wrap("discover", [&] { b.discovery = discover_subgroups(b.preprocess.case_std, cfg); });
    wrap("validate", [&] {
        b.validation = validate_feature_set(b.preprocess.case_std,
                                            b.discovery.kmeans_assignment,
                                            cfg.stage_seed("validate"), cfg);
    });
    wrap("expand", [&] {
        b.expansion = expand_clusters(b.validation.model, b.preprocess.noncase_std,
                                      cfg.expansion_min_probability);
    });
    wrap("characterize", [&] {
        b.characterization = characterize_subgroups(
            b.ingest.cohort, b.preprocess.case_ids, b.preprocess.case_raw,
            b.preprocess.case_std, b.discovery.kmeans_assignment);
    });
    wrap("models", [&] {
        FeatureMatrix design = build_design_matrix(b.ingest.cohort, b.preprocess.case_std,
                                                   b.preprocess.noncase_std);
        std::vector<int> delirium, subgroup;
        for (std::size_t i = 0; i < b.preprocess.case_ids.size(); ++i) {
            delirium.push_back(1);
            subgroup.push_back(b.discovery.kmeans_assignment.labels[i]);
        }
        for (std::size_t i = 0; i < b.preprocess.noncase_ids.size(); ++i) {
            delirium.push_back(0);
            subgroup.push_back(b.expansion.labels.empty() ? -2 : b.expansion.labels[i]);
        }
        b.modeling = train_subgroup_models(design, delirium, subgroup, b.discovery.k,
                                           cfg.stage_seed("models"), cfg);
    });
    if (!cfg.out_dir.empty()) wrap("write", [&] { write_bundle(b, cfg.out_dir); });
    return b;
}

}  // namespace subpheno
