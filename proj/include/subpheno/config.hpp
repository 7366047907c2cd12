#pragma once

// JSON configuration for the CLI: named presets plus per-key overrides, for
// both the pipeline run config and the synthetic cohort spec.

#include <string>

#include <json.hpp>

#include "subpheno/pipeline.hpp"
#include "subpheno/synth.hpp"

namespace subpheno {

// "desk" is sized for fast local runs; "paper-scale" mirrors the cohort sizes
// and enables subsampling for the quadratic stages.
inline PipelineConfig pipeline_preset(const std::string& name) {
    PipelineConfig cfg;
    if (name == "desk" || name.empty()) {
        cfg.forest_trees = 100;
        cfg.gbdt_rounds = 150;
        cfg.tsne_max_points = 1000;
        cfg.tsne_iterations = 500;
    } else if (name == "paper-scale") {
        cfg.silhouette_subsample = 2000;
        cfg.tsne_max_points = 2000;
        cfg.tsne_iterations = 500;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return cfg;
}

inline SynthSpec synth_preset(const std::string& name) {
    if (name == "desk" || name.empty()) return desk_preset();
    if (name == "paper-scale") return paper_scale_preset();
    throw std::invalid_argument("unknown preset: " + name);
}

namespace detail {

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig cfg = pipeline_preset(j.value("preset", std::string("desk")));
    detail::read_key(j, "admissions", cfg.admissions_path);
    detail::read_key(j, "measurements", cfg.measurements_path);
    detail::read_key(j, "out_dir", cfg.out_dir);
    detail::read_key(j, "seed", cfg.master_seed);
    detail::read_key(j, "threads", cfg.threads);
    if (j.contains("cohort")) {
        const auto& c = j.at("cohort");
        detail::read_key(c, "min_age", cfg.cohort.min_age);
        detail::read_key(c, "min_los_days", cfg.cohort.min_los_days);
        detail::read_key(c, "exclude_delirium_within_hours",
                         cfg.cohort.exclude_delirium_within_hours);
        if (c.contains("delirium_icd_codes"))
            cfg.cohort.delirium_icd_codes =
                c.at("delirium_icd_codes").get<std::set<std::string>>();
        if (c.contains("disqualifying_icd_codes"))
            cfg.cohort.disqualifying_icd_codes =
                c.at("disqualifying_icd_codes").get<std::set<std::string>>();
    }
    if (j.contains("cluster")) {
        const auto& c = j.at("cluster");
        if (c.contains("metric")) {
            std::string m = c.at("metric").get<std::string>();
            if (m == "euclidean") cfg.metric = Metric::euclidean;
            else if (m == "cosine") cfg.metric = Metric::cosine;
            else throw std::invalid_argument("unknown metric: " + m);
        }
        detail::read_key(c, "k_min", cfg.k_min);
        detail::read_key(c, "k_max", cfg.k_max);
        detail::read_key(c, "restarts", cfg.kmeans_restarts);
        detail::read_key(c, "max_iter", cfg.kmeans_max_iter);
        detail::read_key(c, "silhouette_subsample", cfg.silhouette_subsample);
        detail::read_key(c, "stability_kappa_threshold", cfg.stability_kappa_threshold);
    }
    if (j.contains("tsne")) {
        const auto& t = j.at("tsne");
        detail::read_key(t, "perplexity", cfg.tsne_perplexity);
        detail::read_key(t, "iterations", cfg.tsne_iterations);
        detail::read_key(t, "learning_rate", cfg.tsne_learning_rate);
        detail::read_key(t, "max_points", cfg.tsne_max_points);
    }
    if (j.contains("models")) {
        const auto& m = j.at("models");
        detail::read_key(m, "logreg_l2", cfg.logreg_l2);
        detail::read_key(m, "logreg_max_iter", cfg.logreg_max_iter);
        detail::read_key(m, "forest_trees", cfg.forest_trees);
        detail::read_key(m, "forest_max_depth", cfg.forest_max_depth);
        detail::read_key(m, "gbdt_rounds", cfg.gbdt_rounds);
        detail::read_key(m, "gbdt_learning_rate", cfg.gbdt_learning_rate);
        detail::read_key(m, "gbdt_max_depth", cfg.gbdt_max_depth);
        detail::read_key(m, "gbdt_l2_leaf", cfg.gbdt_l2_leaf);
        detail::read_key(m, "split_ratio", cfg.split_ratio);
        detail::read_key(m, "expansion_min_probability", cfg.expansion_min_probability);
        detail::read_key(m, "f_report_positive", cfg.f_report_positive);
    }
    return cfg;
}

inline SynthSpec synth_spec_from_json(const nlohmann::json& j) {
    SynthSpec spec = synth_preset(j.value("preset", std::string("desk")));
    detail::read_key(j, "n_cases", spec.n_cases);
    detail::read_key(j, "n_noncases", spec.n_noncases);
    detail::read_key(j, "k_planted", spec.k_planted);
    detail::read_key(j, "separation", spec.separation);
    detail::read_key(j, "missing_rate", spec.missing_rate);
    detail::read_key(j, "abnormal_threshold", spec.abnormal_threshold);
    detail::read_key(j, "measurements_min", spec.measurements_min);
    detail::read_key(j, "measurements_max", spec.measurements_max);
    detail::read_key(j, "repeat_noise", spec.repeat_noise);
    detail::read_key(j, "seed", spec.seed);
    if (j.contains("cluster_spreads"))
        spec.cluster_spreads = j.at("cluster_spreads").get<std::vector<double>>();
    if (j.contains("mixture_weights"))
        spec.mixture_weights = j.at("mixture_weights").get<std::vector<double>>();
    if (j.contains("delirium_signal")) {
        spec.delirium_signal.clear();
        for (const auto& s : j.at("delirium_signal")) {
            SignalSpec sig;
            sig.subgroup = s.at("subgroup").get<int>();
            sig.feature = s.at("feature").get<std::string>();
            sig.effect = s.value("effect", 1.5);
            spec.delirium_signal.push_back(sig);
        }
    }
    return spec;
}

}  // namespace subpheno
