#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "subpheno/config.hpp"
#include "subpheno/pipeline.hpp"
#include "subpheno/report.hpp"
#include "subpheno/svg.hpp"
#include "subpheno/synth.hpp"

using namespace subpheno;

namespace {

std::string temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir.string();
}

std::string file_contents(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

// Small synthetic inputs shared across the cases below.
struct Fixture {
    std::string data_dir;
    SynthSpec spec;
    PipelineConfig config;
};

Fixture make_fixture(std::size_t n_cases, std::size_t n_noncases, int k, double separation,
                     std::uint64_t seed, const std::string& name) {
    Fixture f;
    f.data_dir = temp_dir(name);
    f.spec = SynthSpec{};
    f.spec.n_cases = n_cases;
    f.spec.n_noncases = n_noncases;
    f.spec.k_planted = k;
    f.spec.separation = separation;
    f.spec.seed = seed;
    generate_cohort(f.spec, f.data_dir);

    f.config = pipeline_preset("desk");
    f.config.admissions_path = f.data_dir + "/admissions.csv";
    f.config.measurements_path = f.data_dir + "/measurements.csv";
    f.config.master_seed = 99;
    f.config.threads = 2;
    f.config.k_max = 6;
    f.config.tsne_iterations = 250;
    f.config.tsne_max_points = 200;
    f.config.tsne_perplexity = 20;
    f.config.forest_trees = 30;
    f.config.gbdt_rounds = 60;
    return f;
}

const Fixture& shared_fixture() {
    static Fixture f = make_fixture(500, 1500, 4, 7.0, 51, "pipe_shared");
    return f;
}

const ReportBundle& shared_bundle() {
    static ReportBundle b = [] {
        PipelineConfig cfg = shared_fixture().config;
        cfg.out_dir = temp_dir("pipe_shared_bundle");
        return run_full_pipeline(cfg);
    }();
    return b;
}

}  // namespace

TEST_CASE("discover_subgroups on a planted cohort") {
    const ReportBundle& b = shared_bundle();
    SECTION("finds the planted k and stays cross-method stable") {
        CHECK(b.discovery.k == 4);
        CHECK(b.discovery.agreement.kappa >= 0.75);
        CHECK(b.discovery.stable);
    }
    SECTION("assignment covers every case row exactly once") {
        CHECK(b.discovery.kmeans_assignment.labels.size() == b.preprocess.case_ids.size());
        for (int l : b.discovery.kmeans_assignment.labels) {
            CHECK(l >= 0);
            CHECK(l < b.discovery.k);
        }
    }
    SECTION("embeddings carry both metrics and aligned labels") {
        REQUIRE(b.discovery.embeddings.size() == 2);
        CHECK(b.discovery.embeddings[0].metric == Metric::euclidean);
        CHECK(b.discovery.embeddings[1].metric == Metric::cosine);
        for (const auto& emb : b.discovery.embeddings) {
            CHECK(emb.row_ids.size() == 200);  // tsne_max_points
            CHECK(emb.coords.size() == 400);
        }
    }
}

TEST_CASE("structureless cohort is flagged unstable") {
    Fixture f = make_fixture(400, 0, 4, 0.0, 77, "pipe_noise");
    auto ingest = run_ingest(f.config);
    auto prep = run_preprocess(ingest);
    auto disc = discover_subgroups(prep.case_std, f.config);
    CHECK(disc.agreement.kappa < 0.5);
    CHECK_FALSE(disc.stable);
}

TEST_CASE("validate_feature_set") {
    const ReportBundle& b = shared_bundle();
    SECTION("planted clusters re-assign cleanly") {
        CHECK(b.validation.holdout_accuracy >= 0.95);
        CHECK(b.validation.holdout_macro_f >= 0.95);
    }
    SECTION("random labels score near the majority prior") {
        Rng rng(5);
        ClusterAssignment shuffled = b.discovery.kmeans_assignment;
        for (auto& l : shuffled.labels) l = static_cast<int>(rng.uniform_int(4));
        for (int c = 0; c < 4; ++c) shuffled.labels[static_cast<std::size_t>(c)] = c;
        PipelineConfig cfg = shared_fixture().config;
        cfg.gbdt_rounds = 30;
        auto val = validate_feature_set(b.preprocess.case_std, shuffled, 3, cfg);
        auto sizes = shuffled.cluster_sizes();
        double prior = static_cast<double>(*std::max_element(sizes.begin(), sizes.end())) /
                       static_cast<double>(shuffled.labels.size());
        CHECK(std::abs(val.holdout_accuracy - prior) <= 0.08);
    }
    SECTION("tiny cluster is an error") {
        ClusterAssignment a = b.discovery.kmeans_assignment;
        a.k = 5;  // label 4 will have zero members
        PipelineConfig cfg = shared_fixture().config;
        CHECK_THROWS_AS(validate_feature_set(b.preprocess.case_std, a, 3, cfg),
                        std::runtime_error);
    }
}

TEST_CASE("expand_clusters") {
    const ReportBundle& b = shared_bundle();
    SECTION("labels cover all non-case rows with a full histogram") {
        REQUIRE(b.expansion.labels.size() == b.preprocess.noncase_ids.size());
        std::size_t total = 0;
        for (auto c : b.expansion.histogram) total += c;
        CHECK(total == b.expansion.labels.size());
        for (int l : b.expansion.labels) {
            CHECK(l >= 0);
            CHECK(l < b.discovery.k);
        }
    }
    SECTION("a non-case row duplicated from a case lands in that case's subgroup") {
        // Take an arbitrary case row and present it as a non-case feature row.
        const auto& std_matrix = b.preprocess.case_std;
        FeatureMatrix probe;
        probe.column_ids = std_matrix.column_ids;
        probe.row_ids = {"probe"};
        probe.values.assign(std_matrix.row(10), std_matrix.row(10) + std_matrix.n_cols());
        probe.missing.assign(std_matrix.n_cols(), 0);
        auto res = expand_clusters(b.validation.model, probe);
        REQUIRE(res.labels.size() == 1);
        CHECK(res.labels[0] == b.discovery.kmeans_assignment.labels[10]);
    }
    SECTION("empty non-case set gives empty labels") {
        FeatureMatrix empty = FeatureMatrix::zeros({}, b.preprocess.case_std.column_ids);
        auto res = expand_clusters(b.validation.model, empty);
        CHECK(res.labels.empty());
    }
}

TEST_CASE("characterize_subgroups") {
    const ReportBundle& b = shared_bundle();
    const auto& profiles = b.characterization.profiles;
    REQUIRE(profiles.size() == 5);  // all + 4 subgroups
    SECTION("counts sum to the cohort size") {
        std::size_t sum = 0;
        for (std::size_t g = 1; g < profiles.size(); ++g) sum += profiles[g].count;
        CHECK(sum == profiles[0].count);
        CHECK(profiles[0].count == b.preprocess.case_ids.size());
    }
    SECTION("subgroup percents track the planted mixture weights") {
        // Equal planted weights of 25%; clustering noise allows 2 points.
        for (std::size_t g = 1; g < profiles.size(); ++g)
            CHECK(profiles[g].percent == Catch::Approx(25.0).margin(4.0));
    }
    SECTION("percent fields stay in range and recompute from counts") {
        for (const auto& p : profiles) {
            CHECK(p.percent >= 0.0);
            CHECK(p.percent <= 100.0);
            CHECK(p.percent ==
                  Catch::Approx(100.0 * static_cast<double>(p.count) /
                                static_cast<double>(profiles[0].count))
                      .margin(1e-9));
        }
    }
    SECTION("heterogeneity rows cover all 57 features with the medians rule") {
        const auto& rows = b.characterization.heterogeneity;
        REQUIRE(rows.size() == 57);
        std::vector<double> stds, avgs;
        for (const auto& r : rows) {
            stds.push_back(r.std_of_means);
            avgs.push_back(r.avg_neglog10_p);
        }
        double ms = median(stds), ma = median(avgs);
        for (const auto& r : rows)
            CHECK(r.highlighted == (r.std_of_means > ms && r.avg_neglog10_p > ma));
    }
    SECTION("categorical comparisons produce p-values") {
        for (const char* key : {"gender", "admission_type", "ventilation", "mortality"}) {
            REQUIRE(b.characterization.categorical_p.count(key) == 1);
            double p = b.characterization.categorical_p.at(key);
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
}

TEST_CASE("train_subgroup_models") {
    const ReportBundle& b = shared_bundle();
    SECTION("five scopes for k = 4") {
        REQUIRE(b.modeling.metrics.size() == 5);
        CHECK(b.modeling.metrics[0].scope == "all");
        CHECK(b.modeling.metrics[0].n_delirium == b.preprocess.case_ids.size());
        for (const auto& sm : b.modeling.metrics) CHECK_FALSE(sm.skipped);
    }
    SECTION("deterministic given the seed") {
        FeatureMatrix design = build_design_matrix(b.ingest.cohort, b.preprocess.case_std,
                                                   b.preprocess.noncase_std);
        std::vector<int> delirium, subgroup;
        for (std::size_t i = 0; i < b.preprocess.case_ids.size(); ++i) {
            delirium.push_back(1);
            subgroup.push_back(b.discovery.kmeans_assignment.labels[i]);
        }
        for (std::size_t i = 0; i < b.preprocess.noncase_ids.size(); ++i) {
            delirium.push_back(0);
            subgroup.push_back(b.expansion.labels[i]);
        }
        PipelineConfig cfg = shared_fixture().config;
        cfg.forest_trees = 10;
        cfg.gbdt_rounds = 20;
        auto m1 = train_subgroup_models(design, delirium, subgroup, 4, 1234, cfg);
        auto m2 = train_subgroup_models(design, delirium, subgroup, 4, 1234, cfg);
        REQUIRE(m1.metrics.size() == m2.metrics.size());
        for (std::size_t i = 0; i < m1.metrics.size(); ++i)
            for (const char* model : {"lr", "rf", "gbdt"})
                CHECK(m1.metrics[i].model_metrics.at(model) ==
                      m2.metrics[i].model_metrics.at(model));
        for (std::size_t i = 0; i < m1.importances.size(); ++i)
            CHECK(m1.importances[i].ranking.mean_rank == m2.importances[i].ranking.mean_rank);
    }
    SECTION("single-class scope is skipped with a reason") {
        FeatureMatrix design = take_rows(
            build_design_matrix(b.ingest.cohort, b.preprocess.case_std, b.preprocess.noncase_std),
            {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
        std::vector<int> delirium = {1, 1, 1, 1, 1, 1, 1, 1, 1, 1};  // single class
        std::vector<int> subgroup = {0, 0, 0, 0, 0, 1, 1, 1, 1, 1};
        auto res = train_subgroup_models(design, delirium, subgroup, 2, 7,
                                         shared_fixture().config);
        for (const auto& sm : res.metrics) {
            CHECK(sm.skipped);
            CHECK_FALSE(sm.skip_reason.empty());
        }
    }
}

TEST_CASE("report bundle on disk") {
    const ReportBundle& b = shared_bundle();
    const std::string dir = b.config.out_dir;
    SECTION("all artifacts present") {
        CHECK(missing_artifacts(dir).empty());
    }
    SECTION("assignments cover cases and expanded non-cases") {
        csv::Reader r(dir + "/assignments.csv");
        std::vector<std::string> row;
        r.next(row);
        std::size_t cases = 0, expanded = 0;
        while (r.next(row)) {
            REQUIRE(row.size() == 3);
            if (row[2] == "case") ++cases;
            else if (row[2] == "expanded") ++expanded;
        }
        CHECK(cases == b.preprocess.case_ids.size());
        CHECK(expanded == b.preprocess.noncase_ids.size());
    }
    SECTION("silhouette profile matches the scan") {
        csv::Reader r(dir + "/silhouette.csv");
        std::vector<std::string> row;
        r.next(row);
        std::size_t n = 0;
        while (r.next(row)) ++n;
        CHECK(n == b.discovery.selection.profile.size());
    }
    SECTION("agreement rows sum to one") {
        csv::Reader r(dir + "/agreement.csv");
        std::vector<std::string> row;
        r.next(row);
        while (r.next(row)) {
            double sum = 0.0;
            for (std::size_t c = 1; c < row.size(); ++c) sum += parse_double(row[c]);
            CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
    SECTION("report renders three tables") {
        std::string text = render_report(dir);
        CHECK(text.find("DEMOGRAPHICS AND OUTCOMES SUMMARY") != std::string::npos);
        CHECK(text.find("SUBGROUP PHYSIOLOGICAL CHARACTERISTICS") != std::string::npos);
        CHECK(text.find("SUBGROUP COUNTS AND PREDICTIVE MODEL PERFORMANCE") !=
              std::string::npos);
        // Feature rows equal the heterogeneity CSV rows.
        CHECK(std::count(text.begin(), text.end(), '*') >= 1);
    }
    SECTION("missing artifact is reported by name") {
        std::string broken = temp_dir("pipe_broken_bundle");
        for (const auto& f : bundle_artifacts())
            if (f != "model_metrics.csv")
                std::filesystem::copy_file(dir + "/" + f, broken + "/" + f);
        CHECK_THROWS_WITH(render_report(broken),
                          Catch::Matchers::ContainsSubstring("model_metrics.csv"));
    }
    SECTION("SVG plots are valid and bounded") {
        svg::write_plots(b, dir);
        for (const char* name :
             {"silhouette.svg", "embedding.svg", "agreement.svg", "importance_ranks.svg"}) {
            std::string content = file_contents(dir + "/" + std::string(name));
            CHECK(content.rfind("<svg", 0) == 0);
            CHECK(content.find("</svg>") != std::string::npos);
            CHECK(content.size() < 5 * 1024 * 1024);
            // Every opened tag type is closed or self-closed.
            CHECK(content.find("&") == std::string::npos);  // escapes only via &amp; etc.
        }
    }
}

TEST_CASE("run_full_pipeline determinism and validation") {
    SECTION("rerun with the same config produces byte-identical CSV artifacts") {
        Fixture f = make_fixture(300, 600, 3, 7.0, 13, "pipe_det");
        PipelineConfig cfg = f.config;
        cfg.k_max = 5;
        cfg.out_dir = temp_dir("pipe_det_b1");
        run_full_pipeline(cfg);
        cfg.out_dir = temp_dir("pipe_det_b2");
        run_full_pipeline(cfg);
        for (const auto& name : bundle_artifacts()) {
            if (name == "run_manifest.json") continue;  // carries wall-clock timings
            INFO(name);
            CHECK(file_contents("/tmp/pipe_det_b1/" + name) ==
                  file_contents("/tmp/pipe_det_b2/" + name));
        }
    }
    SECTION("missing input path fails early") {
        PipelineConfig cfg = shared_fixture().config;
        cfg.admissions_path = "/nonexistent/admissions.csv";
        CHECK_THROWS_AS(run_full_pipeline(cfg), std::invalid_argument);
    }
    SECTION("stage errors name the stage") {
        Fixture f = make_fixture(30, 30, 3, 7.0, 17, "pipe_tiny");
        PipelineConfig cfg = f.config;  // 30 cases: tsne subsample fine, but k_max 6 over
        cfg.k_max = 25;                 // k_range beyond n-1 for the case cohort
        CHECK_THROWS_WITH(run_full_pipeline(cfg),
                          Catch::Matchers::ContainsSubstring("discover"));
    }
}

TEST_CASE("config json round trip") {
    SECTION("preset with overrides") {
        nlohmann::json j = {{"preset", "desk"},
                            {"seed", 42},
                            {"cluster", {{"metric", "cosine"}, {"k_max", 7}}},
                            {"models", {{"forest_trees", 11}}}};
        PipelineConfig cfg = pipeline_config_from_json(j);
        CHECK(cfg.master_seed == 42);
        CHECK(cfg.metric == Metric::cosine);
        CHECK(cfg.k_max == 7);
        CHECK(cfg.forest_trees == 11);
        CHECK(cfg.tsne_max_points == 1000);  // desk preset default
    }
    SECTION("paper-scale preset enables subsampling") {
        PipelineConfig cfg = pipeline_config_from_json({{"preset", "paper-scale"}});
        CHECK(cfg.silhouette_subsample == 2000);
        CHECK(cfg.tsne_max_points == 2000);
    }
    SECTION("unknown preset or metric is rejected") {
        CHECK_THROWS_AS(pipeline_config_from_json({{"preset", "huge"}}),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            pipeline_config_from_json({{"cluster", {{"metric", "manhattan"}}}}),
            std::invalid_argument);
    }
    SECTION("synth spec json") {
        nlohmann::json j = {{"preset", "desk"},
                            {"n_cases", 123},
                            {"delirium_signal",
                             {{{"subgroup", 1}, {"feature", "glucose"}, {"effect", 2.0}}}}};
        SynthSpec spec = synth_spec_from_json(j);
        CHECK(spec.n_cases == 123);
        REQUIRE(spec.delirium_signal.size() == 1);
        CHECK(spec.delirium_signal[0].feature == "glucose");
        CHECK(spec.delirium_signal[0].effect == 2.0);
    }
}
