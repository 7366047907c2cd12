#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "subpheno/preprocess.hpp"

using namespace subpheno;

namespace {

Measurement meas(const char* var, double value, bool abnormal) {
    Measurement m;
    m.admission_id = "a1";
    m.variable = feature_catalog().index_of(var);
    m.value = value;
    m.abnormal = abnormal;
    return m;
}

int base_col(const char* var) { return feature_catalog().index_of(var); }

}  // namespace

TEST_CASE("aggregate_admission prefers abnormal values") {
    SECTION("mixed flags use the abnormal mean") {
        auto agg = aggregate_admission(
            {meas("glucose", 5, true), meas("glucose", 7, true), meas("glucose", 6, false)});
        CHECK(agg[static_cast<std::size_t>(base_col("glucose"))] == Catch::Approx(6.0));
    }
    SECTION("all-normal values use the normal mean") {
        auto agg = aggregate_admission({meas("glucose", 6, false), meas("glucose", 8, false)});
        CHECK(agg[static_cast<std::size_t>(base_col("glucose"))] == Catch::Approx(7.0));
    }
    SECTION("unmeasured variables stay missing") {
        auto agg = aggregate_admission({meas("heart_rate", 80, false)});
        CHECK(std::isnan(agg[static_cast<std::size_t>(base_col("glucose"))]));
    }
    SECTION("permutation invariant") {
        std::vector<Measurement> ms = {meas("glucose", 5, true), meas("glucose", 7, true),
                                       meas("glucose", 6, false), meas("heart_rate", 80, false)};
        auto a = aggregate_admission(ms);
        std::reverse(ms.begin(), ms.end());
        auto b = aggregate_admission(ms);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (std::isnan(a[i]))
                CHECK(std::isnan(b[i]));
            else
                CHECK(a[i] == b[i]);
        }
    }
}

TEST_CASE("derive_ratios") {
    std::map<std::string, std::vector<Measurement>> by_adm;
    by_adm["a1"] = {meas("aspartate_aminotransferase", 43.3, false),
                    meas("alanine_transaminase", 36.1, false)};
    FeatureMatrix base = build_base_matrix({"a1"}, by_adm);
    SECTION("quotient of present values") {
        FeatureMatrix m = derive_ratios(base);
        REQUIRE(m.n_cols() == 57);
        int c = m.col_index("ast_alt_ratio");
        REQUIRE(c >= 0);
        CHECK(m.at(0, static_cast<std::size_t>(c)) == Catch::Approx(1.199).margin(5e-4));
        CHECK_FALSE(m.is_missing(0, static_cast<std::size_t>(c)));
    }
    SECTION("missing denominator leaves the ratio missing") {
        std::map<std::string, std::vector<Measurement>> only_num;
        only_num["a1"] = {meas("aspartate_aminotransferase", 43.3, false)};
        FeatureMatrix m = derive_ratios(build_base_matrix({"a1"}, only_num));
        int c = m.col_index("ast_alt_ratio");
        CHECK(m.is_missing(0, static_cast<std::size_t>(c)));
    }
    SECTION("zero denominator counts a warning") {
        std::map<std::string, std::vector<Measurement>> zero_den;
        zero_den["a1"] = {meas("aspartate_aminotransferase", 43.3, false),
                          meas("alanine_transaminase", 0.0, false)};
        RatioStats stats;
        FeatureMatrix m = derive_ratios(build_base_matrix({"a1"}, zero_den), &stats);
        int c = m.col_index("ast_alt_ratio");
        CHECK(m.is_missing(0, static_cast<std::size_t>(c)));
        CHECK(stats.zero_denominator_warnings == 1);
    }
}

TEST_CASE("compute_global_normal_means") {
    SECTION("mean of normal-flagged values") {
        std::vector<Measurement> ms = {meas("heart_rate", 90, false),
                                       meas("heart_rate", 100, false),
                                       meas("heart_rate", 200, true)};
        auto means = compute_global_normal_means(ms);
        CHECK(means.at("heart_rate") == Catch::Approx(95.0));
    }
    SECTION("only-abnormal variables fall back to the catalog default") {
        auto means = compute_global_normal_means({meas("glucose", 400, true)});
        CHECK(means.at("glucose") == Catch::Approx(113.44));
    }
    SECTION("empty input gives the full catalog defaults") {
        auto means = compute_global_normal_means({});
        CHECK(means.size() == feature_catalog().n_base());
        CHECK(means.at("weight") == Catch::Approx(80.87));
    }
}

TEST_CASE("impute") {
    std::map<std::string, std::vector<Measurement>> by_adm;
    by_adm["a1"] = {meas("heart_rate", 80, false)};
    FeatureMatrix m = derive_ratios(build_base_matrix({"a1"}, by_adm));
    auto means = imputation_means(m, compute_global_normal_means({}));
    SECTION("missing glucose takes the catalog mean") {
        FeatureMatrix filled = impute(m, means);
        int c = filled.col_index("glucose");
        CHECK(filled.at(0, static_cast<std::size_t>(c)) == Catch::Approx(113.44));
        CHECK(filled.is_missing(0, static_cast<std::size_t>(c)));
        for (double v : filled.values) CHECK_FALSE(std::isnan(v));
    }
    SECTION("observed cells are bit-identical after imputation") {
        FeatureMatrix filled = impute(m, means);
        int c = filled.col_index("heart_rate");
        CHECK(filled.at(0, static_cast<std::size_t>(c)) == 80.0);
        CHECK_FALSE(filled.is_missing(0, static_cast<std::size_t>(c)));
    }
    SECTION("all-missing column becomes the mean with a fully set mask") {
        std::map<std::string, std::vector<Measurement>> empty_map;
        empty_map["a1"] = {meas("heart_rate", 80, false)};
        empty_map["a2"] = {meas("heart_rate", 84, false)};
        FeatureMatrix base = build_base_matrix({"a1", "a2"}, empty_map);
        std::map<std::string, double> simple_means;
        for (const auto& v : feature_catalog().variables()) simple_means[v.id] = 5.0;
        FeatureMatrix filled = impute(base, simple_means);
        int c = filled.col_index("glucose");
        for (std::size_t r = 0; r < 2; ++r) {
            CHECK(filled.at(r, static_cast<std::size_t>(c)) == 5.0);
            CHECK(filled.is_missing(r, static_cast<std::size_t>(c)));
        }
    }
    SECTION("ratio imputation mean comes from observed ratios when present") {
        std::map<std::string, std::vector<Measurement>> two;
        two["a1"] = {meas("aspartate_aminotransferase", 40, false),
                     meas("alanine_transaminase", 20, false)};
        two["a2"] = {meas("heart_rate", 80, false)};
        FeatureMatrix mm = derive_ratios(build_base_matrix({"a1", "a2"}, two));
        auto mm_means = imputation_means(mm, compute_global_normal_means({}));
        CHECK(mm_means.at("ast_alt_ratio") == Catch::Approx(2.0));
        FeatureMatrix filled = impute(mm, mm_means);
        int c = filled.col_index("ast_alt_ratio");
        CHECK(filled.at(1, static_cast<std::size_t>(c)) == Catch::Approx(2.0));
    }
}

TEST_CASE("standardize") {
    FeatureMatrix m = FeatureMatrix::zeros({"r1", "r2", "r3"}, {"x", "y"});
    m.at(0, 0) = 1;
    m.at(1, 0) = 2;
    m.at(2, 0) = 3;
    m.at(0, 1) = 4;
    m.at(1, 1) = 4;
    m.at(2, 1) = 4;
    auto [z, scaler] = standardize(m);
    SECTION("population std z-scores") {
        CHECK(z.at(0, 0) == Catch::Approx(-1.2247448713915889).epsilon(1e-12));
        CHECK(z.at(1, 0) == Catch::Approx(0.0).margin(1e-15));
        CHECK(z.at(2, 0) == Catch::Approx(1.2247448713915889).epsilon(1e-12));
        CHECK(scaler.std[0] == Catch::Approx(0.816496580927726).epsilon(1e-12));
    }
    SECTION("constant column maps to zero") {
        for (std::size_t r = 0; r < 3; ++r) CHECK(z.at(r, 1) == 0.0);
        CHECK(scaler.std[1] == 0.0);
    }
    SECTION("idempotent on already standardized data") {
        auto [z2, s2] = standardize(z);
        for (std::size_t i = 0; i < z.values.size(); ++i)
            CHECK(z2.values[i] == Catch::Approx(z.values[i]).margin(1e-9));
    }
    SECTION("every non-constant column has mean 0 and unit variance") {
        for (std::size_t c = 0; c < z.n_cols(); ++c) {
            if (scaler.std[c] == 0.0) continue;
            double sum = 0, ss = 0;
            for (std::size_t r = 0; r < z.n_rows(); ++r) {
                sum += z.at(r, c);
                ss += z.at(r, c) * z.at(r, c);
            }
            double mean = sum / static_cast<double>(z.n_rows());
            double var = ss / static_cast<double>(z.n_rows()) - mean * mean;
            CHECK(std::abs(mean) <= 1e-9);
            CHECK(std::abs(var - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("apply_scaler") {
    FeatureMatrix m = FeatureMatrix::zeros({"r1", "r2"}, {"x", "y"});
    m.at(0, 0) = 1;
    m.at(1, 0) = 3;
    m.at(0, 1) = 7;
    m.at(1, 1) = 7;
    auto [z, scaler] = standardize(m);
    SECTION("row equal to the stored mean maps to zeros") {
        FeatureMatrix probe = FeatureMatrix::zeros({"q"}, {"x", "y"});
        probe.at(0, 0) = 2;  // column means
        probe.at(0, 1) = 7;
        FeatureMatrix out = apply_scaler(probe, scaler);
        CHECK(out.at(0, 0) == 0.0);
        CHECK(out.at(0, 1) == 0.0);  // constant column convention
    }
    SECTION("round trip matches standardize output exactly") {
        FeatureMatrix again = apply_scaler(m, scaler);
        for (std::size_t i = 0; i < z.values.size(); ++i)
            CHECK(again.values[i] == z.values[i]);
    }
    SECTION("column mismatch is an error") {
        FeatureMatrix other = FeatureMatrix::zeros({"q"}, {"y", "x"});
        CHECK_THROWS_AS(apply_scaler(other, scaler), std::invalid_argument);
    }
}

TEST_CASE("matrix CSV round trip") {
    std::map<std::string, std::vector<Measurement>> by_adm;
    by_adm["a1"] = {meas("heart_rate", 80.25, false), meas("glucose", 113.5, true)};
    by_adm["a2"] = {meas("heart_rate", 91.125, false)};
    FeatureMatrix m = derive_ratios(build_base_matrix({"a1", "a2"}, by_adm));
    auto dir = std::filesystem::temp_directory_path();
    auto mpath = (dir / "mat.csv").string();
    auto spath = (dir / "scaler.csv").string();
    write_matrix_csv(m, mpath);
    write_mask_csv(m, (dir / "mask.csv").string());
    FeatureMatrix back = read_matrix_csv(mpath);
    REQUIRE(back.n_rows() == 2);
    REQUIRE(back.n_cols() == 57);
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        if (std::isnan(m.values[i]))
            CHECK(std::isnan(back.values[i]));
        else
            CHECK(back.values[i] == m.values[i]);
    }
    auto means = imputation_means(m, compute_global_normal_means({}));
    auto [z, scaler] = standardize(impute(m, means));
    write_scaler_csv(scaler, spath);
    ScalerState s2 = read_scaler_csv(spath);
    CHECK(s2.column_ids == scaler.column_ids);
    for (std::size_t c = 0; c < s2.mean.size(); ++c) {
        CHECK(s2.mean[c] == scaler.mean[c]);
        CHECK(s2.std[c] == scaler.std[c]);
    }
}
