#include <catch2/catch_amalgamated.hpp>

#include <numeric>

#include "subpheno/learn.hpp"

using namespace subpheno;

namespace {

FeatureMatrix matrix_from(const std::vector<std::vector<double>>& rows) {
    std::vector<std::string> row_ids, col_ids;
    for (std::size_t i = 0; i < rows.size(); ++i) row_ids.push_back("r" + std::to_string(i));
    for (std::size_t c = 0; c < rows[0].size(); ++c) col_ids.push_back("f" + std::to_string(c));
    FeatureMatrix m = FeatureMatrix::zeros(row_ids, col_ids);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < rows[0].size(); ++c) m.at(i, c) = rows[i][c];
    return m;
}

// Labeled two-class Gaussian data with a shifted mean on the first features.
struct Labeled {
    FeatureMatrix X;
    std::vector<int> y;
};

Labeled gaussian_labels(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    Labeled out;
    for (std::size_t i = 0; i < n; ++i) {
        int y = static_cast<int>(rng.uniform_int(2));
        out.y.push_back(y);
        std::vector<double> row(d);
        for (std::size_t j = 0; j < d; ++j)
            row[j] = rng.normal() + (j < 2 && y == 1 ? shift : 0.0);
        rows.push_back(std::move(row));
    }
    out.X = matrix_from(rows);
    return out;
}

}  // namespace

TEST_CASE("train_test_split") {
    SECTION("stratified counts: 100 rows, 10 positives, ratio 0.8") {
        std::vector<int> y(100, 0);
        for (int i = 0; i < 10; ++i) y[static_cast<std::size_t>(i * 7)] = 1;
        auto split = train_test_split(y, 0.8, 42);
        CHECK(split.train.size() == 80);
        CHECK(split.test.size() == 20);
        auto count_pos = [&](const std::vector<std::size_t>& idx) {
            std::size_t c = 0;
            for (auto i : idx) c += y[i] == 1 ? 1 : 0;
            return c;
        };
        CHECK(count_pos(split.train) == 8);
        CHECK(count_pos(split.test) == 2);
    }
    SECTION("deterministic under the seed") {
        std::vector<int> y(50);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 2);
        auto a = train_test_split(y, 0.8, 7);
        auto b = train_test_split(y, 0.8, 7);
        CHECK(a.train == b.train);
        CHECK(a.test == b.test);
        auto c = train_test_split(y, 0.8, 8);
        CHECK(a.train != c.train);
    }
    SECTION("unstratified 50:50 of 4 rows") {
        auto split = train_test_split({0, 0, 0, 0}, 0.5, 1, false);
        CHECK(split.train.size() == 2);
        CHECK(split.test.size() == 2);
    }
    SECTION("bad ratio is an error") {
        CHECK_THROWS_AS(train_test_split({0, 1}, 1.0, 1), std::invalid_argument);
    }
    SECTION("every row lands in exactly one side") {
        std::vector<int> y(37);
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 3);
        auto split = train_test_split(y, 0.7, 3);
        std::vector<std::size_t> all = split.train;
        all.insert(all.end(), split.test.begin(), split.test.end());
        std::sort(all.begin(), all.end());
        std::vector<std::size_t> expect(37);
        std::iota(expect.begin(), expect.end(), 0);
        CHECK(all == expect);
    }
}

TEST_CASE("train_logreg") {
    SECTION("zero iterations predict one half everywhere") {
        auto data = gaussian_labels(40, 3, 1.0, 5);
        auto m = train_logreg(data.X, data.y, 1.0, 0);
        auto proba = predict_proba(m, data.X);
        for (std::size_t i = 0; i < data.X.n_rows(); ++i)
            CHECK(proba[i * 2 + 1] == 0.5);
    }
    SECTION("separable 1D data reaches training accuracy 1") {
        auto X = matrix_from({{-1.0}, {1.0}});
        std::vector<int> y = {0, 1};
        auto m = train_logreg(X, y, 1e-6, 500);
        auto labels = predict_label(m, X);
        CHECK(labels == y);
    }
    SECTION("loss trace is non-increasing under the line search") {
        auto data = gaussian_labels(200, 5, 0.8, 11);
        auto m = train_logreg(data.X, data.y, 1.0, 200);
        for (std::size_t i = 1; i < m.loss_trace.size(); ++i)
            CHECK(m.loss_trace[i] <= m.loss_trace[i - 1] + 1e-12);
    }
    SECTION("analytic gradient matches central finite differences") {
        auto data = gaussian_labels(60, 4, 0.7, 13);
        Rng rng(17);
        const double h = 1e-5;
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> w(4);
            for (auto& v : w) v = rng.normal();
            double b = rng.normal();
            std::vector<double> gw;
            double gb;
            detail::logreg_gradient(data.X, data.y, w, b, 1.0, gw, gb);
            for (std::size_t j = 0; j < w.size(); ++j) {
                auto wp = w, wm = w;
                wp[j] += h;
                wm[j] -= h;
                double fd = (detail::logreg_loss(data.X, data.y, wp, b, 1.0) -
                             detail::logreg_loss(data.X, data.y, wm, b, 1.0)) /
                            (2.0 * h);
                CHECK(std::abs(gw[j] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
            }
            double fdb = (detail::logreg_loss(data.X, data.y, w, b + h, 1.0) -
                          detail::logreg_loss(data.X, data.y, w, b - h, 1.0)) /
                         (2.0 * h);
            CHECK(std::abs(gb - fdb) <= 1e-5 * std::max(1.0, std::abs(fdb)));
        }
    }
    SECTION("non-finite features are rejected") {
        FeatureMatrix X = matrix_from({{1.0}, {2.0}});
        X.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
        CHECK_THROWS_AS(train_logreg(X, {0, 1}), std::invalid_argument);
    }
}

TEST_CASE("train_forest") {
    SECTION("single unbootstrapped full tree equals a decision tree") {
        auto data = gaussian_labels(80, 4, 2.0, 19);
        ForestOptions one;
        one.n_trees = 1;
        one.bootstrap = false;
        one.max_depth = -1;  // unlimited
        one.features_per_split = 4;
        auto forest = train_forest(data.X, data.y, 3, one);
        // A full tree on its own training data is exact.
        auto labels = predict_label(forest, data.X);
        CHECK(labels == data.y);
        REQUIRE(forest.trees.size() == 1);
    }
    SECTION("pure labels predict that label with probability 1") {
        auto data = gaussian_labels(30, 3, 0.5, 23);
        std::fill(data.y.begin(), data.y.end(), 1);
        auto forest = train_forest(data.X, data.y, 5, {20, 4, 0, true, 1});
        auto proba = predict_proba(forest, data.X);
        for (std::size_t i = 0; i < data.X.n_rows(); ++i)
            CHECK(proba[i * 2 + 1] == 1.0);
    }
    SECTION("XOR is learned by depth-2 trees") {
        auto X = matrix_from({{0, 0}, {0, 1}, {1, 0}, {1, 1}});
        std::vector<int> y = {0, 1, 1, 0};
        ForestOptions opt;
        opt.n_trees = 200;
        opt.max_depth = 2;
        opt.features_per_split = 2;
        auto forest = train_forest(X, y, 29, opt);
        CHECK(predict_label(forest, X) == y);
    }
    SECTION("prediction is invariant to tree order") {
        auto data = gaussian_labels(60, 4, 1.0, 31);
        auto forest = train_forest(data.X, data.y, 37, {30, 6, 0, true, 1});
        auto base = predict_proba(forest, data.X);
        std::reverse(forest.trees.begin(), forest.trees.end());
        auto flipped = predict_proba(forest, data.X);
        for (std::size_t i = 0; i < base.size(); ++i)
            CHECK(base[i] == Catch::Approx(flipped[i]).margin(1e-12));
    }
    SECTION("deterministic across thread counts") {
        auto data = gaussian_labels(80, 5, 1.0, 41);
        auto a = train_forest(data.X, data.y, 7, {40, 6, 0, true, 1});
        auto b = train_forest(data.X, data.y, 7, {40, 6, 0, true, 3});
        auto pa = predict_proba(a, data.X);
        auto pb = predict_proba(b, data.X);
        CHECK(pa == pb);
    }
}

TEST_CASE("train_gbdt") {
    SECTION("zero rounds predict the class priors") {
        auto data = gaussian_labels(100, 3, 1.0, 43);
        GbdtOptions opt;
        opt.n_rounds = 0;
        auto m = train_gbdt(data.X, data.y, 2, opt);
        auto proba = predict_proba(m, data.X);
        double prior = static_cast<double>(std::count(data.y.begin(), data.y.end(), 1)) /
                       static_cast<double>(data.y.size());
        for (std::size_t i = 0; i < data.X.n_rows(); ++i)
            CHECK(proba[i * 2 + 1] == Catch::Approx(prior).margin(1e-9));
    }
    SECTION("separable 1D data reaches training accuracy 1 in 10 rounds") {
        auto X = matrix_from({{-2.0}, {-1.5}, {-1.0}, {1.0}, {1.5}, {2.0}});
        std::vector<int> y = {0, 0, 0, 1, 1, 1};
        GbdtOptions opt;
        opt.n_rounds = 10;
        auto m = train_gbdt(X, y, 2, opt);
        CHECK(predict_label(m, X) == y);
    }
    SECTION("depth-1 split matches exhaustive threshold search") {
        Rng rng(47);
        for (int rep = 0; rep < 25; ++rep) {
            // 6-point dataset, 2 features.
            std::vector<std::vector<double>> rows;
            std::vector<double> grad(6), hess(6);
            for (int i = 0; i < 6; ++i) {
                rows.push_back({std::round(rng.normal() * 3.0), rng.normal()});
                grad[static_cast<std::size_t>(i)] = rng.normal();
                hess[static_cast<std::size_t>(i)] = 0.1 + rng.uniform();
            }
            auto X = matrix_from(rows);
            GbdtOptions opt;
            opt.max_depth = 1;
            detail::NewtonTreeBuilder builder(X, opt);
            Tree tree = builder.build(grad, hess);

            // Brute force over every midpoint threshold of both features.
            double best_gain = -1.0;
            int best_feature = -1;
            double best_thr = 0.0;
            double G = std::accumulate(grad.begin(), grad.end(), 0.0);
            double H = std::accumulate(hess.begin(), hess.end(), 0.0);
            for (int f = 0; f < 2; ++f) {
                std::vector<double> vals;
                for (int i = 0; i < 6; ++i)
                    vals.push_back(X.at(static_cast<std::size_t>(i), static_cast<std::size_t>(f)));
                std::vector<double> sorted_vals = vals;
                std::sort(sorted_vals.begin(), sorted_vals.end());
                for (std::size_t t = 0; t + 1 < sorted_vals.size(); ++t) {
                    if (sorted_vals[t + 1] <= sorted_vals[t]) continue;
                    double thr = 0.5 * (sorted_vals[t] + sorted_vals[t + 1]);
                    double gl = 0, hl = 0;
                    for (int i = 0; i < 6; ++i)
                        if (vals[static_cast<std::size_t>(i)] <= thr) {
                            gl += grad[static_cast<std::size_t>(i)];
                            hl += hess[static_cast<std::size_t>(i)];
                        }
                    double gr = G - gl, hr = H - hl;
                    double gain = 0.5 * (gl * gl / (hl + 1.0) + gr * gr / (hr + 1.0) -
                                         G * G / (H + 1.0));
                    if (gain > best_gain) {
                        best_gain = gain;
                        best_feature = f;
                        best_thr = thr;
                    }
                }
            }
            if (best_gain > 1e-12) {
                REQUIRE(tree[0].feature == best_feature);
                CHECK(tree[0].threshold == Catch::Approx(best_thr).margin(1e-12));
                CHECK(tree[0].gain == Catch::Approx(best_gain).margin(1e-12));
            } else {
                CHECK(tree[0].feature == -1);
            }
        }
    }
    SECTION("training loss is non-increasing per round") {
        auto data = gaussian_labels(300, 6, 0.8, 53);
        GbdtOptions opt;
        opt.n_rounds = 60;
        auto m = train_gbdt(data.X, data.y, 2, opt);
        REQUIRE(m.loss_trace.size() == 60);
        for (std::size_t i = 1; i < m.loss_trace.size(); ++i)
            CHECK(m.loss_trace[i] <= m.loss_trace[i - 1] + 1e-12);
    }
    SECTION("multiclass softmax separates four planted clusters") {
        Rng rng(59);
        std::vector<std::vector<double>> rows;
        std::vector<int> y;
        for (int i = 0; i < 240; ++i) {
            int c = i % 4;
            y.push_back(c);
            rows.push_back({rng.normal() + 5.0 * (c % 2), rng.normal() + 5.0 * (c / 2)});
        }
        auto X = matrix_from(rows);
        GbdtOptions opt;
        opt.n_rounds = 30;
        auto m = train_gbdt(X, y, 4, opt);
        CHECK(accuracy(y, predict_label(m, X)) >= 0.99);
        for (std::size_t i = 1; i < m.loss_trace.size(); ++i)
            CHECK(m.loss_trace[i] <= m.loss_trace[i - 1] + 1e-12);
        auto proba = predict_proba(m, X);
        for (std::size_t i = 0; i < 240; ++i) {
            double sum = 0.0;
            for (int c = 0; c < 4; ++c) sum += proba[i * 4 + static_cast<std::size_t>(c)];
            CHECK(sum == Catch::Approx(1.0).margin(1e-9));
        }
    }
    SECTION("single class present grows no trees and predicts the prior") {
        auto data = gaussian_labels(30, 3, 0.5, 61);
        std::fill(data.y.begin(), data.y.end(), 0);
        auto m = train_gbdt(data.X, data.y, 2, {});
        CHECK(m.rounds.empty());
        auto proba = predict_proba(m, data.X);
        for (std::size_t i = 0; i < 30; ++i) CHECK(proba[i * 2] >= 1.0 - 1e-9);
    }
}

TEST_CASE("predict_proba rows sum to one") {
    auto data = gaussian_labels(50, 4, 1.0, 67);
    auto logreg = train_logreg(data.X, data.y, 1.0, 50);
    auto forest = train_forest(data.X, data.y, 3, {20, 5, 0, true, 1});
    GbdtOptions gopt;
    gopt.n_rounds = 20;
    auto gbdt = train_gbdt(data.X, data.y, 2, gopt);
    for (auto proba : {predict_proba(logreg, data.X), predict_proba(forest, data.X),
                       predict_proba(gbdt, data.X)}) {
        for (std::size_t i = 0; i < 50; ++i) {
            double sum = proba[i * 2] + proba[i * 2 + 1];
            CHECK(sum == Catch::Approx(1.0).margin(1e-9));
            CHECK(proba[i * 2] >= 0.0);
            CHECK(proba[i * 2 + 1] <= 1.0);
        }
    }
}

TEST_CASE("f_score") {
    // TP=2, FP=1, FN=1.
    CHECK(f_score({1, 1, 0, 1, 0}, {1, 1, 1, 0, 0}) == Catch::Approx(2.0 / 3.0));
    CHECK(f_score({1, 0, 1}, {1, 0, 1}) == 1.0);
    CHECK(f_score({1, 1, 0}, {0, 0, 0}) == 0.0);
}

TEST_CASE("auroc") {
    SECTION("perfect separation") {
        CHECK(auroc({0, 1}, {0.1, 0.9}) == 1.0);
    }
    SECTION("all scores equal gives one half") {
        CHECK(auroc({0, 1, 0, 1}, {0.5, 0.5, 0.5, 0.5}) == 0.5);
    }
    SECTION("matches brute-force pair counting with ties") {
        Rng rng(71);
        for (int rep = 0; rep < 30; ++rep) {
            std::vector<int> y;
            std::vector<double> s;
            std::size_t n = 50 + rng.uniform_int(450);
            for (std::size_t i = 0; i < n; ++i) {
                y.push_back(static_cast<int>(rng.uniform_int(2)));
                s.push_back(std::round(rng.uniform() * 20.0) / 20.0);  // tied scores
            }
            y[0] = 0;
            y[1] = 1;
            double pairs = 0.0, wins = 0.0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) {
                    if (y[i] != 1 || y[j] != 0) continue;
                    pairs += 1.0;
                    if (s[i] > s[j]) wins += 1.0;
                    else if (s[i] == s[j]) wins += 0.5;
                }
            CHECK(auroc(y, s) == Catch::Approx(wins / pairs).margin(1e-12));
        }
    }
    SECTION("single class is an error") {
        CHECK_THROWS_AS(auroc({1, 1}, {0.5, 0.6}), std::invalid_argument);
    }
}

TEST_CASE("feature_importance") {
    SECTION("logistic importances are absolute weights") {
        LogisticModel m;
        m.weights = {2.0, -3.0, 0.0};
        CHECK(feature_importance(m) == std::vector<double>{2.0, 3.0, 0.0});
    }
    SECTION("gbdt with zero rounds has all-zero importances") {
        auto data = gaussian_labels(30, 3, 1.0, 73);
        GbdtOptions opt;
        opt.n_rounds = 0;
        auto m = train_gbdt(data.X, data.y, 2, opt);
        auto imp = feature_importance(m);
        CHECK(imp == std::vector<double>(3, 0.0));
    }
    SECTION("single-split tree scores only that feature") {
        auto X = matrix_from({{-1.0, 5.0}, {1.0, 5.0}, {-1.0, 5.0}, {1.0, 5.0}});
        std::vector<int> y = {0, 1, 0, 1};
        ForestOptions opt;
        opt.n_trees = 1;
        opt.bootstrap = false;
        opt.max_depth = 1;
        opt.features_per_split = 2;
        auto forest = train_forest(X, y, 1, opt);
        auto imp = feature_importance(forest);
        CHECK(imp[0] > 0.0);
        CHECK(imp[1] == 0.0);
    }
}

TEST_CASE("ensemble_rank") {
    SECTION("identical vectors reproduce the common ranking") {
        std::vector<double> s = {0.5, 2.0, 1.0};
        auto r = ensemble_rank({s, s, s});
        CHECK(r.mean_rank == std::vector<double>{1.0, 3.0, 2.0});
    }
    SECTION("hand-ranked ties average out") {
        auto r = ensemble_rank({{1, 2, 3}, {3, 2, 1}, {2, 2, 2}});
        CHECK(r.mean_rank == std::vector<double>{2.0, 2.0, 2.0});
    }
    SECTION("permutation equivariance") {
        std::vector<std::vector<double>> imp = {{0.1, 0.9, 0.4, 0.7},
                                                {0.2, 0.8, 0.3, 0.5},
                                                {0.0, 1.0, 0.2, 0.6}};
        auto base = ensemble_rank(imp);
        std::vector<std::size_t> perm = {2, 0, 3, 1};
        std::vector<std::vector<double>> shuffled(3, std::vector<double>(4));
        for (std::size_t m = 0; m < 3; ++m)
            for (std::size_t j = 0; j < 4; ++j) shuffled[m][j] = imp[m][perm[j]];
        auto permuted = ensemble_rank(shuffled);
        for (std::size_t j = 0; j < 4; ++j)
            CHECK(permuted.mean_rank[j] == base.mean_rank[perm[j]]);
    }
}

#include "subpheno/model_json.hpp"

TEST_CASE("model JSON round trip preserves predictions exactly") {
    auto data = gaussian_labels(80, 5, 1.0, 83);
    auto probe = gaussian_labels(20, 5, 1.0, 84);

    auto lr = train_logreg(data.X, data.y, 1.0, 100);
    auto lr2 = logistic_from_json(nlohmann::json::parse(to_json(lr).dump()));
    CHECK(predict_proba(lr2, probe.X) == predict_proba(lr, probe.X));

    auto rf = train_forest(data.X, data.y, 5, {25, 6, 0, true, 1});
    auto rf2 = forest_from_json(nlohmann::json::parse(to_json(rf).dump()));
    CHECK(predict_proba(rf2, probe.X) == predict_proba(rf, probe.X));

    GbdtOptions gopt;
    gopt.n_rounds = 25;
    auto gb = train_gbdt(data.X, data.y, 2, gopt);
    auto gb2 = gbdt_from_json(nlohmann::json::parse(to_json(gb).dump()));
    CHECK(predict_proba(gb2, probe.X) == predict_proba(gb, probe.X));

    // Multiclass ensembles round-trip too.
    std::vector<int> y4(data.y.size());
    for (std::size_t i = 0; i < y4.size(); ++i) y4[i] = static_cast<int>(i % 4);
    auto gbm = train_gbdt(data.X, y4, 4, gopt);
    auto gbm2 = gbdt_from_json(nlohmann::json::parse(to_json(gbm).dump()));
    CHECK(predict_proba(gbm2, probe.X) == predict_proba(gbm, probe.X));

    CHECK_THROWS_AS(logistic_from_json(to_json(rf)), std::invalid_argument);
}
