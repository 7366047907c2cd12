#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "subpheno/stats.hpp"

using namespace subpheno;

namespace {

ClusterAssignment assignment(std::vector<int> labels, int k) {
    ClusterAssignment a;
    a.labels = std::move(labels);
    a.k = k;
    return a;
}

// Brute-force best alignment over all k! permutations; ties keep the
// lexicographically smallest permutation.
std::vector<int> brute_force_alignment(const std::vector<int>& a, const std::vector<int>& b,
                                       int k) {
    auto conf = confusion_matrix(a, b, k);
    std::vector<int> perm(static_cast<std::size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<int> best = perm;
    long long best_score = -1;
    do {
        long long s = 0;
        for (int j = 0; j < k; ++j)
            s += static_cast<long long>(
                conf[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])]
                    [static_cast<std::size_t>(j)]);
        if (s > best_score) {
            best_score = s;
            best = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

// Independent exact Mann-Whitney p-value by a different enumeration strategy
// (recursion over subsets) for cross-checking.
double exact_mw_reference(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());
    const std::size_t n = pooled.size(), nx = x.size();
    auto two_u = [](const std::vector<double>& gx, const std::vector<double>& gy) {
        long long u = 0;
        for (double a : gx)
            for (double b : gy) u += a > b ? 2 : (a == b ? 1 : 0);
        return u;
    };
    long long center = static_cast<long long>(nx) * static_cast<long long>(pooled.size() - nx);
    long long obs = std::llabs(two_u(x, y) - center);
    std::size_t total = 0, extreme = 0;
    std::vector<std::size_t> pick;
    std::function<void(std::size_t)> rec = [&](std::size_t start) {
        if (pick.size() == nx) {
            std::vector<double> gx, gy;
            std::vector<char> used(n, 0);
            for (auto i : pick) used[i] = 1;
            for (std::size_t i = 0; i < n; ++i) (used[i] ? gx : gy).push_back(pooled[i]);
            ++total;
            if (std::llabs(two_u(gx, gy) - center) >= obs) ++extreme;
            return;
        }
        for (std::size_t i = start; i < n; ++i) {
            pick.push_back(i);
            rec(i + 1);
            pick.pop_back();
        }
    };
    rec(0);
    return static_cast<double>(extreme) / static_cast<double>(total);
}

}  // namespace

TEST_CASE("align_labels") {
    SECTION("identity when assignments are equal") {
        auto a = assignment({0, 1, 2, 0, 1, 2}, 3);
        auto sigma = align_labels(a, a);
        CHECK(sigma == std::vector<int>{0, 1, 2});
    }
    SECTION("swap recovered with full agreement") {
        auto a = assignment({0, 0, 1, 1}, 2);
        auto b = assignment({1, 1, 0, 0}, 2);
        auto sigma = align_labels(a, b);
        CHECK(sigma == std::vector<int>{1, 0});
        CHECK(cohen_kappa(a.labels, apply_alignment(b, sigma).labels) == 1.0);
    }
    SECTION("differing k is an error") {
        CHECK_THROWS_AS(align_labels(assignment({0, 1}, 2), assignment({0, 1, 2}, 3)),
                        std::invalid_argument);
    }
    SECTION("matches exhaustive search on random confusions, k <= 6") {
        Rng rng(99);
        for (int k = 2; k <= 6; ++k) {
            for (int rep = 0; rep < 30; ++rep) {
                std::vector<int> la, lb;
                for (int i = 0; i < 60; ++i) {
                    la.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k))));
                    lb.push_back(static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k))));
                }
                // Guarantee every label occurs at least once on each side.
                for (int c = 0; c < k; ++c) {
                    la[static_cast<std::size_t>(c)] = c;
                    lb[static_cast<std::size_t>(c)] = c;
                }
                auto sigma = align_labels(assignment(la, k), assignment(lb, k));
                auto brute = brute_force_alignment(la, lb, k);
                CHECK(sigma == brute);
            }
        }
    }
}

TEST_CASE("cohen_kappa") {
    SECTION("hand-evaluated example") {
        double kp = cohen_kappa({0, 0, 1, 1}, {0, 1, 1, 1});
        CHECK(kp == Catch::Approx(0.5).epsilon(1e-12));
    }
    SECTION("identical assignments give 1") {
        CHECK(cohen_kappa({0, 1, 2, 1, 0}, {0, 1, 2, 1, 0}) == 1.0);
    }
    SECTION("independent labels give near-zero kappa") {
        Rng rng(2024);
        std::vector<int> a, b;
        for (int i = 0; i < 10000; ++i) {
            a.push_back(static_cast<int>(rng.uniform_int(2)));
            b.push_back(static_cast<int>(rng.uniform_int(2)));
        }
        CHECK(std::abs(cohen_kappa(a, b)) <= 0.05);
    }
    SECTION("symmetric after alignment") {
        std::vector<int> a = {0, 0, 1, 1, 2, 2, 0, 1};
        std::vector<int> b = {0, 1, 1, 1, 2, 0, 0, 1};
        CHECK(cohen_kappa(a, b) == Catch::Approx(cohen_kappa(b, a)));
    }
    SECTION("degenerate single shared label") {
        CHECK(cohen_kappa({0, 0, 0}, {0, 0, 0}) == 1.0);
    }
}

TEST_CASE("agreement_matrix") {
    SECTION("perfect agreement is the identity") {
        auto m = agreement_matrix({0, 1, 0, 1}, {0, 1, 0, 1}, 2);
        CHECK(m[0][0] == 1.0);
        CHECK(m[0][1] == 0.0);
        CHECK(m[1][1] == 1.0);
    }
    SECTION("3/1 split gives row [0.75, 0.25]") {
        auto m = agreement_matrix({0, 0, 0, 0, 1}, {0, 0, 0, 1, 1}, 2);
        CHECK(m[0][0] == Catch::Approx(0.75));
        CHECK(m[0][1] == Catch::Approx(0.25));
    }
    SECTION("rows sum to one on random input") {
        Rng rng(5);
        std::vector<int> a, b;
        for (int i = 0; i < 500; ++i) {
            a.push_back(static_cast<int>(rng.uniform_int(4)));
            b.push_back(static_cast<int>(rng.uniform_int(4)));
        }
        for (int c = 0; c < 4; ++c) a[static_cast<std::size_t>(c)] = c;
        auto m = agreement_matrix(a, b, 4);
        for (const auto& row : m) {
            double s = std::accumulate(row.begin(), row.end(), 0.0);
            CHECK(s == Catch::Approx(1.0).margin(1e-9));
        }
    }
}

TEST_CASE("rank_test") {
    SECTION("exact two-sided p on a 2-vs-2 split") {
        CHECK(rank_test({1, 2}, {3, 4}) == Catch::Approx(2.0 / 6.0).epsilon(1e-12));
    }
    SECTION("identical multisets give p = 1") {
        CHECK(rank_test({1, 2, 3}, {3, 1, 2}) == 1.0);
        CHECK(rank_test({5, 5, 5, 5, 5, 5, 5}, {5, 5, 5, 5, 5, 5, 5}) == 1.0);
    }
    SECTION("well-separated large samples give tiny p") {
        Rng rng(7);
        std::vector<double> x, y;
        for (int i = 0; i < 200; ++i) {
            x.push_back(rng.normal());
            y.push_back(rng.normal() + 3.0);
        }
        CHECK(rank_test(x, y) < 1e-10);
    }
    SECTION("agrees with an independent exact enumerator") {
        Rng rng(11);
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> x, y;
            std::size_t nx = 2 + rng.uniform_int(4), ny = 2 + rng.uniform_int(4);
            for (std::size_t i = 0; i < nx; ++i)
                x.push_back(std::round(rng.normal() * 3.0));  // rounded: forces ties
            for (std::size_t i = 0; i < ny; ++i)
                y.push_back(std::round(rng.normal() * 3.0 + 1.0));
            CHECK(rank_test(x, y) == Catch::Approx(exact_mw_reference(x, y)).epsilon(1e-12));
        }
    }
    SECTION("exact and approximate paths agree within 0.02 at the boundary") {
        // Continuous (tie-free) samples; the bound holds for every possible
        // configuration at the near-balanced splits checked here.
        Rng rng(13);
        for (int rep = 0; rep < 120; ++rep) {
            std::size_t nx = 4 + rng.uniform_int(3);  // 4..6 of 12
            std::size_t ny = 12 - nx;
            std::vector<double> x, y;
            for (std::size_t i = 0; i < nx; ++i) x.push_back(rng.normal());
            for (std::size_t i = 0; i < ny; ++i)
                y.push_back(rng.normal() + 2.0 * rng.uniform());
            double exact = rank_test(x, y);  // n = 12: exact path
            long long u2 = 0;
            for (double a : x)
                for (double b : y) u2 += a > b ? 2 : (a == b ? 1 : 0);
            double var = static_cast<double>(nx) * static_cast<double>(ny) * 13.0 / 12.0;
            double dev = std::abs(static_cast<double>(u2) -
                                  static_cast<double>(nx) * static_cast<double>(ny)) /
                         2.0;
            double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
            double approx = std::min(1.0, std::erfc(z / std::sqrt(2.0)));
            CHECK(std::abs(exact - approx) <= 0.02);
        }
    }
    SECTION("invariant under strictly monotone transforms") {
        std::vector<double> x = {0.2, 1.4, 2.2, 3.7, 0.9, 1.1, 2.8};
        std::vector<double> y = {1.0, 2.4, 3.9, 4.4, 2.6, 3.3, 4.8};
        double base = rank_test(x, y);
        auto tx = x, ty = y;
        for (auto& v : tx) v = std::exp(v);
        for (auto& v : ty) v = std::exp(v);
        CHECK(rank_test(tx, ty) == Catch::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("chi_square") {
    SECTION("uniform table has statistic 0 and p 1") {
        auto res = chi_square({{10, 10}, {10, 10}});
        CHECK(res.statistic == 0.0);
        CHECK(res.p_value == 1.0);
    }
    SECTION("diagonal 2x2 table") {
        auto res = chi_square({{20, 0}, {0, 20}});
        CHECK(res.statistic == Catch::Approx(40.0));
        CHECK(res.df == 1);
        CHECK(res.p_value == Catch::Approx(2.54e-10).epsilon(0.01));
    }
    SECTION("survival function agrees with direct density integration") {
        auto res = chi_square({{13.84, 6.16}, {6.16, 13.84}});
        CHECK(res.statistic == Catch::Approx(5.89824).epsilon(1e-9));
        // Verify the survival function against numerical integration of the
        // chi-square density.
        auto pdf = [](double u) { return std::exp(-u / 2.0) / std::sqrt(2.0 * M_PI * u); };
        double integral = 0.0, lo = res.statistic, hi = 200.0;
        int steps = 400000;
        double h = (hi - lo) / steps;
        for (int i = 0; i < steps; ++i) {
            double u0 = lo + i * h, u1 = u0 + h;
            integral += 0.5 * (pdf(u0) + pdf(u1)) * h;
        }
        CHECK(res.p_value == Catch::Approx(integral).epsilon(1e-4));
    }
    SECTION("statistic 3.84 at df 1 gives p near 0.05") {
        // 2x2 table engineered to have statistic 3.8415.
        double a = 0.5 * (20.0 + std::sqrt(3.841459 * 20.0 / (1.0 + 3.841459 / 20.0)) *
                                     std::sqrt(1.0 + 3.841459 / 20.0));
        (void)a;
        double p = gamma_q(0.5, 3.841458820694124 / 2.0);
        CHECK(p == Catch::Approx(0.05).epsilon(1e-4));
    }
    SECTION("zero marginal is an error") {
        CHECK_THROWS_AS(chi_square({{0, 0}, {5, 5}}), std::invalid_argument);
        CHECK_THROWS_AS(chi_square({{5, 0}, {5, 0}}), std::invalid_argument);
    }
}

TEST_CASE("adjusted_rand_index") {
    SECTION("identical partitions") {
        CHECK(adjusted_rand_index({0, 0, 1, 1, 2}, {2, 2, 0, 0, 1}) == Catch::Approx(1.0));
    }
    SECTION("independent partitions near zero") {
        Rng rng(3);
        std::vector<int> a, b;
        for (int i = 0; i < 5000; ++i) {
            a.push_back(static_cast<int>(rng.uniform_int(3)));
            b.push_back(static_cast<int>(rng.uniform_int(3)));
        }
        CHECK(std::abs(adjusted_rand_index(a, b)) < 0.02);
    }
    SECTION("hand-computed small case") {
        // a = {0,0,1,1}, b = {0,1,1,1}: contingency [[1,1],[0,2]]
        // sum_cells C2 = 0+0+0+1 = 1; rows C2 = 1+1 = 2; cols C2 = 0+3 = 3; n2 = 6
        // expected = 1, max = 2.5 -> ARI = 0/1.5 = 0
        CHECK(adjusted_rand_index({0, 0, 1, 1}, {0, 1, 1, 1}) ==
              Catch::Approx(0.0).margin(1e-12));
    }
}

TEST_CASE("heterogeneity_summary") {
    auto make_matrix = [](std::vector<std::vector<double>> cols,
                          std::vector<std::string> names) {
        std::size_t n = cols[0].size();
        std::vector<std::string> rows;
        for (std::size_t i = 0; i < n; ++i) rows.push_back("r" + std::to_string(i));
        FeatureMatrix m = FeatureMatrix::zeros(rows, names);
        for (std::size_t c = 0; c < cols.size(); ++c)
            for (std::size_t r = 0; r < n; ++r) m.at(r, c) = cols[c][r];
        return m;
    };
    SECTION("identical feature across subgroups is not highlighted") {
        Rng rng(17);
        std::vector<double> flat(40), shifted(40);
        std::vector<int> labels(40);
        for (int i = 0; i < 40; ++i) {
            labels[static_cast<std::size_t>(i)] = i < 20 ? 0 : 1;
            flat[static_cast<std::size_t>(i)] = rng.normal() * 0.01;
            shifted[static_cast<std::size_t>(i)] = rng.normal() * 0.1 + (i < 20 ? -3.0 : 3.0);
        }
        auto m = make_matrix({flat, shifted}, {"flat", "shifted"});
        auto rows = heterogeneity_summary(m, assignment(labels, 2));
        CHECK(rows[0].std_of_means < 0.05);
        CHECK_FALSE(rows[0].highlighted);
        CHECK(rows[1].highlighted);  // planted +3 sigma shift
    }
    SECTION("both-medians rule on fabricated measures") {
        // Four features with measures engineered so exactly those above both
        // medians highlight. Medians over 4 features use the middle-two mean.
        Rng rng(23);
        std::size_t n = 200;
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 2);
        std::vector<std::vector<double>> cols(4, std::vector<double>(n));
        std::vector<double> shift = {0.0, 0.5, 2.0, 4.0};
        for (std::size_t c = 0; c < 4; ++c)
            for (std::size_t i = 0; i < n; ++i)
                cols[c][i] = rng.normal() * 0.2 + (labels[i] == 0 ? 0.0 : shift[c]);
        auto m = make_matrix(cols, {"f0", "f1", "f2", "f3"});
        auto rows = heterogeneity_summary(m, assignment(labels, 2));
        std::vector<double> stds, avgs;
        for (const auto& r : rows) {
            stds.push_back(r.std_of_means);
            avgs.push_back(r.avg_neglog10_p);
        }
        double ms = median(stds), ma = median(avgs);
        for (const auto& r : rows)
            CHECK(r.highlighted == (r.std_of_means > ms && r.avg_neglog10_p > ma));
        CHECK(rows[3].highlighted);
        CHECK_FALSE(rows[0].highlighted);
    }
}
