#pragma once

// Cluster-agreement statistics (label alignment, Cohen's kappa, agreement
// heatmap, adjusted Rand index) and subgroup comparison tests (two-sided
// Mann-Whitney rank-sum, Pearson chi-square) plus the per-feature
// heterogeneity summary with the both-medians highlighting rule.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "subpheno/domain.hpp"

namespace subpheno {

// ---------------------------------------------------------------------------
// Confusion and alignment
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> confusion_matrix(const std::vector<int>& a,
                                                              const std::vector<int>& b,
                                                              int k) {
    if (a.size() != b.size()) throw std::invalid_argument("confusion: size mismatch");
    std::vector<std::vector<std::size_t>> c(static_cast<std::size_t>(k),
                                            std::vector<std::size_t>(static_cast<std::size_t>(k), 0));
    for (std::size_t i = 0; i < a.size(); ++i)
        c[static_cast<std::size_t>(a[i])][static_cast<std::size_t>(b[i])]++;
    return c;
}

namespace detail {

// O(k^3) Hungarian method (potentials form) for a square max-sum assignment.
// Returns the permutation sigma with sigma[col] = row and the optimal total.
inline std::pair<std::vector<int>, double> hungarian_max(
    const std::vector<std::vector<double>>& score) {
    const int k = static_cast<int>(score.size());
    // Convert to min-cost.
    double top = 0.0;
    for (const auto& row : score)
        for (double v : row) top = std::max(top, v);
    std::vector<double> u(static_cast<std::size_t>(k) + 1, 0.0),
        v(static_cast<std::size_t>(k) + 1, 0.0);
    std::vector<int> p(static_cast<std::size_t>(k) + 1, 0),
        way(static_cast<std::size_t>(k) + 1, 0);
    auto cost = [&](int i, int j) { return top - score[static_cast<std::size_t>(i - 1)]
                                                      [static_cast<std::size_t>(j - 1)]; };
    for (int i = 1; i <= k; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(k) + 1,
                                 std::numeric_limits<double>::infinity());
        std::vector<char> used(static_cast<std::size_t>(k) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            int i0 = p[static_cast<std::size_t>(j0)], j1 = 0;
            double delta = std::numeric_limits<double>::infinity();
            for (int j = 1; j <= k; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = cost(i0, j) - u[static_cast<std::size_t>(i0)] -
                             v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= k; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<std::size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<std::size_t>(j0)];
            p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> sigma(static_cast<std::size_t>(k), -1);
    double total = 0.0;
    for (int j = 1; j <= k; ++j) {
        int i = p[static_cast<std::size_t>(j)];
        sigma[static_cast<std::size_t>(j - 1)] = i - 1;
        total += score[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
    }
    return {sigma, total};
}

}  // namespace detail

// Permutation sigma (sigma[b_label] = a_label) maximizing the diagonal of the
// a-vs-b confusion matrix, via optimal assignment. Ties resolve to the
// lexicographically smallest optimal permutation.
inline std::vector<int> align_labels(const ClusterAssignment& a, const ClusterAssignment& b) {
    if (a.k != b.k) throw std::invalid_argument("align_labels: differing k");
    if (a.labels.size() != b.labels.size())
        throw std::invalid_argument("align_labels: differing row sets");
    const int k = a.k;
    auto conf = confusion_matrix(a.labels, b.labels, k);
    std::vector<std::vector<double>> score(static_cast<std::size_t>(k),
                                           std::vector<double>(static_cast<std::size_t>(k)));
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
            score[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                static_cast<double>(conf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);

    const double opt = detail::hungarian_max(score).second;
    // Fix sigma[0], sigma[1], ... greedily to the smallest a-label that still
    // admits an optimal completion.
    std::vector<int> sigma(static_cast<std::size_t>(k), -1);
    std::vector<char> used(static_cast<std::size_t>(k), 0);
    double fixed_total = 0.0;
    for (int j = 0; j < k; ++j) {
        for (int i = 0; i < k; ++i) {
            if (used[static_cast<std::size_t>(i)]) continue;
            // Remaining subproblem over columns j+1..k-1 and unused rows.
            std::vector<int> rows;
            for (int r = 0; r < k; ++r)
                if (!used[static_cast<std::size_t>(r)] && r != i) rows.push_back(r);
            double rest = 0.0;
            if (!rows.empty()) {
                std::vector<std::vector<double>> sub(rows.size(),
                                                     std::vector<double>(rows.size()));
                for (std::size_t ri = 0; ri < rows.size(); ++ri)
                    for (int cj = j + 1; cj < k; ++cj)
                        sub[ri][static_cast<std::size_t>(cj - j - 1)] =
                            score[static_cast<std::size_t>(rows[ri])][static_cast<std::size_t>(cj)];
                rest = detail::hungarian_max(sub).second;
            }
            double total = fixed_total +
                           score[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] + rest;
            if (total >= opt - 1e-9) {
                sigma[static_cast<std::size_t>(j)] = i;
                used[static_cast<std::size_t>(i)] = 1;
                fixed_total += score[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                break;
            }
        }
    }
    return sigma;
}

inline ClusterAssignment apply_alignment(const ClusterAssignment& b,
                                         const std::vector<int>& sigma) {
    ClusterAssignment out = b;
    for (auto& l : out.labels) l = sigma[static_cast<std::size_t>(l)];
    return out;
}

// ---------------------------------------------------------------------------
// Kappa and agreement
// ---------------------------------------------------------------------------

// Multi-class Cohen's kappa on aligned labels. Degenerate case: when chance
// agreement is 1 (single shared label), kappa is 1 for perfect agreement and
// 0 otherwise.
inline double cohen_kappa(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || a.size() != b.size())
        throw std::invalid_argument("cohen_kappa: empty or mismatched input");
    int k = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        k = std::max({k, a[i] + 1, b[i] + 1});
    auto conf = confusion_matrix(a, b, k);
    const double n = static_cast<double>(a.size());
    double po = 0.0, pe = 0.0;
    for (int c = 0; c < k; ++c) {
        po += static_cast<double>(conf[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]);
        double row = 0.0, col = 0.0;
        for (int j = 0; j < k; ++j) {
            row += static_cast<double>(conf[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)]);
            col += static_cast<double>(conf[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]);
        }
        pe += (row / n) * (col / n);
    }
    po /= n;
    if (pe >= 1.0 - 1e-15) return po >= 1.0 - 1e-15 ? 1.0 : 0.0;
    return (po - pe) / (1.0 - pe);
}

struct AgreementReport {
    std::vector<std::vector<std::size_t>> confusion;  // a-label x aligned-b-label
    std::vector<int> alignment;                       // sigma[b_label] = a_label
    double kappa = 0.0;
    std::vector<std::vector<double>> row_percent;     // rows sum to 1
};

inline std::vector<std::vector<double>> agreement_matrix(const std::vector<int>& a,
                                                         const std::vector<int>& b_aligned,
                                                         int k) {
    auto conf = confusion_matrix(a, b_aligned, k);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(k),
                                         std::vector<double>(static_cast<std::size_t>(k), 0.0));
    for (int i = 0; i < k; ++i) {
        double row = 0.0;
        for (int j = 0; j < k; ++j)
            row += static_cast<double>(conf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        if (row == 0.0) continue;
        for (int j = 0; j < k; ++j)
            out[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                static_cast<double>(conf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) / row;
    }
    return out;
}

inline AgreementReport agreement_report(const ClusterAssignment& a,
                                        const ClusterAssignment& b) {
    AgreementReport rep;
    rep.alignment = align_labels(a, b);
    ClusterAssignment ba = apply_alignment(b, rep.alignment);
    rep.confusion = confusion_matrix(a.labels, ba.labels, a.k);
    rep.kappa = cohen_kappa(a.labels, ba.labels);
    rep.row_percent = agreement_matrix(a.labels, ba.labels, a.k);
    return rep;
}

// Adjusted Rand index between two partitions (any labelings).
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size() || a.empty())
        throw std::invalid_argument("adjusted_rand_index: bad input");
    int k = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
        k = std::max({k, a[i] + 1, b[i] + 1});
    auto conf = confusion_matrix(a, b, k);
    auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };
    double sum_cells = 0.0, sum_rows = 0.0, sum_cols = 0.0;
    std::vector<double> rows(static_cast<std::size_t>(k), 0.0), cols(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            double v = static_cast<double>(conf[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
            sum_cells += choose2(v);
            rows[static_cast<std::size_t>(i)] += v;
            cols[static_cast<std::size_t>(j)] += v;
        }
    for (int i = 0; i < k; ++i) {
        sum_rows += choose2(rows[static_cast<std::size_t>(i)]);
        sum_cols += choose2(cols[static_cast<std::size_t>(i)]);
    }
    double n2 = choose2(static_cast<double>(a.size()));
    double expected = sum_rows * sum_cols / n2;
    double max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index == expected) return 1.0;  // degenerate: single cluster both sides
    return (sum_cells - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Rank-sum test (two-sided Mann-Whitney U)
// ---------------------------------------------------------------------------

namespace detail {

// 2U for group x against group y, counting ties as 1 (i.e. one half each).
inline long long two_u(const std::vector<double>& x, const std::vector<double>& y) {
    long long u2 = 0;
    for (double xi : x)
        for (double yj : y) {
            if (xi > yj) u2 += 2;
            else if (xi == yj) u2 += 1;
        }
    return u2;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

constexpr std::size_t kRankTestExactLimit = 12;

// Two-sided Mann-Whitney rank-sum p-value: exact enumeration over all
// C(n, nx) group splits of the pooled sample when n <= 12; otherwise the
// normal approximation with tie and continuity corrections. All values
// identical yields p = 1.
inline double rank_test(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.empty() || y.empty()) throw std::invalid_argument("rank_test: empty sample");
    const std::size_t nx = x.size(), ny = y.size(), n = nx + ny;
    std::vector<double> pooled = x;
    pooled.insert(pooled.end(), y.begin(), y.end());

    const long long center2 = static_cast<long long>(nx) * static_cast<long long>(ny);
    const long long obs_dev = std::llabs(detail::two_u(x, y) - center2);

    if (n <= kRankTestExactLimit) {
        // Iterate over all nx-subsets of the pooled indices.
        std::vector<std::size_t> idx(nx);
        std::iota(idx.begin(), idx.end(), 0);
        std::size_t total = 0, extreme = 0;
        while (true) {
            std::vector<double> gx, gy;
            std::vector<char> in(n, 0);
            for (std::size_t i : idx) in[i] = 1;
            for (std::size_t i = 0; i < n; ++i)
                (in[i] ? gx : gy).push_back(pooled[i]);
            long long dev = std::llabs(detail::two_u(gx, gy) - center2);
            ++total;
            if (dev >= obs_dev) ++extreme;
            // next combination
            std::size_t i = nx;
            while (i > 0 && idx[i - 1] == n - nx + i - 1) --i;
            if (i == 0) break;
            ++idx[i - 1];
            for (std::size_t j = i; j < nx; ++j) idx[j] = idx[j - 1] + 1;
        }
        return static_cast<double>(extreme) / static_cast<double>(total);
    }

    // Normal approximation with tie correction.
    std::sort(pooled.begin(), pooled.end());
    double tie_term = 0.0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && pooled[j] == pooled[i]) ++j;
        double t = static_cast<double>(j - i);
        tie_term += t * t * t - t;
        i = j;
    }
    const double dn = static_cast<double>(n);
    double var = (static_cast<double>(nx) * static_cast<double>(ny) / 12.0) *
                 ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
    if (var <= 0.0) return 1.0;  // all values identical
    double dev = static_cast<double>(obs_dev) / 2.0;  // |U - mean|
    double z = std::max(0.0, dev - 0.5) / std::sqrt(var);
    return std::min(1.0, 2.0 * detail::normal_sf(z));
}

// ---------------------------------------------------------------------------
// Chi-square test
// ---------------------------------------------------------------------------

namespace detail {

// Regularized incomplete gamma functions (series / continued fraction).
inline double gamma_p_series(double a, double x) {
    double ap = a, sum = 1.0 / a, del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace detail

// Upper-tail regularized incomplete gamma Q(a, x) = P(X > x) for the gamma
// distribution; chi-square survival is Q(df/2, stat/2).
inline double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw std::invalid_argument("gamma_q: bad arguments");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - detail::gamma_p_series(a, x);
    return detail::gamma_q_contfrac(a, x);
}

struct ChiSquareResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

// Pearson chi-square test of independence on an r x c count table.
inline ChiSquareResult chi_square(const std::vector<std::vector<double>>& table) {
    const std::size_t r = table.size();
    if (r < 1) throw std::invalid_argument("chi_square: empty table");
    const std::size_t c = table[0].size();
    std::vector<double> row_sum(r, 0.0), col_sum(c, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (table[i].size() != c) throw std::invalid_argument("chi_square: ragged table");
        for (std::size_t j = 0; j < c; ++j) {
            if (table[i][j] < 0.0) throw std::invalid_argument("chi_square: negative count");
            row_sum[i] += table[i][j];
            col_sum[j] += table[i][j];
            total += table[i][j];
        }
    }
    for (double s : row_sum)
        if (s == 0.0) throw std::invalid_argument("chi_square: zero row marginal");
    for (double s : col_sum)
        if (s == 0.0) throw std::invalid_argument("chi_square: zero column marginal");

    ChiSquareResult res;
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) {
            double expected = row_sum[i] * col_sum[j] / total;
            double d = table[i][j] - expected;
            res.statistic += d * d / expected;
        }
    res.df = static_cast<int>((r - 1) * (c - 1));
    res.p_value = res.df == 0 ? 1.0 : gamma_q(res.df / 2.0, res.statistic / 2.0);
    return res;
}

// ---------------------------------------------------------------------------
// Heterogeneity summary
// ---------------------------------------------------------------------------

struct HeterogeneityRow {
    std::string feature;
    std::vector<double> subgroup_means;  // on standardized features
    double std_of_means = 0.0;
    double avg_neglog10_p = 0.0;
    bool highlighted = false;
};

inline double median(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median of empty set");
    std::sort(v.begin(), v.end());
    std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

constexpr double kPValueFloor = 1e-300;

// Per-feature subgroup means (standardized scale), dispersion of the means,
// and the average one-vs-rest rank-test -log10(p). A feature is highlighted
// when both measures exceed their across-feature medians.
inline std::vector<HeterogeneityRow> heterogeneity_summary(const FeatureMatrix& X_std,
                                                           const ClusterAssignment& a) {
    if (a.k < 2) throw std::invalid_argument("heterogeneity_summary: k must be >= 2");
    const std::size_t n = X_std.n_rows(), d = X_std.n_cols();
    const auto k = static_cast<std::size_t>(a.k);
    std::vector<HeterogeneityRow> rows(d);
    for (std::size_t c = 0; c < d; ++c) {
        HeterogeneityRow& row = rows[c];
        row.feature = X_std.column_ids[c];
        std::vector<std::vector<double>> values(k);
        for (std::size_t r = 0; r < n; ++r)
            values[static_cast<std::size_t>(a.labels[r])].push_back(X_std.at(r, c));
        row.subgroup_means.resize(k, 0.0);
        for (std::size_t g = 0; g < k; ++g) {
            double s = 0.0;
            for (double v : values[g]) s += v;
            row.subgroup_means[g] = values[g].empty()
                                        ? 0.0
                                        : s / static_cast<double>(values[g].size());
        }
        double mean_of_means = 0.0;
        for (double m : row.subgroup_means) mean_of_means += m;
        mean_of_means /= static_cast<double>(k);
        double ss = 0.0;
        for (double m : row.subgroup_means) ss += (m - mean_of_means) * (m - mean_of_means);
        row.std_of_means = std::sqrt(ss / static_cast<double>(k));

        double sum_nl = 0.0;
        for (std::size_t g = 0; g < k; ++g) {
            std::vector<double> rest;
            for (std::size_t h = 0; h < k; ++h)
                if (h != g) rest.insert(rest.end(), values[h].begin(), values[h].end());
            double p = values[g].empty() || rest.empty() ? 1.0
                                                         : rank_test(values[g], rest);
            sum_nl += -std::log10(std::max(p, kPValueFloor));
        }
        row.avg_neglog10_p = sum_nl / static_cast<double>(k);
    }
    std::vector<double> stds, avgs;
    for (const auto& r : rows) {
        stds.push_back(r.std_of_means);
        avgs.push_back(r.avg_neglog10_p);
    }
    double med_std = median(stds), med_avg = median(avgs);
    for (auto& r : rows)
        r.highlighted = r.std_of_means > med_std && r.avg_neglog10_p > med_avg;
    return rows;
}

}  // namespace subpheno
