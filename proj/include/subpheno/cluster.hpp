#pragma once

// Clustering: Lloyd k-means with k-means++ seeding, agglomerative clustering
// via the nearest-neighbor-chain algorithm with Lance-Williams updates,
// silhouette scoring, and silhouette-based selection of k.
//
// Cosine-metric k-means runs as euclidean k-means on L2-normalized rows
// (spherical approximation), which keeps Lloyd's convergence guarantee.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

// ---------------------------------------------------------------------------
// Distances
// ---------------------------------------------------------------------------

inline double squared_euclidean(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double distance(std::span<const double> a, std::span<const double> b, Metric metric) {
    if (a.size() != b.size())
        throw std::invalid_argument("distance: dimension mismatch");
    if (metric == Metric::euclidean) return std::sqrt(squared_euclidean(a, b));
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na <= 0.0 || nb <= 0.0) return 1.0;  // zero vector: define distance 1
    return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline std::span<const double> matrix_row(const FeatureMatrix& m, std::size_t r) {
    return {m.row(r), m.n_cols()};
}

// Rows scaled to unit L2 norm; zero rows are left as-is.
inline std::vector<double> l2_normalized_rows(const FeatureMatrix& m) {
    std::vector<double> out(m.values);
    const std::size_t d = m.n_cols();
    for (std::size_t r = 0; r < m.n_rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += out[r * d + c] * out[r * d + c];
        if (s > 0.0) {
            double inv = 1.0 / std::sqrt(s);
            for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= inv;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// k-means
// ---------------------------------------------------------------------------

struct KMeansModel {
    std::vector<double> centroids;  // k x d, row-major
    int k = 0;
    std::size_t dim = 0;
    Metric metric = Metric::euclidean;
    double inertia = 0.0;
    int n_iter = 0;
    std::uint64_t seed = 0;
    std::vector<double> inertia_trace;  // inertia after each assignment step

    std::span<const double> centroid(int c) const {
        return {centroids.data() + static_cast<std::size_t>(c) * dim, dim};
    }
};

struct KMeansOptions {
    int restarts = 10;
    int max_iter = 300;
    unsigned threads = 1;
};

namespace detail {

struct LloydResult {
    std::vector<double> centroids;
    std::vector<int> labels;
    double inertia = 0.0;
    int n_iter = 0;
    std::vector<double> trace;
};

inline std::vector<double> kmeanspp_seed(const std::vector<double>& X, std::size_t n,
                                         std::size_t d, int k, Rng& rng) {
    std::vector<double> centroids(static_cast<std::size_t>(k) * d);
    auto row = [&](std::size_t i) { return X.data() + i * d; };
    std::size_t first = static_cast<std::size_t>(rng.uniform_int(n));
    std::copy(row(first), row(first) + d, centroids.begin());
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i)
        d2[i] = squared_euclidean({row(i), d}, {centroids.data(), d});
    for (int c = 1; c < k; ++c) {
        double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick;
        if (total > 0.0) {
            double target = rng.uniform() * total;
            double cum = 0.0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                cum += d2[i];
                if (cum >= target) {
                    pick = i;
                    break;
                }
            }
        } else {
            pick = static_cast<std::size_t>(rng.uniform_int(n));
        }
        double* dest = centroids.data() + static_cast<std::size_t>(c) * d;
        std::copy(row(pick), row(pick) + d, dest);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_euclidean({row(i), d}, {dest, d}));
    }
    return centroids;
}

inline LloydResult lloyd(const std::vector<double>& X, std::size_t n, std::size_t d, int k,
                         Rng rng, const KMeansOptions& opt) {
    LloydResult res;
    res.centroids = kmeanspp_seed(X, n, d, k, rng);
    res.labels.assign(n, -1);
    std::vector<double> point_cost(n);
    std::vector<int> new_labels(n);
    auto row = [&](std::size_t i) { return std::span<const double>(X.data() + i * d, d); };

    for (int iter = 0; iter < opt.max_iter; ++iter) {
        // Assignment: nearest centroid, ties to the lower index.
        parallel_for(n, opt.threads, [&](std::size_t i) {
            double best = std::numeric_limits<double>::infinity();
            int best_c = 0;
            for (int c = 0; c < k; ++c) {
                double dd = squared_euclidean(
                    row(i), {res.centroids.data() + static_cast<std::size_t>(c) * d, d});
                if (dd < best) {
                    best = dd;
                    best_c = c;
                }
            }
            new_labels[i] = best_c;
            point_cost[i] = best;
        });
        double inertia = 0.0;
        for (std::size_t i = 0; i < n; ++i) inertia += point_cost[i];  // fixed order
        res.trace.push_back(inertia);
        res.inertia = inertia;
        res.n_iter = iter + 1;
        bool changed = new_labels != res.labels;
        res.labels = new_labels;
        if (!changed) break;

        // Update: centroid = member mean.
        std::vector<double> sums(static_cast<std::size_t>(k) * d, 0.0);
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < n; ++i) {
            auto c = static_cast<std::size_t>(res.labels[i]);
            counts[c]++;
            const double* p = X.data() + i * d;
            for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += p[j];
        }
        std::vector<std::size_t> empties;
        for (int c = 0; c < k; ++c) {
            auto cc = static_cast<std::size_t>(c);
            if (counts[cc] == 0) {
                empties.push_back(cc);
                continue;
            }
            for (std::size_t j = 0; j < d; ++j)
                res.centroids[cc * d + j] = sums[cc * d + j] / static_cast<double>(counts[cc]);
        }
        // Empty-cluster repair: reseed at the point currently farthest from
        // its own centroid (distinct point per empty cluster).
        if (!empties.empty()) {
            std::vector<std::size_t> order(n);
            std::iota(order.begin(), order.end(), 0);
            std::vector<double> cost(n);
            for (std::size_t i = 0; i < n; ++i) {
                auto c = static_cast<std::size_t>(res.labels[i]);
                cost[i] = squared_euclidean(row(i), {res.centroids.data() + c * d, d});
            }
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return cost[a] > cost[b]; });
            std::size_t next = 0;
            for (std::size_t cc : empties) {
                std::size_t p = order[next++];
                std::copy(X.data() + p * d, X.data() + p * d + d,
                          res.centroids.begin() + static_cast<std::ptrdiff_t>(cc * d));
            }
        }
    }
    return res;
}

}  // namespace detail

inline std::pair<KMeansModel, ClusterAssignment> kmeans(const FeatureMatrix& X, int k,
                                                        Metric metric, std::uint64_t seed,
                                                        const KMeansOptions& opt = {}) {
    const std::size_t n = X.n_rows(), d = X.n_cols();
    if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
    if (static_cast<std::size_t>(k) > n) throw std::invalid_argument("kmeans: k > n");
    const std::vector<double>& data =
        metric == Metric::cosine ? l2_normalized_rows(X) : X.values;

    Rng master(seed);
    detail::LloydResult best;
    best.inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < std::max(1, opt.restarts); ++r) {
        detail::LloydResult res =
            detail::lloyd(data, n, d, k, master.child(static_cast<std::uint64_t>(r)), opt);
        if (res.inertia < best.inertia) best = std::move(res);
    }

    KMeansModel model;
    model.centroids = std::move(best.centroids);
    model.k = k;
    model.dim = d;
    model.metric = metric;
    model.inertia = best.inertia;
    model.n_iter = best.n_iter;
    model.seed = seed;
    model.inertia_trace = std::move(best.trace);

    ClusterAssignment a;
    a.labels = std::move(best.labels);
    a.k = k;
    a.method = ClusterMethod::kmeans;
    a.metric = metric;
    a.objective = model.inertia;
    return {std::move(model), std::move(a)};
}

// ---------------------------------------------------------------------------
// Agglomerative clustering
// ---------------------------------------------------------------------------

enum class Linkage : std::uint8_t { ward, average, complete };

inline const char* to_string(Linkage l) {
    switch (l) {
        case Linkage::ward: return "ward";
        case Linkage::average: return "average";
        case Linkage::complete: return "complete";
    }
    return "?";
}

struct Dendrogram {
    struct Merge {
        int node_a = 0;  // node ids: 0..n-1 leaves, n+i for the i-th merge
        int node_b = 0;
        double height = 0.0;
        int size = 0;  // leaves under the new node
    };
    std::vector<Merge> merges;  // sorted by height (non-decreasing)
    Linkage linkage = Linkage::ward;
    std::size_t n_leaves = 0;
    bool monotonic = true;  // parent height >= child heights everywhere
};

inline Linkage default_linkage(Metric metric) {
    return metric == Metric::euclidean ? Linkage::ward : Linkage::average;
}

namespace detail {

// Full pairwise distance matrix under the metric, parallel over rows.
inline std::vector<double> pairwise_distances(const FeatureMatrix& X, Metric metric,
                                              unsigned threads) {
    const std::size_t n = X.n_rows();
    std::vector<double> dist(n * n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d = distance(matrix_row(X, i), matrix_row(X, j), metric);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    });
    return dist;
}

struct RawMerge {
    int repr_a = 0;  // smallest leaf index in each merged cluster
    int repr_b = 0;
    double height = 0.0;
    int size = 0;
};

// Nearest-neighbor-chain agglomeration; valid for the reducible linkages
// implemented here. Mutates `dist` in place.
inline std::vector<RawMerge> nn_chain(std::vector<double>& dist, std::size_t n,
                                      Linkage linkage) {
    std::vector<int> size(n, 1);
    std::vector<int> repr(n);
    std::vector<char> active(n, 1);
    std::iota(repr.begin(), repr.end(), 0);
    auto D = [&](std::size_t i, std::size_t j) -> double& { return dist[i * n + j]; };

    std::vector<RawMerge> merges;
    merges.reserve(n - 1);
    std::vector<std::size_t> chain;
    std::size_t n_active = n;
    std::size_t scan_start = 0;

    while (n_active > 1) {
        if (chain.empty()) {
            while (!active[scan_start]) ++scan_start;
            chain.push_back(scan_start);
        }
        std::size_t a = chain.back();
        // Nearest active neighbor; ties prefer the previous chain element
        // (forces reciprocity), then the lowest index.
        double best = std::numeric_limits<double>::infinity();
        std::size_t bi = n;
        for (std::size_t j = 0; j < n; ++j) {
            if (!active[j] || j == a) continue;
            if (D(a, j) < best) {
                best = D(a, j);
                bi = j;
            }
        }
        if (chain.size() >= 2) {
            std::size_t prev = chain[chain.size() - 2];
            if (active[prev] && D(a, prev) == best) bi = prev;
        }
        if (chain.size() >= 2 && bi == chain[chain.size() - 2]) {
            std::size_t b = bi;
            chain.pop_back();
            chain.pop_back();
            std::size_t keep = std::min(a, b), drop = std::max(a, b);
            double h = D(a, b);
            merges.push_back({std::min(repr[a], repr[b]), std::max(repr[a], repr[b]), h,
                              size[a] + size[b]});
            double sa = size[keep], sb = size[drop];
            for (std::size_t j = 0; j < n; ++j) {
                if (!active[j] || j == keep || j == drop) continue;
                double daj = D(keep, j), dbj = D(drop, j), dnew = 0.0;
                switch (linkage) {
                    case Linkage::average:
                        dnew = (sa * daj + sb * dbj) / (sa + sb);
                        break;
                    case Linkage::complete:
                        dnew = std::max(daj, dbj);
                        break;
                    case Linkage::ward: {
                        double sj = size[j];
                        double t = ((sa + sj) * daj * daj + (sb + sj) * dbj * dbj -
                                    sj * h * h) /
                                   (sa + sb + sj);
                        dnew = std::sqrt(std::max(0.0, t));
                        break;
                    }
                }
                D(keep, j) = dnew;
                D(j, keep) = dnew;
            }
            size[keep] += size[drop];
            repr[keep] = std::min(repr[keep], repr[drop]);
            active[drop] = 0;
            --n_active;
        } else {
            chain.push_back(bi);
        }
    }
    return merges;
}

}  // namespace detail

// Builds the full dendrogram for the given metric/linkage.
inline Dendrogram build_dendrogram(const FeatureMatrix& X, Metric metric, Linkage linkage,
                                   unsigned threads = 1) {
    if (linkage == Linkage::ward && metric != Metric::euclidean)
        throw std::invalid_argument("ward linkage requires the euclidean metric");
    const std::size_t n = X.n_rows();
    if (n == 0) throw std::invalid_argument("empty matrix");
    Dendrogram dg;
    dg.linkage = linkage;
    dg.n_leaves = n;
    if (n == 1) return dg;

    std::vector<double> dist = detail::pairwise_distances(X, metric, threads);
    std::vector<detail::RawMerge> raw = detail::nn_chain(dist, n, linkage);
    std::stable_sort(raw.begin(), raw.end(),
                     [](const detail::RawMerge& a, const detail::RawMerge& b) {
                         return a.height < b.height;
                     });

    // Re-label merges with dendrogram node ids via union-find over leaves.
    std::vector<int> parent(n);
    std::vector<int> node_of(n);
    std::vector<double> node_height(2 * n - 1, 0.0);
    std::iota(parent.begin(), parent.end(), 0);
    std::iota(node_of.begin(), node_of.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::size_t i = 0; i < raw.size(); ++i) {
        int ra = find(raw[i].repr_a), rb = find(raw[i].repr_b);
        int na = node_of[ra], nb = node_of[rb];
        int id = static_cast<int>(n + i);
        if (raw[i].height < node_height[na] || raw[i].height < node_height[nb])
            dg.monotonic = false;
        node_height[static_cast<std::size_t>(id)] = raw[i].height;
        dg.merges.push_back({std::min(na, nb), std::max(na, nb), raw[i].height, raw[i].size});
        parent[rb] = ra;
        node_of[ra] = id;
    }
    return dg;
}

// Cuts the dendrogram into k clusters. Labels are canonical: clusters ordered
// by their smallest row index. Cuts at successive k are nested.
inline ClusterAssignment cut_dendrogram(const Dendrogram& dg, int k, Metric metric) {
    const std::size_t n = dg.n_leaves;
    if (k < 1 || static_cast<std::size_t>(k) > n)
        throw std::invalid_argument("cut_dendrogram: bad k");
    std::vector<int> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    // Node id -> smallest leaf, filled as merges are applied.
    std::vector<int> leaf_of(2 * n - 1);
    std::iota(leaf_of.begin(), leaf_of.begin() + static_cast<std::ptrdiff_t>(n), 0);
    double cut_height = 0.0;
    std::size_t to_apply = n - static_cast<std::size_t>(k);
    for (std::size_t i = 0; i < to_apply; ++i) {
        const auto& m = dg.merges[i];
        int ra = find(leaf_of[static_cast<std::size_t>(m.node_a)]);
        int rb = find(leaf_of[static_cast<std::size_t>(m.node_b)]);
        parent[std::max(ra, rb)] = std::min(ra, rb);
        leaf_of[n + i] = std::min(ra, rb);
        cut_height = m.height;
    }
    std::vector<int> root_label(n, -1);
    ClusterAssignment a;
    a.labels.resize(n);
    int next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        int r = find(static_cast<int>(i));
        if (root_label[static_cast<std::size_t>(r)] < 0)
            root_label[static_cast<std::size_t>(r)] = next++;
        a.labels[i] = root_label[static_cast<std::size_t>(r)];
    }
    a.k = k;
    a.method = ClusterMethod::hierarchical;
    a.metric = metric;
    a.objective = cut_height;
    return a;
}

inline std::pair<Dendrogram, ClusterAssignment> hierarchical(const FeatureMatrix& X, int k,
                                                             Metric metric, Linkage linkage,
                                                             unsigned threads = 1) {
    Dendrogram dg = build_dendrogram(X, metric, linkage, threads);
    ClusterAssignment a = cut_dendrogram(dg, k, metric);
    return {std::move(dg), std::move(a)};
}

inline std::pair<Dendrogram, ClusterAssignment> hierarchical(const FeatureMatrix& X, int k,
                                                             Metric metric,
                                                             unsigned threads = 1) {
    return hierarchical(X, k, metric, default_linkage(metric), threads);
}

// ---------------------------------------------------------------------------
// Silhouette
// ---------------------------------------------------------------------------

struct SilhouetteReport {
    std::vector<double> widths;        // per evaluated point, in [-1, 1]
    std::vector<std::size_t> indices;  // rows the widths refer to
    double mean_width = 0.0;
};

// Silhouette widths; with subsample > 0 and n > subsample the score is
// computed on a seeded row subsample (distances within the sample).
inline SilhouetteReport silhouette(const FeatureMatrix& X, const ClusterAssignment& a,
                                   Metric metric, unsigned threads = 1,
                                   std::size_t subsample = 0, std::uint64_t seed = 0) {
    const std::size_t n = X.n_rows();
    if (a.labels.size() != n) throw std::invalid_argument("silhouette: label size mismatch");

    SilhouetteReport rep;
    rep.indices.resize(n);
    std::iota(rep.indices.begin(), rep.indices.end(), 0);
    if (subsample > 0 && n > subsample) {
        Rng rng = Rng(seed).child("silhouette_subsample");
        rng.shuffle(rep.indices);
        rep.indices.resize(subsample);
        std::sort(rep.indices.begin(), rep.indices.end());
    }
    const std::size_t m = rep.indices.size();

    const std::size_t k = static_cast<std::size_t>(a.k);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t s = 0; s < m; ++s)
        counts[static_cast<std::size_t>(a.labels[rep.indices[s]])]++;
    std::size_t nonempty = 0;
    for (auto c : counts) nonempty += c > 0 ? 1 : 0;
    if (nonempty < 2)
        throw std::invalid_argument("silhouette requires at least 2 non-empty clusters");

    rep.widths.assign(m, 0.0);
    parallel_for(m, threads, [&](std::size_t s) {
        const std::size_t i = rep.indices[s];
        const auto li = static_cast<std::size_t>(a.labels[i]);
        if (counts[li] <= 1) {
            rep.widths[s] = 0.0;  // singleton convention
            return;
        }
        std::vector<double> sum(k, 0.0);
        for (std::size_t t = 0; t < m; ++t) {
            if (t == s) continue;
            const std::size_t j = rep.indices[t];
            sum[static_cast<std::size_t>(a.labels[j])] +=
                distance(matrix_row(X, i), matrix_row(X, j), metric);
        }
        double ai = sum[li] / static_cast<double>(counts[li] - 1);
        double bi = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c) {
            if (c == li || counts[c] == 0) continue;
            bi = std::min(bi, sum[c] / static_cast<double>(counts[c]));
        }
        double denom = std::max(ai, bi);
        rep.widths[s] = denom > 0.0 ? (bi - ai) / denom : 0.0;
    });
    double total = 0.0;
    for (double w : rep.widths) total += w;
    rep.mean_width = m > 0 ? total / static_cast<double>(m) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Silhouette scan over k
// ---------------------------------------------------------------------------

struct KSelection {
    int best_k = 0;
    std::vector<std::pair<int, double>> profile;  // (k, mean silhouette width)
};

struct SelectKOptions {
    int k_min = 2;
    int k_max = 10;
    KMeansOptions kmeans;
    Linkage linkage = Linkage::ward;
    std::size_t silhouette_subsample = 0;
    unsigned threads = 1;
};

inline KSelection select_k(const FeatureMatrix& X, ClusterMethod method, Metric metric,
                           std::uint64_t seed, const SelectKOptions& opt = {}) {
    const std::size_t n = X.n_rows();
    if (opt.k_min < 2 || static_cast<std::size_t>(opt.k_max) > n - 1 || opt.k_min > opt.k_max)
        throw std::invalid_argument("select_k: k_range must lie within [2, n-1]");
    KSelection sel;
    Rng master(seed);
    Dendrogram dg;
    if (method == ClusterMethod::hierarchical)
        dg = build_dendrogram(X, metric, opt.linkage, opt.threads);
    double best = -std::numeric_limits<double>::infinity();
    for (int k = opt.k_min; k <= opt.k_max; ++k) {
        ClusterAssignment a;
        if (method == ClusterMethod::kmeans) {
            KMeansOptions ko = opt.kmeans;
            ko.threads = opt.threads;
            a = kmeans(X, k, metric, master.child("k" + std::to_string(k)).next_u64(), ko)
                    .second;
        } else {
            a = cut_dendrogram(dg, k, metric);
        }
        SilhouetteReport rep =
            silhouette(X, a, metric, opt.threads, opt.silhouette_subsample, seed);
        sel.profile.emplace_back(k, rep.mean_width);
        if (rep.mean_width > best) {  // strict: ties keep the smaller k
            best = rep.mean_width;
            sel.best_k = k;
        }
    }
    return sel;
}

}  // namespace subpheno
