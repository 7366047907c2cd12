#pragma once

// From-scratch supervised learners used for cluster re-assignment and
// subgroup-specific outcome prediction: L2-regularized logistic regression
// (gradient descent + backtracking line search), random forest (Gini,
// bootstrap, per-node feature subsets), and Newton-boosted regression trees
// with the second-order split gain. Plus the evaluation metrics and the
// cross-model importance ranking.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "subpheno/common.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

// ---------------------------------------------------------------------------
// Split and slicing helpers
// ---------------------------------------------------------------------------

struct SplitIndices {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

// Stratified (per class) or plain 80:20-style split. Deterministic under the
// seed; class proportions preserved within one sample per class.
inline SplitIndices train_test_split(const std::vector<int>& y, double ratio,
                                     std::uint64_t seed, bool stratified = true) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw std::invalid_argument("train_test_split: ratio must be in (0,1)");
    if (y.empty()) throw std::invalid_argument("train_test_split: empty labels");
    Rng rng = Rng(seed).child("train_test_split");
    SplitIndices out;
    if (stratified) {
        int k = 1 + *std::max_element(y.begin(), y.end());
        if (k < 2) throw std::invalid_argument("train_test_split: need >= 2 classes");
        for (int c = 0; c < k; ++c) {
            std::vector<std::size_t> idx;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (y[i] == c) idx.push_back(i);
            rng.shuffle(idx);
            auto n_train = static_cast<std::size_t>(
                std::llround(ratio * static_cast<double>(idx.size())));
            for (std::size_t i = 0; i < idx.size(); ++i)
                (i < n_train ? out.train : out.test).push_back(idx[i]);
        }
    } else {
        std::vector<std::size_t> idx(y.size());
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        auto n_train =
            static_cast<std::size_t>(std::llround(ratio * static_cast<double>(idx.size())));
        for (std::size_t i = 0; i < idx.size(); ++i)
            (i < n_train ? out.train : out.test).push_back(idx[i]);
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    return out;
}

inline FeatureMatrix take_rows(const FeatureMatrix& X, const std::vector<std::size_t>& idx) {
    FeatureMatrix out;
    out.column_ids = X.column_ids;
    out.scaler = X.scaler;
    out.row_ids.reserve(idx.size());
    out.values.reserve(idx.size() * X.n_cols());
    out.missing.reserve(idx.size() * X.n_cols());
    for (std::size_t i : idx) {
        out.row_ids.push_back(X.row_ids[i]);
        out.values.insert(out.values.end(), X.row(i), X.row(i) + X.n_cols());
        out.missing.insert(out.missing.end(), X.missing.begin() + static_cast<std::ptrdiff_t>(i * X.n_cols()),
                           X.missing.begin() + static_cast<std::ptrdiff_t>((i + 1) * X.n_cols()));
    }
    return out;
}

template <typename T>
std::vector<T> take(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(v[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

struct LogisticModel {
    std::vector<double> weights;
    double bias = 0.0;
    double l2 = 1.0;
    int n_iter = 0;
    std::vector<double> loss_trace;  // non-increasing under the line search
};

namespace detail {

inline double sigmoid(double z) {
    return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

// Numerically stable mean logistic loss + L2 term (bias unregularized).
inline double logreg_loss(const FeatureMatrix& X, const std::vector<int>& y,
                          const std::vector<double>& w, double b, double l2) {
    const std::size_t n = X.n_rows(), d = X.n_cols();
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        const double* row = X.row(i);
        for (std::size_t j = 0; j < d; ++j) z += w[j] * row[j];
        // log(1 + e^z) - y z, stable for both signs
        loss += std::max(z, 0.0) - static_cast<double>(y[i]) * z + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(n);
    double reg = 0.0;
    for (double v : w) reg += v * v;
    return loss + 0.5 * l2 * reg / static_cast<double>(n);
}

inline void logreg_gradient(const FeatureMatrix& X, const std::vector<int>& y,
                            const std::vector<double>& w, double b, double l2,
                            std::vector<double>& gw, double& gb) {
    const std::size_t n = X.n_rows(), d = X.n_cols();
    gw.assign(d, 0.0);
    gb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        const double* row = X.row(i);
        for (std::size_t j = 0; j < d; ++j) z += w[j] * row[j];
        double r = sigmoid(z) - static_cast<double>(y[i]);
        for (std::size_t j = 0; j < d; ++j) gw[j] += r * row[j];
        gb += r;
    }
    for (std::size_t j = 0; j < d; ++j)
        gw[j] = gw[j] / static_cast<double>(n) + l2 * w[j] / static_cast<double>(n);
    gb /= static_cast<double>(n);
}

}  // namespace detail

// Gradient descent with Armijo backtracking on the L2-regularized mean
// logistic loss; stops at gradient infinity-norm <= 1e-6 or max_iter.
inline LogisticModel train_logreg(const FeatureMatrix& X, const std::vector<int>& y,
                                  double l2 = 1.0, int max_iter = 500) {
    const std::size_t d = X.n_cols();
    if (X.n_rows() != y.size()) throw std::invalid_argument("train_logreg: size mismatch");
    for (double v : X.values)
        if (!std::isfinite(v)) throw std::invalid_argument("train_logreg: non-finite feature");
    LogisticModel m;
    m.l2 = l2;
    m.weights.assign(d, 0.0);
    m.loss_trace.push_back(detail::logreg_loss(X, y, m.weights, m.bias, l2));

    std::vector<double> gw, trial(d);
    double gb = 0.0;
    for (int iter = 0; iter < max_iter; ++iter) {
        detail::logreg_gradient(X, y, m.weights, m.bias, l2, gw, gb);
        double gmax = std::abs(gb);
        for (double g : gw) gmax = std::max(gmax, std::abs(g));
        if (gmax <= 1e-6) break;
        double g2 = gb * gb;
        for (double g : gw) g2 += g * g;

        double base = m.loss_trace.back();
        double t = 1.0;
        double new_loss = base;
        double trial_b = m.bias;
        for (int bt = 0; bt < 60; ++bt) {
            for (std::size_t j = 0; j < d; ++j) trial[j] = m.weights[j] - t * gw[j];
            trial_b = m.bias - t * gb;
            new_loss = detail::logreg_loss(X, y, trial, trial_b, l2);
            if (new_loss <= base - 1e-4 * t * g2) break;
            t *= 0.5;
        }
        if (new_loss > base) break;  // line search failed; stay at the current point
        m.weights = trial;
        m.bias = trial_b;
        m.loss_trace.push_back(new_loss);
        m.n_iter = iter + 1;
    }
    return m;
}

// ---------------------------------------------------------------------------
// Decision trees (shared node layout)
// ---------------------------------------------------------------------------

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;              // regression leaf value (boosting)
    std::vector<double> class_prob;  // classification leaf distribution (forest)
    double gain = 0.0;               // split quality, used for importances
    std::size_t n_samples = 0;
};

using Tree = std::vector<TreeNode>;

inline int tree_leaf_for(const Tree& tree, const double* row) {
    int node = 0;
    while (tree[static_cast<std::size_t>(node)].feature >= 0) {
        const TreeNode& t = tree[static_cast<std::size_t>(node)];
        node = row[t.feature] <= t.threshold ? t.left : t.right;
    }
    return node;
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

struct ForestOptions {
    int n_trees = 200;
    int max_depth = 8;
    int features_per_split = 0;  // 0: round(sqrt(d))
    bool bootstrap = true;
    unsigned threads = 1;
};

struct ForestModel {
    std::vector<Tree> trees;
    int n_classes = 2;
    std::size_t dim = 0;
    ForestOptions options;
    std::uint64_t seed = 0;
};

namespace detail {

inline double gini(const std::vector<double>& counts, double total) {
    if (total <= 0.0) return 0.0;
    double g = 1.0;
    for (double c : counts) {
        double p = c / total;
        g -= p * p;
    }
    return g;
}

struct BestSplit {
    double gain = -1.0;
    int feature = -1;
    double threshold = 0.0;
    bool valid = false;
};

// Greedy Gini split over the sampled features; thresholds are midpoints of
// adjacent distinct observed values. Total order on (gain, feature,
// threshold) keeps the choice deterministic. Zero-gain splits are allowed
// (the node may still become separable deeper down).
inline BestSplit best_gini_split(const FeatureMatrix& X, const std::vector<int>& y,
                                 const std::vector<std::size_t>& idx,
                                 const std::vector<int>& features, int n_classes) {
    BestSplit best;
    const double n = static_cast<double>(idx.size());
    std::vector<double> total_counts(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i : idx) total_counts[static_cast<std::size_t>(y[i])] += 1.0;
    const double parent_imp = gini(total_counts, n);

    std::vector<std::size_t> order;
    for (int f : features) {
        order = idx;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return X.at(a, static_cast<std::size_t>(f)) < X.at(b, static_cast<std::size_t>(f));
        });
        std::vector<double> left(static_cast<std::size_t>(n_classes), 0.0);
        std::vector<double> right = total_counts;
        for (std::size_t pos = 0; pos + 1 < order.size(); ++pos) {
            auto cls = static_cast<std::size_t>(y[order[pos]]);
            left[cls] += 1.0;
            right[cls] -= 1.0;
            double v0 = X.at(order[pos], static_cast<std::size_t>(f));
            double v1 = X.at(order[pos + 1], static_cast<std::size_t>(f));
            if (v1 <= v0) continue;
            double nl = static_cast<double>(pos + 1), nr = n - nl;
            double gain = parent_imp - (nl * gini(left, nl) + nr * gini(right, nr)) / n;
            double threshold = 0.5 * (v0 + v1);
            if (!best.valid || gain > best.gain ||
                (gain == best.gain && (f < best.feature ||
                                       (f == best.feature && threshold < best.threshold)))) {
                best = {gain, f, threshold, true};
            }
        }
    }
    return best;
}

inline void grow_gini_tree(const FeatureMatrix& X, const std::vector<int>& y,
                           std::vector<std::size_t> idx, int n_classes, int depth,
                           int max_depth, int features_per_split, Rng& rng, Tree& tree,
                           int node_slot) {
    const int d = static_cast<int>(X.n_cols());
    std::vector<double> counts(static_cast<std::size_t>(n_classes), 0.0);
    for (std::size_t i : idx) counts[static_cast<std::size_t>(y[i])] += 1.0;
    tree[static_cast<std::size_t>(node_slot)].n_samples = idx.size();

    auto make_leaf = [&]() {
        TreeNode& nd = tree[static_cast<std::size_t>(node_slot)];
        nd.feature = -1;
        nd.class_prob.assign(static_cast<std::size_t>(n_classes), 0.0);
        for (int c = 0; c < n_classes; ++c)
            nd.class_prob[static_cast<std::size_t>(c)] =
                counts[static_cast<std::size_t>(c)] / static_cast<double>(idx.size());
    };

    bool pure = std::count_if(counts.begin(), counts.end(),
                              [](double c) { return c > 0.0; }) <= 1;
    if (pure || (max_depth >= 0 && depth >= max_depth) || idx.size() < 2) {
        make_leaf();
        return;
    }

    // Feature subset for this node (partial Fisher-Yates; draws happen in
    // depth-first node order, so the tree is a pure function of its rng).
    std::vector<int> all(static_cast<std::size_t>(d));
    std::iota(all.begin(), all.end(), 0);
    int take_n = std::min(features_per_split, d);
    for (int i = 0; i < take_n; ++i) {
        auto j = static_cast<std::size_t>(i) +
                 static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(d - i)));
        std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    std::vector<int> features(all.begin(), all.begin() + take_n);
    std::sort(features.begin(), features.end());

    BestSplit best = best_gini_split(X, y, idx, features, n_classes);
    if (!best.valid) {
        make_leaf();
        return;
    }
    std::vector<std::size_t> left_idx, right_idx;
    for (std::size_t i : idx)
        (X.at(i, static_cast<std::size_t>(best.feature)) <= best.threshold ? left_idx
                                                                           : right_idx)
            .push_back(i);
    int left_slot = static_cast<int>(tree.size());
    int right_slot = left_slot + 1;
    tree.emplace_back();
    tree.emplace_back();  // may reallocate: take the node reference afterwards
    TreeNode& nd = tree[static_cast<std::size_t>(node_slot)];
    nd.feature = best.feature;
    nd.threshold = best.threshold;
    nd.gain = best.gain * static_cast<double>(idx.size());
    nd.left = left_slot;
    nd.right = right_slot;
    grow_gini_tree(X, y, std::move(left_idx), n_classes, depth + 1, max_depth,
                   features_per_split, rng, tree, left_slot);
    grow_gini_tree(X, y, std::move(right_idx), n_classes, depth + 1, max_depth,
                   features_per_split, rng, tree, right_slot);
}

}  // namespace detail

inline ForestModel train_forest(const FeatureMatrix& X, const std::vector<int>& y,
                                std::uint64_t seed, const ForestOptions& opt = {}) {
    if (X.n_rows() != y.size()) throw std::invalid_argument("train_forest: size mismatch");
    const std::size_t n = X.n_rows();
    int n_classes = 1 + *std::max_element(y.begin(), y.end());
    n_classes = std::max(n_classes, 2);
    ForestModel model;
    model.n_classes = n_classes;
    model.dim = X.n_cols();
    model.options = opt;
    model.seed = seed;
    model.trees.assign(static_cast<std::size_t>(opt.n_trees), {});
    int fps = opt.features_per_split > 0
                  ? opt.features_per_split
                  : std::max(1, static_cast<int>(std::lround(std::sqrt(
                                    static_cast<double>(X.n_cols())))));
    Rng master = Rng(seed).child("forest");
    parallel_for(static_cast<std::size_t>(opt.n_trees), opt.threads, [&](std::size_t t) {
        Rng rng = master.child(t);
        std::vector<std::size_t> idx(n);
        if (opt.bootstrap) {
            for (std::size_t i = 0; i < n; ++i)
                idx[i] = static_cast<std::size_t>(rng.uniform_int(n));
            std::sort(idx.begin(), idx.end());
        } else {
            std::iota(idx.begin(), idx.end(), 0);
        }
        model.trees[t].emplace_back();
        detail::grow_gini_tree(X, y, std::move(idx), n_classes, 0, opt.max_depth, fps, rng,
                               model.trees[t], 0);
    });
    return model;
}

// ---------------------------------------------------------------------------
// Newton-boosted trees
// ---------------------------------------------------------------------------

struct GbdtOptions {
    int n_rounds = 300;
    double learning_rate = 0.1;
    int max_depth = 4;
    double l2_leaf = 1.0;
    unsigned threads = 1;
};

struct GbdtModel {
    int n_classes = 2;
    std::size_t dim = 0;
    std::vector<double> base_score;              // per class (binary: single logit)
    std::vector<std::vector<Tree>> rounds;       // [round][class_tree]
    GbdtOptions options;
    std::vector<double> loss_trace;  // mean train log-loss per round, non-increasing
};

namespace detail {

// Level-wise regression tree on (grad, hess) with presorted feature columns.
// Split gain is 0.5*(GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)); leaves take
// -G/(H+l).
class NewtonTreeBuilder {
public:
    NewtonTreeBuilder(const FeatureMatrix& X, GbdtOptions opt)
        : X_(X), opt_(opt), n_(X.n_rows()), d_(X.n_cols()) {
        sorted_.resize(d_);
        for (std::size_t f = 0; f < d_; ++f) {
            sorted_[f].resize(n_);
            std::iota(sorted_[f].begin(), sorted_[f].end(), 0);
            std::stable_sort(sorted_[f].begin(), sorted_[f].end(),
                             [&](std::size_t a, std::size_t b) {
                                 return X_.at(a, f) < X_.at(b, f);
                             });
        }
    }

    Tree build(const std::vector<double>& grad, const std::vector<double>& hess) const {
        Tree tree;
        tree.emplace_back();
        std::vector<int> node_of(n_, 0);

        struct NodeAgg {
            double G = 0.0, H = 0.0;
            std::size_t count = 0;
        };
        struct Candidate {
            double gain = 0.0;
            int feature = -1;
            double threshold = 0.0;
            bool valid = false;
        };

        std::vector<int> frontier = {0};
        for (int depth = 0; depth < opt_.max_depth && !frontier.empty(); ++depth) {
            // Slot lookup for nodes on the current level.
            std::vector<int> slot(tree.size(), -1);
            for (std::size_t s = 0; s < frontier.size(); ++s)
                slot[static_cast<std::size_t>(frontier[s])] = static_cast<int>(s);

            std::vector<NodeAgg> agg(frontier.size());
            for (std::size_t i = 0; i < n_; ++i) {
                int sl = slot[static_cast<std::size_t>(node_of[i])];
                if (sl < 0) continue;
                agg[static_cast<std::size_t>(sl)].G += grad[i];
                agg[static_cast<std::size_t>(sl)].H += hess[i];
                agg[static_cast<std::size_t>(sl)].count++;
            }

            // Best split per node per feature, features scanned in parallel.
            std::vector<std::vector<Candidate>> per_feature(
                d_, std::vector<Candidate>(frontier.size()));
            parallel_for(d_, opt_.threads, [&](std::size_t f) {
                std::vector<double> gl(frontier.size(), 0.0), hl(frontier.size(), 0.0);
                std::vector<std::size_t> cnt(frontier.size(), 0);
                std::vector<double> last_val(frontier.size(), 0.0);
                auto& cands = per_feature[f];
                for (std::size_t pos = 0; pos < n_; ++pos) {
                    std::size_t i = sorted_[f][pos];
                    int sl = slot[static_cast<std::size_t>(node_of[i])];
                    if (sl < 0) continue;
                    auto s = static_cast<std::size_t>(sl);
                    double v = X_.at(i, f);
                    if (cnt[s] > 0 && v > last_val[s] && cnt[s] < agg[s].count) {
                        double gr = agg[s].G - gl[s], hr = agg[s].H - hl[s];
                        double gain =
                            0.5 * (gl[s] * gl[s] / (hl[s] + opt_.l2_leaf) +
                                   gr * gr / (hr + opt_.l2_leaf) -
                                   agg[s].G * agg[s].G / (agg[s].H + opt_.l2_leaf));
                        if (!cands[s].valid || gain > cands[s].gain) {
                            cands[s] = {gain, static_cast<int>(f), 0.5 * (last_val[s] + v),
                                        true};
                        }
                    }
                    gl[s] += grad[i];
                    hl[s] += hess[i];
                    cnt[s]++;
                    last_val[s] = v;
                }
            });

            // Reduce across features in index order; ties favor the lower
            // feature, then the lower threshold.
            std::vector<Candidate> best(frontier.size());
            for (std::size_t f = 0; f < d_; ++f)
                for (std::size_t s = 0; s < frontier.size(); ++s) {
                    const Candidate& c = per_feature[f][s];
                    if (!c.valid) continue;
                    if (!best[s].valid || c.gain > best[s].gain ||
                        (c.gain == best[s].gain &&
                         (c.feature < best[s].feature ||
                          (c.feature == best[s].feature && c.threshold < best[s].threshold))))
                        best[s] = c;
                }

            std::vector<int> next_frontier;
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                int node = frontier[s];
                tree[static_cast<std::size_t>(node)].n_samples = agg[s].count;
                if (!best[s].valid || best[s].gain <= 1e-12) {
                    tree[static_cast<std::size_t>(node)].feature = -1;
                    tree[static_cast<std::size_t>(node)].value =
                        -agg[s].G / (agg[s].H + opt_.l2_leaf);
                    continue;
                }
                int left_slot = static_cast<int>(tree.size());
                int right_slot = left_slot + 1;
                tree.emplace_back();
                tree.emplace_back();  // may reallocate: write via fresh indexing
                TreeNode& nd = tree[static_cast<std::size_t>(node)];
                nd.feature = best[s].feature;
                nd.threshold = best[s].threshold;
                nd.gain = best[s].gain;
                nd.left = left_slot;
                nd.right = right_slot;
                next_frontier.push_back(left_slot);
                next_frontier.push_back(right_slot);
            }
            if (next_frontier.empty()) break;

            // Route rows to children; rows in finished leaves keep node_of as
            // is (their slot lookup fails next level).
            for (std::size_t i = 0; i < n_; ++i) {
                int node = node_of[i];
                const TreeNode& nd = tree[static_cast<std::size_t>(node)];
                if (nd.feature < 0) continue;
                if (slot[static_cast<std::size_t>(node)] < 0) continue;
                node_of[i] = X_.at(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold
                                 ? nd.left
                                 : nd.right;
            }
            frontier = std::move(next_frontier);
        }
        // Finalize leaf values: nodes created on the last level (and any
        // other leaves) take -G/(H+l) over the rows they receive.
        std::vector<double> G(tree.size(), 0.0), H(tree.size(), 0.0);
        std::vector<std::size_t> cnt(tree.size(), 0);
        for (std::size_t i = 0; i < n_; ++i) {
            int node = node_of[i];
            // Descend in case the row was not routed on the final level.
            while (tree[static_cast<std::size_t>(node)].feature >= 0) {
                const TreeNode& nd = tree[static_cast<std::size_t>(node)];
                node = X_.at(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold
                           ? nd.left
                           : nd.right;
            }
            node_of[i] = node;
            G[static_cast<std::size_t>(node)] += grad[i];
            H[static_cast<std::size_t>(node)] += hess[i];
            cnt[static_cast<std::size_t>(node)]++;
        }
        for (std::size_t t = 0; t < tree.size(); ++t) {
            if (tree[t].feature >= 0) continue;
            if (cnt[t] > 0) {
                tree[t].value = -G[t] / (H[t] + opt_.l2_leaf);
                tree[t].n_samples = cnt[t];
            }
        }
        return tree;
    }

private:
    const FeatureMatrix& X_;
    GbdtOptions opt_;
    std::size_t n_, d_;
    std::vector<std::vector<std::size_t>> sorted_;
};

inline double tree_predict(const Tree& tree, const double* row) {
    return tree[static_cast<std::size_t>(tree_leaf_for(tree, row))].value;
}

constexpr double kProbClamp = 1e-12;

}  // namespace detail

// Newton boosting on the logistic loss (binary) or softmax loss (n_classes
// >= 3, one tree per class per round). The base score is the class-prior
// log-odds; with a single class present no trees are grown and the model
// predicts the prior.
inline GbdtModel train_gbdt(const FeatureMatrix& X, const std::vector<int>& y, int n_classes,
                            const GbdtOptions& opt = {}) {
    const std::size_t n = X.n_rows();
    if (n != y.size()) throw std::invalid_argument("train_gbdt: size mismatch");
    for (int label : y)
        if (label < 0 || label >= n_classes)
            throw std::invalid_argument("train_gbdt: label outside [0, n_classes)");

    GbdtModel model;
    model.n_classes = n_classes;
    model.dim = X.n_cols();
    model.options = opt;

    std::vector<double> prior(static_cast<std::size_t>(n_classes), 0.0);
    for (int label : y) prior[static_cast<std::size_t>(label)] += 1.0;
    for (auto& p : prior) p /= static_cast<double>(n);
    int present = static_cast<int>(std::count_if(prior.begin(), prior.end(),
                                                 [](double p) { return p > 0.0; }));

    auto clamp_log = [](double p) {
        return std::log(std::clamp(p, detail::kProbClamp, 1.0 - detail::kProbClamp));
    };

    if (n_classes == 2) {
        model.base_score = {clamp_log(prior[1]) - clamp_log(1.0 - prior[1])};
    } else {
        model.base_score.resize(static_cast<std::size_t>(n_classes));
        for (int c = 0; c < n_classes; ++c)
            model.base_score[static_cast<std::size_t>(c)] =
                clamp_log(prior[static_cast<std::size_t>(c)]);
    }
    if (present < 2 || opt.n_rounds == 0) return model;  // prior-only model

    detail::NewtonTreeBuilder builder(X, opt);

    if (n_classes == 2) {
        std::vector<double> f(n, model.base_score[0]);
        std::vector<double> grad(n), hess(n);
        for (int round = 0; round < opt.n_rounds; ++round) {
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double p = detail::sigmoid(f[i]);
                grad[i] = p - static_cast<double>(y[i]);
                hess[i] = std::max(p * (1.0 - p), 1e-16);
                double py = y[i] == 1 ? p : 1.0 - p;
                loss -= std::log(std::max(py, detail::kProbClamp));
            }
            model.loss_trace.push_back(loss / static_cast<double>(n));
            Tree tree = builder.build(grad, hess);
            for (std::size_t i = 0; i < n; ++i)
                f[i] += opt.learning_rate * detail::tree_predict(tree, X.row(i));
            model.rounds.push_back({std::move(tree)});
        }
    } else {
        const auto k = static_cast<std::size_t>(n_classes);
        std::vector<double> f(n * k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < k; ++c) f[i * k + c] = model.base_score[c];
        std::vector<double> p(n * k), grad(n), hess(n);
        for (int round = 0; round < opt.n_rounds; ++round) {
            double loss = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double mx = f[i * k];
                for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, f[i * k + c]);
                double sum = 0.0;
                for (std::size_t c = 0; c < k; ++c) {
                    p[i * k + c] = std::exp(f[i * k + c] - mx);
                    sum += p[i * k + c];
                }
                for (std::size_t c = 0; c < k; ++c) p[i * k + c] /= sum;
                loss -= std::log(
                    std::max(p[i * k + static_cast<std::size_t>(y[i])], detail::kProbClamp));
            }
            model.loss_trace.push_back(loss / static_cast<double>(n));
            std::vector<Tree> round_trees;
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t i = 0; i < n; ++i) {
                    double pc = p[i * k + c];
                    grad[i] = pc - (static_cast<std::size_t>(y[i]) == c ? 1.0 : 0.0);
                    hess[i] = std::max(pc * (1.0 - pc), 1e-16);
                }
                round_trees.push_back(builder.build(grad, hess));
            }
            for (std::size_t c = 0; c < k; ++c)
                for (std::size_t i = 0; i < n; ++i)
                    f[i * k + c] +=
                        opt.learning_rate * detail::tree_predict(round_trees[c], X.row(i));
            model.rounds.push_back(std::move(round_trees));
        }
    }
    return model;
}

// ---------------------------------------------------------------------------
// Prediction (all models return row-stochastic n x n_classes probabilities)
// ---------------------------------------------------------------------------

inline std::vector<double> predict_proba(const LogisticModel& m, const FeatureMatrix& X) {
    if (X.n_cols() != m.weights.size())
        throw std::invalid_argument("predict_proba: dimension mismatch");
    std::vector<double> out(X.n_rows() * 2);
    for (std::size_t i = 0; i < X.n_rows(); ++i) {
        double z = m.bias;
        const double* row = X.row(i);
        for (std::size_t j = 0; j < m.weights.size(); ++j) z += m.weights[j] * row[j];
        double p = detail::sigmoid(z);
        out[i * 2] = 1.0 - p;
        out[i * 2 + 1] = p;
    }
    return out;
}

inline std::vector<double> predict_proba(const ForestModel& m, const FeatureMatrix& X) {
    if (X.n_cols() != m.dim) throw std::invalid_argument("predict_proba: dimension mismatch");
    const auto k = static_cast<std::size_t>(m.n_classes);
    std::vector<double> out(X.n_rows() * k, 0.0);
    for (std::size_t i = 0; i < X.n_rows(); ++i) {
        const double* row = X.row(i);
        for (const Tree& tree : m.trees) {
            const TreeNode& leaf =
                tree[static_cast<std::size_t>(tree_leaf_for(tree, row))];
            for (std::size_t c = 0; c < k; ++c) out[i * k + c] += leaf.class_prob[c];
        }
        for (std::size_t c = 0; c < k; ++c) out[i * k + c] /= static_cast<double>(m.trees.size());
    }
    return out;
}

inline std::vector<double> predict_proba(const GbdtModel& m, const FeatureMatrix& X) {
    if (X.n_cols() != m.dim) throw std::invalid_argument("predict_proba: dimension mismatch");
    const std::size_t n = X.n_rows();
    const auto k = static_cast<std::size_t>(m.n_classes);
    std::vector<double> out(n * k, 0.0);
    if (m.n_classes == 2) {
        for (std::size_t i = 0; i < n; ++i) {
            double f = m.base_score[0];
            for (const auto& round : m.rounds)
                f += m.options.learning_rate * detail::tree_predict(round[0], X.row(i));
            double p = detail::sigmoid(f);
            out[i * 2] = 1.0 - p;
            out[i * 2 + 1] = p;
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> f(m.base_score);
            for (const auto& round : m.rounds)
                for (std::size_t c = 0; c < k; ++c)
                    f[c] += m.options.learning_rate * detail::tree_predict(round[c], X.row(i));
            double mx = *std::max_element(f.begin(), f.end());
            double sum = 0.0;
            for (std::size_t c = 0; c < k; ++c) {
                f[c] = std::exp(f[c] - mx);
                sum += f[c];
            }
            for (std::size_t c = 0; c < k; ++c) out[i * k + c] = f[c] / sum;
        }
    }
    return out;
}

template <typename Model>
std::vector<int> predict_label(const Model& m, const FeatureMatrix& X) {
    std::vector<double> proba = predict_proba(m, X);
    const std::size_t k = proba.size() / X.n_rows();
    std::vector<int> out(X.n_rows(), 0);
    for (std::size_t i = 0; i < X.n_rows(); ++i) {
        double best = proba[i * k];
        for (std::size_t c = 1; c < k; ++c)
            if (proba[i * k + c] > best) {  // ties keep the lower label
                best = proba[i * k + c];
                out[i] = static_cast<int>(c);
            }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// F1 on the designated positive class; 0 when there are no true positives.
inline double f_score(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                      int positive = 1) {
    if (y_true.size() != y_pred.size()) throw std::invalid_argument("f_score: size mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        bool t = y_true[i] == positive, p = y_pred[i] == positive;
        tp += t && p;
        fp += !t && p;
        fn += t && !p;
    }
    if (tp == 0) return 0.0;
    double precision = tp / (tp + fp);
    double recall = tp / (tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

inline double f_macro(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    return 0.5 * (f_score(y_true, y_pred, 0) + f_score(y_true, y_pred, 1));
}

inline double f_macro_multiclass(const std::vector<int>& y_true,
                                 const std::vector<int>& y_pred, int k) {
    double sum = 0.0;
    for (int c = 0; c < k; ++c) sum += f_score(y_true, y_pred, c);
    return sum / static_cast<double>(k);
}

inline double accuracy(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
    std::size_t ok = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) ok += y_true[i] == y_pred[i] ? 1 : 0;
    return static_cast<double>(ok) / static_cast<double>(y_true.size());
}

// AUROC via the rank formulation (Mann-Whitney); tied scores share average
// ranks, which counts reversed pairs at one half.
inline double auroc(const std::vector<int>& y_true, const std::vector<double>& scores) {
    if (y_true.size() != scores.size()) throw std::invalid_argument("auroc: size mismatch");
    double n_pos = 0, n_neg = 0;
    for (int y : y_true) (y == 1 ? n_pos : n_neg) += 1.0;
    if (n_pos == 0 || n_neg == 0)
        throw std::invalid_argument("auroc: both classes must be present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t)
            if (y_true[order[t]] == 1) rank_sum_pos += avg_rank;
        i = j;
    }
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

// ---------------------------------------------------------------------------
// Importances and the cross-model ranking
// ---------------------------------------------------------------------------

inline std::vector<double> feature_importance(const LogisticModel& m) {
    std::vector<double> out(m.weights.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = std::abs(m.weights[j]);
    return out;
}

inline std::vector<double> feature_importance(const ForestModel& m) {
    std::vector<double> out(m.dim, 0.0);
    for (const Tree& tree : m.trees)
        for (const TreeNode& nd : tree)
            if (nd.feature >= 0) out[static_cast<std::size_t>(nd.feature)] += nd.gain;
    return out;
}

inline std::vector<double> feature_importance(const GbdtModel& m) {
    std::vector<double> out(m.dim, 0.0);
    for (const auto& round : m.rounds)
        for (const Tree& tree : round)
            for (const TreeNode& nd : tree)
                if (nd.feature >= 0) out[static_cast<std::size_t>(nd.feature)] += nd.gain;
    return out;
}

struct ImportanceRanking {
    std::vector<std::vector<double>> per_model_ranks;  // rank d = most important
    std::vector<double> mean_rank;
};

// Ascending ranks within each model (1 = least important, d = most); ties
// share the average rank. The mean over models is the ensemble rank.
inline std::vector<double> rank_scores(const std::vector<double>& scores) {
    const std::size_t d = scores.size();
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> ranks(d, 0.0);
    std::size_t i = 0;
    while (i < d) {
        std::size_t j = i;
        while (j < d && scores[order[j]] == scores[order[i]]) ++j;
        double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
        for (std::size_t t = i; t < j; ++t) ranks[order[t]] = avg;
        i = j;
    }
    return ranks;
}

inline ImportanceRanking ensemble_rank(const std::vector<std::vector<double>>& importances) {
    if (importances.empty()) throw std::invalid_argument("ensemble_rank: no models");
    const std::size_t d = importances[0].size();
    ImportanceRanking out;
    for (const auto& scores : importances) {
        if (scores.size() != d)
            throw std::invalid_argument("ensemble_rank: feature sets differ");
        out.per_model_ranks.push_back(rank_scores(scores));
    }
    out.mean_rank.assign(d, 0.0);
    for (const auto& ranks : out.per_model_ranks)
        for (std::size_t j = 0; j < d; ++j) out.mean_rank[j] += ranks[j];
    for (auto& r : out.mean_rank) r /= static_cast<double>(out.per_model_ranks.size());
    return out;
}

}  // namespace subpheno
