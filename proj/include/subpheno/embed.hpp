#pragma once

// Exact (O(n^2)) t-SNE to 2D: per-row bandwidth calibration by binary search
// on the perplexity, symmetrized joint affinities, Student-t low-dimensional
// kernel, and gradient descent with momentum, adaptive per-coordinate gains,
// and early exaggeration.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "subpheno/cluster.hpp"
#include "subpheno/common.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

struct TsneConfig {
    double perplexity = 30.0;
    int iterations = 1000;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    int momentum_switch_iter = 250;
    double early_exaggeration = 12.0;
    int exaggeration_end_iter = 250;
    std::uint64_t seed = 0;
    Metric metric = Metric::euclidean;
    unsigned threads = 1;
    int kl_log_interval = 50;  // KL also recorded at the exaggeration end and final iter
};

struct SigmaCalibration {
    double sigma = 0.0;
    std::vector<double> p_row;  // conditional distribution over the neighbors
    double log2_perplexity = 0.0;
    bool saturated = false;  // bracket expansion failed; sigma is the bracket midpoint
};

namespace detail {

// Conditional row p_{j|i} for squared distances d2 and bandwidth sigma;
// returns the Shannon entropy (base 2).
inline double gaussian_row(const std::vector<double>& d2, double sigma,
                           std::vector<double>& p) {
    const std::size_t m = d2.size();
    p.resize(m);
    double min_d2 = *std::min_element(d2.begin(), d2.end());
    double beta = 1.0 / (2.0 * sigma * sigma);
    double sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        p[j] = std::exp(-(d2[j] - min_d2) * beta);
        sum += p[j];
    }
    double h = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
        p[j] /= sum;
        if (p[j] > 0.0) h -= p[j] * std::log2(p[j]);
    }
    return h;
}

}  // namespace detail

// Binary search for the bandwidth whose conditional distribution over the
// given neighbor distances has the target perplexity (within 1e-5 on the
// log2 scale, at most 50 bisections). The initial bracket grows from the mean
// distance, so the search is exactly scale-equivariant.
inline SigmaCalibration calibrate_sigma(const std::vector<double>& distances,
                                        double target_perplexity) {
    if (distances.empty()) throw std::invalid_argument("calibrate_sigma: empty row");
    for (double d : distances)
        if (!std::isfinite(d) || d < 0.0)
            throw std::invalid_argument("calibrate_sigma: non-finite or negative distance");

    std::vector<double> d2(distances.size());
    for (std::size_t j = 0; j < d2.size(); ++j) d2[j] = distances[j] * distances[j];

    const double target = std::log2(target_perplexity);
    const double tol = 1e-5;
    SigmaCalibration out;

    double mean = 0.0;
    for (double d : distances) mean += d;
    mean /= static_cast<double>(distances.size());
    if (mean <= 0.0) mean = 1.0;  // all-zero distances: any sigma is equivalent

    // Entropy grows with sigma. Expand the bracket from the mean distance.
    double lo = mean, hi = mean;
    std::vector<double> p;
    bool lo_ok = false, hi_ok = false;
    for (int i = 0; i < 64 && !hi_ok; ++i) {
        if (detail::gaussian_row(d2, hi, p) >= target) hi_ok = true;
        else hi *= 2.0;
    }
    for (int i = 0; i < 64 && !lo_ok; ++i) {
        if (detail::gaussian_row(d2, lo, p) <= target) lo_ok = true;
        else lo /= 2.0;
    }
    if (!lo_ok || !hi_ok) {
        out.saturated = true;
        out.sigma = 0.5 * (lo + hi);
        out.log2_perplexity = detail::gaussian_row(d2, out.sigma, out.p_row);
        return out;
    }

    double sigma = 0.5 * (lo + hi);
    double h = detail::gaussian_row(d2, sigma, out.p_row);
    for (int i = 0; i < 50 && std::abs(h - target) > tol; ++i) {
        if (h > target) hi = sigma;
        else lo = sigma;
        sigma = 0.5 * (lo + hi);
        h = detail::gaussian_row(d2, sigma, out.p_row);
    }
    out.sigma = sigma;
    out.log2_perplexity = h;
    return out;
}

struct TsneResult {
    std::vector<double> Y;  // n x 2, row-major, centered per axis
    std::size_t n = 0;
    std::vector<std::pair<int, double>> kl_trace;  // (iteration, KL(P||Q))
    std::vector<double> row_log2_perplexity;
    std::size_t saturated_rows = 0;
    std::vector<double> P;  // symmetrized joint affinities (n x n), sums to 1
};

namespace detail {

inline double kl_divergence(const std::vector<double>& P, const std::vector<double>& Y,
                            std::size_t n, unsigned threads) {
    std::vector<double> w(n, 0.0);  // per-row sums of the Student-t kernel
    std::vector<double> kl_row(n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double dx = Y[2 * i] - Y[2 * j];
            double dy = Y[2 * i + 1] - Y[2 * j + 1];
            s += 1.0 / (1.0 + dx * dx + dy * dy);
        }
        w[i] = s;
    });
    double W = 0.0;
    for (std::size_t i = 0; i < n; ++i) W += w[i];
    parallel_for(n, threads, [&](std::size_t i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double p = P[i * n + j];
            if (p <= 0.0) continue;
            double dx = Y[2 * i] - Y[2 * j];
            double dy = Y[2 * i + 1] - Y[2 * j + 1];
            double q = std::max((1.0 / (1.0 + dx * dx + dy * dy)) / W, 1e-12);
            acc += p * std::log(p / q);
        }
        kl_row[i] = acc;
    });
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i) kl += kl_row[i];
    return kl;
}

}  // namespace detail

// Symmetrized joint affinities for the configured metric and perplexity.
inline TsneResult tsne_affinities(const FeatureMatrix& X, const TsneConfig& cfg) {
    const std::size_t n = X.n_rows();
    if (n < 10) throw std::invalid_argument("tsne: need at least 10 rows");
    if (cfg.perplexity >= static_cast<double>(n) / 3.0)
        throw std::invalid_argument("tsne: perplexity must be below n/3");

    TsneResult res;
    res.n = n;
    res.row_log2_perplexity.assign(n, 0.0);
    std::vector<double> dist = detail::pairwise_distances(X, cfg.metric, cfg.threads);
    res.P.assign(n * n, 0.0);
    std::vector<std::uint8_t> saturated(n, 0);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        std::vector<double> row(n - 1);
        for (std::size_t j = 0, t = 0; j < n; ++j)
            if (j != i) row[t++] = dist[i * n + j];
        SigmaCalibration cal = calibrate_sigma(row, cfg.perplexity);
        res.row_log2_perplexity[i] = cal.log2_perplexity;
        saturated[i] = cal.saturated ? 1 : 0;
        for (std::size_t j = 0, t = 0; j < n; ++j)
            if (j != i) res.P[i * n + j] = cal.p_row[t++];
    });
    for (auto s : saturated) res.saturated_rows += s;
    // Joint distribution: p_ij = (p_{j|i} + p_{i|j}) / 2n.
    const double inv = 1.0 / (2.0 * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double p = (res.P[i * n + j] + res.P[j * n + i]) * inv;
            res.P[i * n + j] = p;
            res.P[j * n + i] = p;
        }
    return res;
}

inline TsneResult tsne(const FeatureMatrix& X, const TsneConfig& cfg) {
    TsneResult res = tsne_affinities(X, cfg);
    const std::size_t n = res.n;
    if (cfg.iterations < 250) throw std::invalid_argument("tsne: iterations must be >= 250");

    Rng rng = Rng(cfg.seed).child("tsne_init");
    res.Y.assign(2 * n, 0.0);
    for (auto& v : res.Y) v = 1e-4 * rng.normal();

    std::vector<double> update(2 * n, 0.0), gains(2 * n, 1.0), grad(2 * n, 0.0);
    std::vector<double> w_row(n, 0.0);

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        const double exaggeration = iter < cfg.exaggeration_end_iter ? cfg.early_exaggeration : 1.0;
        const double momentum =
            iter < cfg.momentum_switch_iter ? cfg.momentum_initial : cfg.momentum_final;

        // Student-t kernel row sums, then the exact gradient.
        parallel_for(n, cfg.threads, [&](std::size_t i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double dx = res.Y[2 * i] - res.Y[2 * j];
                double dy = res.Y[2 * i + 1] - res.Y[2 * j + 1];
                s += 1.0 / (1.0 + dx * dx + dy * dy);
            }
            w_row[i] = s;
        });
        double W = 0.0;
        for (std::size_t i = 0; i < n; ++i) W += w_row[i];

        parallel_for(n, cfg.threads, [&](std::size_t i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double dx = res.Y[2 * i] - res.Y[2 * j];
                double dy = res.Y[2 * i + 1] - res.Y[2 * j + 1];
                double wij = 1.0 / (1.0 + dx * dx + dy * dy);
                double mult = (exaggeration * res.P[i * n + j] - wij / W) * wij;
                gx += mult * dx;
                gy += mult * dy;
            }
            grad[2 * i] = 4.0 * gx;
            grad[2 * i + 1] = 4.0 * gy;
        });

        for (std::size_t c = 0; c < 2 * n; ++c) {
            bool same_sign = (grad[c] > 0.0) == (update[c] > 0.0);
            gains[c] = same_sign ? gains[c] * 0.8 : gains[c] + 0.2;
            gains[c] = std::max(gains[c], 0.01);
            update[c] = momentum * update[c] - cfg.learning_rate * gains[c] * grad[c];
        }
        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            res.Y[2 * i] += update[2 * i];
            res.Y[2 * i + 1] += update[2 * i + 1];
            mx += res.Y[2 * i];
            my += res.Y[2 * i + 1];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            res.Y[2 * i] -= mx;
            res.Y[2 * i + 1] -= my;
        }

        bool log_kl = (cfg.kl_log_interval > 0 && iter % cfg.kl_log_interval == 0) ||
                      iter == cfg.exaggeration_end_iter || iter == cfg.iterations - 1;
        if (log_kl)
            res.kl_trace.emplace_back(iter, detail::kl_divergence(res.P, res.Y, n, cfg.threads));
    }
    return res;
}

}  // namespace subpheno
