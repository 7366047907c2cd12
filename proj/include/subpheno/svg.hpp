#pragma once

// Minimal self-contained SVG emission for the report plots: silhouette-vs-k
// line, 2x2 embedding scatter grid, agreement heatmap, and the importance
// rank heatmap. No external plotting stack; plot data is always also present
// as CSV in the bundle.

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "subpheno/pipeline.hpp"

namespace subpheno::svg {

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

class Canvas {
public:
    Canvas(double width, double height) : w_(width), h_(height) {
        body_ += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w_) +
                 "\" height=\"" + num(h_) + "\" viewBox=\"0 0 " + num(w_) + " " + num(h_) +
                 "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    }

    void line(double x1, double y1, double x2, double y2, const std::string& stroke,
              double width = 1.0) {
        body_ += "<line x1=\"" + num(x1) + "\" y1=\"" + num(y1) + "\" x2=\"" + num(x2) +
                 "\" y2=\"" + num(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
                 num(width) + "\"/>\n";
    }
    void circle(double cx, double cy, double r, const std::string& fill) {
        body_ += "<circle cx=\"" + num(cx) + "\" cy=\"" + num(cy) + "\" r=\"" + num(r) +
                 "\" fill=\"" + fill + "\"/>\n";
    }
    void rect(double x, double y, double w, double h, const std::string& fill) {
        body_ += "<rect x=\"" + num(x) + "\" y=\"" + num(y) + "\" width=\"" + num(w) +
                 "\" height=\"" + num(h) + "\" fill=\"" + fill + "\"/>\n";
    }
    void text(double x, double y, const std::string& s, double size = 12.0,
              const std::string& anchor = "start") {
        body_ += "<text x=\"" + num(x) + "\" y=\"" + num(y) + "\" font-size=\"" + num(size) +
                 "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" + escape(s) +
                 "</text>\n";
    }

    void save(const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        out << body_ << "</svg>\n";
    }

private:
    double w_, h_;
    std::string body_;
};

inline const char* cluster_color(int label) {
    static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    if (label < 0) return "#cccccc";
    return palette[label % 10];
}

// Blue -> white -> red diverging ramp on [0, 1].
inline std::string heat_color(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto channel = [](double v) { return static_cast<int>(std::lround(v * 255.0)); };
    double r, g, bch;
    if (t < 0.5) {
        double u = t / 0.5;
        r = 0.2 + 0.8 * u;
        g = 0.4 + 0.6 * u;
        bch = 1.0;
    } else {
        double u = (t - 0.5) / 0.5;
        r = 1.0;
        g = 1.0 - 0.6 * u;
        bch = 1.0 - 0.8 * u;
    }
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", channel(r), channel(g), channel(bch));
    return buf;
}

inline void plot_silhouette(const KSelection& sel, const std::string& path) {
    const double W = 560, H = 360, L = 60, B = 300, T = 40, R = 520;
    Canvas c(W, H);
    double lo = 0.0, hi = 0.0;
    for (const auto& [k, w] : sel.profile) {
        lo = std::min(lo, w);
        hi = std::max(hi, w);
    }
    if (hi == lo) hi = lo + 1.0;
    double k0 = sel.profile.front().first, k1 = sel.profile.back().first;
    auto X = [&](double k) { return L + (k - k0) / std::max(1.0, k1 - k0) * (R - L); };
    auto Y = [&](double w) { return B - (w - lo) / (hi - lo) * (B - T); };
    c.line(L, B, R, B, "#333333");
    c.line(L, T, L, B, "#333333");
    c.text(W / 2, 20, "Mean silhouette width by number of clusters", 14, "middle");
    for (const auto& [k, w] : sel.profile) {
        c.text(X(k), B + 18, std::to_string(k), 11, "middle");
        c.line(X(k), B, X(k), B + 4, "#333333");
    }
    for (int t = 0; t <= 4; ++t) {
        double w = lo + (hi - lo) * t / 4.0;
        c.text(L - 8, Y(w) + 4, num(w), 10, "end");
        c.line(L - 4, Y(w), L, Y(w), "#333333");
    }
    for (std::size_t i = 1; i < sel.profile.size(); ++i)
        c.line(X(sel.profile[i - 1].first), Y(sel.profile[i - 1].second),
               X(sel.profile[i].first), Y(sel.profile[i].second), "#1f77b4", 2.0);
    for (const auto& [k, w] : sel.profile)
        c.circle(X(k), Y(w), k == sel.best_k ? 5.0 : 3.0,
                 k == sel.best_k ? "#d62728" : "#1f77b4");
    c.text(R, B + 18, "k", 12, "middle");
    c.save(path);
}

// 2x2 grid: rows = clustering method (k-means / hierarchical), columns = the
// embedding metric. Labels are painted on the shared per-metric projection.
inline void plot_embedding_grid(const std::vector<EmbeddingResult>& embeddings,
                                const std::string& path) {
    const double panel = 320, margin = 50, W = margin + 2 * panel + 20, H = margin + 2 * panel + 30;
    Canvas c(W, H);
    for (std::size_t col = 0; col < embeddings.size() && col < 2; ++col) {
        const EmbeddingResult& emb = embeddings[col];
        double xmin = 0, xmax = 0, ymin = 0, ymax = 0;
        for (std::size_t i = 0; i < emb.row_ids.size(); ++i) {
            xmin = std::min(xmin, emb.coords[2 * i]);
            xmax = std::max(xmax, emb.coords[2 * i]);
            ymin = std::min(ymin, emb.coords[2 * i + 1]);
            ymax = std::max(ymax, emb.coords[2 * i + 1]);
        }
        if (xmax == xmin) xmax = xmin + 1;
        if (ymax == ymin) ymax = ymin + 1;
        for (int row = 0; row < 2; ++row) {
            double ox = margin + static_cast<double>(col) * (panel + 10);
            double oy = margin + static_cast<double>(row) * (panel + 10);
            c.rect(ox, oy, panel, panel, "#fafafa");
            const std::vector<int>& labels = row == 0 ? emb.kmeans_labels : emb.hier_labels;
            for (std::size_t i = 0; i < emb.row_ids.size(); ++i) {
                double x = ox + (emb.coords[2 * i] - xmin) / (xmax - xmin) * (panel - 10) + 5;
                double y = oy + (emb.coords[2 * i + 1] - ymin) / (ymax - ymin) * (panel - 10) + 5;
                c.circle(x, y, 1.6, cluster_color(labels[i]));
            }
            std::string title = std::string(row == 0 ? "k-means, " : "hierarchical, ") +
                                to_string(emb.metric);
            c.text(ox + panel / 2, oy - 6, title, 12, "middle");
        }
    }
    c.text(W / 2, 20, "t-SNE projection with cluster labels", 14, "middle");
    c.save(path);
}

inline void plot_agreement_heatmap(const AgreementReport& rep, const std::string& path) {
    const std::size_t k = rep.row_percent.size();
    const double cell = 60, L = 110, T = 70;
    const double W = L + cell * static_cast<double>(k) + 40;
    const double H = T + cell * static_cast<double>(k) + 40;
    Canvas c(W, H);
    c.text(W / 2, 24, "Agreement between k-means and hierarchical labels", 13, "middle");
    for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t col = 0; col < k; ++col) {
            double v = rep.row_percent[r][col];
            c.rect(L + cell * static_cast<double>(col), T + cell * static_cast<double>(r),
                   cell - 2, cell - 2, heat_color(v));
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%.0f%%", 100.0 * v);
            c.text(L + cell * static_cast<double>(col) + cell / 2,
                   T + cell * static_cast<double>(r) + cell / 2 + 4, buf, 11, "middle");
        }
        c.text(L - 8, T + cell * static_cast<double>(r) + cell / 2 + 4,
               "kcluster_" + std::to_string(r), 11, "end");
        c.text(L + cell * static_cast<double>(r) + cell / 2, T - 8,
               "hcluster_" + std::to_string(r), 11, "middle");
    }
    c.save(path);
}

inline void plot_importance_heatmap(const std::vector<ScopeImportance>& importances,
                                    const std::string& path) {
    if (importances.empty()) {
        Canvas c(200, 60);
        c.text(100, 30, "no importance data", 12, "middle");
        c.save(path);
        return;
    }
    const auto& features = importances[0].features;
    const double row_h = 14, L = 300, T = 60;
    const double W = L + 90.0 * static_cast<double>(importances.size()) + 30;
    const double H = T + row_h * static_cast<double>(features.size()) + 30;
    Canvas c(W, H);
    c.text(W / 2, 24, "Ensemble mean rank of feature importance", 13, "middle");
    double d = static_cast<double>(features.size());
    for (std::size_t s = 0; s < importances.size(); ++s)
        c.text(L + 90.0 * static_cast<double>(s) + 40, T - 8, importances[s].scope, 11,
               "middle");
    const auto& catalog = feature_catalog();
    for (std::size_t f = 0; f < features.size(); ++f) {
        c.text(L - 8, T + row_h * static_cast<double>(f) + row_h - 4,
               catalog.display_name(features[f]), 9, "end");
        for (std::size_t s = 0; s < importances.size(); ++s) {
            double rank = importances[s].ranking.mean_rank[f];
            c.rect(L + 90.0 * static_cast<double>(s), T + row_h * static_cast<double>(f),
                   80, row_h - 2, heat_color((rank - 1.0) / std::max(1.0, d - 1.0)));
        }
    }
    c.save(path);
}

inline void write_plots(const ReportBundle& bundle, const std::string& dir) {
    plot_silhouette(bundle.discovery.selection, dir + "/silhouette.svg");
    plot_embedding_grid(bundle.discovery.embeddings, dir + "/embedding.svg");
    plot_agreement_heatmap(bundle.discovery.agreement, dir + "/agreement.svg");
    plot_importance_heatmap(bundle.modeling.importances, dir + "/importance_ranks.svg");
}

}  // namespace subpheno::svg
