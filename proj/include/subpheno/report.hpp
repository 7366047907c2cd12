#pragma once

// Read-only rendering of a report bundle as text tables: a demographics and
// outcomes summary, the per-subgroup physiological means (heterogeneous
// features starred), and the per-scope model performance table.

#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "subpheno/csv.hpp"
#include "subpheno/domain.hpp"

namespace subpheno {

inline const std::vector<std::string>& bundle_artifacts() {
    static const std::vector<std::string> files = {
        "assignments.csv",   "silhouette.csv",    "kappa.json",
        "agreement.csv",     "embedding.csv",     "subgroup_profiles.csv",
        "heterogeneity.csv", "model_metrics.csv", "importance_ranks.csv",
        "run_manifest.json"};
    return files;
}

inline std::vector<std::string> missing_artifacts(const std::string& dir) {
    std::vector<std::string> missing;
    for (const auto& f : bundle_artifacts())
        if (!std::filesystem::exists(dir + "/" + f)) missing.push_back(f);
    return missing;
}

namespace detail {

struct Table {
    std::vector<std::vector<std::string>> rows;

    std::string render() const {
        std::vector<std::size_t> width;
        for (const auto& row : rows)
            for (std::size_t c = 0; c < row.size(); ++c) {
                if (width.size() <= c) width.push_back(0);
                width[c] = std::max(width[c], row[c].size());
            }
        std::ostringstream os;
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t c = 0; c < rows[r].size(); ++c) {
                os << (c == 0 ? "" : "  ");
                os << std::left << std::setw(static_cast<int>(width[c])) << rows[r][c];
            }
            os << "\n";
            if (r == 0) {
                std::size_t total = 0;
                for (std::size_t c = 0; c < width.size(); ++c)
                    total += width[c] + (c == 0 ? 0 : 2);
                os << std::string(total, '-') << "\n";
            }
        }
        return os.str();
    }
};

inline std::string short_num(const std::string& raw) {
    try {
        double v = parse_double(raw);
        char buf[32];
        if (v == static_cast<long long>(v) && std::abs(v) < 1e9)
            std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(v));
        else
            std::snprintf(buf, sizeof(buf), "%.3f", v);
        return buf;
    } catch (const ParseError&) {
        return raw;
    }
}

}  // namespace detail

// Renders the three tables; throws ParseError listing missing artifacts.
inline std::string render_report(const std::string& dir) {
    auto missing = missing_artifacts(dir);
    if (!missing.empty()) {
        std::string msg = "incomplete bundle, missing:";
        for (const auto& f : missing) msg += " " + f;
        throw ParseError(msg);
    }

    // subgroup_profiles.csv: first 9 statistic rows are the outcomes block,
    // the remaining rows are per-feature means.
    csv::Reader profiles(dir + "/subgroup_profiles.csv");
    std::vector<std::string> header;
    if (!profiles.next(header)) profiles.fail("empty profiles");
    static const std::set<std::string> outcome_stats = {
        "count",          "percent",          "los_days",
        "age",            "mortality_pct",    "emergency_pct",
        "total_admissions", "rank_order",     "ventilation_pct"};
    detail::Table demo, features;
    demo.rows.push_back(header);
    features.rows.push_back(header);
    features.rows[0][0] = "physiological variable";
    std::set<std::string> highlighted;
    {
        csv::Reader het(dir + "/heterogeneity.csv");
        std::vector<std::string> h;
        het.next(h);
        while (het.next(h))
            if (h.size() == 4 && h[3] == "1") highlighted.insert(h[0]);
    }
    std::vector<std::string> row;
    const auto& catalog = feature_catalog();
    while (profiles.next(row)) {
        std::vector<std::string> pretty = row;
        for (std::size_t c = 1; c < pretty.size(); ++c)
            pretty[c] = detail::short_num(pretty[c]);
        if (outcome_stats.count(row[0])) {
            demo.rows.push_back(pretty);
        } else {
            pretty[0] = catalog.display_name(row[0]);
            if (highlighted.count(row[0])) pretty[0] += " *";
            features.rows.push_back(pretty);
        }
    }

    csv::Reader metrics(dir + "/model_metrics.csv");
    detail::Table perf;
    metrics.next(row);
    perf.rows.push_back(row);
    while (metrics.next(row)) {
        for (std::size_t c = 0; c < row.size(); ++c) row[c] = detail::short_num(row[c]);
        perf.rows.push_back(row);
    }

    std::ostringstream os;
    os << "DEMOGRAPHICS AND OUTCOMES SUMMARY\n" << demo.render() << "\n";
    os << "SUBGROUP PHYSIOLOGICAL CHARACTERISTICS (* = heterogeneous by the "
          "both-medians rule)\n"
       << features.render() << "\n";
    os << "SUBGROUP COUNTS AND PREDICTIVE MODEL PERFORMANCE\n" << perf.render();
    return os.str();
}

}  // namespace subpheno
