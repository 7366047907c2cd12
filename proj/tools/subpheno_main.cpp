// Command-line driver: `synth` generates a synthetic cohort, `run` executes
// the full subphenotyping pipeline and writes the report bundle + SVG plots,
// `report` renders bundle tables as text. Exit codes: 0 ok, 1 pipeline
// failure, 2 usage/config error.

#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "subpheno/config.hpp"
#include "subpheno/report.hpp"
#include "subpheno/svg.hpp"

namespace {

nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config: " + path);
    nlohmann::json j;
    in >> j;
    return j;
}

int cmd_synth(const std::string& config_path, const std::string& preset,
              const std::string& out_dir, std::uint64_t seed, bool seed_set, bool dry_run) {
    subpheno::SynthSpec spec;
    try {
        if (!config_path.empty()) {
            auto j = load_json(config_path);
            if (!preset.empty()) j["preset"] = preset;
            spec = subpheno::synth_spec_from_json(j);
        } else {
            spec = subpheno::synth_preset(preset);
        }
        if (seed_set) spec.seed = seed;
        auto violations = spec.validate();
        if (!violations.empty()) {
            for (const auto& v : violations) std::cerr << "invalid synth spec: " << v << "\n";
            return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    if (dry_run) {
        std::cout << "synth spec ok: " << spec.n_cases << " cases, " << spec.n_noncases
                  << " non-cases, k=" << spec.k_planted << ", seed=" << spec.seed << "\n";
        return 0;
    }
    try {
        auto out = subpheno::generate_cohort(spec, out_dir);
        std::cout << "wrote " << out.admissions_path << "\n";
        std::cout << "wrote " << out.measurements_path << "\n";
        std::cout << "wrote " << out.ground_truth_path << "\n";
        auto rep = subpheno::self_check(spec, out_dir);
        std::cout << "self check: " << (rep.passed ? "pass" : "FAIL") << " ("
                  << rep.admissions << " admissions, " << rep.measurements
                  << " measurements, missing rate "
                  << subpheno::format_double(rep.empirical_missing_rate) << ")\n";
        for (const auto& f : rep.failures) std::cout << "  " << f << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "synth failed: " << e.what() << "\n";
        return 1;
    }
}

int cmd_run(const std::string& config_path, const std::string& preset,
            const std::string& out_dir, std::uint64_t seed, bool seed_set, unsigned threads,
            bool threads_set, bool dry_run) {
    subpheno::PipelineConfig cfg;
    try {
        if (!config_path.empty()) {
            auto j = load_json(config_path);
            if (!preset.empty()) j["preset"] = preset;
            cfg = subpheno::pipeline_config_from_json(j);
        } else {
            cfg = subpheno::pipeline_preset(preset);
        }
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (seed_set) cfg.master_seed = seed;
        if (threads_set) cfg.threads = threads;
        if (cfg.admissions_path.empty() || cfg.measurements_path.empty())
            throw std::invalid_argument("config must name admissions and measurements files");
        if (cfg.out_dir.empty()) throw std::invalid_argument("an output directory is required");
        if (!std::filesystem::exists(cfg.admissions_path))
            throw std::invalid_argument("missing input file: " + cfg.admissions_path);
        if (!std::filesystem::exists(cfg.measurements_path))
            throw std::invalid_argument("missing input file: " + cfg.measurements_path);
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    if (dry_run) {
        std::cout << "config ok: seed=" << cfg.master_seed << ", metric="
                  << subpheno::to_string(cfg.metric) << ", out=" << cfg.out_dir << "\n";
        return 0;
    }
    try {
        auto bundle = subpheno::run_full_pipeline(cfg);
        subpheno::svg::write_plots(bundle, cfg.out_dir);
        std::cout << "cases: " << bundle.ingest.n_cases
                  << ", non-cases: " << bundle.ingest.n_noncases << "\n";
        std::cout << "k = " << bundle.discovery.k
                  << ", kappa = " << subpheno::format_double(bundle.discovery.agreement.kappa)
                  << (bundle.discovery.stable ? " (stable)" : " (UNSTABLE)") << "\n";
        std::cout << "feature-set validation: accuracy "
                  << subpheno::format_double(bundle.validation.holdout_accuracy) << ", macro-F "
                  << subpheno::format_double(bundle.validation.holdout_macro_f) << "\n";
        std::cout << "bundle written to " << cfg.out_dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "pipeline failed: " << e.what() << "\n";
        return 1;
    }
}

int cmd_report(const std::string& bundle_dir) {
    try {
        std::cout << subpheno::render_report(bundle_dir);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "report failed: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised patient subphenotyping pipeline"};
    app.require_subcommand(1);

    std::string config_path, preset, out_dir, bundle_dir;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    bool dry_run = false;

    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    synth->add_option("--config", config_path, "synth spec JSON");
    synth->add_option("--preset", preset, "desk or paper-scale");
    synth->add_option("--out", out_dir, "output directory")->required();
    auto* synth_seed = synth->add_option("--seed", seed, "generator seed");
    synth->add_flag("--dry-run", dry_run, "validate the spec and exit");

    auto* run = app.add_subcommand("run", "run the full pipeline");
    run->add_option("--config", config_path, "pipeline config JSON");
    run->add_option("--preset", preset, "desk or paper-scale");
    run->add_option("--out", out_dir, "bundle output directory");
    auto* run_seed = run->add_option("--seed", seed, "master seed");
    auto* run_threads = run->add_option("--threads", threads, "worker threads (0 = auto)");
    run->add_flag("--dry-run", dry_run, "validate the config and exit");

    auto* report = app.add_subcommand("report", "render bundle tables");
    report->add_option("bundle", bundle_dir, "bundle directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (synth->parsed())
        return cmd_synth(config_path, preset, out_dir, seed, !synth_seed->empty(), dry_run);
    if (run->parsed())
        return cmd_run(config_path, preset, out_dir, seed, !run_seed->empty(), threads,
                       !run_threads->empty(), dry_run);
    if (report->parsed()) return cmd_report(bundle_dir);
    return 2;
}
