// Command-line front end: gen-data, run, replay-study, stability-study,
// report. Exit codes: 0 success, 2 configuration error, 3 missing artifact,
// 1 internal error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "everadapt/everadapt.hpp"

namespace {

std::string default_out_root() {
    if (const char* env = std::getenv("EVERADAPT_OUT")) return env;
    return "everadapt_out";
}

everadapt::ExperimentConfig load_config(const std::string& config_path,
                                        const std::string& preset) {
    if (!config_path.empty())
        return everadapt::ExperimentConfig::from_file(config_path, preset);
    return everadapt::ExperimentConfig::preset_by_name(preset.empty() ? "desk" : preset);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"EverAdapt: continual unsupervised domain adaptation on fault signals"};
    app.require_subcommand(1);
    app.fallthrough();   // let --config/--out appear after the subcommand too

    std::string config_path, preset, out_root = default_out_root();
    std::string data_dir, run_out, mode_name = "everadapt", report_dir;
    std::size_t n_seeds = 5;
    std::vector<double> fractions;

    app.add_option("--config", config_path, "Path to a JSON config file");
    app.add_option("--preset", preset, "Config preset: desk or paper");
    app.add_option("--out", out_root, "Output root (default $EVERADAPT_OUT or ./everadapt_out)");

    auto* gen = app.add_subcommand("gen-data", "Synthesize all configured domains to disk");
    auto* run = app.add_subcommand("run", "Run the adaptation sequence over several seeds");
    run->add_option("--seeds", n_seeds, "Number of seeds (config seed, seed+1, ...)");
    run->add_option("--mode", mode_name,
                    "everadapt | bn_baseline | cca_only | cca_replay");
    run->add_option("--data", data_dir, "Dataset directory (default <out>/datasets)");
    run->add_option("--run-out", run_out, "Run output directory (default <out>/runs/<mode>)");
    auto* replay = app.add_subcommand("replay-study",
                                      "Sweep replay fractions with CBN on and off");
    replay->add_option("--fractions", fractions, "Replay fractions (default 0.01 0.05 0.10)");
    replay->add_option("--seeds", n_seeds, "Number of seeds");
    replay->add_option("--data", data_dir, "Dataset directory");
    replay->add_option("--run-out", run_out, "Output directory");
    auto* stability = app.add_subcommand("stability-study",
                                         "Accuracy spread of full / no-entropy / no-CBN");
    stability->add_option("--seeds", n_seeds, "Number of seeds");
    stability->add_option("--data", data_dir, "Dataset directory");
    stability->add_option("--run-out", run_out, "Output directory");
    auto* report = app.add_subcommand("report", "Render an existing run report");
    report->add_option("--run", report_dir, "Run directory containing report.json")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;   // bad invocation is a configuration error
    }

    try {
        namespace fs = std::filesystem;
        if (data_dir.empty()) data_dir = (fs::path(out_root) / "datasets").string();

        if (gen->parsed()) {
            auto cfg = load_config(config_path, preset);
            everadapt::cmd_gen_data(cfg, data_dir, &std::cout);
            std::cout << "datasets written to " << data_dir << "\n";
        } else if (run->parsed()) {
            auto cfg = load_config(config_path, preset);
            const auto mode = everadapt::run_mode_from_name(mode_name);
            if (run_out.empty())
                run_out = (fs::path(out_root) / "runs" / mode_name).string();
            everadapt::cmd_run(cfg, data_dir, run_out, n_seeds, mode, &std::cout);
            std::cout << "report written to " << run_out << "\n";
        } else if (replay->parsed()) {
            auto cfg = load_config(config_path, preset);
            if (run_out.empty())
                run_out = (fs::path(out_root) / "runs" / "replay_study").string();
            everadapt::cmd_replay_study(cfg, data_dir, run_out, fractions, n_seeds,
                                        &std::cout);
            std::cout << "report written to " << run_out << "\n";
        } else if (stability->parsed()) {
            auto cfg = load_config(config_path, preset);
            if (run_out.empty())
                run_out = (fs::path(out_root) / "runs" / "stability_study").string();
            everadapt::cmd_stability_study(cfg, data_dir, run_out, n_seeds, &std::cout);
            std::cout << "report written to " << run_out << "\n";
        } else if (report->parsed()) {
            std::cout << everadapt::cmd_report(report_dir);
        }
    } catch (const everadapt::config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const everadapt::data_error& e) {
        std::cerr << "missing or bad artifact: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
