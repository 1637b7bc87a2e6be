// falsify-iv: batch front end for the falsification analyses.
//
//   falsify-iv run --config analysis.json [--out-dir results]
//   falsify-iv frontier --config analysis.json --out frontier.csv
//
// Exit status is 0 whenever the analysis completes, including when the
// baseline model is refuted. Config, data and file errors exit with 2, 3, 4.
#include "falsify_iv/error.hpp"
#include "falsify_iv/report.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <string>

namespace {

int exit_code(fiv::ErrorCode code) {
    switch (code) {
        case fiv::ErrorCode::ConfigError: return 2;
        case fiv::ErrorCode::DataError: return 3;
        case fiv::ErrorCode::IoError: return 4;
        default: return 3;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Falsification frontiers and adaptive sets for instrumental variable models"};
    app.require_subcommand(1);
    app.set_version_flag("--version", FALSIFY_IV_VERSION_STRING);

    std::string config;
    std::string out_dir;
    std::string out_csv;

    CLI::App* run = app.add_subcommand("run", "Run the configured analysis and write the report and CSVs");
    run->add_option("--config", config, "Analysis config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--out-dir", out_dir, "Output directory; defaults to the config's directory");

    CLI::App* frontier = app.add_subcommand("frontier", "Write only the frontier CSV");
    frontier->add_option("--config", config, "Analysis config (JSON)")->required()->check(CLI::ExistingFile);
    frontier->add_option("--out", out_csv, "Frontier CSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const fiv::AnalysisConfig cfg = fiv::load_config(config);
        const fiv::Report report = fiv::run_analysis(cfg);
        if (*run) {
            std::filesystem::path dir = out_dir.empty() ? std::filesystem::path(config).parent_path() : std::filesystem::path(out_dir);
            if (dir.empty()) dir = ".";
            fiv::write_outputs(report, cfg, dir);
            std::cout << fiv::model_name(cfg.model) << ": report written to " << (dir / cfg.output.report).string() << "\n";
        } else {
            fiv::emit_frontier_csv(report.frontier, out_csv);
            std::cout << report.frontier.rows.size() << " frontier points written to " << out_csv << "\n";
        }
    } catch (const fiv::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code(e.code());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
