#pragma once

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace fiv {

enum class ModelKind { Linear, HetBinary, HetContinuous };

const char* model_name(ModelKind m) noexcept;

struct ColumnNames {
    std::string outcome;
    std::vector<std::string> treatments;
    std::vector<std::string> instruments;
    std::vector<std::string> controls;
    // Row weights; het_binary only.
    std::string weight;
};

// Exactly one input source is set. Paths are resolved against the config's
// directory.
struct InputSource {
    std::optional<std::filesystem::path> csv;
    // Inline JSON or the parsed contents of a JSON file.
    std::optional<nlohmann::json> moments;
    std::optional<nlohmann::json> probability_table;
    std::optional<nlohmann::json> density_table;
};

struct BreakdownOptions {
    double conclusion_lo = 0.0;
    double conclusion_hi = 0.0;
    std::vector<double> delta1_grid;
    double delta2_cap = 0.0;
};

struct AnalysisOptions {
    double weak_iv_cutoff = 10.0;
    bool standardize_instruments = false;
    int frontier_points = 101;
    // Lattice density per simplex edge when there are several treatments.
    int simplex_density = 10;
    // Each entry has one value per instrument, or one value used for all.
    std::vector<std::vector<double>> delta_grid;
    std::vector<std::vector<double>> c_grid;
    std::optional<BreakdownOptions> breakdown;
    double resolution = 0.01;
    int order_m = 30;
    int grid_n = 201;
    int histogram_bins = 20;
    std::optional<std::pair<double, double>> outcome_range;
};

struct OutputPaths {
    std::string report = "report.json";
    std::string frontier_csv;
    std::string fas_csv;
};

struct AnalysisConfig {
    ModelKind model = ModelKind::Linear;
    std::filesystem::path config_path;
    InputSource input;
    ColumnNames columns;
    AnalysisOptions options;
    OutputPaths output;
};

// Throws ConfigError for malformed or inconsistent configs, IoError when a
// referenced file cannot be read.
AnalysisConfig load_config(const std::filesystem::path& config_path);
AnalysisConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);

// Pre-formatted cells, one row per grid point.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

struct Report {
    ModelKind model = ModelKind::Linear;
    nlohmann::ordered_json document;
    CsvTable frontier;
    CsvTable fas;
};

// Fixed-width rendering shared by every CSV cell: 12 significant digits.
std::string format_number(double v);

// Runs the configured model. Typed module failures surface as DataError with
// the failing operation named in the message.
Report run_analysis(const AnalysisConfig& config);
Report run_analysis(const std::filesystem::path& config_path);

void emit_report_json(const Report& report, const std::filesystem::path& path);
void emit_frontier_csv(const CsvTable& table, const std::filesystem::path& path);

// Writes the report and whichever CSVs the config requests into out_dir.
void write_outputs(const Report& report, const AnalysisConfig& config, const std::filesystem::path& out_dir);

}  // namespace fiv
