#include "doctest.h"

#include "falsify_iv/error.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/linear_iv.hpp"
#include "falsify_iv/report.hpp"
#include "fixtures.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <sys/wait.h>

using namespace fiv;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Scratch directory removed on scope exit.
class TempDir {
public:
    explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("falsify_iv_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::optional<Error> error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e;
    }
    return std::nullopt;
}

json l2_moments() { return {{"psi", {1, 5}}, {"pi", {1, 1}}}; }

// One row per (y, x, z) cell of a single-instrument joint, weighted by its probability.
std::string weighted_csv(const DiscreteJoint& j) {
    std::ostringstream s;
    s << std::setprecision(17) << "y,x,z,w\n";
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x)
            for (int m = 0; m < j.cells(); ++m) s << y << ',' << x << ',' << j.z_supports[0][static_cast<std::size_t>(m)] << ',' << j.prob(y, x, m) << '\n';
    return s.str();
}

std::string rows_csv(const Eigen::MatrixXd& rows, const std::string& header) {
    std::ostringstream s;
    s << std::setprecision(17) << header << '\n';
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) s << (j ? "," : "") << rows(i, j);
        s << '\n';
    }
    return s.str();
}

}  // namespace

TEST_CASE("numbers are written with twelve significant digits") {
    CHECK(format_number(1.0 / 3.0) == "0.333333333333");
    CHECK(format_number(4.0) == "4");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(123456789.123456789) == "123456789.123");
    CHECK(format_number(std::numeric_limits<double>::infinity()) == "inf");
}

TEST_CASE("config validation") {
    auto code = [](const json& doc) {
        auto e = error_of([&] { parse_config(doc, "."); });
        return e ? std::optional<ErrorCode>(e->code()) : std::nullopt;
    };
    CHECK(code({{"model", "linear"}, {"moments", l2_moments()}}) == std::nullopt);
    CHECK(code({{"moments", l2_moments()}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "probit"}, {"moments", l2_moments()}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "linear"}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "linear"}, {"moments", l2_moments()}, {"data", "a.csv"}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "linear"}, {"moments", l2_moments()}, {"extra", 1}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "linear"}, {"moments", l2_moments()}, {"options", {{"cutof", 10}}}}) == ErrorCode::ConfigError);
    CHECK(code({{"model", "het_binary"}, {"moments", l2_moments()}}) == ErrorCode::ConfigError);
    // Roles must be disjoint.
    CHECK(code({{"model", "linear"},
                {"data", "a.csv"},
                {"columns", {{"outcome", "y"}, {"treatments", {"x"}}, {"instruments", {"z", "x"}}}}}) ==
          ErrorCode::ConfigError);
    CHECK(code({{"model", "het_binary"},
                {"data", "a.csv"},
                {"columns", {{"outcome", "y"}, {"treatments", {"x1", "x2"}}, {"instruments", {"z"}}}}}) ==
          ErrorCode::ConfigError);

    AnalysisConfig c = parse_config({{"model", "linear"},
                                     {"moments", l2_moments()},
                                     {"options", {{"weak_iv_cutoff", 12.5}, {"delta_grid", {0, {1, "inf"}}}}}},
                                    ".");
    CHECK(c.options.weak_iv_cutoff == 12.5);
    REQUIRE(c.options.delta_grid.size() == 2);
    CHECK(std::isinf(c.options.delta_grid[1][1]));
    CHECK(c.output.report == "report.json");
}

TEST_CASE("missing instrument column names the column") {
    TempDir dir("missing_column");
    write_text(dir / "d.csv", "y,x,z1\n1,2,3\n2,3,4\n");
    write_text(dir / "c.json",
               R"({"model":"linear","data":"d.csv","columns":{"outcome":"y","treatments":["x"],"instruments":["z1","z2"]}})");
    auto e = error_of([&] { run_analysis(dir / "c.json"); });
    REQUIRE(e);
    CHECK(e->code() == ErrorCode::ConfigError);
    CHECK(std::string(e->what()).find("'z2'") != std::string::npos);
}

TEST_CASE("two-instrument frontier table") {
    AnalysisConfig c = parse_config({{"model", "linear"}, {"moments", l2_moments()}}, ".");
    Report r = run_analysis(c);
    REQUIRE(r.frontier.header == std::vector<std::string>{"delta_1", "delta_2", "b"});
    REQUIRE(r.frontier.rows.size() == 101);
    CHECK(r.frontier.rows.front()[0] == "0");
    CHECK(r.frontier.rows.front()[1] == "4");
    CHECK(r.frontier.rows.back()[0] == "4");
    CHECK(r.frontier.rows.back()[1] == "0");

    // No arithmetic of its own: the reported set is the module's.
    FasResult fas = fas_k1(fixtures::l2());
    CHECK(r.document["fas"]["lower"].get<double>() == fas.lo);
    CHECK(r.document["fas"]["upper"].get<double>() == fas.hi);
    CHECK(r.document["overidentification"]["falsified"].get<bool>());
    CHECK(r.document["frontier"]["intercepts"][0].get<double>() == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(r.document["provenance"].contains("feasibility_tolerance"));
}

TEST_CASE("baseline that survives gives a single zero frontier row") {
    AnalysisConfig c = parse_config({{"model", "linear"}, {"moments", {{"psi", {2, 4}}, {"pi", {1, 2}}}}}, ".");
    Report r = run_analysis(c);
    REQUIRE(r.frontier.rows.size() == 1);
    CHECK(r.frontier.rows[0] == std::vector<std::string>{"0", "0", "2"});
    CHECK_FALSE(r.document["overidentification"]["falsified"].get<bool>());
}

TEST_CASE("several treatments report the vertex set") {
    json m = {{"psi", {0, 0, 1}}, {"pi", {{1, 0}, {0, 1}, {1, 1}}}};
    Report r = run_analysis(parse_config({{"model", "linear"}, {"moments", m}, {"options", {{"simplex_density", 4}}}}, "."));
    FasResult fas = fas_general(fixtures::k2l3());
    REQUIRE(r.document["fas"]["vertices"].size() == fas.vertices.size());
    for (std::size_t i = 0; i < fas.vertices.size(); ++i)
        for (Eigen::Index k = 0; k < 2; ++k)
            CHECK(r.document["fas"]["vertices"][i]["beta"][static_cast<std::size_t>(k)].get<double>() == fas.vertices[i].beta(k));
    CHECK(r.frontier.header.size() == 5);
    CHECK(r.frontier.rows.size() > 1);
}

TEST_CASE("linear analysis on sampled data") {
    std::mt19937_64 rng(20240611);
    Eigen::MatrixXd rows = fixtures::simulate_linear(rng, 50000, Eigen::Vector2d(1, 1), Eigen::Vector2d(0, 4), 1.0);
    TempDir dir("linear_sample");
    write_text(dir / "d.csv", rows_csv(rows, "y,x,z1,z2"));
    write_text(dir / "c.json",
               R"({"model":"linear","data":"d.csv","columns":{"outcome":"y","treatments":"x","instruments":["z1","z2"]}})");
    Report r = run_analysis(dir / "c.json");
    const auto& fas = r.document["fas"];
    const double lo = fas["lower"], hi = fas["upper"], lo_se = fas["lower_se"], hi_se = fas["upper_se"];
    CHECK(std::abs(lo - 1.0) <= 3 * lo_se);
    CHECK(std::abs(hi - 5.0) <= 3 * hi_se);
    CHECK(r.document["overidentification"]["falsified"].get<bool>());
    CHECK(r.document["first_stage"].size() == 2);
    CHECK(r.document["screened_out"].empty());
    CHECK(r.document["input"]["n_obs"].get<long>() == 50000);
}

TEST_CASE("binary outcome analysis from weighted rows") {
    const DiscreteJoint b1 = fixtures::b1();
    TempDir dir("binary_rows");
    write_text(dir / "d.csv", weighted_csv(b1));
    write_text(dir / "c.json", R"({"model":"het_binary","data":"d.csv",
        "columns":{"outcome":"y","treatments":["x"],"instruments":["z"],"weight":"w"},
        "options":{"c_grid":[0,1]}})");
    Report r = run_analysis(dir / "c.json");
    const auto& d = r.document;
    CHECK(std::abs(d["c_star"].get<double>() - 1.0 / 14) < 1e-4);
    CHECK(std::abs(d["fas_ate"][0].get<double>() + 0.0875) < 1e-4);
    CHECK(std::abs(d["fas_ate"][1].get<double>() - 0.475) < 1e-4);
    auto fas = fas_ate(b1);
    CHECK(std::abs(d["fas_ate"][0].get<double>() - fas.first) < 1e-12);
    CHECK(std::abs(d["fas_ate"][1].get<double>() - fas.second) < 1e-12);
    CHECK(d["falsified_at_zero"].get<bool>());
    CHECK(d["bounds_by_c"][0]["ate"].is_null());
    CHECK(d["bounds_by_c"][1]["ate"][0].get<double>() == doctest::Approx(-0.4).epsilon(1e-9));
    REQUIRE(r.frontier.rows.size() == 1);
    CHECK(r.frontier.header == std::vector<std::string>{"c_1", "ate_lo", "ate_hi"});
}

TEST_CASE("probability table input and module errors") {
    json table = {{"z_supports", {{0, 1}}}, {"probs", {0.15, 0.05, 0.2, 0.05, 0.1, 0.05, 0.05, 0.35}}};
    Report r = run_analysis(parse_config({{"model", "het_binary"}, {"probability_table", table}}, "."));
    CHECK(r.document["c_star"].get<double>() == falsification_point_single(fixtures::b1()));

    // Z = 1 never occurs with X = 0: the instrument pins down the treatment.
    json bad = {{"z_supports", {{0, 1}}}, {"probs", {0.2, 0.0, 0.2, 0.1, 0.2, 0.0, 0.1, 0.2}}};
    auto e = error_of([&] { run_analysis(parse_config({{"model", "het_binary"}, {"probability_table", bad}}, ".")); });
    REQUIRE(e);
    CHECK(e->code() == ErrorCode::DataError);
    CHECK(std::string(e->what()).find("het_binary.") != std::string::npos);
}

TEST_CASE("continuous outcome analysis from rows") {
    // Y independent of Z within each arm: nothing is refuted.
    std::mt19937_64 rng(7);
    std::bernoulli_distribution coin(0.5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd rows(4000, 3);
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        const int z = coin(rng);
        const int x = u(rng) < (z ? 0.7 : 0.3);
        rows(i, 0) = 10.0 + 5.0 * (x ? std::sqrt(u(rng)) : u(rng));
        rows(i, 1) = x;
        rows(i, 2) = z;
    }
    TempDir dir("continuous_rows");
    write_text(dir / "d.csv", rows_csv(rows, "y,d,z"));
    write_text(dir / "c.json", R"({"model":"het_continuous","data":"d.csv",
        "columns":{"outcome":"y","treatments":"d","instruments":"z"},
        "options":{"sieve":{"order_m":10,"grid_n":51},"histogram_bins":8,"outcome_range":[10,15]}})");
    Report r = run_analysis(dir / "c.json");
    CHECK_FALSE(r.document["falsified_at_zero"].get<bool>());
    REQUIRE(r.frontier.rows.size() == 1);
    CHECK(r.frontier.rows[0][0] == "0");
    // ATE is reported in outcome units: the support has width 5.
    const double lo = r.document["no_assumption_bounds"][0], hi = r.document["no_assumption_bounds"][1];
    CHECK(hi - lo > 1.0);
    CHECK(hi - lo < 5.0);
    CHECK(r.document["provenance"]["sieve"]["order_m"].get<int>() == 10);

    write_text(dir / "bad.csv", "y,d,z\n10,1,2\n11,0,1\n");
    write_text(dir / "bad.json", R"({"model":"het_continuous","data":"bad.csv",
        "columns":{"outcome":"y","treatments":"d","instruments":"z"}})");
    auto e = error_of([&] { run_analysis(dir / "bad.json"); });
    REQUIRE(e);
    CHECK(e->code() == ErrorCode::DataError);
}

TEST_CASE("unwritable output path") {
    Report r = run_analysis(parse_config({{"model", "linear"}, {"moments", l2_moments()}}, "."));
    auto e = error_of([&] { emit_frontier_csv(r.frontier, "/nonexistent_dir/sub/f.csv"); });
    REQUIRE(e);
    CHECK(e->code() == ErrorCode::IoError);
}

TEST_CASE("command line runs are byte-identical") {
    TempDir dir("cli");
    write_text(dir / "c.json", R"({"model":"linear","moments":{"psi":[1,5],"pi":[1,1]},
        "output":{"frontier_csv":"frontier.csv","fas_csv":"fas.csv"}})");
    const std::string cli = FALSIFY_IV_CLI;
    auto run = [&](const std::string& out) {
        std::string cmd = "\"" + cli + "\" run --config \"" + (dir / "c.json").string() + "\" --out-dir \"" +
                          (dir / out).string() + "\" > /dev/null";
        return std::system(cmd.c_str());
    };
    // Falsification is a finding, not a failure.
    REQUIRE(run("a") == 0);
    REQUIRE(run("b") == 0);
    for (const char* f : {"report.json", "frontier.csv", "fas.csv"}) {
        CHECK(!read_text(dir / "a" / f).empty());
        CHECK(read_text(dir / "a" / f) == read_text(dir / "b" / f));
    }

    const std::string frontier_cmd = "\"" + cli + "\" frontier --config \"" + (dir / "c.json").string() + "\" --out \"" +
                                     (dir / "f.csv").string() + "\" > /dev/null";
    REQUIRE(std::system(frontier_cmd.c_str()) == 0);
    CHECK(read_text(dir / "f.csv") == read_text(dir / "a" / "frontier.csv"));

    write_text(dir / "bad.json", R"({"model":"linear"})");
    const std::string bad = "\"" + cli + "\" run --config \"" + (dir / "bad.json").string() + "\" 2> /dev/null";
    int status = std::system(bad.c_str());
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 2);
}
