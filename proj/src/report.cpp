#include "falsify_iv/report.hpp"

#include "falsify_iv/error.hpp"
#include "falsify_iv/geometry.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/het_continuous.hpp"
#include "falsify_iv/linear_iv.hpp"
#include "falsify_iv/lp.hpp"
#include "falsify_iv/moments.hpp"

#include <boost/algorithm/string/trim.hpp>
#include <boost/tokenizer.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

#ifndef FALSIFY_IV_VERSION
#define FALSIFY_IV_VERSION "unknown"
#endif

namespace fiv {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void config_error(const std::string& msg) { throw Error(ErrorCode::ConfigError, msg); }

// Module failures are data problems from the caller's point of view.
template <class F>
auto step(const char* operation, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ConfigError || e.code() == ErrorCode::DataError || e.code() == ErrorCode::IoError)
            throw;
        throw Error(ErrorCode::DataError, std::string(operation) + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Config parsing

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json_file(const fs::path& path) {
    try {
        return json::parse(read_text(path));
    } catch (const json::parse_error& e) {
        config_error(path.filename().string() + " is not valid JSON: " + e.what());
    }
}

double as_number(const json& v, const std::string& what) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const std::string s = v.get<std::string>();
        if (s == "inf" || s == "+inf") return kInf;
        if (s == "-inf") return -kInf;
    }
    config_error(what + " must be a number");
}

std::vector<double> as_numbers(const json& v, const std::string& what) {
    if (!v.is_array()) return {as_number(v, what)};
    std::vector<double> out;
    for (const auto& e : v) out.push_back(as_number(e, what));
    return out;
}

std::vector<std::string> as_names(const json& v, const std::string& what) {
    std::vector<std::string> out;
    if (v.is_string()) return {v.get<std::string>()};
    if (!v.is_array()) config_error(what + " must be a column name or a list of names");
    for (const auto& e : v) {
        if (!e.is_string()) config_error(what + " must contain column names");
        out.push_back(e.get<std::string>());
    }
    return out;
}

int as_int(const json& v, const std::string& what) {
    if (!v.is_number_integer()) config_error(what + " must be an integer");
    return v.get<int>();
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& item : obj.items()) {
        if (std::none_of(known.begin(), known.end(), [&](const char* k) { return item.key() == k; }))
            config_error("unknown key '" + item.key() + "' in " + where);
    }
}

// Inline object or a path to a JSON file.
json inline_or_file(const json& v, const fs::path& base, const std::string& what) {
    if (v.is_object()) return v;
    if (v.is_string()) return parse_json_file(base / v.get<std::string>());
    config_error(what + " must be an object or a path to a JSON file");
}

std::vector<std::vector<double>> parse_grid(const json& v, const std::string& what) {
    if (!v.is_array()) config_error(what + " must be a list");
    std::vector<std::vector<double>> out;
    for (const auto& e : v) out.push_back(as_numbers(e, what));
    return out;
}

AnalysisOptions parse_options(const json& o) {
    reject_unknown(o,
                   {"weak_iv_cutoff", "standardize_instruments", "frontier_points", "simplex_density", "delta_grid",
                    "c_grid", "breakdown", "resolution", "sieve", "histogram_bins", "outcome_range"},
                   "options");
    AnalysisOptions opt;
    if (o.contains("weak_iv_cutoff")) opt.weak_iv_cutoff = as_number(o["weak_iv_cutoff"], "weak_iv_cutoff");
    if (o.contains("standardize_instruments")) {
        if (!o["standardize_instruments"].is_boolean()) config_error("standardize_instruments must be true or false");
        opt.standardize_instruments = o["standardize_instruments"].get<bool>();
    }
    if (o.contains("frontier_points")) opt.frontier_points = as_int(o["frontier_points"], "frontier_points");
    if (o.contains("simplex_density")) opt.simplex_density = as_int(o["simplex_density"], "simplex_density");
    if (o.contains("delta_grid")) opt.delta_grid = parse_grid(o["delta_grid"], "delta_grid");
    if (o.contains("c_grid")) opt.c_grid = parse_grid(o["c_grid"], "c_grid");
    if (o.contains("resolution")) opt.resolution = as_number(o["resolution"], "resolution");
    if (o.contains("histogram_bins")) opt.histogram_bins = as_int(o["histogram_bins"], "histogram_bins");
    if (o.contains("sieve")) {
        const json& s = o["sieve"];
        reject_unknown(s, {"order_m", "grid_n"}, "options.sieve");
        if (s.contains("order_m")) opt.order_m = as_int(s["order_m"], "sieve.order_m");
        if (s.contains("grid_n")) opt.grid_n = as_int(s["grid_n"], "sieve.grid_n");
    }
    if (o.contains("outcome_range")) {
        std::vector<double> r = as_numbers(o["outcome_range"], "outcome_range");
        if (r.size() != 2 || !(r[0] < r[1])) config_error("outcome_range must be [lo, hi] with lo < hi");
        opt.outcome_range = std::make_pair(r[0], r[1]);
    }
    if (o.contains("breakdown")) {
        const json& b = o["breakdown"];
        reject_unknown(b, {"conclusion", "delta1_grid", "delta2_cap"}, "options.breakdown");
        if (!b.contains("conclusion") || !b.contains("delta1_grid") || !b.contains("delta2_cap"))
            config_error("breakdown needs conclusion, delta1_grid and delta2_cap");
        BreakdownOptions bo;
        std::vector<double> c = as_numbers(b["conclusion"], "breakdown.conclusion");
        if (c.size() != 2) config_error("breakdown.conclusion must be [lo, hi]");
        bo.conclusion_lo = c[0];
        bo.conclusion_hi = c[1];
        bo.delta1_grid = as_numbers(b["delta1_grid"], "breakdown.delta1_grid");
        bo.delta2_cap = as_number(b["delta2_cap"], "breakdown.delta2_cap");
        opt.breakdown = bo;
    }
    if (opt.frontier_points < 1) config_error("frontier_points must be positive");
    if (opt.simplex_density < 1) config_error("simplex_density must be positive");
    if (!(opt.resolution > 0.0 && opt.resolution <= 1.0)) config_error("resolution must lie in (0, 1]");
    if (opt.histogram_bins < 2) config_error("histogram_bins must be at least 2");
    return opt;
}

ModelKind parse_model(const json& v) {
    if (!v.is_string()) config_error("model must be a string");
    const std::string m = v.get<std::string>();
    if (m == "linear") return ModelKind::Linear;
    if (m == "het_binary") return ModelKind::HetBinary;
    if (m == "het_continuous") return ModelKind::HetContinuous;
    config_error("unknown model '" + m + "'; expected linear, het_binary or het_continuous");
}

void check_columns(const AnalysisConfig& c) {
    const ColumnNames& n = c.columns;
    if (n.outcome.empty()) config_error("columns.outcome is required with CSV data");
    if (n.treatments.empty()) config_error("columns.treatments is required with CSV data");
    if (n.instruments.empty()) config_error("columns.instruments is required with CSV data");
    std::set<std::string> seen;
    auto add = [&](const std::string& name) {
        if (!seen.insert(name).second) config_error("column '" + name + "' is assigned more than one role");
    };
    add(n.outcome);
    for (const auto& s : n.treatments) add(s);
    for (const auto& s : n.instruments) add(s);
    for (const auto& s : n.controls) add(s);
    if (!n.weight.empty()) add(n.weight);
    if (c.model != ModelKind::Linear) {
        if (n.treatments.size() != 1) config_error("heterogeneous models take exactly one treatment column");
        if (!n.controls.empty()) config_error("heterogeneous models do not take control columns");
    }
    if (c.model != ModelKind::HetBinary && !n.weight.empty()) config_error("columns.weight is only used by het_binary");
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvData {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> cells;
};

CsvData read_csv(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
    using Tokenizer = boost::tokenizer<boost::escaped_list_separator<char>>;
    CsvData out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        try {
            for (std::string tok : Tokenizer(line)) {
                boost::algorithm::trim(tok);
                fields.push_back(std::move(tok));
            }
        } catch (const boost::escaped_list_error& e) {
            throw Error(ErrorCode::DataError, path.filename().string() + ": malformed line: " + e.what());
        }
        if (first) {
            out.header = std::move(fields);
            first = false;
        } else {
            out.cells.push_back(std::move(fields));
        }
    }
    if (out.header.empty()) throw Error(ErrorCode::DataError, path.filename().string() + " has no header row");
    return out;
}

double parse_cell(const std::string& s, const std::string& column, std::size_t row) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
        throw Error(ErrorCode::DataError,
                    "non-numeric value '" + s + "' in column '" + column + "' at data row " + std::to_string(row + 1));
    return v;
}

// Selected columns as a dense matrix, in the order requested.
Eigen::MatrixXd select_columns(const CsvData& csv, const std::vector<std::pair<std::string, std::string>>& wanted,
                               const std::string& file) {
    std::vector<std::size_t> idx;
    for (const auto& [role, name] : wanted) {
        auto it = std::find(csv.header.begin(), csv.header.end(), name);
        if (it == csv.header.end()) config_error(role + " column '" + name + "' not found in " + file);
        idx.push_back(static_cast<std::size_t>(it - csv.header.begin()));
    }
    Eigen::MatrixXd m(static_cast<Eigen::Index>(csv.cells.size()), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t r = 0; r < csv.cells.size(); ++r) {
        const auto& row = csv.cells[r];
        if (row.size() != csv.header.size())
            throw Error(ErrorCode::DataError, file + ": data row " + std::to_string(r + 1) + " has " +
                                                  std::to_string(row.size()) + " fields, header has " +
                                                  std::to_string(csv.header.size()));
        for (std::size_t j = 0; j < idx.size(); ++j)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = parse_cell(row[idx[j]], wanted[j].second, r);
    }
    if (m.rows() == 0) throw Error(ErrorCode::DataError, file + " has no data rows");
    return m;
}

std::vector<std::pair<std::string, std::string>> role_columns(const ColumnNames& n) {
    std::vector<std::pair<std::string, std::string>> w{{"outcome", n.outcome}};
    for (const auto& s : n.treatments) w.emplace_back("treatment", s);
    for (const auto& s : n.instruments) w.emplace_back("instrument", s);
    for (const auto& s : n.controls) w.emplace_back("control", s);
    return w;
}

// ---------------------------------------------------------------------------
// JSON helpers

ojson num(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

ojson nums(const Eigen::VectorXd& v) {
    ojson a = ojson::array();
    for (double x : v) a.push_back(num(x));
    return a;
}

ojson interval(double lo, double hi) { return ojson::array({num(lo), num(hi)}); }

std::vector<double> vec(const json& v, const std::string& what) {
    if (!v.is_array()) throw Error(ErrorCode::DataError, what + " must be a list of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
        if (!e.is_number()) throw Error(ErrorCode::DataError, what + " must be a list of numbers");
        out.push_back(e.get<double>());
    }
    return out;
}

Eigen::MatrixXd matrix(const json& v, const std::string& what) {
    if (!v.is_array() || v.empty()) throw Error(ErrorCode::DataError, what + " must be a non-empty list of rows");
    // A flat list is a single column.
    if (!v[0].is_array()) {
        std::vector<double> c = vec(v, what);
        return Eigen::Map<Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
    }
    std::vector<std::vector<double>> rows;
    for (const auto& r : v) rows.push_back(vec(r, what));
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw Error(ErrorCode::DataError, what + " rows differ in length");
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    }
    return m;
}

Eigen::VectorXd expand(const std::vector<double>& v, Eigen::Index n, const std::string& what) {
    if (v.size() == 1) return Eigen::VectorXd::Constant(n, v[0]);
    if (static_cast<Eigen::Index>(v.size()) != n)
        config_error(what + " entries need 1 or " + std::to_string(n) + " values");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

std::vector<std::string> default_names(const std::vector<std::string>& given, Eigen::Index n, const char* stem) {
    if (static_cast<Eigen::Index>(given.size()) == n) return given;
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(stem + std::to_string(i + 1));
    return out;
}

std::string join(const std::vector<std::string>& v, const char* sep) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? sep : "") + v[i];
    return s;
}

std::vector<std::string> numbered(const char* stem, Eigen::Index n) {
    std::vector<std::string> out;
    for (Eigen::Index i = 0; i < n; ++i) out.push_back(stem + std::to_string(i + 1));
    return out;
}

std::vector<std::string> cells(const Eigen::VectorXd& v) {
    std::vector<std::string> out;
    for (double x : v) out.push_back(format_number(x));
    return out;
}

std::string source_label(const AnalysisConfig& c) {
    if (c.input.csv) return c.input.csv->filename().string();
    return "inline";
}

ojson provenance_base(const AnalysisConfig& c) {
    ojson p;
    p["version"] = FALSIFY_IV_VERSION;
    p["lp_solver"] = lp::solver_version();
    p["config"] = c.config_path.filename().string();
    p["input"] = source_label(c);
    p["feasibility_tolerance"] = kFeasibilityTol;
    return p;
}

// ---------------------------------------------------------------------------
// Linear model

struct LinearInput {
    ReducedMoments moments;
    std::optional<Eigen::MatrixXd> rows;
    RoleMap roles;
    std::vector<std::string> instruments;
    std::vector<std::string> treatments;
};

LinearInput linear_input(const AnalysisConfig& c) {
    LinearInput in;
    if (c.input.csv) {
        const std::string file = c.input.csv->filename().string();
        CsvData csv = read_csv(*c.input.csv);
        in.rows = select_columns(csv, role_columns(c.columns), file);
        in.roles.push_back(Role::Outcome);
        for (std::size_t i = 0; i < c.columns.treatments.size(); ++i) in.roles.push_back(Role::Treatment);
        for (std::size_t i = 0; i < c.columns.instruments.size(); ++i) in.roles.push_back(Role::Instrument);
        for (std::size_t i = 0; i < c.columns.controls.size(); ++i) in.roles.push_back(Role::Control);
        in.moments = step("moments.partial_out_controls", [&] {
            return partial_out_controls(moment_set_from_sample(*in.rows, in.roles), c.options.standardize_instruments);
        });
        in.instruments = c.columns.instruments;
        in.treatments = c.columns.treatments;
        return in;
    }
    const json& m = *c.input.moments;
    if (!m.contains("psi") || !m.contains("pi")) throw Error(ErrorCode::DataError, "moment file needs psi and pi");
    std::vector<double> psi = vec(m["psi"], "psi");
    in.moments.psi = Eigen::Map<Eigen::VectorXd>(psi.data(), static_cast<Eigen::Index>(psi.size()));
    in.moments.pi = matrix(m["pi"], "pi");
    const Eigen::Index l = in.moments.psi.size();
    in.moments.var_z = m.contains("var_z") ? matrix(m["var_z"], "var_z") : Eigen::MatrixXd::Identity(l, l);
    step("moments.validate", [&] { in.moments.validate(); });
    in.instruments = default_names(c.columns.instruments, l, "z");
    in.treatments = default_names(c.columns.treatments, in.moments.num_treatments(), "x");
    return in;
}

ReducedMoments keep_instruments(const ReducedMoments& r, const std::vector<int>& keep) {
    ReducedMoments out;
    const auto n = static_cast<Eigen::Index>(keep.size());
    out.psi.resize(n);
    out.pi.resize(n, r.pi.cols());
    out.var_z.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out.psi(i) = r.psi(keep[static_cast<std::size_t>(i)]);
        out.pi.row(i) = r.pi.row(keep[static_cast<std::size_t>(i)]);
        for (Eigen::Index j = 0; j < n; ++j)
            out.var_z(i, j) = r.var_z(keep[static_cast<std::size_t>(i)], keep[static_cast<std::size_t>(j)]);
    }
    out.controls_absorbed = r.controls_absorbed;
    return out;
}

ojson identified_entry(const LinearIdentifiedSet& s, const Eigen::VectorXd& delta, Eigen::Index k) {
    ojson e;
    e["delta"] = nums(delta);
    e["empty"] = s.empty();
    switch (s.kind) {
        case SetKind::Empty:
            break;
        case SetKind::Interval:
            e["bounds"] = interval(s.lo, s.hi);
            break;
        case SetKind::AllSpace:
            e["bounds"] = interval(-kInf, kInf);
            break;
        case SetKind::Polytope: {
            ojson proj = ojson::array();
            for (Eigen::Index j = 0; j < k; ++j) {
                LpExtremes ext = step("geometry.lp_minmax", [&] {
                    return lp_minmax(Eigen::VectorXd::Unit(k, j), ConvexSet(*s.polytope));
                });
                proj.push_back(interval(ext.min, ext.max));
            }
            e["bounds"] = proj;
            break;
        }
    }
    return e;
}

Report linear_report(const AnalysisConfig& c) {
    const AnalysisOptions& opt = c.options;
    LinearInput in = linear_input(c);
    const Eigen::Index k = in.moments.num_treatments();
    const Eigen::Index l_all = in.moments.num_instruments();

    Report rep;
    rep.model = ModelKind::Linear;
    ojson& d = rep.document;
    d["model"] = "linear";
    d["input"] = {{"source", c.input.csv ? "csv" : "moments"},
                  {"n_obs", in.rows ? ojson(in.rows->rows()) : ojson(nullptr)}};
    d["treatments"] = in.treatments;
    d["instruments"] = in.instruments;

    std::vector<int> keep;
    for (int j = 0; j < l_all; ++j) keep.push_back(j);
    std::optional<FasResult> estimated;
    if (in.rows) {
        ojson fs = ojson::array();
        for (Eigen::Index t = 0; t < k; ++t)
            for (Eigen::Index j = 0; j < l_all; ++j) {
                double f = step("moments.first_stage_f_stat", [&] {
                    return first_stage_f_stat(*in.rows, in.roles, static_cast<int>(j), static_cast<int>(t));
                });
                fs.push_back({{"instrument", in.instruments[static_cast<std::size_t>(j)]},
                              {"treatment", in.treatments[static_cast<std::size_t>(t)]},
                              {"f_stat", num(f)}});
            }
        d["first_stage"] = fs;
        if (k == 1) {
            estimated = step("linear_iv.estimate_fas", [&] {
                return estimate_fas(*in.rows, in.roles, opt.weak_iv_cutoff, opt.standardize_instruments);
            });
            ojson out = ojson::array();
            for (int j : estimated->screened_out) out.push_back(in.instruments[static_cast<std::size_t>(j)]);
            d["screened_out"] = out;
            keep.clear();
            for (int j = 0; j < l_all; ++j)
                if (std::find(estimated->screened_out.begin(), estimated->screened_out.end(), j) ==
                    estimated->screened_out.end())
                    keep.push_back(j);
        }
    }
    const ReducedMoments r = keep_instruments(in.moments, keep);
    const Eigen::Index l = r.num_instruments();
    std::vector<std::string> kept_names;
    for (int j : keep) kept_names.push_back(in.instruments[static_cast<std::size_t>(j)]);

    bool falsified = false;
    if (k == 1) {
        Eigen::MatrixXd res = step("linear_iv.sargan_residuals", [&] { return sargan_residuals(r); });
        falsified = step("linear_iv.sargan_falsified", [&] { return sargan_falsified(r); });
        d["overidentification"] = {{"falsified", falsified},
                                   {"max_abs_residual", num(res.size() ? res.cwiseAbs().maxCoeff() : 0.0)}};
        d["full_2sls"] = num(step("linear_iv.full_2sls", [&] { return full_2sls(r); }));
    } else {
        LinearIdentifiedSet base = step("linear_iv.identified_set_linear",
                                        [&] { return identified_set_linear(r, Eigen::VectorXd::Zero(l)); });
        falsified = base.empty();
        d["overidentification"] = {{"falsified", falsified}};
    }

    // Falsification adaptive set.
    const std::vector<std::string> delta_cols = numbered("delta_", l);
    if (k == 1) {
        FasResult fas = estimated ? *estimated : step("linear_iv.fas_k1", [&] { return fas_k1(r); });
        auto name = [&](int j) { return j < 0 ? ojson(nullptr) : ojson(in.instruments[static_cast<std::size_t>(j)]); };
        auto se = [](const std::optional<double>& s) { return s ? num(*s) : ojson(nullptr); };
        // estimate_fas indexes all instruments, fas_k1 only the kept ones.
        const int lo_i = estimated ? fas.lo_instrument : keep[static_cast<std::size_t>(fas.lo_instrument)];
        const int hi_i = estimated ? fas.hi_instrument : keep[static_cast<std::size_t>(fas.hi_instrument)];
        d["fas"] = {{"kind", "interval"},           {"lower", num(fas.lo)},      {"upper", num(fas.hi)},
                    {"lower_instrument", name(lo_i)}, {"upper_instrument", name(hi_i)}, {"lower_se", se(fas.lo_se)},
                    {"upper_se", se(fas.hi_se)}};
        rep.fas.header = {"endpoint", "value", "robust_se", "instrument"};
        rep.fas.rows.push_back({"lower", format_number(fas.lo), fas.lo_se ? format_number(*fas.lo_se) : "",
                                in.instruments[static_cast<std::size_t>(lo_i)]});
        rep.fas.rows.push_back({"upper", format_number(fas.hi), fas.hi_se ? format_number(*fas.hi_se) : "",
                                in.instruments[static_cast<std::size_t>(hi_i)]});

        rep.frontier.header = delta_cols;
        rep.frontier.header.push_back("b");
        ojson summary;
        if (!falsified) {
            std::vector<std::string> row(static_cast<std::size_t>(l), format_number(0.0));
            row.push_back(format_number(fas.lo));
            rep.frontier.rows.push_back(row);
            summary["points"] = 1;
            summary["max_delta"] = nums(Eigen::VectorXd::Zero(l));
        } else {
            FrontierCurve curve = step("linear_iv.falsification_frontier_k1",
                                       [&] { return falsification_frontier_k1(r, opt.frontier_points); });
            Eigen::VectorXd top = Eigen::VectorXd::Zero(l);
            for (std::size_t i = 0; i < curve.delta_points.size(); ++i) {
                std::vector<std::string> row = cells(curve.delta_points[i]);
                row.push_back(format_number(curve.parameter_grid[i](0)));
                rep.frontier.rows.push_back(row);
                top = top.cwiseMax(curve.delta_points[i]);
            }
            summary["points"] = curve.delta_points.size();
            summary["max_delta"] = nums(top);
            if (l == 2) {
                TwoInstrumentFrontier two = step("linear_iv.ff_two_instruments", [&] { return ff_two_instruments(r); });
                summary["intercepts"] = ojson::array({num(two.intercept_1), num(two.intercept_2)});
                summary["slope"] = num(two.slope);
            }
        }
        summary["instruments"] = kept_names;
        d["frontier"] = summary;
    } else {
        FasResult fas = step("linear_iv.fas_general", [&] { return fas_general(r); });
        ojson verts = ojson::array();
        rep.fas.header = {"vertex", "excluded"};
        for (const auto& t : numbered("beta_", k)) rep.fas.header.push_back(t);
        for (std::size_t i = 0; i < fas.vertices.size(); ++i) {
            std::vector<std::string> ex;
            for (int j : fas.vertices[i].excluded_set) ex.push_back(kept_names[static_cast<std::size_t>(j)]);
            verts.push_back({{"excluded", ex}, {"beta", nums(fas.vertices[i].beta)}});
            std::vector<std::string> row{std::to_string(i + 1), join(ex, ";")};
            for (const auto& s : cells(fas.vertices[i].beta)) row.push_back(s);
            rep.fas.rows.push_back(row);
        }
        ojson proj = ojson::array();
        for (Eigen::Index t = 0; t < k; ++t) {
            auto [lo, hi] = step("linear_iv.fas_projection", [&] { return fas_projection(r, Eigen::VectorXd::Unit(k, t)); });
            proj.push_back({{"treatment", in.treatments[static_cast<std::size_t>(t)]}, {"bounds", interval(lo, hi)}});
        }
        d["fas"] = {{"kind", "vertex_set"}, {"vertices", verts}, {"projections", proj}};

        rep.frontier.header = delta_cols;
        for (const auto& t : numbered("b_", k)) rep.frontier.header.push_back(t);
        ojson summary;
        if (!falsified) {
            std::vector<std::string> row(static_cast<std::size_t>(l), format_number(0.0));
            for (const auto& s : cells(fas.vertices.front().beta)) row.push_back(s);
            rep.frontier.rows.push_back(row);
            summary["points"] = 1;
        } else {
            FrontierCurve curve = step("linear_iv.sample_ff_general",
                                       [&] { return sample_ff_general(r, opt.simplex_density); });
            for (std::size_t i = 0; i < curve.delta_points.size(); ++i) {
                std::vector<std::string> row = cells(curve.delta_points[i]);
                for (const auto& s : cells(curve.parameter_grid[i])) row.push_back(s);
                rep.frontier.rows.push_back(row);
            }
            summary["points"] = curve.delta_points.size();
        }
        summary["instruments"] = kept_names;
        d["frontier"] = summary;
    }

    if (!opt.delta_grid.empty()) {
        ojson table = ojson::array();
        for (const auto& entry : opt.delta_grid) {
            Eigen::VectorXd delta = expand(entry, l, "delta_grid");
            LinearIdentifiedSet s = step("linear_iv.identified_set_linear", [&] { return identified_set_linear(r, delta); });
            table.push_back(identified_entry(s, delta, k));
        }
        d["bounds_by_delta"] = table;
    }

    if (opt.breakdown) {
        if (k != 1 || l != 2) config_error("breakdown needs one treatment and two analysed instruments");
        const BreakdownOptions& b = *opt.breakdown;
        std::vector<BreakdownPoint> pts = step("linear_iv.breakdown_frontier_k1", [&] {
            return breakdown_frontier_k1(r, b.conclusion_lo, b.conclusion_hi, b.delta1_grid, b.delta2_cap);
        });
        ojson table = ojson::array();
        for (const auto& p : pts) table.push_back({{"delta_1", num(p.delta1)}, {"delta_2", p.bf ? num(*p.bf) : ojson(nullptr)}});
        d["breakdown"] = {{"conclusion", interval(b.conclusion_lo, b.conclusion_hi)},
                          {"delta2_cap", num(b.delta2_cap)},
                          {"frontier", table}};
    }

    ojson p = provenance_base(c);
    p["relevance_tolerance"] = kRelevanceTol;
    p["weak_iv_cutoff"] = num(opt.weak_iv_cutoff);
    p["standardize_instruments"] = opt.standardize_instruments;
    if (k == 1)
        p["frontier_points"] = opt.frontier_points;
    else
        p["simplex_density"] = opt.simplex_density;
    d["provenance"] = p;
    return rep;
}

// ---------------------------------------------------------------------------
// Binary outcome model

DiscreteJoint binary_input(const AnalysisConfig& c, std::vector<std::string>& names, std::optional<long>& n_rows) {
    if (c.input.csv) {
        const std::string file = c.input.csv->filename().string();
        CsvData csv = read_csv(*c.input.csv);
        auto wanted = role_columns(c.columns);
        if (!c.columns.weight.empty()) wanted.emplace_back("weight", c.columns.weight);
        Eigen::MatrixXd m = select_columns(csv, wanted, file);
        const Eigen::Index l = static_cast<Eigen::Index>(c.columns.instruments.size());
        Eigen::VectorXd w = c.columns.weight.empty() ? Eigen::VectorXd::Ones(m.rows()) : Eigen::VectorXd(m.col(2 + l));
        names = c.columns.instruments;
        n_rows = static_cast<long>(m.rows());
        DiscreteJoint j = step("het_binary.joint_from_rows",
                               [&] { return joint_from_rows(m.col(0), m.col(1), m.middleCols(2, l), w); });
        step("het_binary.validate", [&] { j.validate(); });
        return j;
    }
    const json& t = *c.input.probability_table;
    if (!t.contains("z_supports") || !t.contains("probs"))
        throw Error(ErrorCode::DataError, "probability table needs z_supports and probs");
    DiscreteJoint j;
    if (!t["z_supports"].is_array()) throw Error(ErrorCode::DataError, "z_supports must be a list of lists");
    for (const auto& s : t["z_supports"]) j.z_supports.push_back(vec(s, "z_supports"));
    std::vector<double> p = vec(t["probs"], "probs");
    j.probs = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
    step("het_binary.validate", [&] { j.validate(); });
    names = default_names(c.columns.instruments, j.num_instruments(), "z");
    return j;
}

// ATE bounds, or null where the model is refuted at c.
ojson ate_entry(const std::function<std::pair<double, double>()>& bounds, const char* op) {
    try {
        auto [lo, hi] = bounds();
        return interval(lo, hi);
    } catch (const Error& e) {
        if (e.code() == ErrorCode::ModelFalsifiedAtC) return nullptr;
        throw Error(ErrorCode::DataError, std::string(op) + ": " + e.what());
    }
}

void het_frontier_rows(Report& rep, const std::vector<Eigen::VectorXd>& points, Eigen::Index l,
                       const std::function<std::pair<double, double>(const Eigen::VectorXd&)>& bounds) {
    rep.frontier.header = numbered("c_", l);
    rep.frontier.header.push_back("ate_lo");
    rep.frontier.header.push_back("ate_hi");
    for (const auto& pt : points) {
        std::vector<std::string> row = cells(pt);
        auto [lo, hi] = bounds(pt);
        row.push_back(format_number(lo));
        row.push_back(format_number(hi));
        rep.frontier.rows.push_back(row);
    }
}

void het_fas_rows(Report& rep, std::pair<double, double> fas) {
    rep.fas.header = {"endpoint", "value"};
    rep.fas.rows = {{"lower", format_number(fas.first)}, {"upper", format_number(fas.second)}};
}

ojson c_table(const std::vector<std::vector<double>>& grid, Eigen::Index l,
              const std::function<ojson(const Eigen::VectorXd&)>& entry) {
    ojson table = ojson::array();
    for (const auto& g : grid) {
        Eigen::VectorXd cv = expand(g, l, "c_grid");
        for (double v : cv)
            if (!(v >= 0.0 && v <= 1.0)) config_error("c_grid values must lie in [0, 1]");
        ojson e;
        e["c"] = nums(cv);
        const ojson body = entry(cv);
        for (const auto& item : body.items()) e[item.key()] = item.value();
        table.push_back(e);
    }
    return table;
}

Report het_binary_report(const AnalysisConfig& c) {
    const AnalysisOptions& opt = c.options;
    std::vector<std::string> names;
    std::optional<long> n_rows;
    const DiscreteJoint joint = binary_input(c, names, n_rows);
    const Eigen::Index l = joint.num_instruments();

    Report rep;
    rep.model = ModelKind::HetBinary;
    ojson& d = rep.document;
    d["model"] = "het_binary";
    d["input"] = {{"source", c.input.csv ? "csv" : "probability_table"}, {"n_rows", n_rows ? ojson(*n_rows) : ojson(nullptr)}};
    d["instruments"] = names;
    ojson supports = ojson::array();
    for (const auto& s : joint.z_supports) supports.push_back(s);
    d["supports"] = supports;

    const bool falsified = step("het_binary.is_falsified_at",
                                [&] { return is_falsified_at(joint, CDependence::Zero(l)); });
    d["falsified_at_zero"] = falsified;

    std::vector<Eigen::VectorXd> points;
    if (l == 1) {
        double cstar = step("het_binary.falsification_point_single", [&] { return falsification_point_single(joint); });
        d["c_star"] = num(cstar);
        points.push_back(Eigen::VectorXd::Constant(1, cstar));
    } else {
        points = step("het_binary.falsification_frontier_grid",
                      [&] { return falsification_frontier_grid(joint, opt.resolution); });
    }
    d["frontier"] = {{"points", points.size()}};

    auto fas = step("het_binary.fas_ate", [&] { return fas_ate(joint, opt.resolution); });
    d["fas_ate"] = interval(fas.first, fas.second);
    auto none = step("het_binary.ate_bounds", [&] { return ate_bounds(joint, CDependence::Ones(l)); });
    d["no_assumption_bounds"] = interval(none.first, none.second);

    if (!opt.c_grid.empty()) {
        d["bounds_by_c"] = c_table(opt.c_grid, l, [&](const Eigen::VectorXd& cv) {
            ojson e;
            e["ate"] = ate_entry([&] { return ate_bounds(joint, cv); }, "het_binary.ate_bounds");
            e["y1"] = ate_entry([&] { return potential_outcome_bounds(joint, cv, 1); }, "het_binary.potential_outcome_bounds");
            e["y0"] = ate_entry([&] { return potential_outcome_bounds(joint, cv, 0); }, "het_binary.potential_outcome_bounds");
            return e;
        });
    }

    het_frontier_rows(rep, points, l, [&](const Eigen::VectorXd& pt) {
        return step("het_binary.ate_bounds", [&] { return ate_bounds(joint, pt); });
    });
    het_fas_rows(rep, fas);

    ojson p = provenance_base(c);
    if (l == 1)
        p["falsification_point_tolerance"] = kFalsificationPointTol;
    else
        p["resolution"] = opt.resolution;
    d["provenance"] = p;
    return rep;
}

// ---------------------------------------------------------------------------
// Continuous outcome model

void require_binary(const Eigen::VectorXd& v, const std::string& column) {
    for (double x : v)
        if (x != 0.0 && x != 1.0) throw Error(ErrorCode::DataError, "column '" + column + "' must be coded 0/1");
}

// Histogram estimate of f(y | x, z) tabulated at bin edges; inner edges
// average the two adjacent bins.
ContinuousJoint histogram_joint(const AnalysisConfig& c) {
    const std::string file = c.input.csv->filename().string();
    CsvData csv = read_csv(*c.input.csv);
    Eigen::MatrixXd m = select_columns(csv, role_columns(c.columns), file);
    const int l = static_cast<int>(c.columns.instruments.size());
    const int cells = 1 << l;
    require_binary(m.col(1), c.columns.treatments[0]);
    for (int i = 0; i < l; ++i) require_binary(m.col(2 + i), c.columns.instruments[static_cast<std::size_t>(i)]);

    double lo = m.col(0).minCoeff(), hi = m.col(0).maxCoeff();
    if (c.options.outcome_range) {
        lo = c.options.outcome_range->first;
        hi = c.options.outcome_range->second;
        if (m.col(0).minCoeff() < lo || m.col(0).maxCoeff() > hi)
            throw Error(ErrorCode::DataError, "outcome values fall outside outcome_range");
    }
    if (!(hi > lo)) throw Error(ErrorCode::DataError, "outcome column is constant");

    const int bins = c.options.histogram_bins;
    const double width = (hi - lo) / bins;
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(2 * cells, bins);
    Eigen::MatrixXd pxz = Eigen::MatrixXd::Zero(2, cells);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        const int x = static_cast<int>(m(r, 1));
        int cell = 0;
        for (int i = 0; i < l; ++i) cell = 2 * cell + static_cast<int>(m(r, 2 + i));
        const int bin = std::clamp(static_cast<int>((m(r, 0) - lo) / width), 0, bins - 1);
        counts(x * cells + cell, bin) += 1.0;
        pxz(x, cell) += 1.0;
    }
    pxz /= static_cast<double>(m.rows());

    Eigen::VectorXd grid(bins + 1);
    for (int b = 0; b <= bins; ++b) grid(b) = lo + width * b;
    Eigen::MatrixXd dens(2 * cells, bins + 1);
    for (int row = 0; row < 2 * cells; ++row) {
        const double total = counts.row(row).sum();
        Eigen::VectorXd h = total > 0 ? Eigen::VectorXd(counts.row(row).transpose() / (total * width))
                                      : Eigen::VectorXd::Constant(bins, 1.0 / (hi - lo));
        dens(row, 0) = h(0);
        dens(row, bins) = h(bins - 1);
        for (int b = 1; b < bins; ++b) dens(row, b) = 0.5 * (h(b - 1) + h(b));
    }
    return step("het_continuous.joint_from_grid", [&] { return joint_from_grid(l, grid, dens, pxz); });
}

ContinuousJoint continuous_input(const AnalysisConfig& c) {
    if (c.input.csv) return histogram_joint(c);
    const json& t = *c.input.density_table;
    if (!t.contains("y_grid") || !t.contains("densities") || !t.contains("pxz"))
        throw Error(ErrorCode::DataError, "density table needs y_grid, densities and pxz");
    int l = 1;
    if (t.contains("num_instruments")) {
        if (!t["num_instruments"].is_number_integer()) throw Error(ErrorCode::DataError, "num_instruments must be an integer");
        l = t["num_instruments"].get<int>();
    }
    if (l < 1 || l > 16) throw Error(ErrorCode::DataError, "num_instruments must lie in [1, 16]");
    std::vector<double> g = vec(t["y_grid"], "y_grid");
    Eigen::VectorXd grid = Eigen::Map<Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(g.size()));
    Eigen::MatrixXd dens = matrix(t["densities"], "densities");
    Eigen::MatrixXd pxz = matrix(t["pxz"], "pxz");
    return step("het_continuous.joint_from_grid", [&] { return joint_from_grid(l, grid, dens, pxz); });
}

Report het_continuous_report(const AnalysisConfig& c) {
    const AnalysisOptions& opt = c.options;
    const ContinuousJoint joint = continuous_input(c);
    const Eigen::Index l = joint.num_instruments;
    SieveSpec spec{opt.order_m, opt.grid_n};
    step("het_continuous.validate", [&] { spec.validate(); });
    const ConditionalDensityTable table = step("het_continuous.sieve_table_from_joint",
                                               [&] { return sieve_table_from_joint(joint, spec); });
    // Mean of the outcome in its original units.
    const double y_lo = joint.y_lo, span = joint.y_hi - joint.y_lo;
    const WeightFunction w1 = [=](double y) { return y_lo + span * y; };
    const WeightFunction w0 = [=](double y) { return -(y_lo + span * y); };

    Report rep;
    rep.model = ModelKind::HetContinuous;
    ojson& d = rep.document;
    d["model"] = "het_continuous";
    d["input"] = {{"source", c.input.csv ? "csv" : "density_table"}};
    d["instruments"] = default_names(c.columns.instruments, l, "z");
    d["outcome_range"] = interval(joint.y_lo, joint.y_hi);

    if (l == 1) {
        ojson k = ojson::array();
        for (int x = 0; x < 2; ++x) {
            KitagawaResult res = step("het_continuous.kitagawa_refutation_check",
                                      [&] { return kitagawa_refutation_check(joint, x); });
            k.push_back({{"treatment", x}, {"integral", num(res.integral)}, {"refuted", res.refuted}});
        }
        d["envelope_check"] = k;
    }
    d["falsified_at_zero"] = step("het_continuous.is_falsified_cont",
                                  [&] { return is_falsified_cont(table, Eigen::VectorXd::Zero(l), spec); });

    ContinuousFrontier front = step("het_continuous.approx_ff_fas_cont",
                                    [&] { return approx_ff_fas_cont(table, spec, opt.resolution, w1, w0); });
    if (l == 1) d["c_star"] = num(front.points.front()(0));
    d["frontier"] = {{"points", front.points.size()}};
    d["fas_ate"] = interval(front.fas.first, front.fas.second);
    auto none = step("het_continuous.functional_bounds_cont",
                     [&] { return functional_bounds_cont(table, Eigen::VectorXd::Ones(l), spec, w1, w0); });
    d["no_assumption_bounds"] = interval(none.first, none.second);

    if (!opt.c_grid.empty()) {
        d["bounds_by_c"] = c_table(opt.c_grid, l, [&](const Eigen::VectorXd& cv) {
            ojson e;
            e["ate"] = ate_entry([&] { return functional_bounds_cont(table, cv, spec, w1, w0); },
                                 "het_continuous.functional_bounds_cont");
            return e;
        });
    }

    het_frontier_rows(rep, front.points, l, [&](const Eigen::VectorXd& pt) {
        return step("het_continuous.functional_bounds_cont", [&] { return functional_bounds_cont(table, pt, spec, w1, w0); });
    });
    het_fas_rows(rep, front.fas);

    ojson p = provenance_base(c);
    p["sieve"] = {{"order_m", spec.order_m}, {"grid_n", spec.grid_n}};
    if (l == 1)
        p["frontier_refine_tolerance"] = kFrontierRefineTol;
    else
        p["resolution"] = opt.resolution;
    if (c.input.csv) p["histogram_bins"] = opt.histogram_bins;
    d["provenance"] = p;
    return rep;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << text;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "failed writing " + path.string());
}

}  // namespace

const char* model_name(ModelKind m) noexcept {
    switch (m) {
        case ModelKind::Linear: return "linear";
        case ModelKind::HetBinary: return "het_binary";
        case ModelKind::HetContinuous: return "het_continuous";
    }
    return "unknown";
}

AnalysisConfig parse_config(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) config_error("config must be a JSON object");
    reject_unknown(doc, {"model", "data", "moments", "probability_table", "density_table", "columns", "options", "output"},
                   "config");
    if (!doc.contains("model")) config_error("config needs a model");
    AnalysisConfig c;
    c.model = parse_model(doc["model"]);

    int sources = 0;
    if (doc.contains("data")) {
        if (!doc["data"].is_string()) config_error("data must be a path to a CSV file");
        c.input.csv = base_dir / doc["data"].get<std::string>();
        ++sources;
    }
    auto table = [&](const char* key, std::optional<json>& slot, ModelKind only) {
        if (!doc.contains(key)) return;
        if (c.model != only) config_error(std::string(key) + " is not accepted by model " + model_name(c.model));
        slot = inline_or_file(doc[key], base_dir, key);
        ++sources;
    };
    table("moments", c.input.moments, ModelKind::Linear);
    table("probability_table", c.input.probability_table, ModelKind::HetBinary);
    table("density_table", c.input.density_table, ModelKind::HetContinuous);
    if (sources != 1) config_error("config needs exactly one input source");

    if (doc.contains("columns")) {
        const json& cols = doc["columns"];
        if (!cols.is_object()) config_error("columns must be an object");
        reject_unknown(cols, {"outcome", "treatments", "instruments", "controls", "weight"}, "columns");
        auto single = [&](const char* key) -> std::string {
            if (!cols.contains(key)) return {};
            if (!cols[key].is_string()) config_error(std::string("columns.") + key + " must be a column name");
            return cols[key].get<std::string>();
        };
        c.columns.outcome = single("outcome");
        c.columns.weight = single("weight");
        if (cols.contains("treatments")) c.columns.treatments = as_names(cols["treatments"], "columns.treatments");
        if (cols.contains("instruments")) c.columns.instruments = as_names(cols["instruments"], "columns.instruments");
        if (cols.contains("controls")) c.columns.controls = as_names(cols["controls"], "columns.controls");
    }
    if (c.input.csv) check_columns(c);

    if (doc.contains("options")) {
        if (!doc["options"].is_object()) config_error("options must be an object");
        c.options = parse_options(doc["options"]);
    }
    if (doc.contains("output")) {
        const json& o = doc["output"];
        if (!o.is_object()) config_error("output must be an object");
        reject_unknown(o, {"report", "frontier_csv", "fas_csv"}, "output");
        auto path = [&](const char* key, std::string& slot) {
            if (!o.contains(key)) return;
            if (!o[key].is_string()) config_error(std::string("output.") + key + " must be a file name");
            slot = o[key].get<std::string>();
        };
        path("report", c.output.report);
        path("frontier_csv", c.output.frontier_csv);
        path("fas_csv", c.output.fas_csv);
        if (c.output.report.empty()) config_error("output.report must not be empty");
    }
    return c;
}

AnalysisConfig load_config(const fs::path& config_path) {
    AnalysisConfig c = parse_config(parse_json_file(config_path), config_path.parent_path());
    c.config_path = config_path;
    return c;
}

std::string format_number(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    // Avoid a "-0" cell.
    if (v == 0.0) v = 0.0;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return buf;
}

Report run_analysis(const AnalysisConfig& config) {
    switch (config.model) {
        case ModelKind::Linear: return linear_report(config);
        case ModelKind::HetBinary: return het_binary_report(config);
        case ModelKind::HetContinuous: return het_continuous_report(config);
    }
    config_error("unknown model");
}

Report run_analysis(const fs::path& config_path) { return run_analysis(load_config(config_path)); }

void emit_report_json(const Report& report, const fs::path& path) { write_file(path, report.document.dump(2) + "\n"); }

void emit_frontier_csv(const CsvTable& table, const fs::path& path) {
    std::string text = join(table.header, ",") + "\n";
    for (const auto& row : table.rows) text += join(row, ",") + "\n";
    write_file(path, text);
}

void write_outputs(const Report& report, const AnalysisConfig& config, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());
    emit_report_json(report, out_dir / config.output.report);
    if (!config.output.frontier_csv.empty()) emit_frontier_csv(report.frontier, out_dir / config.output.frontier_csv);
    if (!config.output.fas_csv.empty()) emit_frontier_csv(report.fas, out_dir / config.output.fas_csv);
}

}  // namespace fiv
