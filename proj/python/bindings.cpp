#include "falsify_iv/error.hpp"
#include "falsify_iv/het_binary.hpp"
#include "falsify_iv/het_continuous.hpp"
#include "falsify_iv/linear_iv.hpp"
#include "falsify_iv/moments.hpp"
#include "falsify_iv/report.hpp"

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <limits>
#include <optional>

namespace py = pybind11;
using namespace fiv;

namespace {

RoleMap parse_roles(const std::vector<std::string>& names) {
    RoleMap roles;
    for (const auto& n : names) {
        if (n == "outcome") roles.push_back(Role::Outcome);
        else if (n == "treatment") roles.push_back(Role::Treatment);
        else if (n == "instrument") roles.push_back(Role::Instrument);
        else if (n == "control") roles.push_back(Role::Control);
        else throw Error(ErrorCode::InvalidArgument, "unknown role '" + n + "'");
    }
    return roles;
}

py::dict fas_dict(const FasResult& f) {
    py::dict d;
    d["kind"] = f.kind == FasKind::Interval ? "interval" : "vertex_set";
    d["lower"] = f.lo;
    d["upper"] = f.hi;
    d["lower_instrument"] = f.lo_instrument;
    d["upper_instrument"] = f.hi_instrument;
    d["lower_se"] = f.lo_se ? py::cast(*f.lo_se) : py::none();
    d["upper_se"] = f.hi_se ? py::cast(*f.hi_se) : py::none();
    py::list verts;
    for (const auto& v : f.vertices) {
        py::dict e;
        e["excluded"] = v.excluded_set;
        e["beta"] = v.beta;
        e["robust_se"] = v.robust_se ? py::cast(*v.robust_se) : py::none();
        verts.append(e);
    }
    d["vertices"] = verts;
    d["screened_out"] = f.screened_out;
    d["f_stats"] = f.f_stats;
    return d;
}

}  // namespace

PYBIND11_MODULE(_falsify_iv, m) {
    m.doc() = "Falsification frontiers and adaptive sets for instrumental variable models";

    PYBIND11_CONSTINIT static py::gil_safe_call_once_and_store<py::object> error_type;
    error_type.call_once_and_store_result(
        [&]() { return py::object(py::exception<Error>(m, "FalsifyIvError", PyExc_ValueError)); });
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            const py::object& type = error_type.get_stored();
            py::object exc = type(e.what());
            exc.attr("code") = error_name(e.code());
            PyErr_SetObject(type.ptr(), exc.ptr());
        }
    });

    py::class_<ReducedMoments>(m, "ReducedMoments")
        .def(py::init([](const Eigen::VectorXd& psi, const Eigen::MatrixXd& pi, std::optional<Eigen::MatrixXd> var_z) {
                 ReducedMoments r;
                 r.psi = psi;
                 r.pi = pi;
                 r.var_z = var_z ? *var_z : Eigen::MatrixXd::Identity(psi.size(), psi.size());
                 r.validate();
                 return r;
             }),
             py::arg("psi"), py::arg("pi"), py::arg("var_z") = py::none())
        .def_readonly("psi", &ReducedMoments::psi)
        .def_readonly("pi", &ReducedMoments::pi)
        .def_readonly("var_z", &ReducedMoments::var_z)
        .def_property_readonly("num_instruments", &ReducedMoments::num_instruments)
        .def_property_readonly("num_treatments", &ReducedMoments::num_treatments);

    m.def(
        "reduced_from_sample",
        [](const Eigen::MatrixXd& rows, const std::vector<std::string>& roles, bool standardize) {
            return partial_out_controls(moment_set_from_sample(rows, parse_roles(roles)), standardize);
        },
        py::arg("rows"), py::arg("roles"), py::arg("standardize_instruments") = false);

    m.def("fas_k1", [](const ReducedMoments& r) { return fas_dict(fas_k1(r)); });
    m.def("fas_general", [](const ReducedMoments& r) { return fas_dict(fas_general(r)); });
    m.def("fas_projection", &fas_projection);
    m.def("full_2sls", &full_2sls);
    m.def("twosls_weights", &twosls_weights);
    m.def("sargan_falsified", &sargan_falsified, py::arg("r"), py::arg("tol") = 1e-9);
    m.def("qmt_star", &qmt_star);
    m.def("ff_two_instruments", [](const ReducedMoments& r) {
        TwoInstrumentFrontier f = ff_two_instruments(r);
        return py::make_tuple(f.intercept_1, f.intercept_2, f.slope);
    });
    m.def(
        "falsification_frontier_k1",
        [](const ReducedMoments& r, int n_points) {
            FrontierCurve c = falsification_frontier_k1(r, n_points);
            Eigen::MatrixXd delta(static_cast<Eigen::Index>(c.delta_points.size()), r.num_instruments());
            Eigen::VectorXd b(static_cast<Eigen::Index>(c.delta_points.size()));
            for (std::size_t i = 0; i < c.delta_points.size(); ++i) {
                delta.row(static_cast<Eigen::Index>(i)) = c.delta_points[i].transpose();
                b(static_cast<Eigen::Index>(i)) = c.parameter_grid[i](0);
            }
            return py::make_tuple(delta, b);
        },
        py::arg("r"), py::arg("n_points") = 101);
    m.def("identified_set_linear", [](const ReducedMoments& r, const Eigen::VectorXd& delta) -> py::object {
        LinearIdentifiedSet s = identified_set_linear(r, delta);
        switch (s.kind) {
            case SetKind::Empty: return py::none();
            case SetKind::Interval: return py::make_tuple(s.lo, s.hi);
            case SetKind::AllSpace:
                return py::make_tuple(-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity());
            case SetKind::Polytope: return py::make_tuple(s.polytope->a, s.polytope->b);
        }
        return py::none();
    });
    m.def(
        "estimate_fas",
        [](const Eigen::MatrixXd& rows, const std::vector<std::string>& roles, double cutoff, bool standardize) {
            return fas_dict(estimate_fas(rows, parse_roles(roles), cutoff, standardize));
        },
        py::arg("rows"), py::arg("roles"), py::arg("cutoff") = 10.0, py::arg("standardize_instruments") = false);

    py::class_<DiscreteJoint>(m, "DiscreteJoint")
        .def(py::init([](std::vector<std::vector<double>> supports, const Eigen::VectorXd& probs) {
                 DiscreteJoint j;
                 j.z_supports = std::move(supports);
                 j.probs = probs;
                 j.validate();
                 return j;
             }),
             py::arg("z_supports"), py::arg("probs"))
        .def_readonly("z_supports", &DiscreteJoint::z_supports)
        .def_readonly("probs", &DiscreteJoint::probs)
        .def_property_readonly("num_instruments", &DiscreteJoint::num_instruments);

    m.def("falsification_point_single", &falsification_point_single);
    m.def("is_falsified_at", &is_falsified_at);
    m.def("ate_bounds", &ate_bounds);
    m.def("potential_outcome_bounds", &potential_outcome_bounds, py::arg("joint"), py::arg("c"), py::arg("x"),
          py::arg("instrument") = 0);
    m.def("fas_ate", &fas_ate, py::arg("joint"), py::arg("resolution") = 0.01);
    m.def("falsification_frontier_grid", &falsification_frontier_grid, py::arg("joint"), py::arg("resolution") = 0.01);

    m.def("bernstein_basis", &bernstein_basis);
    m.def(
        "continuous_frontier",
        [](int num_instruments, const Eigen::VectorXd& y_grid, const Eigen::MatrixXd& densities, const Eigen::MatrixXd& pxz,
           int order_m, int grid_n, double resolution) {
            ContinuousJoint j = joint_from_grid(num_instruments, y_grid, densities, pxz);
            SieveSpec spec{order_m, grid_n};
            ConditionalDensityTable t = sieve_table_from_joint(j, spec);
            const double lo = j.y_lo, span = j.y_hi - j.y_lo;
            ContinuousFrontier f = approx_ff_fas_cont(
                t, spec, resolution, [=](double y) { return lo + span * y; }, [=](double y) { return -(lo + span * y); });
            return py::make_tuple(f.points, f.fas);
        },
        py::arg("num_instruments"), py::arg("y_grid"), py::arg("densities"), py::arg("pxz"), py::arg("order_m") = 30,
        py::arg("grid_n") = 201, py::arg("resolution") = 0.01);

    m.def(
        "run_analysis",
        [](const std::filesystem::path& config, std::optional<std::filesystem::path> out_dir) {
            AnalysisConfig cfg = load_config(config);
            Report rep = run_analysis(cfg);
            if (out_dir) write_outputs(rep, cfg, *out_dir);
            return rep.document.dump();
        },
        py::arg("config"), py::arg("out_dir") = py::none());
}
