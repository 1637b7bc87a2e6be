#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

namespace fiv::detail {

// Grid {0, r, 2r, ...} on [0,1] with 1 appended.
std::vector<double> unit_grid(double resolution);

// Minimal points, under the componentwise order, of the grid cells where
// `admissible` holds. `admissible` must be upward closed. Runs one binary
// search over the last coordinate for every prefix of the others.
std::vector<Eigen::VectorXd> minimal_grid_points(int dims, double resolution,
                                                 const std::function<bool(const Eigen::VectorXd&)>& admissible);

}  // namespace fiv::detail
