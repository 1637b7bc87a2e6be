#include "grid_frontier.hpp"

#include "falsify_iv/parallel.hpp"

#include <algorithm>

namespace fiv::detail {

std::vector<double> unit_grid(double resolution) {
    std::vector<double> grid;
    for (int i = 0; i * resolution < 1.0 - 1e-12; ++i) grid.push_back(i * resolution);
    grid.push_back(1.0);
    return grid;
}

std::vector<Eigen::VectorXd> minimal_grid_points(int dims, double resolution,
                                                 const std::function<bool(const Eigen::VectorXd&)>& admissible) {
    const std::vector<double> grid = unit_grid(resolution);
    const int g = static_cast<int>(grid.size());
    const int l = dims;

    std::size_t prefixes = 1;
    for (int i = 0; i + 1 < l; ++i) prefixes *= static_cast<std::size_t>(g);
    auto decode = [&](std::size_t idx) {
        std::vector<int> p(static_cast<std::size_t>(std::max(l - 1, 0)));
        for (int i = l - 2; i >= 0; --i) {
            p[static_cast<std::size_t>(i)] = static_cast<int>(idx % static_cast<std::size_t>(g));
            idx /= static_cast<std::size_t>(g);
        }
        return p;
    };
    auto encode = [&](const std::vector<int>& p) {
        std::size_t idx = 0;
        for (int v : p) idx = idx * static_cast<std::size_t>(g) + static_cast<std::size_t>(v);
        return idx;
    };

    // For each prefix, the first grid index of the last coordinate that is
    // is admissible (g when none is).
    std::vector<int> first(prefixes, g);
    parallel_for(prefixes, [&](std::size_t idx) {
        std::vector<int> p = decode(idx);
        Eigen::VectorXd c(l);
        for (int i = 0; i + 1 < l; ++i) c(i) = grid[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
        auto ok = [&](int t) {
            c(l - 1) = grid[static_cast<std::size_t>(t)];
            return admissible(c);
        };
        if (!ok(g - 1)) return;
        if (ok(0)) {
            first[idx] = 0;
            return;
        }
        int lo = 0, hi = g - 1;
        while (hi - lo > 1) {
            int mid = (lo + hi) / 2;
            (ok(mid) ? hi : lo) = mid;
        }
        first[idx] = hi;
    });

    std::vector<Eigen::VectorXd> out;
    for (std::size_t idx = 0; idx < prefixes; ++idx) {
        if (first[idx] == g) continue;
        std::vector<int> p = decode(idx);
        bool minimal = true;
        for (std::size_t i = 0; i < p.size() && minimal; ++i) {
            if (p[i] == 0) continue;
            std::vector<int> q = p;
            --q[i];
            if (first[encode(q)] <= first[idx]) minimal = false;
        }
        if (!minimal) continue;
        Eigen::VectorXd c(l);
        for (int i = 0; i + 1 < l; ++i) c(i) = grid[static_cast<std::size_t>(p[static_cast<std::size_t>(i)])];
        c(l - 1) = grid[static_cast<std::size_t>(first[idx])];
        out.push_back(c);
    }
    return out;
}

}  // namespace fiv::detail
