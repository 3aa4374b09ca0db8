#pragma once

// Derivative-free minimization over the unit box [0, 1]^d: seeded
// Latin-hypercube start points and Nelder-Mead with vertex projection.

#include "rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace explainmix::optim {

using Point = std::vector<double>;

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// n points in [0,1]^dim, one per stratum along every axis.
inline std::vector<Point> latin_hypercube(std::size_t n, std::size_t dim, Rng& rng) {
    std::vector<Point> pts(n, Point(dim));
    std::vector<std::size_t> perm(n);
    for (std::size_t d = 0; d < dim; ++d) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm.begin(), perm.end());
        for (std::size_t i = 0; i < n; ++i)
            pts[i][d] = (static_cast<double>(perm[i]) + rng.uniform()) / static_cast<double>(n);
    }
    return pts;
}

struct NelderMeadOptions {
    std::size_t max_evals = 4000;
    double ftol = 1e-15;      // spread of vertex values
    double xtol = 1e-9;       // simplex extent, unit-box coordinates
    double initial_step = 0.1;
    std::size_t max_restarts = 4;
};

struct NelderMeadResult {
    Point x;
    double value = std::numeric_limits<double>::infinity();
    std::size_t n_evals = 0;
    bool converged = false;
};

namespace detail {

struct Simplex {
    std::vector<Point> v;
    std::vector<double> f;

    void sort() {
        std::vector<std::size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::stable_sort(idx.begin(), idx.end(), [&](auto i, auto j) { return f[i] < f[j]; });
        std::vector<Point> v2;
        std::vector<double> f2;
        for (auto i : idx) {
            v2.push_back(std::move(v[i]));
            f2.push_back(f[i]);
        }
        v = std::move(v2);
        f = std::move(f2);
    }

    double extent() const {
        double e = 0.0;
        for (std::size_t i = 1; i < v.size(); ++i)
            for (std::size_t d = 0; d < v[0].size(); ++d) e = std::max(e, std::abs(v[i][d] - v[0][d]));
        return e;
    }
};

} // namespace detail

/// Minimizes f over [0,1]^d from x0. Trial points are projected onto the box,
/// so optima on the boundary are reached exactly. After convergence the
/// simplex is rebuilt around the best vertex until a restart brings no
/// improvement.
template <class F>
NelderMeadResult nelder_mead(F&& f, Point x0, const NelderMeadOptions& opt = {}) {
    const std::size_t dim = x0.size();
    for (auto& c : x0) c = clamp01(c);

    NelderMeadResult res;
    auto eval = [&](const Point& x) {
        ++res.n_evals;
        const double y = f(x);
        return std::isnan(y) ? std::numeric_limits<double>::infinity() : y;
    };

    Point best = x0;
    double best_f = eval(best);
    bool converged = false;

    for (std::size_t restart = 0; restart <= opt.max_restarts; ++restart) {
        detail::Simplex s;
        s.v.push_back(best);
        s.f.push_back(best_f);
        for (std::size_t d = 0; d < dim; ++d) {
            Point p = best;
            p[d] = p[d] + opt.initial_step <= 1.0 ? p[d] + opt.initial_step : p[d] - opt.initial_step;
            s.v.push_back(p);
            s.f.push_back(eval(p));
        }

        converged = false;
        while (res.n_evals < opt.max_evals) {
            s.sort();
            if (s.f.back() - s.f.front() <= opt.ftol && s.extent() <= opt.xtol) {
                converged = true;
                break;
            }
            Point centroid(dim, 0.0);
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t d = 0; d < dim; ++d) centroid[d] += s.v[i][d] / static_cast<double>(dim);

            auto along = [&](double t) {
                Point p(dim);
                for (std::size_t d = 0; d < dim; ++d)
                    p[d] = clamp01(centroid[d] + t * (s.v[dim][d] - centroid[d]));
                return p;
            };

            Point xr = along(-1.0);
            const double fr = eval(xr);
            if (fr < s.f[0]) {
                Point xe = along(-2.0);
                const double fe = eval(xe);
                if (fe < fr) {
                    s.v[dim] = std::move(xe);
                    s.f[dim] = fe;
                } else {
                    s.v[dim] = std::move(xr);
                    s.f[dim] = fr;
                }
                continue;
            }
            if (fr < s.f[dim - 1]) {
                s.v[dim] = std::move(xr);
                s.f[dim] = fr;
                continue;
            }
            const bool outside = fr < s.f[dim];
            Point xc = along(outside ? -0.5 : 0.5);
            const double fc = eval(xc);
            if (fc < (outside ? fr : s.f[dim])) {
                s.v[dim] = std::move(xc);
                s.f[dim] = fc;
                continue;
            }
            for (std::size_t i = 1; i <= dim; ++i) {
                for (std::size_t d = 0; d < dim; ++d) s.v[i][d] = s.v[0][d] + 0.5 * (s.v[i][d] - s.v[0][d]);
                s.f[i] = eval(s.v[i]);
            }
        }
        s.sort();
        const bool improved = s.f.front() < best_f;
        if (s.f.front() <= best_f) {
            best = s.v.front();
            best_f = s.f.front();
        }
        if (!converged || !improved) break;
    }

    res.x = std::move(best);
    res.value = best_f;
    res.converged = converged;
    return res;
}

} // namespace explainmix::optim
