#pragma once

// Least-squares fitting of MixtureParams to binned rating frequencies.

#include "error.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "rng.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace explainmix {

struct Histogram {
    std::array<std::uint64_t, kNumBins> counts{};
    std::uint64_t total = 0;
    std::array<double, kNumBins> freqs{};

    static Histogram from_counts(const std::array<std::uint64_t, kNumBins>& counts) {
        Histogram h;
        h.counts = counts;
        for (auto c : counts) h.total += c;
        if (h.total == 0) throw EmptyInputError("histogram: no ratings");
        for (std::size_t k = 0; k < kNumBins; ++k)
            h.freqs[k] = static_cast<double>(counts[k]) / static_cast<double>(h.total);
        return h;
    }

    double mean() const noexcept {
        double m = 0.0;
        for (std::size_t k = 0; k < kNumBins; ++k) m += static_cast<double>(k) * freqs[k];
        return m;
    }
};

inline Histogram build_histogram(std::span<const Rating> ratings) {
    if (ratings.empty()) throw EmptyInputError("build_histogram: empty rating list");
    std::array<std::uint64_t, kNumBins> counts{};
    for (const auto& r : ratings) {
        if (r.value < kMinRating || r.value > kMaxRating)
            throw ValidationError("build_histogram: rating " + std::to_string(r.value) + " outside 0..10");
        ++counts[static_cast<std::size_t>(r.value)];
    }
    return Histogram::from_counts(counts);
}

struct FitOptions {
    bool constrain_mean = false;
    bool exclude_bin5 = false;
    std::size_t n_starts = 12;
    std::size_t max_iters = 4000;   // objective evaluations per start
    double tol = 1e-15;             // convergence tolerance on the loss
    double boundary_tol = 1e-6;     // distance to a bound reported as a hit
    // Mean c for the constraint; the histogram mean when unset.
    std::optional<double> target_mean;
    PmfMode pmf_mode = PmfMode::TruncatedRenormalized;
};

struct FitResult {
    MixtureParams params;
    double rse = 0.0;
    double loss = 0.0;
    bool boundary_hit = false;
    bool converged = true;
    std::size_t n_evals = 0;
};

// Search box; sigma and alpha are searched on a log scale.
struct ParamBounds {
    static constexpr double mu_lo = 0.0, mu_hi = 10.0;
    static constexpr double sigma_lo = 0.1, sigma_hi = 100.0;
    static constexpr double a_lo = 0.0, a_hi = 1.0;
    static constexpr double alpha_lo = 1e-3, alpha_hi = 10.0;
};

inline std::array<double, kNumBins> model_frequencies(const MixtureParams& p,
                                                      PmfMode mode = PmfMode::TruncatedRenormalized) {
    return discretize_pmf(p, mode).probs;
}

inline std::size_t free_parameter_count(const FitOptions& o) noexcept { return o.constrain_mean ? 3 : 4; }

inline std::size_t bins_used(const FitOptions& o) noexcept { return o.exclude_bin5 ? kNumBins - 1 : kNumBins; }

// Sum of squared frequency residuals over the bins the options include.
inline double residual_sum_of_squares(const Histogram& hist, const std::array<double, kNumBins>& model,
                                      const FitOptions& o) {
    double rss = 0.0;
    for (std::size_t k = 0; k < kNumBins; ++k) {
        if (o.exclude_bin5 && k == 5) continue;
        const double r = hist.freqs[k] - model[k];
        rss += r * r;
    }
    return rss;
}

inline double rse_from_rss(double rss, std::size_t n_bins, std::size_t n_params) {
    if (n_bins <= n_params) throw DegreesOfFreedomError("residual standard error: no degrees of freedom left");
    return std::sqrt(rss / static_cast<double>(n_bins - n_params));
}

inline double rse_from_rss(double rss, const FitOptions& o) {
    return rse_from_rss(rss, bins_used(o), free_parameter_count(o));
}

inline double residual_standard_error(const Histogram& hist, const MixtureParams& p, const FitOptions& o) {
    if (hist.total == 0) throw EmptyInputError("residual_standard_error: empty histogram");
    return rse_from_rss(residual_sum_of_squares(hist, model_frequencies(p, o.pmf_mode), o), o);
}

namespace detail {

inline double lerp_log(double lo, double hi, double u) {
    return std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
}

struct FitProblem {
    const Histogram& hist;
    const FitOptions& opt;
    double c;

    std::size_t dim() const { return opt.constrain_mean ? 3 : 4; }

    // Unit-box coordinates to parameters; nullopt where the constraint fails.
    std::optional<MixtureParams> decode(const optim::Point& u) const {
        using B = ParamBounds;
        const double mu = B::mu_lo + u[0] * (B::mu_hi - B::mu_lo);
        const double sigma = lerp_log(B::sigma_lo, B::sigma_hi, u[1]);
        const double a = u[2];
        if (opt.constrain_mean) {
            const double denom = c - (1.0 - a) * mu;
            if (!(a > 0.0) || !(denom > 0.0)) return std::nullopt;
            return MixtureParams{mu, sigma, a, a / denom, c, ConstraintMode::Constrained};
        }
        const double alpha = lerp_log(B::alpha_lo, B::alpha_hi, u[3]);
        MixtureParams p{mu, sigma, a, alpha, 0.0, ConstraintMode::Free};
        p.c = p.mean();
        return p;
    }

    double loss(const optim::Point& u) const {
        const auto p = decode(u);
        if (!p) return std::numeric_limits<double>::infinity();
        try {
            return residual_sum_of_squares(hist, model_frequencies(*p, opt.pmf_mode), opt);
        } catch (const DomainError&) {
            return std::numeric_limits<double>::infinity();
        }
    }
};

inline bool near_bound(double v, double lo, double hi, double tol) {
    return std::abs(v - lo) <= tol || std::abs(v - hi) <= tol;
}

inline bool boundary_hit(const MixtureParams& p, const FitOptions& o) {
    using B = ParamBounds;
    bool hit = near_bound(p.mu, B::mu_lo, B::mu_hi, o.boundary_tol) ||
               near_bound(p.sigma, B::sigma_lo, B::sigma_hi, o.boundary_tol) ||
               near_bound(p.a, B::a_lo, B::a_hi, o.boundary_tol);
    if (!o.constrain_mean) hit = hit || near_bound(p.alpha, B::alpha_lo, B::alpha_hi, o.boundary_tol);
    return hit;
}

} // namespace detail

/// Minimizes the binned squared error over the bounded parameter box.
///
/// Latin-hypercube starts (seeded) are each refined by Nelder-Mead. The best
/// loss wins; losses within 1e-12 of each other are ordered by the smallest
/// (mu, sigma, a). In constrained mode alpha follows from c, which is
/// `options.target_mean` or else the histogram mean.
inline FitResult fit_mixture(const Histogram& hist, const FitOptions& options, std::uint64_t seed) {
    if (hist.total == 0) throw EmptyInputError("fit_mixture: empty histogram");
    if (options.n_starts < 1) throw ValidationError("fit_mixture: n_starts must be at least 1");
    if (!(options.tol > 0.0)) throw ValidationError("fit_mixture: tol must be positive");
    // Fail early on a bad degrees-of-freedom setup.
    (void)rse_from_rss(0.0, options);

    const detail::FitProblem problem{hist, options, options.target_mean.value_or(hist.mean())};
    auto objective = [&](const optim::Point& u) { return problem.loss(u); };

    Rng rng(seed);
    const auto starts = optim::latin_hypercube(options.n_starts, problem.dim(), rng);

    optim::NelderMeadOptions nm;
    nm.max_evals = options.max_iters;
    nm.ftol = options.tol;

    std::optional<FitResult> best;
    std::size_t total_evals = 0;
    for (const auto& start : starts) {
        ++total_evals;
        if (!std::isfinite(objective(start))) continue;
        const auto r = optim::nelder_mead(objective, start, nm);
        total_evals += r.n_evals;
        if (!std::isfinite(r.value)) continue;
        FitResult cand;
        cand.params = *problem.decode(r.x);
        cand.loss = r.value;
        cand.converged = r.converged;
        if (!best) {
            best = cand;
            continue;
        }
        const bool better = cand.loss < best->loss - 1e-12;
        const bool tie = std::abs(cand.loss - best->loss) <= 1e-12;
        const auto key = [](const FitResult& f) { return std::tie(f.params.mu, f.params.sigma, f.params.a); };
        if (better || (tie && key(cand) < key(*best))) best = cand;
    }
    if (!best) throw InfeasibleError("fit_mixture: mean constraint infeasible at every start");

    best->rse = rse_from_rss(best->loss, options);
    best->boundary_hit = detail::boundary_hit(best->params, options);
    best->n_evals = total_evals;
    return *best;
}

struct StrategyRating {
    StrategyKind strategy;
    Rating rating;
};

inline constexpr std::size_t kMinRatingsPerStrategy = 50;

struct StrategyFits {
    std::map<StrategyKind, FitResult> per_strategy;
    std::map<StrategyKind, Histogram> histograms;
    FitResult combined;
    Histogram combined_histogram;
    std::vector<std::string> warnings;
};

/// Fits every strategy with at least kMinRatingsPerStrategy ratings and the
/// pooled ratings of all strategies. Every group is fitted with the same seed.
inline StrategyFits fit_all_strategies(std::span<const StrategyRating> ratings, const FitOptions& options,
                                       std::uint64_t seed) {
    if (ratings.empty()) throw EmptyInputError("fit_all_strategies: no ratings");
    std::map<StrategyKind, std::vector<Rating>> groups;
    std::vector<Rating> pooled;
    pooled.reserve(ratings.size());
    for (const auto& sr : ratings) {
        groups[sr.strategy].push_back(sr.rating);
        pooled.push_back(sr.rating);
    }
    StrategyFits out;
    for (const auto& [kind, group] : groups) {
        if (group.size() < kMinRatingsPerStrategy) {
            out.warnings.push_back(std::string(to_token(kind)) + ": " + std::to_string(group.size()) +
                                   " ratings, below the minimum of " +
                                   std::to_string(kMinRatingsPerStrategy) + "; skipped");
            continue;
        }
        auto hist = build_histogram(group);
        out.per_strategy.emplace(kind, fit_mixture(hist, options, seed));
        out.histograms.emplace(kind, std::move(hist));
    }
    out.combined_histogram = build_histogram(pooled);
    out.combined = fit_mixture(out.combined_histogram, options, seed);
    return out;
}

inline void to_json(nlohmann::json& j, const FitOptions& o) {
    j = nlohmann::json{{"constrain_mean", o.constrain_mean},
                       {"exclude_bin5", o.exclude_bin5},
                       {"n_starts", o.n_starts},
                       {"max_iters", o.max_iters},
                       {"target_mean", o.target_mean ? nlohmann::json(round_sig(*o.target_mean)) : nlohmann::json(nullptr)},
                       {"pmf_mode", std::string(pmf_mode_token(o.pmf_mode))}};
}

inline void from_json(const nlohmann::json& j, FitOptions& o) {
    o.constrain_mean = j.value("constrain_mean", false);
    o.exclude_bin5 = j.value("exclude_bin5", false);
    o.n_starts = j.value("n_starts", o.n_starts);
    o.max_iters = j.value("max_iters", o.max_iters);
    if (j.contains("target_mean") && !j.at("target_mean").is_null()) o.target_mean = j.at("target_mean").get<double>();
    if (j.contains("pmf_mode")) {
        const auto tok = j.at("pmf_mode").get<std::string>();
        const auto mode = pmf_mode_from_token(tok);
        if (!mode) throw ValidationError("unknown pmf_mode '" + tok + "'");
        o.pmf_mode = *mode;
    }
}

inline void to_json(nlohmann::json& j, const FitResult& f) {
    j = nlohmann::json{{"params", f.params},
                       {"rse", round_sig(f.rse)},
                       {"loss", round_sig(f.loss)},
                       {"boundary_hit", f.boundary_hit},
                       {"converged", f.converged},
                       {"n_evals", f.n_evals}};
}

inline void from_json(const nlohmann::json& j, FitResult& f) {
    f.params = j.at("params").get<MixtureParams>();
    f.rse = j.at("rse").get<double>();
    f.loss = j.value("loss", 0.0);
    f.boundary_hit = j.value("boundary_hit", false);
    f.converged = j.value("converged", true);
    f.n_evals = j.value("n_evals", std::size_t{0});
}

} // namespace explainmix
