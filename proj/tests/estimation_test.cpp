#include "support/oracles.hpp"

#include <explainmix/estimation.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace explainmix;

namespace {

std::vector<Rating> draw(const MixtureParams& p, std::size_t n, std::uint64_t seed) {
    RatingSampler sampler(discretize_pmf(p));
    Rng rng(seed);
    std::vector<Rating> out(n);
    for (auto& r : out) r = sampler(rng);
    return out;
}

// Histogram whose frequencies are (up to count rounding at 1e12) the pmf itself.
Histogram exact_histogram(const MixtureParams& p) {
    const auto pmf = discretize_pmf(p);
    std::array<std::uint64_t, kNumBins> counts{};
    for (std::size_t k = 0; k < kNumBins; ++k) counts[k] = static_cast<std::uint64_t>(std::llround(pmf[k] * 1e12));
    return Histogram::from_counts(counts);
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

const MixtureParams kCombined = MixtureParams::free(6.88, 3.05, 0.69, 0.47);

} // namespace

TEST(BuildHistogram, Counting) {
    const std::vector<Rating> r{{0}, {0}, {10}};
    const auto h = build_histogram(r);
    EXPECT_EQ(h.counts[0], 2u);
    EXPECT_EQ(h.counts[10], 1u);
    EXPECT_EQ(h.total, 3u);
    EXPECT_DOUBLE_EQ(h.freqs[0], 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(h.freqs[10], 1.0 / 3.0);
    for (std::size_t k = 1; k < 10; ++k) EXPECT_EQ(h.freqs[k], 0.0);
}

TEST(BuildHistogram, UniformAndNormalized) {
    std::vector<Rating> r;
    for (int v = 0; v <= 10; ++v) r.push_back({v});
    const auto h = build_histogram(r);
    double s = 0.0;
    for (double f : h.freqs) {
        EXPECT_DOUBLE_EQ(f, 1.0 / 11.0);
        s += f;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(BuildHistogram, Errors) {
    EXPECT_THROW(build_histogram(std::vector<Rating>{}), EmptyInputError);
    EXPECT_THROW(build_histogram(std::vector<Rating>{{3}, {11}}), ValidationError);
    EXPECT_THROW(build_histogram(std::vector<Rating>{{-1}}), ValidationError);
}

TEST(BuildHistogram, SampledFrequenciesApproachPmf) {
    const auto h = build_histogram(draw(kCombined, 100'000, 8));
    const auto pmf = discretize_pmf(kCombined);
    double tv = 0.0;
    for (std::size_t k = 0; k < kNumBins; ++k) tv += std::abs(h.freqs[k] - pmf[k]);
    EXPECT_LT(0.5 * tv, 0.01);
}

TEST(ModelFrequencies, DelegatesToPmf) {
    EXPECT_EQ(model_frequencies(kCombined), discretize_pmf(kCombined).probs);
    // Bin 0 is half width ([0, 0.5]); it exceeds bin 1 once alpha > 2 ln(golden ratio).
    const auto slow = model_frequencies(MixtureParams::free(0.0, 1.0, 1.0, 0.3));
    for (std::size_t k = 1; k + 1 < kNumBins; ++k) EXPECT_GT(slow[k], slow[k + 1]);
    const auto fast = model_frequencies(MixtureParams::free(0.0, 1.0, 1.0, 1.0));
    for (std::size_t k = 0; k + 1 < kNumBins; ++k) EXPECT_GT(fast[k], fast[k + 1]);
    const auto ref = oracle::pmf({6.88, 3.05, 0.69, 0.47});
    const auto m = model_frequencies(kCombined);
    for (std::size_t k = 0; k < kNumBins; ++k) EXPECT_NEAR(m[k], ref[k], 1e-8);
}

TEST(ResidualStandardError, PerfectFitIsZero) {
    const auto h = exact_histogram(kCombined);
    EXPECT_LT(residual_standard_error(h, kCombined, FitOptions{}), 1e-12);
}

TEST(ResidualStandardError, QuadraticLossIdentity) {
    const auto h = build_histogram(draw(kCombined, 2000, 4));
    const auto model = model_frequencies(kCombined);
    FitOptions o;
    const double rss = residual_sum_of_squares(h, model, o);
    for (double eps : {1e-3, -2e-3, 5e-2}) {
        Histogram moved = h;
        moved.freqs[3] += eps;
        const double residual = h.freqs[3] - model[3];
        EXPECT_NEAR(residual_sum_of_squares(moved, model, o) - rss, eps * eps + 2.0 * eps * residual, 1e-14);
    }
}

TEST(ResidualStandardError, DegreesOfFreedom) {
    FitOptions o;
    const double rss = 0.07;
    EXPECT_DOUBLE_EQ(rse_from_rss(rss, o), std::sqrt(rss / 7.0));
    o.constrain_mean = true;
    EXPECT_DOUBLE_EQ(rse_from_rss(rss, o), std::sqrt(rss / 8.0));
    o.exclude_bin5 = true;
    EXPECT_DOUBLE_EQ(rse_from_rss(rss, o), std::sqrt(rss / 7.0));
    EXPECT_THROW(rse_from_rss(rss, 4, 4), DegreesOfFreedomError);
}

TEST(ResidualStandardError, StudySizedSample) {
    // 4458 ratings, the size of the pooled likelihood data.
    const auto h = build_histogram(draw(kCombined, 4458, 31));
    EXPECT_LT(residual_standard_error(h, kCombined, FitOptions{}), 0.03);
}

TEST(FitMixture, RecoversExactFrequencies) {
    const auto truth = MixtureParams::free(6.9, 3.0, 0.7, 0.47);
    const auto fit = fit_mixture(exact_histogram(truth), FitOptions{}, 1);
    EXPECT_LT(fit.rse, 1e-6);
    EXPECT_NEAR(fit.params.mu, 6.9, 0.05);
    EXPECT_NEAR(fit.params.sigma, 3.0, 0.05);
    EXPECT_NEAR(fit.params.a, 0.7, 0.05);
    EXPECT_NEAR(fit.params.alpha, 0.47, 0.05);
    // Never worse than the generating parameters.
    EXPECT_LE(fit.loss, residual_sum_of_squares(exact_histogram(truth), model_frequencies(truth), FitOptions{}) + 1e-15);
}

TEST(FitMixture, ConstrainedMonteCarloRoundTrip) {
    const auto truth = MixtureParams::constrained(6.9, 3.0, 0.7, 2.3);
    FitOptions o;
    o.constrain_mean = true;
    o.target_mean = 2.3;
    std::vector<double> e_mu, e_sigma, e_a;
    for (std::uint64_t rep = 0; rep < 20; ++rep) {
        const auto fit = fit_mixture(build_histogram(draw(truth, 50'000, 1000 + rep)), o, rep);
        e_mu.push_back(std::abs(fit.params.mu - 6.9));
        e_sigma.push_back(std::abs(fit.params.sigma - 3.0));
        e_a.push_back(std::abs(fit.params.a - 0.7));
    }
    EXPECT_LE(median(e_mu), 0.3);
    EXPECT_LE(median(e_sigma), 0.3);
    EXPECT_LE(median(e_a), 0.05);
}

TEST(FitMixture, PointMassAtZeroHitsBoundary) {
    const auto h = Histogram::from_counts({500, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0});
    const auto fit = fit_mixture(h, FitOptions{}, 3);
    EXPECT_TRUE(fit.boundary_hit);
    EXPECT_TRUE(fit.params.a <= 1e-6 || fit.params.a >= 1.0 - 1e-6);
    EXPECT_TRUE(std::isfinite(fit.params.mu) && std::isfinite(fit.params.sigma) && std::isfinite(fit.params.alpha));
    EXPECT_LT(fit.loss, 1e-6);

    FitOptions constrained;
    constrained.constrain_mean = true;
    EXPECT_THROW(fit_mixture(h, constrained, 3), InfeasibleError);
}

TEST(FitMixture, DeterministicForSeed) {
    const auto h = build_histogram(draw(kCombined, 3000, 12));
    const auto f1 = fit_mixture(h, FitOptions{}, 42);
    const auto f2 = fit_mixture(h, FitOptions{}, 42);
    EXPECT_EQ(nlohmann::json(f1).dump(), nlohmann::json(f2).dump());
    EXPECT_EQ(f1.params, f2.params);
}

TEST(FitMixture, ExcludingBinFiveNeverHurtsRemainingBins) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto h = build_histogram(draw(kCombined, 4000, seed));
        FitOptions full;
        FitOptions excl;
        excl.exclude_bin5 = true;
        const auto fit_full = fit_mixture(h, full, seed);
        const auto fit_excl = fit_mixture(h, excl, seed);
        const double full_on_rest = residual_sum_of_squares(h, model_frequencies(fit_full.params), excl);
        EXPECT_LE(fit_excl.loss, full_on_rest + 1e-12);
    }
}

TEST(FitMixture, OptionErrors) {
    const auto h = Histogram::from_counts({1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1});
    FitOptions o;
    o.n_starts = 0;
    EXPECT_THROW(fit_mixture(h, o, 1), ValidationError);
    o.n_starts = 2;
    o.tol = 0.0;
    EXPECT_THROW(fit_mixture(h, o, 1), ValidationError);
}

TEST(FitMixture, IterationCapReportsNonConvergence) {
    const auto h = build_histogram(draw(kCombined, 3000, 5));
    FitOptions o;
    o.max_iters = 10;
    const auto fit = fit_mixture(h, o, 1);
    EXPECT_FALSE(fit.converged);
    EXPECT_TRUE(std::isfinite(fit.loss));
}

TEST(FitAllStrategies, SingleGroupEqualsCombined) {
    std::vector<StrategyRating> in;
    for (auto r : draw(kCombined, 400, 6)) in.push_back({StrategyKind::OverallPop, r});
    const auto fits = fit_all_strategies(in, FitOptions{}, 9);
    ASSERT_EQ(fits.per_strategy.size(), 1u);
    EXPECT_EQ(fits.per_strategy.at(StrategyKind::OverallPop).params, fits.combined.params);
    EXPECT_THROW(fit_all_strategies(std::vector<StrategyRating>{}, FitOptions{}, 1), EmptyInputError);
}

TEST(FitAllStrategies, UnderPopulatedStrategySkipped) {
    std::vector<StrategyRating> in;
    for (auto r : draw(kCombined, 400, 6)) in.push_back({StrategyKind::OverallPop, r});
    for (auto r : draw(kCombined, 20, 7)) in.push_back({StrategyKind::GoodFriend, r});
    const auto fits = fit_all_strategies(in, FitOptions{}, 9);
    EXPECT_EQ(fits.per_strategy.count(StrategyKind::GoodFriend), 0u);
    ASSERT_EQ(fits.warnings.size(), 1u);
    EXPECT_NE(fits.warnings[0].find("good_friend"), std::string::npos);
    EXPECT_EQ(fits.combined_histogram.total, 420u);
}

TEST(FitAllStrategies, GoodFrCountLeastRigid) {
    const std::array<MixtureParams, 5> rows = {
        MixtureParams::free(6.89, 3.10, 0.66, 0.49), // OverallPop
        MixtureParams::free(6.85, 3.61, 0.74, 0.44), // FriendPop
        MixtureParams::free(7.10, 3.57, 0.71, 0.49), // RandFriend
        MixtureParams::free(6.46, 2.51, 0.66, 0.46), // GoodFriend
        MixtureParams::free(6.84, 2.26, 0.61, 0.50), // GoodFrCount
    };
    std::vector<StrategyRating> in;
    for (std::size_t s = 0; s < 5; ++s)
        for (auto r : draw(rows[s], 50'000, 100 + s)) in.push_back({kAllStrategies[s], r});
    const auto fits = fit_all_strategies(in, FitOptions{}, 17);
    const double a_gfc = fits.per_strategy.at(StrategyKind::GoodFrCount).params.a;
    for (auto s : kAllStrategies)
        if (s != StrategyKind::GoodFrCount) {
            EXPECT_LT(a_gfc, fits.per_strategy.at(s).params.a) << to_token(s);
        }
}
