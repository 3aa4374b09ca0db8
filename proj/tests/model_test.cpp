#include "support/oracles.hpp"

#include <explainmix/model.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

using namespace explainmix;

namespace {

const MixtureParams kCombined = MixtureParams::free(6.88, 3.05, 0.69, 0.47);

MixtureParams random_params(Rng& rng) {
    const double mu = 10.0 * rng.uniform();
    const double sigma = std::exp(std::log(0.1) + rng.uniform() * std::log(1000.0));
    const double a = rng.uniform();
    const double alpha = std::exp(std::log(1e-3) + rng.uniform() * std::log(1e4));
    return MixtureParams::free(mu, sigma, a, alpha);
}

} // namespace

TEST(BaseDensity, Values) {
    EXPECT_DOUBLE_EQ(base_density(0.0, 0.5), 0.5);
    EXPECT_NEAR(base_density(2.0, 0.5), 0.5 * std::exp(-1.0), 1e-15);
    EXPECT_NEAR(base_density(2.0, 0.5), 0.18394, 1e-5);
    EXPECT_NEAR(base_density(4.0, 0.47), 0.0717173497057354, 1e-15);
}

TEST(BaseDensity, StrictlyDecreasing) {
    for (double x = 0.0; x < 10.0; x += 0.25) EXPECT_GT(base_density(x, 0.47), base_density(x + 0.25, 0.47));
}

TEST(BaseDensity, DomainErrors) {
    EXPECT_THROW(base_density(1.0, 0.0), DomainError);
    EXPECT_THROW(base_density(1.0, -1.0), DomainError);
    EXPECT_THROW(base_density(-0.1, 1.0), DomainError);
}

TEST(ExplanationDensity, Values) {
    EXPECT_NEAR(explanation_density(5.0, 5.0, 1.0), 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-15);
    EXPECT_NEAR(explanation_density(0.0, 6.88, 3.05), 0.0102727921200338, 1e-14);
    for (double t : {0.1, 1.0, 2.5, 7.0})
        EXPECT_DOUBLE_EQ(explanation_density(3.0 + t, 3.0, 1.7), explanation_density(3.0 - t, 3.0, 1.7));
    EXPECT_GT(explanation_density(3.0, 3.0, 1.7), explanation_density(3.01, 3.0, 1.7));
    EXPECT_THROW(explanation_density(0.0, 1.0, 0.0), DomainError);
}

TEST(AlphaFromConstraint, Values) {
    EXPECT_DOUBLE_EQ(alpha_from_constraint(1.0, 2.0, 123.0), 0.5);
    // c is the count-weighted mean of the per-strategy likelihood table.
    EXPECT_NEAR(alpha_from_constraint(0.69, 2.266, 6.88), 5.18018018018018, 1e-12);
    EXPECT_THROW(alpha_from_constraint(0.5, 2.0, 4.0), InfeasibleError);
    EXPECT_THROW(alpha_from_constraint(0.0, 2.0, 1.0), DegenerateError);
    EXPECT_THROW(alpha_from_constraint(1.5, 2.0, 1.0), DomainError);
}

TEST(MixtureDensity, Values) {
    EXPECT_NEAR(mixture_density(5.0, MixtureParams::free(5.0, 1.0, 0.0, 1.0)), 0.39894228, 1e-8);
    EXPECT_DOUBLE_EQ(mixture_density(0.0, MixtureParams::free(0.0, 1.0, 1.0, 0.5)), 0.5);
    EXPECT_NEAR(mixture_density(0.0, kCombined), 0.32748456555721, 1e-13);
    EXPECT_THROW(mixture_density(-1.0, kCombined), DomainError);
}

TEST(MixtureDensity, ConvergesToComponentsAtBoundaries) {
    for (double x : {0.0, 1.0, 4.5, 9.0}) {
        const auto near_one = MixtureParams::free(6.0, 2.0, 1.0 - 1e-9, 0.4);
        const auto near_zero = MixtureParams::free(6.0, 2.0, 1e-9, 0.4);
        EXPECT_NEAR(mixture_density(x, near_one), base_density(x, 0.4), 1e-8);
        EXPECT_NEAR(mixture_density(x, near_zero), explanation_density(x, 6.0, 2.0), 1e-8);
    }
}

TEST(MixtureDensity, NonNegativeForRandomParams) {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        const auto p = random_params(rng);
        for (double x = 0.0; x <= 12.0; x += 0.5) EXPECT_GE(mixture_density(x, p), 0.0);
    }
}

TEST(MixtureMean, Values) {
    EXPECT_DOUBLE_EQ(mixture_mean(MixtureParams::free(3.0, 1.0, 1.0, 0.5)), 2.0);
    EXPECT_DOUBLE_EQ(mixture_mean(MixtureParams::free(6.5, 1.0, 0.0, 0.5)), 6.5);
    EXPECT_NEAR(mixture_mean(kCombined), 3.60088510638298, 1e-12);
}

TEST(MixtureMean, ConstraintRoundTrip) {
    Rng rng(5);
    int checked = 0;
    while (checked < 1000) {
        const double a = 0.01 + 0.99 * rng.uniform();
        const double mu = 10.0 * rng.uniform();
        const double c = (1.0 - a) * mu + 0.01 + 8.0 * rng.uniform();
        const auto p = MixtureParams::constrained(mu, 1.0 + rng.uniform(), a, c);
        EXPECT_NEAR(mixture_mean(p), c, 1e-12 * std::max(1.0, c));
        EXPECT_DOUBLE_EQ(p.mean(), a / p.alpha + (1.0 - a) * mu);
        ++checked;
    }
}

TEST(MixtureParams, ValidationRules) {
    EXPECT_THROW(MixtureParams::free(5.0, -1.0, 0.5, 1.0), DomainError);
    EXPECT_THROW(MixtureParams::free(5.0, 1.0, 0.5, 0.0), DomainError);
    EXPECT_THROW(MixtureParams::free(5.0, 1.0, 1.2, 1.0), DomainError);
    // Unused components are not validated.
    EXPECT_NO_THROW(MixtureParams::free(5.0, -1.0, 1.0, 1.0));
    EXPECT_NO_THROW(MixtureParams::free(5.0, 1.0, 0.0, -3.0));
    EXPECT_THROW(MixtureParams::constrained(4.0, 1.0, 0.5, 2.0), InfeasibleError);
    auto tampered = MixtureParams::constrained(4.0, 1.0, 0.5, 3.0);
    tampered.alpha *= 1.01;
    EXPECT_THROW(tampered.validate(), DomainError);
}

TEST(DiscretizePmf, GaussianSymmetry) {
    const auto pmf = discretize_pmf(MixtureParams::free(5.0, 2.0, 0.0, 1.0));
    for (std::size_t k = 0; k < 11; ++k) EXPECT_NEAR(pmf[k], pmf[10 - k], 1e-9);
}

TEST(DiscretizePmf, ExponentialFirstBinMatchesQuadrature) {
    const auto pmf = discretize_pmf(MixtureParams::free(0.0, 1.0, 1.0, 0.5));
    auto f = [](double x) { return oracle::expo(x, 0.5); };
    const double expected = oracle::simpson(f, 0.0, 0.5, 1'000'000) / oracle::simpson(f, 0.0, 10.5, 1'000'000);
    EXPECT_NEAR(pmf[0], expected, 1e-12);
}

TEST(DiscretizePmf, MatchesQuadratureOracle) {
    const auto pmf = discretize_pmf(kCombined);
    const auto ref = oracle::pmf({6.88, 3.05, 0.69, 0.47});
    for (std::size_t k = 0; k < 11; ++k) EXPECT_NEAR(pmf[k], ref[k], 1e-10) << "bin " << k;
}

TEST(DiscretizePmf, NormalizedForRandomParamsInBothModes) {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const auto p = random_params(rng);
        const auto t = discretize_pmf(p, PmfMode::TruncatedRenormalized);
        const auto b = discretize_pmf(p, PmfMode::PaperContinuousBinned);
        double st = 0.0, sb = 0.0;
        for (std::size_t k = 0; k < 11; ++k) {
            EXPECT_GE(t[k], 0.0);
            EXPECT_NEAR(t[k], b[k], 1e-12);
            st += t[k];
            sb += b[k];
        }
        EXPECT_NEAR(st, 1.0, 1e-9);
        EXPECT_NEAR(sb, 1.0, 1e-9);
    }
}

TEST(DiscretizePmf, NoMassOnScaleIsDomainError) {
    EXPECT_THROW(discretize_pmf(MixtureParams::free(1e4, 0.1, 0.0, 1.0)), DomainError);
}

TEST(SampleRating, PointMassAtZero) {
    const auto p = MixtureParams::free(5.0, 1.0, 1.0, 50.0);
    Rng rng(3);
    RatingSampler sampler(discretize_pmf(p));
    int zeros = 0;
    for (int i = 0; i < 100'000; ++i) zeros += sampler(rng).value == 0;
    EXPECT_GT(zeros / 1e5, 0.999);
}

TEST(SampleRating, DeterministicForSeed) {
    Rng r1(77), r2(77);
    for (int i = 0; i < 1000; ++i)
        ASSERT_EQ(sample_rating(kCombined, PmfMode::TruncatedRenormalized, r1),
                  sample_rating(kCombined, PmfMode::TruncatedRenormalized, r2));
}

TEST(SampleRating, ChiSquareAgainstPmf) {
    const auto pmf = discretize_pmf(kCombined);
    RatingSampler sampler(pmf);
    Rng rng(99);
    std::array<double, 11> counts{};
    const int n = 100'000;
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sampler(rng).value)] += 1.0;
    double chi2 = 0.0;
    for (std::size_t k = 0; k < 11; ++k) {
        const double e = n * pmf[k];
        chi2 += (counts[k] - e) * (counts[k] - e) / e;
    }
    EXPECT_LT(chi2, oracle::kChiSq10At999);
}

TEST(SampleRating, TotalVariationAtOneMillion) {
    const auto pmf = discretize_pmf(kCombined);
    RatingSampler sampler(pmf);
    Rng rng(1);
    std::array<double, 11> counts{};
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) counts[static_cast<std::size_t>(sampler(rng).value)] += 1.0;
    double tv = 0.0;
    for (std::size_t k = 0; k < 11; ++k) tv += std::abs(counts[k] / n - pmf[k]);
    EXPECT_LT(0.5 * tv, 0.01);
}

TEST(FractionAbove, Values) {
    EXPECT_DOUBLE_EQ(fraction_above(kCombined, 10), 0.0);
    const auto g = MixtureParams::free(5.0, 2.0, 0.0, 1.0);
    const auto pmf = discretize_pmf(g);
    double below = 0.0;
    for (std::size_t k = 0; k <= 4; ++k) below += pmf[k];
    EXPECT_NEAR(fraction_above(g, 5), below, 1e-12);

    const auto ref = oracle::pmf({6.88, 3.05, 0.69, 0.47}, 20000);
    double ref_above = 0.0;
    for (std::size_t k = 6; k <= 10; ++k) ref_above += ref[k];
    EXPECT_NEAR(fraction_above(kCombined, 5), ref_above, 1e-6);
    EXPECT_THROW(fraction_above(kCombined, 11), DomainError);
}

// Past mu ~ 8 the Gaussian's truncated tail above 10.5 shifts renormalized
// weight back to the exponential, so the grid stops at 7.
TEST(FractionAbove, IncreasingInMu) {
    for (double a : {0.0, 0.3, 0.69, 0.95}) {
        double prev = -1.0;
        for (double mu = 0.0; mu <= 7.0; mu += 0.25) {
            const double f = fraction_above(MixtureParams::free(mu, 3.05, a, 0.47), 5);
            EXPECT_GT(f, prev) << "a=" << a << " mu=" << mu;
            prev = f;
        }
    }
}

TEST(MixtureParamsJson, RoundTrip) {
    nlohmann::json j = kCombined;
    EXPECT_EQ(j.at("mode"), "free");
    EXPECT_EQ(j.get<MixtureParams>(), kCombined);
    const auto c = MixtureParams::constrained(6.9, 3.0, 0.7, 2.3);
    nlohmann::json jc = c;
    const auto back = jc.get<MixtureParams>();
    EXPECT_EQ(back.mode, ConstraintMode::Constrained);
    EXPECT_NEAR(back.alpha, c.alpha, 1e-12);
}
