#pragma once

// Two-component rating model: an exponential "inherent preference" density
// mixed with a Gaussian "explanation effect" density, discretized onto the
// 0..10 rating scale.

#include "error.hpp"
#include "rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace explainmix {

inline constexpr int kMinRating = 0;
inline constexpr int kMaxRating = 10;
inline constexpr std::size_t kNumBins = 11;

enum class Phase { Likelihood, Consumption };

struct Rating {
    int value = 0;
    Phase phase = Phase::Likelihood;

    friend bool operator==(const Rating&, const Rating&) = default;
};

inline Rating make_rating(int value, Phase phase = Phase::Likelihood) {
    if (value < kMinRating || value > kMaxRating)
        throw ValidationError("rating " + std::to_string(value) + " outside 0..10");
    return Rating{value, phase};
}

enum class StrategyKind { OverallPop, FriendPop, RandFriend, GoodFriend, GoodFrCount };

inline constexpr std::array<StrategyKind, 5> kAllStrategies = {
    StrategyKind::OverallPop, StrategyKind::FriendPop, StrategyKind::RandFriend,
    StrategyKind::GoodFriend, StrategyKind::GoodFrCount};

inline constexpr std::size_t index_of(StrategyKind s) noexcept { return static_cast<std::size_t>(s); }

inline constexpr std::string_view to_token(StrategyKind s) noexcept {
    switch (s) {
    case StrategyKind::OverallPop: return "overall_pop";
    case StrategyKind::FriendPop: return "friend_pop";
    case StrategyKind::RandFriend: return "rand_friend";
    case StrategyKind::GoodFriend: return "good_friend";
    case StrategyKind::GoodFrCount: return "good_fr_count";
    }
    return "";
}

inline std::optional<StrategyKind> strategy_from_token(std::string_view token) noexcept {
    for (auto s : kAllStrategies)
        if (to_token(s) == token) return s;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Component densities

// Inherent preference: alpha * exp(-alpha * x).
inline double base_density(double x, double alpha) {
    if (!(alpha > 0.0)) throw DomainError("base_density: alpha must be positive");
    if (!(x >= 0.0)) throw DomainError("base_density: x must be non-negative");
    return alpha * std::exp(-alpha * x);
}

// Explanation effect: normal pdf centered at mu.
inline double explanation_density(double x, double mu, double sigma) {
    if (!(sigma > 0.0)) throw DomainError("explanation_density: sigma must be positive");
    const double z = (x - mu) / sigma;
    return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

// Rate that makes the mixture mean equal c:  alpha = a / (c - (1 - a) mu).
inline double alpha_from_constraint(double a, double c, double mu) {
    if (!(a >= 0.0 && a <= 1.0)) throw DomainError("alpha_from_constraint: a must lie in [0, 1]");
    if (a == 0.0)
        throw DegenerateError("alpha_from_constraint: a = 0 leaves the exponential component unused");
    const double denom = c - (1.0 - a) * mu;
    if (!(denom > 0.0))
        throw InfeasibleError("alpha_from_constraint: c - (1 - a) mu must be positive");
    return a / denom;
}

// ---------------------------------------------------------------------------
// Parameters

enum class ConstraintMode { Free, Constrained };

inline constexpr std::string_view to_token(ConstraintMode m) noexcept {
    return m == ConstraintMode::Free ? "free" : "constrained";
}

/// Behavior model of one user or population.
///
/// mu (receptiveness) and sigma (variability) shape the explanation effect,
/// a (rigidness) weights the inherent-preference exponential whose rate is
/// alpha (discernment). c is the mixture mean: supplied in constrained mode,
/// where alpha is derived from it, and reported in free mode.
///
/// a = 0 and a = 1 are legal; the unused component's parameters are not
/// validated.
struct MixtureParams {
    double mu = 0.0;
    double sigma = 1.0;
    double a = 1.0;
    double alpha = 1.0;
    double c = 1.0;
    ConstraintMode mode = ConstraintMode::Free;

    static MixtureParams free(double mu, double sigma, double a, double alpha) {
        MixtureParams p{mu, sigma, a, alpha, 0.0, ConstraintMode::Free};
        p.validate();
        p.c = p.mean();
        return p;
    }

    static MixtureParams constrained(double mu, double sigma, double a, double c) {
        MixtureParams p{mu, sigma, a, alpha_from_constraint(a, c, mu), c, ConstraintMode::Constrained};
        p.validate();
        return p;
    }

    bool uses_exponential() const noexcept { return a > 0.0; }
    bool uses_gaussian() const noexcept { return a < 1.0; }

    double mean() const noexcept {
        const double exp_part = uses_exponential() ? a / alpha : 0.0;
        const double gauss_part = uses_gaussian() ? (1.0 - a) * mu : 0.0;
        return exp_part + gauss_part;
    }

    void validate() const {
        if (!(a >= 0.0 && a <= 1.0)) throw DomainError("MixtureParams: a must lie in [0, 1]");
        if (uses_gaussian() && !(sigma > 0.0 && std::isfinite(sigma) && std::isfinite(mu)))
            throw DomainError("MixtureParams: sigma must be positive and finite");
        if (uses_exponential() && !(alpha > 0.0 && std::isfinite(alpha)))
            throw DomainError("MixtureParams: alpha must be positive and finite");
        if (mode == ConstraintMode::Constrained) {
            const double denom = c - (1.0 - a) * mu;
            if (!(denom > 0.0)) throw InfeasibleError("MixtureParams: c - (1 - a) mu must be positive");
            const double expected = a / denom;
            if (std::abs(alpha - expected) > 1e-12 * std::max(1.0, expected))
                throw DomainError("MixtureParams: alpha inconsistent with mean constraint");
        }
    }

    friend bool operator==(const MixtureParams&, const MixtureParams&) = default;
};

inline double mixture_mean(const MixtureParams& p) {
    p.validate();
    return p.mean();
}

// h(x) = a f(x) + (1 - a) g(x).
inline double mixture_density(double x, const MixtureParams& p) {
    p.validate();
    if (!(x >= 0.0)) throw DomainError("mixture_density: x must be non-negative");
    double h = 0.0;
    if (p.uses_exponential()) h += p.a * base_density(x, p.alpha);
    if (p.uses_gaussian()) h += (1.0 - p.a) * explanation_density(x, p.mu, p.sigma);
    return h;
}

// ---------------------------------------------------------------------------
// Discretization

enum class PmfMode { TruncatedRenormalized, PaperContinuousBinned };

struct RatingPmf {
    std::array<double, kNumBins> probs{};
    PmfMode mode = PmfMode::TruncatedRenormalized;

    double operator[](std::size_t k) const { return probs[k]; }

    double mean() const noexcept {
        double m = 0.0;
        for (std::size_t k = 0; k < kNumBins; ++k) m += static_cast<double>(k) * probs[k];
        return m;
    }
};

namespace detail {

// Normal probability of [lo, hi] for a standard variate, computed on the
// tail side to avoid cancellation.
inline double std_normal_mass(double lo, double hi) {
    if (lo >= 0.0) return 0.5 * (std::erfc(lo / std::numbers::sqrt2) - std::erfc(hi / std::numbers::sqrt2));
    if (hi <= 0.0) return 0.5 * (std::erfc(-hi / std::numbers::sqrt2) - std::erfc(-lo / std::numbers::sqrt2));
    return 1.0 - 0.5 * (std::erfc(-lo / std::numbers::sqrt2) + std::erfc(hi / std::numbers::sqrt2));
}

// Exponential mass on [lo, hi] with support clipped at 0.
inline double exp_mass(double lo, double hi, double alpha) {
    lo = std::max(lo, 0.0);
    if (hi <= lo) return 0.0;
    return std::exp(-alpha * lo) * -std::expm1(-alpha * (hi - lo));
}

inline double gauss_mass(double lo, double hi, double mu, double sigma) {
    return std_normal_mass((lo - mu) / sigma, (hi - mu) / sigma);
}

inline constexpr double kScaleLo = kMinRating - 0.5;
inline constexpr double kScaleHi = kMaxRating + 0.5;

} // namespace detail

/// Bin k receives the mixture mass on [k - 0.5, k + 0.5]; the exponential's
/// support starts at 0. TruncatedRenormalized divides by the sum of the bins,
/// PaperContinuousBinned by the closed-form mass of [-0.5, 10.5]. Both agree.
inline RatingPmf discretize_pmf(const MixtureParams& p,
                                PmfMode mode = PmfMode::TruncatedRenormalized) {
    p.validate();
    RatingPmf out;
    out.mode = mode;
    double bin_sum = 0.0;
    for (std::size_t k = 0; k < kNumBins; ++k) {
        const double lo = static_cast<double>(k) - 0.5;
        const double hi = static_cast<double>(k) + 0.5;
        double m = 0.0;
        if (p.uses_exponential()) m += p.a * detail::exp_mass(lo, hi, p.alpha);
        if (p.uses_gaussian()) m += (1.0 - p.a) * detail::gauss_mass(lo, hi, p.mu, p.sigma);
        out.probs[k] = m;
        bin_sum += m;
    }
    double total = bin_sum;
    if (mode == PmfMode::PaperContinuousBinned) {
        total = 0.0;
        if (p.uses_exponential()) total += p.a * detail::exp_mass(0.0, detail::kScaleHi, p.alpha);
        if (p.uses_gaussian())
            total += (1.0 - p.a) * detail::gauss_mass(detail::kScaleLo, detail::kScaleHi, p.mu, p.sigma);
    }
    if (!(total > 0.0) || !std::isfinite(total))
        throw DomainError("discretize_pmf: no probability mass on the rating scale");
    for (auto& q : out.probs) q /= total;
    return out;
}

// Rating k with cdf[k-1] <= u < cdf[k].
inline int inverse_cdf(const RatingPmf& pmf, double u) {
    double cum = 0.0;
    for (std::size_t k = 0; k + 1 < kNumBins; ++k) {
        cum += pmf.probs[k];
        if (u < cum) return static_cast<int>(k);
    }
    return kMaxRating;
}

/// Inverse-CDF sampler over a precomputed pmf. Owns no generator.
class RatingSampler {
public:
    explicit RatingSampler(const RatingPmf& pmf) {
        double cum = 0.0;
        for (std::size_t k = 0; k < kNumBins; ++k) {
            cum += pmf.probs[k];
            cdf_[k] = cum;
        }
        cdf_[kNumBins - 1] = 1.0;
    }

    int at(double u) const noexcept {
        for (std::size_t k = 0; k + 1 < kNumBins; ++k)
            if (u < cdf_[k]) return static_cast<int>(k);
        return kMaxRating;
    }

    Rating operator()(Rng& rng, Phase phase = Phase::Likelihood) const {
        return Rating{at(rng.uniform()), phase};
    }

private:
    std::array<double, kNumBins> cdf_{};
};

inline Rating sample_rating(const MixtureParams& p, PmfMode mode, Rng& rng) {
    return RatingSampler(discretize_pmf(p, mode))(rng);
}

// Probability of a rating strictly above threshold.
inline double fraction_above(const MixtureParams& p, int threshold,
                             PmfMode mode = PmfMode::TruncatedRenormalized) {
    if (threshold < kMinRating || threshold > kMaxRating)
        throw DomainError("fraction_above: threshold outside 0..10");
    const auto pmf = discretize_pmf(p, mode);
    double s = 0.0;
    for (int k = threshold + 1; k <= kMaxRating; ++k) s += pmf.probs[static_cast<std::size_t>(k)];
    return s;
}

// ---------------------------------------------------------------------------
// Serialization

// Decimal rounding applied to every serialized real.
inline double round_sig(double v, int digits = 12) {
    if (v == 0.0 || !std::isfinite(v)) return v;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return std::strtod(buf, nullptr);
}

inline constexpr std::string_view pmf_mode_token(PmfMode m) noexcept {
    return m == PmfMode::PaperContinuousBinned ? "continuous_binned" : "truncated_renormalized";
}

inline std::optional<PmfMode> pmf_mode_from_token(std::string_view token) noexcept {
    for (auto m : {PmfMode::TruncatedRenormalized, PmfMode::PaperContinuousBinned})
        if (pmf_mode_token(m) == token) return m;
    return std::nullopt;
}

inline void to_json(nlohmann::json& j, const MixtureParams& p) {
    j = nlohmann::json{{"mu", round_sig(p.mu)},       {"sigma", round_sig(p.sigma)},
                       {"a", round_sig(p.a)},         {"alpha", round_sig(p.alpha)},
                       {"c", round_sig(p.c)},         {"mode", std::string(to_token(p.mode))}};
}

inline void from_json(const nlohmann::json& j, MixtureParams& p) {
    const auto mode = j.value("mode", std::string("free"));
    if (mode == "constrained") {
        p = MixtureParams::constrained(j.at("mu").get<double>(), j.at("sigma").get<double>(),
                                       j.at("a").get<double>(), j.at("c").get<double>());
    } else if (mode == "free") {
        p = MixtureParams::free(j.at("mu").get<double>(), j.at("sigma").get<double>(),
                                j.at("a").get<double>(), j.at("alpha").get<double>());
    } else {
        throw ValidationError("MixtureParams: unknown mode '" + mode + "'");
    }
}

} // namespace explainmix
