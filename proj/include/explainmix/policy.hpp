#pragma once

// Two-phase slate selection: maximize the consumption score R among items
// whose likelihood score L clears a threshold, lowering the threshold when
// too few items qualify.

#include "error.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace explainmix {

struct TwoPhaseConfig {
    double epsilon = 5.0;       // initial likelihood threshold
    double delta = 1.0;         // decrement step
    std::size_t k = 1;          // slate size
    double epsilon_floor = 0.0; // lowest threshold tried

    void validate() const {
        if (!(delta > 0.0)) throw ValidationError("two-phase config: delta must be positive");
        if (k < 1) throw ValidationError("two-phase config: k must be at least 1");
        if (!(epsilon >= epsilon_floor)) throw ValidationError("two-phase config: epsilon below epsilon_floor");
    }
};

template <class Id>
struct ScoredItem {
    Id item;
    double likelihood = 0.0;
    double consumption = 0.0;

    friend bool operator==(const ScoredItem&, const ScoredItem&) = default;
};

// Strict preference: higher R, then higher L, then smaller id.
template <class Id>
bool ranks_before(const ScoredItem<Id>& x, const ScoredItem<Id>& y) {
    if (x.consumption != y.consumption) return x.consumption > y.consumption;
    if (x.likelihood != y.likelihood) return x.likelihood > y.likelihood;
    return x.item < y.item;
}

struct SlateMeta {
    double threshold = 0.0; // threshold the slate was drawn at
    std::size_t decrements = 0;
};

/// Thresholds are epsilon - j * delta for j = 0, 1, ... while they stay at or
/// above epsilon_floor. Returns the k best qualifying items at the first
/// threshold where at least k qualify, otherwise every item qualifying at the
/// lowest threshold. The slate is ordered best first.
template <class Id>
std::vector<ScoredItem<Id>> two_phase_recommend(std::span<const ScoredItem<Id>> candidates,
                                                const TwoPhaseConfig& config, SlateMeta* meta = nullptr) {
    config.validate();
    if (candidates.empty()) throw EmptyInputError("two_phase_recommend: no candidates");
    for (const auto& c : candidates)
        if (!std::isfinite(c.likelihood) || !std::isfinite(c.consumption))
            throw ValidationError("two_phase_recommend: non-finite score");

    std::vector<ScoredItem<Id>> ranked(candidates.begin(), candidates.end());
    std::sort(ranked.begin(), ranked.end(), ranks_before<Id>);

    std::vector<ScoredItem<Id>> slate;
    for (std::size_t j = 0;; ++j) {
        const double eps = config.epsilon - static_cast<double>(j) * config.delta;
        slate.clear();
        for (const auto& c : ranked) {
            if (c.likelihood > eps) slate.push_back(c);
            if (slate.size() == config.k) break;
        }
        const double next = config.epsilon - static_cast<double>(j + 1) * config.delta;
        if (slate.size() >= config.k || next < config.epsilon_floor) {
            if (meta) *meta = {eps, j};
            return slate;
        }
    }
}

template <class Id>
std::vector<ScoredItem<Id>> two_phase_recommend(const std::vector<ScoredItem<Id>>& candidates,
                                                const TwoPhaseConfig& config, SlateMeta* meta = nullptr) {
    return two_phase_recommend(std::span<const ScoredItem<Id>>(candidates), config, meta);
}

} // namespace explainmix
