#pragma once

// Exhaustive two-phase policy reference for instances of at most ~16 items.

#include <explainmix/policy.hpp>

#include <algorithm>
#include <cstdint>
#include <vector>

namespace oracle {

using explainmix::ranks_before;
using explainmix::TwoPhaseConfig;
using Item = explainmix::ScoredItem<int>;

// Exhaustive reference: walk the threshold schedule, and at each threshold
// enumerate every subset of the qualifying items of the required size,
// keeping the one whose best-first key sequence is lexicographically best.
inline std::vector<Item> brute_force_slate(const std::vector<Item>& items, const TwoPhaseConfig& cfg) {
    const std::size_t n = items.size();
    auto key_less = [](const Item& x, const Item& y) { return ranks_before(x, y); };
    for (std::size_t j = 0;; ++j) {
        const double eps = cfg.epsilon - static_cast<double>(j) * cfg.delta;
        std::vector<std::size_t> qual;
        for (std::size_t i = 0; i < n; ++i)
            if (items[i].likelihood > eps) qual.push_back(i);
        const bool last = cfg.epsilon - static_cast<double>(j + 1) * cfg.delta < cfg.epsilon_floor;
        if (qual.size() < cfg.k && !last) continue;
        const std::size_t want = std::min(cfg.k, qual.size());
        std::vector<Item> best;
        bool have = false;
        for (std::uint32_t mask = 0; mask < (1u << qual.size()); ++mask) {
            if (static_cast<std::size_t>(__builtin_popcount(mask)) != want) continue;
            std::vector<Item> pick;
            for (std::size_t b = 0; b < qual.size(); ++b)
                if (mask & (1u << b)) pick.push_back(items[qual[b]]);
            std::sort(pick.begin(), pick.end(), key_less);
            if (!have || std::lexicographical_compare(pick.begin(), pick.end(), best.begin(), best.end(), key_less)) {
                best = pick;
                have = true;
            }
        }
        return best;
    }
}

} // namespace oracle
