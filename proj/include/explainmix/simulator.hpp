#pragma once

// Synthetic study world: social graph, Likes, interaction logs, explanation
// selection, likelihood (phase 1) and consumption (phase 2) ratings.
//
// Every user draws from private streams derive_seed(seed, user, stream), so
// per-user work is order independent. Outputs are sorted by (user, item).

#include "error.hpp"
#include "estimation.hpp"
#include "model.hpp"
#include "rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace explainmix::sim {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;

inline constexpr std::size_t kTieWindow = 500;
inline constexpr std::size_t kMinCandidates = 30;

// Stream tags for derive_seed.
enum Stream : std::uint64_t {
    kGraphStream = 1,
    kItemStream,
    kLikeStream,
    kCandidateStream,
    kInteractionStream,
    kPhase1Stream,
    kPhase2Stream,
    kCalibrationStream,
};

// Per-strategy fits of the study's likelihood data.
inline std::array<MixtureParams, 5> reference_strategy_params() {
    return {
        MixtureParams::free(6.89, 3.10, 0.66, 0.49), // overall_pop
        MixtureParams::free(6.85, 3.61, 0.74, 0.44), // friend_pop
        MixtureParams::free(7.10, 3.57, 0.71, 0.49), // rand_friend
        MixtureParams::free(6.46, 2.51, 0.66, 0.46), // good_friend
        MixtureParams::free(6.84, 2.26, 0.61, 0.50), // good_fr_count
    };
}

struct Archetype {
    std::string name;
    double fraction = 1.0;
    MixtureParams params;
};

struct CohortConfig {
    std::size_t n_users = 200;
    double mean_degree = 20.0;
    std::size_t min_degree = 1;
    std::size_t max_degree = 60;
    std::size_t n_items = 600;
    std::size_t likes_min = 10;
    std::size_t likes_max = 40;
    std::size_t candidates_per_user = 30;
    std::size_t interactions_min = 100;
    std::size_t interactions_max = 800;
    double dormant_tie_fraction = 0.5;  // share of friendships with no interactions
    double item_affinity_weight = 0.5;  // share of affinity variance from item appeal
    double lambda = 0.7;                // likelihood coupling to affinity
    double kappa = 0.0;                 // consumption coupling to affinity
    std::size_t per_strategy_pick = 2;
    std::optional<StrategyKind> forced_strategy;
    std::array<MixtureParams, 5> strategy_params = reference_strategy_params();
    // When set, each user follows one archetype for every strategy.
    std::vector<Archetype> archetypes;
    PmfMode pmf_mode = PmfMode::TruncatedRenormalized;

    void validate() const {
        if (n_users == 0) throw ConfigError("cohort: at least one user required");
        if (!(mean_degree >= 0.0) || mean_degree > static_cast<double>(n_users - 1))
            throw ConfigError("cohort: mean_degree must lie in [0, n_users - 1]");
        if (min_degree > max_degree) throw ConfigError("cohort: min_degree exceeds max_degree");
        if (min_degree > n_users - 1) throw ConfigError("cohort: min_degree exceeds the number of other users");
        if (mean_degree > static_cast<double>(max_degree)) throw ConfigError("cohort: mean_degree exceeds max_degree");
        if (likes_min > likes_max) throw ConfigError("cohort: likes_min exceeds likes_max");
        if (candidates_per_user < kMinCandidates)
            throw ConfigError("cohort: candidates_per_user must be at least 30");
        if (n_items < likes_max + candidates_per_user)
            throw ConfigError("cohort: n_items must cover likes_max + candidates_per_user");
        if (interactions_min > interactions_max) throw ConfigError("cohort: interactions_min exceeds interactions_max");
        if (!(dormant_tie_fraction >= 0.0 && dormant_tie_fraction <= 1.0))
            throw ConfigError("cohort: dormant_tie_fraction must lie in [0, 1]");
        if (!(item_affinity_weight >= 0.0 && item_affinity_weight <= 1.0))
            throw ConfigError("cohort: item_affinity_weight must lie in [0, 1]");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("cohort: lambda must lie in [0, 1]");
        if (!(kappa >= 0.0 && kappa <= 1.0)) throw ConfigError("cohort: kappa must lie in [0, 1]");
        for (const auto& p : strategy_params) p.validate();
        double total = 0.0;
        for (const auto& a : archetypes) {
            if (!(a.fraction > 0.0)) throw ConfigError("cohort: archetype fraction must be positive");
            a.params.validate();
            total += a.fraction;
        }
        if (!archetypes.empty() && std::abs(total - 1.0) > 1e-9)
            throw ConfigError("cohort: archetype fractions must sum to 1");
    }
};

struct Item {
    ItemId id = 0;
    double appeal = 0.0;        // latent appeal in (0, 1)
    double popularity = 0.0;    // drives Like counts; independent of appeal
    std::vector<UserId> likers; // sorted
};

struct UserProfile {
    UserId id = 0;
    std::optional<std::size_t> archetype;
    std::array<MixtureParams, 5> params; // indexed by strategy
    std::vector<UserId> friends;         // sorted
    std::vector<UserId> interactions;    // counterpart per event, oldest first
    std::vector<ItemId> likes;           // sorted
    std::vector<ItemId> candidates;      // sorted, none liked by the user
    std::vector<double> affinities;      // aligned with candidates, each in (0, 1)
};

struct SyntheticCohort {
    CohortConfig config;
    std::vector<UserProfile> users;
    std::vector<Item> items;
    std::vector<std::pair<UserId, UserId>> friendships; // u < v, sorted

    const UserProfile& user(UserId u) const {
        if (u >= users.size()) throw LookupError("unknown user " + std::to_string(u));
        return users[u];
    }

    const Item& item(ItemId i) const {
        if (i >= items.size()) throw LookupError("unknown item " + std::to_string(i));
        return items[i];
    }

    double affinity(UserId u, ItemId i) const {
        const auto& p = user(u);
        const auto it = std::lower_bound(p.candidates.begin(), p.candidates.end(), i);
        if (it == p.candidates.end() || *it != i)
            throw LookupError("item " + std::to_string(i) + " is not a candidate of user " + std::to_string(u));
        return p.affinities[static_cast<std::size_t>(it - p.candidates.begin())];
    }
};

namespace detail {

inline double clamp_open01(double v) { return std::clamp(v, 1e-15, 1.0 - 1e-15); }

// Edges of G(n, p) by geometric skipping over the pairs (v, w), w < v.
inline std::vector<std::set<UserId>> random_graph(std::size_t n, double p, Rng& rng) {
    std::vector<std::set<UserId>> adj(n);
    if (p <= 0.0) return adj;
    if (p >= 1.0) {
        for (std::size_t v = 0; v < n; ++v)
            for (std::size_t w = 0; w < v; ++w) {
                adj[v].insert(static_cast<UserId>(w));
                adj[w].insert(static_cast<UserId>(v));
            }
        return adj;
    }
    const double log_q = std::log1p(-p);
    std::int64_t v = 1, w = -1;
    const auto nn = static_cast<std::int64_t>(n);
    while (v < nn) {
        w += 1 + static_cast<std::int64_t>(std::floor(std::log(rng.uniform()) / log_q));
        while (w >= v && v < nn) {
            w -= v;
            ++v;
        }
        if (v < nn) {
            adj[static_cast<std::size_t>(v)].insert(static_cast<UserId>(w));
            adj[static_cast<std::size_t>(w)].insert(static_cast<UserId>(v));
        }
    }
    return adj;
}

inline void enforce_degree_bounds(std::vector<std::set<UserId>>& adj, std::size_t lo, std::size_t hi, Rng& rng) {
    const std::size_t n = adj.size();
    for (std::size_t v = 0; v < n; ++v) {
        while (adj[v].size() > hi) {
            auto it = adj[v].begin();
            std::advance(it, static_cast<std::ptrdiff_t>(rng.below(adj[v].size())));
            const UserId w = *it;
            adj[v].erase(it);
            adj[w].erase(static_cast<UserId>(v));
        }
    }
    for (std::size_t v = 0; v < n; ++v) {
        std::size_t attempts = 0;
        while (adj[v].size() < lo) {
            if (++attempts > 100 * n) throw ConfigError("cohort: cannot satisfy min_degree under max_degree");
            const auto w = static_cast<UserId>(rng.below(n));
            if (w == v || adj[v].count(w) || adj[w].size() >= hi) continue;
            adj[v].insert(w);
            adj[w].insert(static_cast<UserId>(v));
        }
    }
}

// Size of the intersection of two sorted ranges.
template <class A, class B>
std::vector<UserId> sorted_intersection(const A& a, const B& b) {
    std::vector<UserId> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out;
}

} // namespace detail

/// Builds a deterministic world from (config, seed).
///
/// Friendships come from G(n, mean_degree / (n - 1)) trimmed to the degree
/// bounds. Each user Likes a popularity-weighted random set of items and is
/// offered candidates drawn first from items friends Like and then from the
/// remaining unliked items. Affinity z is uniform on (0, 1) and shares the
/// item's appeal with weight item_affinity_weight. Appeal is independent of
/// popularity, so becoming a candidate says nothing about z.
inline SyntheticCohort generate_cohort(const CohortConfig& config, std::uint64_t seed) {
    config.validate();
    SyntheticCohort w;
    w.config = config;
    const std::size_t n = config.n_users;

    Rng graph_rng(derive_seed(seed, 0, kGraphStream));
    const double p_edge = n > 1 ? config.mean_degree / static_cast<double>(n - 1) : 0.0;
    auto adj = detail::random_graph(n, p_edge, graph_rng);
    detail::enforce_degree_bounds(adj, config.min_degree, config.max_degree, graph_rng);

    Rng item_rng(derive_seed(seed, 0, kItemStream));
    w.items.resize(config.n_items);
    for (std::size_t i = 0; i < config.n_items; ++i) {
        w.items[i].id = static_cast<ItemId>(i);
        w.items[i].appeal = item_rng.uniform();
        w.items[i].popularity = item_rng.uniform();
    }

    // Archetype blocks in user order.
    std::vector<std::optional<std::size_t>> archetype_of(n);
    if (!config.archetypes.empty()) {
        double cum = 0.0;
        std::size_t start = 0;
        for (std::size_t a = 0; a < config.archetypes.size(); ++a) {
            cum += config.archetypes[a].fraction;
            const auto end = a + 1 == config.archetypes.size()
                                 ? n
                                 : static_cast<std::size_t>(std::llround(cum * static_cast<double>(n)));
            for (std::size_t u = start; u < std::min(end, n); ++u) archetype_of[u] = a;
            start = std::min(end, n);
        }
    }

    w.users.resize(n);
    for (std::size_t u = 0; u < n; ++u) {
        auto& p = w.users[u];
        p.id = static_cast<UserId>(u);
        p.friends.assign(adj[u].begin(), adj[u].end());
        p.archetype = archetype_of[u];
        if (p.archetype)
            p.params.fill(config.archetypes[*p.archetype].params);
        else
            p.params = config.strategy_params;
        for (auto f : p.friends)
            if (u < f) w.friendships.emplace_back(static_cast<UserId>(u), f);

        // Weighted sampling without replacement (largest u^(1/w) keys).
        Rng like_rng(derive_seed(seed, u, kLikeStream));
        const auto n_likes = static_cast<std::size_t>(
            like_rng.between(static_cast<std::int64_t>(config.likes_min), static_cast<std::int64_t>(config.likes_max)));
        std::vector<std::pair<double, ItemId>> keys(config.n_items);
        for (std::size_t i = 0; i < config.n_items; ++i) {
            const double weight = 0.05 + w.items[i].popularity * w.items[i].popularity;
            keys[i] = {std::log(like_rng.uniform()) / weight, static_cast<ItemId>(i)};
        }
        std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(n_likes), keys.end(),
                          [](const auto& x, const auto& y) { return x.first > y.first || (x.first == y.first && x.second < y.second); });
        for (std::size_t i = 0; i < n_likes; ++i) p.likes.push_back(keys[i].second);
        std::sort(p.likes.begin(), p.likes.end());
    }
    std::sort(w.friendships.begin(), w.friendships.end());
    for (const auto& p : w.users)
        for (auto i : p.likes) w.items[i].likers.push_back(p.id);

    for (std::size_t u = 0; u < n; ++u) {
        auto& p = w.users[u];
        Rng cand_rng(derive_seed(seed, u, kCandidateStream));
        std::vector<char> liked(config.n_items, 0), by_friend(config.n_items, 0);
        for (auto i : p.likes) liked[i] = 1;
        for (auto f : p.friends)
            for (auto i : w.users[f].likes) by_friend[i] = 1;
        std::vector<ItemId> social, rest;
        for (std::size_t i = 0; i < config.n_items; ++i) {
            if (liked[i]) continue;
            (by_friend[i] ? social : rest).push_back(static_cast<ItemId>(i));
        }
        cand_rng.shuffle(social.begin(), social.end());
        cand_rng.shuffle(rest.begin(), rest.end());
        for (auto i : social) {
            if (p.candidates.size() == config.candidates_per_user) break;
            p.candidates.push_back(i);
        }
        for (auto i : rest) {
            if (p.candidates.size() == config.candidates_per_user) break;
            p.candidates.push_back(i);
        }
        std::sort(p.candidates.begin(), p.candidates.end());
        const double wa = config.item_affinity_weight;
        for (auto i : p.candidates) {
            const double g = std::sqrt(wa) * normal_quantile(detail::clamp_open01(w.items[i].appeal)) +
                             std::sqrt(1.0 - wa) * cand_rng.normal();
            p.affinities.push_back(detail::clamp_open01(normal_cdf(g)));
        }

        Rng log_rng(derive_seed(seed, u, kInteractionStream));
        std::vector<UserId> active;
        std::vector<double> cum;
        double total = 0.0;
        for (auto f : p.friends) {
            if (log_rng.bernoulli(config.dormant_tie_fraction)) continue;
            total += -std::log(log_rng.uniform());
            active.push_back(f);
            cum.push_back(total);
        }
        const auto n_events = static_cast<std::size_t>(log_rng.between(
            static_cast<std::int64_t>(config.interactions_min), static_cast<std::int64_t>(config.interactions_max)));
        if (!active.empty()) {
            p.interactions.reserve(n_events);
            for (std::size_t e = 0; e < n_events; ++e) {
                const double t = log_rng.uniform() * total;
                auto idx = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), t) - cum.begin());
                p.interactions.push_back(active[std::min(idx, active.size() - 1)]);
            }
        }
    }
    return w;
}

// Interactions with `friend_id` among the user's last 500 events (the whole
// log when shorter).
inline std::size_t tie_strength(UserId user, UserId friend_id, const SyntheticCohort& cohort) {
    const auto& log = cohort.user(user).interactions;
    (void)cohort.user(friend_id);
    const std::size_t start = log.size() > kTieWindow ? log.size() - kTieWindow : 0;
    return static_cast<std::size_t>(std::count(log.begin() + static_cast<std::ptrdiff_t>(start), log.end(), friend_id));
}

// Tie strength of every counterpart in the user's window.
inline std::map<UserId, std::size_t> tie_strengths(UserId user, const SyntheticCohort& cohort) {
    const auto& log = cohort.user(user).interactions;
    const std::size_t start = log.size() > kTieWindow ? log.size() - kTieWindow : 0;
    std::map<UserId, std::size_t> out;
    for (std::size_t e = start; e < log.size(); ++e) ++out[log[e]];
    return out;
}

struct Explanation {
    StrategyKind kind = StrategyKind::OverallPop;
    std::optional<UserId> friend_id;
    std::optional<std::size_t> friend_count;
    std::optional<std::size_t> overall_count;

    friend bool operator==(const Explanation&, const Explanation&) = default;
};

/// Explanation for showing `item` to `user`, or nullopt when the item must be
/// skipped (no liking friend for RandFriend; no liking friend with non-zero
/// tie strength for GoodFriend and GoodFrCount). `ties` may carry the user's
/// precomputed tie_strengths.
inline std::optional<Explanation> select_explanation(UserId user, ItemId item, StrategyKind kind,
                                                     const SyntheticCohort& cohort, Rng& rng,
                                                     const std::map<UserId, std::size_t>* ties = nullptr) {
    const auto& u = cohort.user(user);
    const auto& it = cohort.item(item);
    Explanation e;
    e.kind = kind;
    switch (kind) {
    case StrategyKind::OverallPop:
        e.overall_count = it.likers.size();
        return e;
    case StrategyKind::FriendPop:
        e.friend_count = detail::sorted_intersection(u.friends, it.likers).size();
        return e;
    case StrategyKind::RandFriend: {
        const auto liking = detail::sorted_intersection(u.friends, it.likers);
        if (liking.empty()) return std::nullopt;
        e.friend_id = liking[rng.below(liking.size())];
        return e;
    }
    case StrategyKind::GoodFriend:
    case StrategyKind::GoodFrCount: {
        const auto liking = detail::sorted_intersection(u.friends, it.likers);
        std::map<UserId, std::size_t> local;
        if (!ties) {
            local = tie_strengths(user, cohort);
            ties = &local;
        }
        std::optional<UserId> best;
        std::size_t best_tie = 0;
        for (auto f : liking) { // ascending, so ties keep the smallest id
            const auto t = ties->find(f);
            const std::size_t s = t == ties->end() ? 0 : t->second;
            if (s > best_tie) {
                best_tie = s;
                best = f;
            }
        }
        if (!best) return std::nullopt;
        e.friend_id = best;
        if (kind == StrategyKind::GoodFrCount) e.friend_count = liking.size();
        return e;
    }
    }
    return std::nullopt;
}

struct LikelihoodRecord {
    UserId user = 0;
    ItemId item = 0;
    StrategyKind strategy = StrategyKind::OverallPop;
    Rating rating;
    Explanation explanation;
    std::size_t position = 0; // presentation order within the user's session

    friend bool operator==(const LikelihoodRecord&, const LikelihoodRecord&) = default;
};

struct ConsumptionRecord {
    UserId user = 0;
    ItemId item = 0;
    StrategyKind strategy = StrategyKind::OverallPop;
    Rating rating;

    friend bool operator==(const ConsumptionRecord&, const ConsumptionRecord&) = default;
};

// Uniform inverse-CDF input coupled to affinity z through a Gaussian copula.
inline double coupled_uniform(double z, double coupling, Rng& rng) {
    const double g = normal_quantile(detail::clamp_open01(z));
    return normal_cdf(coupling * g + std::sqrt(1.0 - coupling * coupling) * rng.normal());
}

/// Phase 1: candidates are shown in a per-user random order, each under a
/// uniformly drawn strategy (or the forced one). Skipped items produce no
/// record. The rating's inverse-CDF input is coupled to the affinity with
/// strength lambda, which leaves the rating's marginal pmf unchanged.
inline std::vector<LikelihoodRecord> simulate_phase1(const SyntheticCohort& cohort, std::uint64_t seed) {
    const auto& cfg = cohort.config;
    std::vector<LikelihoodRecord> out;
    for (const auto& u : cohort.users) {
        Rng rng(derive_seed(seed, u.id, kPhase1Stream));
        std::vector<std::size_t> order(u.candidates.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order.begin(), order.end());
        const auto ties = tie_strengths(u.id, cohort);
        std::array<std::optional<RatingSampler>, 5> samplers;
        std::size_t position = 0;
        for (auto ci : order) {
            const StrategyKind kind = cfg.forced_strategy ? *cfg.forced_strategy : kAllStrategies[rng.below(5)];
            const ItemId item = u.candidates[ci];
            auto expl = select_explanation(u.id, item, kind, cohort, rng, &ties);
            if (!expl) continue;
            auto& sampler = samplers[index_of(kind)];
            if (!sampler) sampler.emplace(discretize_pmf(u.params[index_of(kind)], cfg.pmf_mode));
            const double uu = coupled_uniform(u.affinities[ci], cfg.lambda, rng);
            out.push_back({u.id, item, kind, Rating{sampler->at(uu), Phase::Likelihood}, *expl, position++});
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& x, const auto& y) { return std::tie(x.user, x.item) < std::tie(y.user, y.item); });
    return out;
}

// Consumption base pmf: flat over 0..8, ratings 9 and 10 at half weight.
inline RatingPmf consumption_base_pmf() {
    RatingPmf p;
    for (std::size_t k = 0; k < kNumBins; ++k) p.probs[k] = (k >= 9 ? 0.5 : 1.0) / 10.0;
    return p;
}

/// Phase 2: per user and strategy, `per_strategy_pick` phase-1 items are
/// chosen at random. The consumption rating's inverse-CDF input is coupled to
/// the affinity with strength kappa (the cohort's kappa unless given). Random
/// draws do not depend on kappa, so results vary smoothly with it.
inline std::vector<ConsumptionRecord> simulate_phase2(const SyntheticCohort& cohort,
                                                      std::span<const LikelihoodRecord> phase1,
                                                      std::size_t per_strategy_pick, std::uint64_t seed,
                                                      std::optional<double> kappa = std::nullopt) {
    std::vector<ConsumptionRecord> out;
    if (per_strategy_pick == 0) return out;
    if (phase1.empty()) throw EmptyInputError("simulate_phase2: no phase-1 records");
    const double k = kappa.value_or(cohort.config.kappa);
    if (!(k >= 0.0 && k <= 1.0)) throw ConfigError("simulate_phase2: kappa must lie in [0, 1]");
    const RatingSampler base(consumption_base_pmf());

    std::map<UserId, std::array<std::vector<ItemId>, 5>> by_user;
    for (const auto& r : phase1) by_user[r.user][index_of(r.strategy)].push_back(r.item);

    for (auto& [user, groups] : by_user) {
        Rng rng(derive_seed(seed, user, kPhase2Stream));
        for (auto s : kAllStrategies) {
            auto& items = groups[index_of(s)];
            std::sort(items.begin(), items.end());
            const auto take = std::min(per_strategy_pick, items.size());
            for (std::size_t i = 0; i < take; ++i) {
                const auto j = i + rng.below(items.size() - i);
                std::swap(items[i], items[j]);
            }
            std::sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(take));
            for (std::size_t i = 0; i < take; ++i) {
                const double u = coupled_uniform(cohort.affinity(user, items[i]), k, rng);
                out.push_back({user, items[i], s, Rating{base.at(u), Phase::Consumption}});
            }
        }
    }
    std::sort(out.begin(), out.end(),
              [](const auto& x, const auto& y) { return std::tie(x.user, x.item) < std::tie(y.user, y.item); });
    return out;
}

// ---------------------------------------------------------------------------
// Likelihood / consumption correlation

template <class Key>
struct PairedRating {
    Key user;
    double likelihood = 0.0;
    double consumption = 0.0;
};

/// Pearson r of per-user z-scored (likelihood, consumption) pairs. Users
/// with fewer than 2 pairs or zero variance in either coordinate are left
/// out; z-scores use the population standard deviation.
template <class Key>
double zscore_correlation(std::span<const PairedRating<Key>> pairs) {
    std::map<Key, std::vector<std::pair<double, double>>> by_user;
    for (const auto& p : pairs) by_user[p.user].emplace_back(p.likelihood, p.consumption);
    std::vector<double> zl, zc;
    for (const auto& [user, v] : by_user) {
        if (v.size() < 2) continue;
        const double n = static_cast<double>(v.size());
        double ml = 0.0, mc = 0.0;
        for (const auto& [l, c] : v) {
            ml += l / n;
            mc += c / n;
        }
        double vl = 0.0, vc = 0.0;
        for (const auto& [l, c] : v) {
            vl += (l - ml) * (l - ml) / n;
            vc += (c - mc) * (c - mc) / n;
        }
        if (!(vl > 1e-12 * std::max(1.0, ml * ml)) || !(vc > 1e-12 * std::max(1.0, mc * mc))) continue;
        const double sl = std::sqrt(vl), sc = std::sqrt(vc);
        for (const auto& [l, c] : v) {
            zl.push_back((l - ml) / sl);
            zc.push_back((c - mc) / sc);
        }
    }
    if (zl.size() < 3) throw InsufficientDataError("zscore_correlation: fewer than 3 usable pairs");
    const double n = static_cast<double>(zl.size());
    double ml = 0.0, mc = 0.0;
    for (std::size_t i = 0; i < zl.size(); ++i) {
        ml += zl[i] / n;
        mc += zc[i] / n;
    }
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < zl.size(); ++i) {
        sxy += (zl[i] - ml) * (zc[i] - mc);
        sxx += (zl[i] - ml) * (zl[i] - ml);
        syy += (zc[i] - mc) * (zc[i] - mc);
    }
    return sxy / std::sqrt(sxx * syy);
}

template <class Key>
double zscore_correlation(const std::vector<PairedRating<Key>>& pairs) {
    return zscore_correlation(std::span<const PairedRating<Key>>(pairs));
}

// Joins phase records on (user, item).
inline std::vector<PairedRating<UserId>> pair_phases(std::span<const LikelihoodRecord> phase1,
                                                     std::span<const ConsumptionRecord> phase2) {
    std::map<std::pair<UserId, ItemId>, int> lik;
    for (const auto& r : phase1) lik[{r.user, r.item}] = r.rating.value;
    std::vector<PairedRating<UserId>> out;
    for (const auto& r : phase2) {
        const auto it = lik.find({r.user, r.item});
        if (it != lik.end())
            out.push_back({r.user, static_cast<double>(it->second), static_cast<double>(r.rating.value)});
    }
    return out;
}

struct CalibrationResult {
    double kappa = 0.0;
    double measured_r = 0.0;
    std::size_t n_pairs = 0;
    std::size_t evaluations = 0;
    double r_at_zero = 0.0;
    double r_at_max = 0.0;
};

inline constexpr double kKappaMax = 1.0;

/// Finds the consumption coupling kappa whose simulated z-scored correlation
/// is within tol of target_r. Phase-1 worlds are fixed across evaluations
/// (enough replicate cohorts for min_pairs pairs) and phase-2 draws are
/// common random numbers, so r(kappa) is a smooth function for bisection.
inline CalibrationResult calibrate_correlation(const CohortConfig& config, double target_r, double tol,
                                               std::uint64_t seed, std::size_t min_pairs = 10'000) {
    config.validate();
    if (!(tol > 0.0)) throw ValidationError("calibrate_correlation: tol must be positive");
    if (config.per_strategy_pick == 0) throw ConfigError("calibrate_correlation: per_strategy_pick is 0");

    struct World {
        SyntheticCohort cohort;
        std::vector<LikelihoodRecord> phase1;
    };
    std::vector<World> worlds;
    std::size_t pairs = 0;
    for (std::uint64_t rep = 0; pairs < min_pairs; ++rep) {
        if (rep >= 1000) throw ConfigError("calibrate_correlation: cohort yields too few rating pairs");
        World w{generate_cohort(config, derive_seed(seed, rep, kCalibrationStream)), {}};
        w.phase1 = simulate_phase1(w.cohort, derive_seed(seed, rep, kPhase1Stream));
        if (w.phase1.empty()) continue;
        pairs += simulate_phase2(w.cohort, w.phase1, config.per_strategy_pick, 0, 0.0).size();
        worlds.push_back(std::move(w));
    }

    CalibrationResult res;
    auto measure = [&](double kappa) {
        ++res.evaluations;
        std::vector<PairedRating<std::pair<std::size_t, UserId>>> all;
        for (std::size_t rep = 0; rep < worlds.size(); ++rep) {
            const auto p2 = simulate_phase2(worlds[rep].cohort, worlds[rep].phase1, config.per_strategy_pick,
                                            derive_seed(seed, rep, kPhase2Stream), kappa);
            for (const auto& p : pair_phases(worlds[rep].phase1, p2))
                all.push_back({{rep, p.user}, p.likelihood, p.consumption});
        }
        res.n_pairs = all.size();
        return zscore_correlation(all);
    };

    res.r_at_zero = measure(0.0);
    if (std::abs(res.r_at_zero - target_r) <= tol && target_r < 0.9) {
        res.kappa = 0.0;
        res.measured_r = res.r_at_zero;
        return res;
    }
    res.r_at_max = measure(kKappaMax);
    if (!(target_r >= 0.0 && target_r < 0.9) || target_r > res.r_at_max + tol || target_r < res.r_at_zero - tol)
        throw CalibrationError("calibrate_correlation: target r = " + std::to_string(target_r) +
                                   " outside achievable range [" + std::to_string(res.r_at_zero) + ", " +
                                   std::to_string(res.r_at_max) + "]",
                               res.r_at_zero, res.r_at_max);

    // Bisect to a fifth of tol so a re-simulation on a fresh seed stays within tol.
    double lo = 0.0, hi = kKappaMax;
    std::optional<std::pair<double, double>> best;
    for (int it = 0; it < 50; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double r = measure(mid);
        if (!best || std::abs(r - target_r) < std::abs(best->second - target_r)) best = {mid, r};
        if (std::abs(r - target_r) <= 0.2 * tol) break;
        (r < target_r ? lo : hi) = mid;
    }
    if (std::abs(best->second - target_r) > tol)
        throw CalibrationError("calibrate_correlation: bisection did not reach tolerance", res.r_at_zero,
                               res.r_at_max);
    res.kappa = best->first;
    res.measured_r = best->second;
    return res;
}

// ---------------------------------------------------------------------------
// Per-strategy summaries

struct MomentSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double std = 0.0; // population convention
};

struct StrategySummary {
    StrategyKind strategy = StrategyKind::OverallPop;
    MomentSummary likelihood;
    double likelihood_fraction_above5 = 0.0;
    MomentSummary consumption;
};

inline MomentSummary moments(std::span<const int> v) {
    MomentSummary m;
    m.n = v.size();
    if (v.empty()) return m;
    for (int x : v) m.mean += x;
    m.mean /= static_cast<double>(m.n);
    double ss = 0.0;
    for (int x : v) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(m.n));
    return m;
}

inline std::array<StrategySummary, 5> strategy_report(std::span<const StrategyRating> likelihood,
                                                      std::span<const StrategyRating> consumption) {
    std::array<std::vector<int>, 5> lik, con;
    for (const auto& r : likelihood) lik[index_of(r.strategy)].push_back(r.rating.value);
    for (const auto& r : consumption) con[index_of(r.strategy)].push_back(r.rating.value);
    std::array<StrategySummary, 5> out;
    for (auto s : kAllStrategies) {
        const auto i = index_of(s);
        out[i].strategy = s;
        out[i].likelihood = moments(lik[i]);
        if (!lik[i].empty())
            out[i].likelihood_fraction_above5 =
                static_cast<double>(std::count_if(lik[i].begin(), lik[i].end(), [](int v) { return v > 5; })) /
                static_cast<double>(lik[i].size());
        out[i].consumption = moments(con[i]);
    }
    return out;
}

inline std::vector<StrategyRating> strategy_ratings(std::span<const LikelihoodRecord> records) {
    std::vector<StrategyRating> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.strategy, r.rating});
    return out;
}

inline std::vector<StrategyRating> strategy_ratings(std::span<const ConsumptionRecord> records) {
    std::vector<StrategyRating> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back({r.strategy, r.rating});
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::json& j, const CohortConfig& c) {
    nlohmann::json params = nlohmann::json::object();
    for (auto s : kAllStrategies) params[std::string(to_token(s))] = c.strategy_params[index_of(s)];
    nlohmann::json archetypes = nlohmann::json::array();
    for (const auto& a : c.archetypes)
        archetypes.push_back({{"name", a.name}, {"fraction", round_sig(a.fraction)}, {"params", a.params}});
    j = nlohmann::json{{"n_users", c.n_users},
                       {"mean_degree", round_sig(c.mean_degree)},
                       {"min_degree", c.min_degree},
                       {"max_degree", c.max_degree},
                       {"n_items", c.n_items},
                       {"likes_min", c.likes_min},
                       {"likes_max", c.likes_max},
                       {"candidates_per_user", c.candidates_per_user},
                       {"interactions_min", c.interactions_min},
                       {"interactions_max", c.interactions_max},
                       {"dormant_tie_fraction", round_sig(c.dormant_tie_fraction)},
                       {"item_affinity_weight", round_sig(c.item_affinity_weight)},
                       {"lambda", round_sig(c.lambda)},
                       {"kappa", round_sig(c.kappa)},
                       {"per_strategy_pick", c.per_strategy_pick},
                       {"forced_strategy", c.forced_strategy ? nlohmann::json(std::string(to_token(*c.forced_strategy)))
                                                             : nlohmann::json(nullptr)},
                       {"strategy_params", params},
                       {"archetypes", archetypes},
                       {"pmf_mode", std::string(pmf_mode_token(c.pmf_mode))}};
}

// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, CohortConfig& c) {
    if (!j.is_object()) throw ConfigError("cohort config: expected a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "n_users") c.n_users = v.get<std::size_t>();
            else if (key == "mean_degree") c.mean_degree = v.get<double>();
            else if (key == "min_degree") c.min_degree = v.get<std::size_t>();
            else if (key == "max_degree") c.max_degree = v.get<std::size_t>();
            else if (key == "n_items") c.n_items = v.get<std::size_t>();
            else if (key == "likes_min") c.likes_min = v.get<std::size_t>();
            else if (key == "likes_max") c.likes_max = v.get<std::size_t>();
            else if (key == "candidates_per_user") c.candidates_per_user = v.get<std::size_t>();
            else if (key == "interactions_min") c.interactions_min = v.get<std::size_t>();
            else if (key == "interactions_max") c.interactions_max = v.get<std::size_t>();
            else if (key == "dormant_tie_fraction") c.dormant_tie_fraction = v.get<double>();
            else if (key == "item_affinity_weight") c.item_affinity_weight = v.get<double>();
            else if (key == "lambda") c.lambda = v.get<double>();
            else if (key == "kappa") c.kappa = v.get<double>();
            else if (key == "per_strategy_pick") c.per_strategy_pick = v.get<std::size_t>();
            else if (key == "forced_strategy") {
                if (v.is_null()) {
                    c.forced_strategy.reset();
                } else {
                    const auto tok = v.get<std::string>();
                    c.forced_strategy = strategy_from_token(tok);
                    if (!c.forced_strategy) throw ConfigError("cohort config: unknown strategy '" + tok + "'");
                }
            } else if (key == "strategy_params") {
                for (const auto& [tok, pv] : v.items()) {
                    const auto s = strategy_from_token(tok);
                    if (!s) throw ConfigError("cohort config: unknown strategy '" + tok + "'");
                    c.strategy_params[index_of(*s)] = pv.get<MixtureParams>();
                }
            } else if (key == "archetypes") {
                c.archetypes.clear();
                for (const auto& a : v)
                    c.archetypes.push_back(
                        {a.value("name", std::string()), a.at("fraction").get<double>(), a.at("params").get<MixtureParams>()});
            } else if (key == "pmf_mode") {
                const auto tok = v.get<std::string>();
                if (tok == pmf_mode_token(PmfMode::TruncatedRenormalized)) c.pmf_mode = PmfMode::TruncatedRenormalized;
                else if (tok == pmf_mode_token(PmfMode::PaperContinuousBinned)) c.pmf_mode = PmfMode::PaperContinuousBinned;
                else throw ConfigError("cohort config: unknown pmf_mode '" + tok + "'");
            } else {
                throw ConfigError("cohort config: unknown key '" + key + "'");
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("cohort config: ") + e.what());
    } catch (const DomainError& e) {
        throw ConfigError(std::string("cohort config: ") + e.what());
    }
}

inline void to_json(nlohmann::json& j, const SyntheticCohort& w) {
    nlohmann::json users = nlohmann::json::array();
    for (const auto& u : w.users) {
        nlohmann::json aff = nlohmann::json::array();
        for (double z : u.affinities) aff.push_back(round_sig(z));
        users.push_back({{"id", u.id},
                         {"archetype", u.archetype ? nlohmann::json(*u.archetype) : nlohmann::json(nullptr)},
                         {"friends", u.friends},
                         {"interactions", u.interactions},
                         {"likes", u.likes},
                         {"candidates", u.candidates},
                         {"affinities", aff}});
    }
    nlohmann::json items = nlohmann::json::array();
    for (const auto& i : w.items)
        items.push_back({{"id", i.id},
                         {"appeal", round_sig(i.appeal)},
                         {"popularity", round_sig(i.popularity)},
                         {"likers", i.likers}});
    nlohmann::json edges = nlohmann::json::array();
    for (const auto& [u, v] : w.friendships) edges.push_back({u, v});
    j = nlohmann::json{{"config", w.config}, {"users", users}, {"items", items}, {"friendships", edges}};
}

} // namespace explainmix::sim
