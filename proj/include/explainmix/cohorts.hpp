#pragma once

// User clustering on (mean, variance) of likelihood ratings, per-cluster
// mixture fits, and staged personalization of a user's effective model.

#include "error.hpp"
#include "estimation.hpp"
#include "model.hpp"
#include "rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace explainmix {

struct UserSummary {
    std::string user_id;
    double mean = 0.0;
    double variance = 0.0; // population convention
    std::size_t n_ratings = 0;
};

inline UserSummary summarize_user(std::span<const Rating> ratings, std::string user_id = {}) {
    if (ratings.empty()) throw EmptyInputError("summarize_user: no ratings");
    const double n = static_cast<double>(ratings.size());
    double mean = 0.0;
    for (const auto& r : ratings) mean += r.value;
    mean /= n;
    double var = 0.0;
    for (const auto& r : ratings) var += (r.value - mean) * (r.value - mean);
    return UserSummary{std::move(user_id), mean, var / n, ratings.size()};
}

// ---------------------------------------------------------------------------
// k-means

struct Point2 {
    double x = 0.0; // mean rating
    double y = 0.0; // rating variance

    friend bool operator==(const Point2&, const Point2&) = default;
    friend auto operator<=>(const Point2&, const Point2&) = default;
};

inline double sq_dist(const Point2& p, const Point2& q) noexcept {
    const double dx = p.x - q.x, dy = p.y - q.y;
    return dx * dx + dy * dy;
}

enum class FeatureScaling { None, ZScore };

struct KMeansOptions {
    std::size_t max_iters = 500;
    double tol = 1e-9; // largest centroid movement at convergence
    FeatureScaling scaling = FeatureScaling::None;
};

struct KMeansResult {
    std::vector<std::size_t> assignments;
    std::vector<Point2> centroids;     // input units
    std::vector<double> sse_history;   // within-cluster SSE after each assignment step (scaled units)
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

inline std::size_t nearest(const Point2& p, std::span<const Point2> centroids) {
    std::size_t best = 0;
    double best_d = sq_dist(p, centroids[0]);
    for (std::size_t j = 1; j < centroids.size(); ++j) {
        const double d = sq_dist(p, centroids[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

inline double total_sse(std::span<const Point2> pts, std::span<const std::size_t> assign,
                        std::span<const Point2> centroids) {
    double s = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) s += sq_dist(pts[i], centroids[assign[i]]);
    return s;
}

} // namespace detail

/// Lloyd's algorithm with k-means++ seeding.
///
/// Assignment ties go to the lowest centroid index. An emptied cluster is
/// re-seeded with the point farthest from its own centroid. With ZScore
/// scaling the algorithm runs on standardized coordinates and centroids are
/// reported as member means in input units.
inline KMeansResult kmeans(std::span<const Point2> points, std::size_t k, std::uint64_t seed,
                           const KMeansOptions& opt = {}) {
    if (k < 1) throw ValidationError("kmeans: k must be at least 1");
    const std::set<Point2> distinct(points.begin(), points.end());
    if (distinct.size() < k)
        throw InfeasibleError("kmeans: " + std::to_string(distinct.size()) + " distinct points for k = " +
                              std::to_string(k));

    const std::size_t n = points.size();
    std::vector<Point2> pts(points.begin(), points.end());
    if (opt.scaling == FeatureScaling::ZScore) {
        Point2 m, s;
        for (const auto& p : pts) {
            m.x += p.x / static_cast<double>(n);
            m.y += p.y / static_cast<double>(n);
        }
        for (const auto& p : pts) {
            s.x += (p.x - m.x) * (p.x - m.x) / static_cast<double>(n);
            s.y += (p.y - m.y) * (p.y - m.y) / static_cast<double>(n);
        }
        s.x = s.x > 0.0 ? std::sqrt(s.x) : 1.0;
        s.y = s.y > 0.0 ? std::sqrt(s.y) : 1.0;
        for (auto& p : pts) p = {(p.x - m.x) / s.x, (p.y - m.y) / s.y};
    }

    Rng rng(seed);
    std::vector<Point2> centroids;
    centroids.push_back(pts[rng.below(n)]);
    std::vector<double> d2(n);
    while (centroids.size() < k) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            d2[i] = sq_dist(pts[i], centroids[detail::nearest(pts[i], centroids)]);
            total += d2[i];
        }
        double target = rng.uniform() * total;
        std::size_t pick = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (d2[i] <= 0.0) continue;
            pick = i;
            target -= d2[i];
            if (target < 0.0) break;
        }
        centroids.push_back(pts[pick]);
    }

    KMeansResult res;
    res.assignments.assign(n, 0);
    for (res.iterations = 0; res.iterations < opt.max_iters; ++res.iterations) {
        for (std::size_t i = 0; i < n; ++i) res.assignments[i] = detail::nearest(pts[i], centroids);

        // Refill empty clusters.
        std::vector<std::size_t> sizes(k, 0);
        for (auto a : res.assignments) ++sizes[a];
        for (std::size_t j = 0; j < k; ++j) {
            if (sizes[j] > 0) continue;
            std::size_t far = 0;
            double far_d = -1.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sizes[res.assignments[i]] < 2) continue;
                const double d = sq_dist(pts[i], centroids[res.assignments[i]]);
                if (d > far_d) {
                    far_d = d;
                    far = i;
                }
            }
            --sizes[res.assignments[far]];
            res.assignments[far] = j;
            sizes[j] = 1;
            centroids[j] = pts[far];
        }
        res.sse_history.push_back(detail::total_sse(pts, res.assignments, centroids));

        std::vector<Point2> next(k);
        for (std::size_t i = 0; i < n; ++i) {
            next[res.assignments[i]].x += pts[i].x;
            next[res.assignments[i]].y += pts[i].y;
        }
        double moved = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            next[j].x /= static_cast<double>(sizes[j]);
            next[j].y /= static_cast<double>(sizes[j]);
            moved = std::max(moved, std::sqrt(sq_dist(next[j], centroids[j])));
        }
        centroids = std::move(next);
        if (moved < opt.tol) {
            res.converged = true;
            ++res.iterations;
            break;
        }
    }

    // Member means in input units.
    res.centroids.assign(k, Point2{});
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        res.centroids[res.assignments[i]].x += points[i].x;
        res.centroids[res.assignments[i]].y += points[i].y;
        ++sizes[res.assignments[i]];
    }
    for (std::size_t j = 0; j < k; ++j) {
        res.centroids[j].x /= static_cast<double>(sizes[j]);
        res.centroids[j].y /= static_cast<double>(sizes[j]);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Cluster models

struct ClusterModel {
    std::size_t cluster_id = 0;
    Point2 centroid;
    std::vector<std::string> members;
    FitResult fit;
};

struct ClusterOptions {
    std::size_t k = 3;
    FitOptions fit;
    KMeansOptions kmeans;
};

/// Summarizes each user, clusters the summaries and fits the pooled ratings
/// of every cluster. Clusters come back ordered by centroid mean, with
/// cluster_id renumbered to match.
inline std::vector<ClusterModel> cluster_and_fit(const std::map<std::string, std::vector<Rating>>& users,
                                                 const ClusterOptions& options, std::uint64_t seed) {
    if (users.empty()) throw EmptyInputError("cluster_and_fit: no users");
    std::vector<Point2> pts;
    std::vector<const std::string*> ids;
    for (const auto& [id, ratings] : users) {
        const auto s = summarize_user(ratings, id);
        pts.push_back({s.mean, s.variance});
        ids.push_back(&id);
    }
    const auto km = kmeans(pts, options.k, seed, options.kmeans);

    std::vector<std::size_t> order(options.k);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) {
        return km.centroids[i].x < km.centroids[j].x ||
               (km.centroids[i].x == km.centroids[j].x && km.centroids[i].y < km.centroids[j].y);
    });

    std::vector<ClusterModel> out;
    for (std::size_t rank = 0; rank < options.k; ++rank) {
        const auto j = order[rank];
        ClusterModel cm;
        cm.cluster_id = rank;
        cm.centroid = km.centroids[j];
        std::vector<Rating> pooled;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            if (km.assignments[i] != j) continue;
            cm.members.push_back(*ids[i]);
            const auto& r = users.at(*ids[i]);
            pooled.insert(pooled.end(), r.begin(), r.end());
        }
        cm.fit = fit_mixture(build_histogram(pooled), options.fit, derive_seed(seed, rank, 0xC1));
        out.push_back(std::move(cm));
    }
    return out;
}

// Nearest cluster by Euclidean distance in (mean, variance); ties to the lowest id.
inline std::size_t nearest_cluster(const UserSummary& s, std::span<const ClusterModel> clusters) {
    if (clusters.empty()) throw EmptyInputError("nearest_cluster: no clusters");
    const Point2 p{s.mean, s.variance};
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < clusters.size(); ++j) {
        const double d = sq_dist(p, clusters[j].centroid);
        if (d < best_d || (d == best_d && clusters[j].cluster_id < clusters[best].cluster_id)) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Personalization

enum class PersonalizationStage { PopulationPrior, ClusterAssigned, Individual };

struct PersonalizationConfig {
    std::size_t m_cluster = 10;
    std::size_t m_individual = 30;
    bool individual_enabled = false;
    FitOptions fit;
    std::uint64_t seed = 0;
};

struct PersonalizationState {
    PersonalizationStage stage = PersonalizationStage::PopulationPrior;
    MixtureParams effective_params;
    std::vector<Rating> history;
    std::optional<std::size_t> cluster_id;
    bool fit_fallback = false;    // individual fit failed; previous stage kept
    bool boundary_fit = false;    // individual fit landed on a parameter bound
    PersonalizationConfig config;

    std::size_t history_len() const noexcept { return history.size(); }

    static PersonalizationState start(const MixtureParams& population, PersonalizationConfig config = {}) {
        if (config.m_individual < config.m_cluster)
            throw ValidationError("personalization: m_individual must be at least m_cluster");
        PersonalizationState s;
        s.effective_params = population;
        s.config = std::move(config);
        return s;
    }
};

/// Records one rating and advances the stage: population prior below
/// m_cluster ratings, nearest cluster from there, and (when enabled) an
/// individual free-mode fit from m_individual ratings on.
inline PersonalizationState personalize(PersonalizationState state, const Rating& new_rating,
                                        std::span<const ClusterModel> clusters, const MixtureParams& population) {
    state.history.push_back(new_rating);
    const auto n = state.history_len();
    const auto& cfg = state.config;

    if (n < cfg.m_cluster || clusters.empty()) {
        state.stage = PersonalizationStage::PopulationPrior;
        state.cluster_id.reset();
        state.effective_params = population;
        return state;
    }

    const auto summary = summarize_user(state.history);
    const auto j = nearest_cluster(summary, clusters);
    state.cluster_id = clusters[j].cluster_id;
    const MixtureParams cluster_params = clusters[j].fit.params;

    if (!cfg.individual_enabled || n < cfg.m_individual) {
        state.stage = PersonalizationStage::ClusterAssigned;
        state.effective_params = cluster_params;
        return state;
    }

    FitOptions o = cfg.fit;
    o.constrain_mean = false;
    try {
        const auto fit = fit_mixture(build_histogram(state.history), o,
                                     derive_seed(cfg.seed, n, 0xFE));
        fit.params.validate();
        state.stage = PersonalizationStage::Individual;
        state.effective_params = fit.params;
        state.boundary_fit = fit.boundary_hit;
        state.fit_fallback = false;
    } catch (const Error&) {
        state.stage = PersonalizationStage::ClusterAssigned;
        state.effective_params = cluster_params;
        state.fit_fallback = true;
    }
    return state;
}

inline void to_json(nlohmann::json& j, const ClusterModel& c) {
    j = nlohmann::json{{"cluster_id", c.cluster_id},
                       {"centroid", {{"mean", round_sig(c.centroid.x)}, {"variance", round_sig(c.centroid.y)}}},
                       {"members", c.members},
                       {"fit", c.fit}};
}

inline void from_json(const nlohmann::json& j, ClusterModel& c) {
    c.cluster_id = j.at("cluster_id").get<std::size_t>();
    c.centroid = {j.at("centroid").at("mean").get<double>(), j.at("centroid").at("variance").get<double>()};
    c.members = j.at("members").get<std::vector<std::string>>();
    c.fit = j.at("fit").get<FitResult>();
}

} // namespace explainmix
