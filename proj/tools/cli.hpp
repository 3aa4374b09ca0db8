#pragma once

// explainmix command line: fit, cluster, sample, simulate, calibrate,
// recommend, report, eval.

#include <explainmix/cohorts.hpp>
#include <explainmix/estimation.hpp>
#include <explainmix/io.hpp>
#include <explainmix/policy.hpp>
#include <explainmix/simulator.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace explainmix::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInvalid = 1;
inline constexpr int kExitInfeasible = 2;

namespace detail {

inline std::uint64_t default_seed() {
    const char* env = std::getenv("EXPLAINMIX_SEED");
    if (!env || !*env) return 0;
    char* end = nullptr;
    errno = 0;
    const auto v = std::strtoull(env, &end, 10);
    if (errno || *end || *env == '-') throw ValidationError(std::string("EXPLAINMIX_SEED is not a seed: '") + env + "'");
    return v;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    const auto text = io::read_file(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline std::vector<io::RatingsRecord> read_all(const std::vector<std::string>& paths) {
    std::vector<io::RatingsRecord> all;
    for (const auto& p : paths) {
        auto recs = io::parse_ratings(p);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
}

struct ScoreRow {
    std::string item_id;
    double likelihood = 0.0;
    double consumption = 0.0;
};

inline double parse_score(const std::string& s, std::size_t line) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end || !std::isfinite(v)) throw ValidationError("score is not a finite number: '" + s + "'", line);
    return v;
}

inline std::vector<ScoreRow> read_scores(const std::filesystem::path& path) {
    const auto text = io::read_file(path);
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    std::vector<ScoreRow> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != "item_id,likelihood,consumption")
                throw ValidationError("expected header 'item_id,likelihood,consumption'", 1);
            continue;
        }
        if (line.empty()) continue;
        const auto f = io::detail::split_fields(line);
        if (f.size() != 3) throw ValidationError("expected 3 fields", line_no);
        if (f[0].empty()) throw ValidationError("empty item id", line_no);
        rows.push_back({std::string(f[0]), parse_score(std::string(f[1]), line_no),
                        parse_score(std::string(f[2]), line_no)});
    }
    if (line_no == 0) throw ValidationError("missing header", 1);
    if (rows.empty()) throw EmptyInputError("no scores after the header");
    return rows;
}

inline FitOptions fit_options(bool constrained, std::optional<double> target_mean, bool exclude_bin5,
                              std::size_t n_starts, const std::string& pmf_mode) {
    FitOptions o;
    o.constrain_mean = constrained || target_mean.has_value();
    o.target_mean = target_mean;
    o.exclude_bin5 = exclude_bin5;
    o.n_starts = n_starts;
    const auto mode = pmf_mode_from_token(pmf_mode);
    if (!mode) throw ValidationError("unknown pmf mode '" + pmf_mode + "'");
    o.pmf_mode = *mode;
    return o;
}

// Fit flags shared by fit and report.
struct FitFlags {
    bool constrained = false;
    std::optional<double> target_mean;
    bool exclude_bin5 = false;
    std::size_t n_starts = FitOptions{}.n_starts;
    std::string pmf_mode{pmf_mode_token(PmfMode::TruncatedRenormalized)};

    void attach(CLI::App* cmd) {
        cmd->add_flag("--constrained", constrained, "Tie alpha to the mean constraint");
        cmd->add_option("--target-mean", target_mean, "Mean c for the constraint (implies --constrained)");
        cmd->add_flag("--exclude-bin5", exclude_bin5, "Leave rating 5 out of the loss");
        cmd->add_option("--starts", n_starts, "Multi-start count")->check(CLI::PositiveNumber);
        cmd->add_option("--pmf-mode", pmf_mode, "truncated_renormalized or continuous_binned");
    }

    FitOptions options() const { return fit_options(constrained, target_mean, exclude_bin5, n_starts, pmf_mode); }
};

inline std::string join_warnings(const std::vector<std::string>& w) {
    std::string s;
    for (const auto& x : w) s += "warning: " + x + "\n";
    return s;
}

} // namespace detail

/// Runs one subcommand. Returns 0 on success, 1 on usage, validation or I/O
/// errors, 2 on infeasible fits or calibration failure.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    std::uint64_t seed = 0;
    try {
        seed = detail::default_seed();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }

    CLI::App app{"Mixture models of explanation-driven ratings", "explainmix"};
    app.require_subcommand(1);
    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed, "Random seed (default: EXPLAINMIX_SEED or 0)");
    };

    // fit
    auto* fit = app.add_subcommand("fit", "Fit per-strategy and combined mixtures to a ratings CSV");
    std::string fit_in, fit_out = "model.json";
    int fit_phase = 1;
    std::size_t fit_clusters = 0;
    detail::FitFlags fit_flags;
    fit->add_option("ratings", fit_in, "Ratings CSV")->required();
    fit->add_option("-o,--output", fit_out, "Model JSON to write");
    fit->add_option("--phase", fit_phase, "Rating phase to fit")->check(CLI::IsMember({1, 2}));
    fit->add_option("--clusters", fit_clusters, "Also cluster users into K groups and store their fits");
    fit_flags.attach(fit);
    add_seed(fit);

    // cluster
    auto* cluster = app.add_subcommand("cluster", "Cluster users by rating mean and variance and fit each cluster");
    std::string cl_in, cl_out = "clusters.json";
    std::size_t cl_k = 3;
    int cl_phase = 1;
    bool cl_zscore = false;
    detail::FitFlags cl_flags;
    cluster->add_option("ratings", cl_in, "Ratings CSV")->required();
    cluster->add_option("-o,--output", cl_out, "Clusters JSON to write");
    cluster->add_option("-k,--clusters", cl_k, "Number of clusters")->check(CLI::PositiveNumber);
    cluster->add_option("--phase", cl_phase, "Rating phase to cluster")->check(CLI::IsMember({1, 2}));
    cluster->add_flag("--zscore", cl_zscore, "Z-scale the (mean, variance) features");
    cl_flags.attach(cluster);
    add_seed(cluster);

    // sample
    auto* sample = app.add_subcommand("sample", "Draw ratings from a fitted model");
    std::string sm_in, sm_out = "ratings.csv";
    std::size_t sm_n = 1000, sm_per_user = 30;
    sample->add_option("model", sm_in, "Model JSON")->required();
    sample->add_option("-n,--count", sm_n, "Ratings per strategy")->check(CLI::PositiveNumber);
    sample->add_option("--per-user", sm_per_user, "Ratings per synthetic user")->check(CLI::PositiveNumber);
    sample->add_option("-o,--output", sm_out, "Ratings CSV to write");
    add_seed(sample);

    // simulate
    auto* simulate = app.add_subcommand("simulate", "Simulate both study phases for a cohort config");
    std::string sim_in, sim_dir = ".", sim_world;
    simulate->add_option("cohort", sim_in, "Cohort config JSON")->required();
    simulate->add_option("-o,--output-dir", sim_dir, "Directory for phase1.csv and phase2.csv");
    simulate->add_option("--world", sim_world, "Also write the generated cohort as JSON");
    add_seed(simulate);

    // calibrate
    auto* calibrate = app.add_subcommand("calibrate", "Calibrate the consumption coupling kappa to a target correlation");
    std::string cal_in;
    double cal_target = 0.17, cal_tol = 0.05;
    std::size_t cal_pairs = 10'000;
    calibrate->add_option("cohort", cal_in, "Cohort config JSON (kappa is written back)")->required();
    calibrate->add_option("--target-r", cal_target, "Target z-scored correlation");
    calibrate->add_option("--tol", cal_tol, "Tolerance on r")->check(CLI::PositiveNumber);
    calibrate->add_option("--min-pairs", cal_pairs, "Rating pairs per evaluation")->check(CLI::PositiveNumber);
    add_seed(calibrate);

    // recommend
    auto* recommend = app.add_subcommand("recommend", "Two-phase recommendation from likelihood/consumption scores");
    std::string rec_in, rec_out = "slate.csv";
    TwoPhaseConfig rec_cfg;
    recommend->add_option("scores", rec_in, "CSV with header item_id,likelihood,consumption")->required();
    recommend->add_option("--epsilon", rec_cfg.epsilon, "Initial likelihood threshold");
    recommend->add_option("--delta", rec_cfg.delta, "Threshold decrement");
    recommend->add_option("-k,--slate-size", rec_cfg.k, "Required slate size");
    recommend->add_option("--floor", rec_cfg.epsilon_floor, "Lowest threshold");
    recommend->add_option("-o,--output", rec_out, "Slate CSV to write");
    add_seed(recommend);

    // report
    auto* report = app.add_subcommand("report", "Per-strategy summary and observed-vs-fitted tables");
    std::vector<std::string> rep_in;
    std::string rep_dir = "report", rep_model, rep_cohort;
    std::size_t rep_clusters = 0;
    detail::FitFlags rep_flags;
    report->add_option("ratings", rep_in, "Ratings CSV files")->required();
    report->add_option("-o,--output-dir", rep_dir, "Directory for the report tables");
    report->add_option("--model", rep_model, "Use this model instead of fitting");
    report->add_option("--cohort", rep_cohort, "Cohort config the ratings were generated from (adds recovery.csv)");
    report->add_option("--clusters", rep_clusters, "Cluster users into K groups (adds clusters.csv)");
    rep_flags.attach(report);
    add_seed(report);

    // eval
    auto* eval = app.add_subcommand("eval", "Z-scored likelihood/consumption correlation of paired ratings");
    std::vector<std::string> ev_in;
    eval->add_option("ratings", ev_in, "Ratings CSV files with phase 1 and phase 2 records")->required();
    add_seed(eval);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitInvalid;
    }

    try {
        if (*fit) {
            const auto text = io::read_file(fit_in);
            const auto records = io::parse_ratings_text(text);
            const auto opts = fit_flags.options();
            const auto ratings = io::strategy_ratings(records, fit_phase);
            const auto fits = fit_all_strategies(ratings, opts, seed);
            err << detail::join_warnings(fits.warnings);
            io::ModelFile m;
            m.per_strategy = fits.per_strategy;
            m.combined = fits.combined;
            m.provenance = {io::sha256_hex(text), seed, opts};
            if (fit_clusters > 0) {
                ClusterOptions co;
                co.k = fit_clusters;
                co.fit = opts;
                m.clusters = cluster_and_fit(io::ratings_by_user(records, fit_phase), co, seed);
            }
            io::write_model(fit_out, m);
            out << "wrote " << fit_out << "\n";
        } else if (*cluster) {
            const auto records = io::parse_ratings(cl_in);
            ClusterOptions co;
            co.k = cl_k;
            co.fit = cl_flags.options();
            if (cl_zscore) co.kmeans.scaling = FeatureScaling::ZScore;
            const auto clusters = cluster_and_fit(io::ratings_by_user(records, cl_phase), co, seed);
            io::atomic_write(cl_out, nlohmann::json(clusters).dump(2) + "\n");
            for (const auto& c : clusters)
                out << "cluster " << c.cluster_id << ": " << c.members.size() << " users, a=" << io::fmt6(c.fit.params.a)
                    << "\n";
        } else if (*sample) {
            const auto m = io::read_model(sm_in);
            std::vector<std::pair<StrategyKind, MixtureParams>> groups;
            for (const auto& [s, f] : m.per_strategy) groups.emplace_back(s, f.params);
            if (groups.empty()) groups.emplace_back(StrategyKind::OverallPop, m.combined.params);
            std::vector<io::RatingsRecord> records;
            for (const auto& [s, p] : groups) {
                const RatingSampler draw(discretize_pmf(p, m.provenance.options.pmf_mode));
                Rng rng(derive_seed(seed, index_of(s), 0x5A));
                const std::string tok(to_token(s));
                for (std::size_t i = 0; i < sm_n; ++i)
                    records.push_back({"u" + std::to_string(i / sm_per_user), tok + "_" + std::to_string(i), s, 1,
                                       draw(rng).value});
            }
            io::write_ratings(sm_out, records);
            out << "wrote " << records.size() << " ratings to " << sm_out << "\n";
        } else if (*simulate) {
            const auto config = detail::read_json(sim_in).get<sim::CohortConfig>();
            const auto world = sim::generate_cohort(config, derive_seed(seed, 0, 0xC0));
            const auto p1 = sim::simulate_phase1(world, derive_seed(seed, 1, 0xC0));
            const auto p2 = p1.empty() ? std::vector<sim::ConsumptionRecord>{}
                                       : sim::simulate_phase2(world, p1, config.per_strategy_pick,
                                                              derive_seed(seed, 2, 0xC0));
            std::error_code ec;
            std::filesystem::create_directories(sim_dir, ec);
            if (ec || !std::filesystem::is_directory(sim_dir))
                throw IoError("cannot create directory '" + sim_dir + "'");
            const auto dir = std::filesystem::path(sim_dir);
            const auto r1 = io::format_ratings(io::to_records(p1));
            const auto r2 = io::format_ratings(io::to_records(p2));
            const auto w = sim_world.empty() ? std::string() : nlohmann::json(world).dump() + "\n";
            io::atomic_write(dir / "phase1.csv", r1);
            io::atomic_write(dir / "phase2.csv", r2);
            if (!sim_world.empty()) io::atomic_write(sim_world, w);
            out << "phase1: " << p1.size() << " ratings, phase2: " << p2.size() << " ratings\n";
        } else if (*calibrate) {
            auto j = detail::read_json(cal_in);
            const auto config = j.get<sim::CohortConfig>();
            const auto res = sim::calibrate_correlation(config, cal_target, cal_tol, seed, cal_pairs);
            j["kappa"] = round_sig(res.kappa);
            io::atomic_write(cal_in, j.dump(2) + "\n");
            out << "kappa=" << io::fmt6(res.kappa) << " r=" << io::fmt6(res.measured_r) << " pairs=" << res.n_pairs
                << "\n";
        } else if (*recommend) {
            const auto rows = detail::read_scores(rec_in);
            std::vector<ScoredItem<std::size_t>> items;
            for (std::size_t i = 0; i < rows.size(); ++i) items.push_back({i, rows[i].likelihood, rows[i].consumption});
            // Smaller index breaks ties, so order rows by item id first.
            std::vector<std::size_t> order(rows.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
            std::sort(order.begin(), order.end(), [&](auto a, auto b) { return rows[a].item_id < rows[b].item_id; });
            for (std::size_t r = 0; r < order.size(); ++r) items[order[r]].item = r;
            SlateMeta meta;
            const auto slate = two_phase_recommend(items, rec_cfg, &meta);
            std::string csv = "rank,item_id,likelihood,consumption\n";
            for (std::size_t r = 0; r < slate.size(); ++r) {
                const auto& row = rows[order[slate[r].item]];
                csv += std::to_string(r + 1) + ',' + row.item_id + ',' + io::fmt6(row.likelihood) + ',' +
                       io::fmt6(row.consumption) + '\n';
            }
            io::atomic_write(rec_out, csv);
            out << slate.size() << " items at threshold " << io::fmt6(meta.threshold) << "\n";
        } else if (*report) {
            const auto records = detail::read_all(rep_in);
            io::ReportInputs in;
            in.likelihood = io::strategy_ratings(records, 1);
            in.consumption = io::strategy_ratings(records, 2);
            const auto opts = rep_flags.options();
            in.pmf_mode = opts.pmf_mode;
            in.fits = fit_all_strategies(in.likelihood, opts, seed);
            if (!rep_model.empty()) {
                const auto m = io::read_model(rep_model);
                in.pmf_mode = m.provenance.options.pmf_mode;
                for (auto it = in.fits.per_strategy.begin(); it != in.fits.per_strategy.end();) {
                    const auto mt = m.per_strategy.find(it->first);
                    if (mt == m.per_strategy.end()) {
                        in.fits.histograms.erase(it->first);
                        it = in.fits.per_strategy.erase(it);
                    } else {
                        it->second = mt->second;
                        ++it;
                    }
                }
                in.fits.combined = m.combined;
                if (m.clusters) in.clusters = *m.clusters;
            }
            err << detail::join_warnings(in.fits.warnings);
            if (rep_clusters > 0) {
                ClusterOptions co;
                co.k = rep_clusters;
                co.fit = opts;
                in.clusters = cluster_and_fit(io::ratings_by_user(records, 1), co, seed);
            }
            if (!rep_cohort.empty()) {
                const auto config = detail::read_json(rep_cohort).get<sim::CohortConfig>();
                if (config.archetypes.empty()) in.generating = config.strategy_params;
            }
            const auto files = io::emit_report(in, rep_dir);
            for (const auto& f : files) out << "wrote " << f.string() << "\n";
        } else if (*eval) {
            const auto records = detail::read_all(ev_in);
            const auto pairs = io::pair_records(records);
            const double r = sim::zscore_correlation(pairs);
            out << "r=" << io::fmt6(r) << " pairs=" << pairs.size() << "\n";
        }
    } catch (const InfeasibleError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const DegenerateError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const CalibrationError& e) {
        err << "error: " << e.what() << "\n";
        return kExitInfeasible;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitOk;
}

} // namespace explainmix::cli
