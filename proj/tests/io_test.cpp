#include <explainmix/io.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

using namespace explainmix;
using namespace explainmix::io;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("explainmix_io_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::size_t error_line(const std::string& text) {
    try {
        parse_ratings_text(text);
    } catch (const ValidationError& e) {
        return e.line();
    }
    return 0;
}

ReportInputs sample_report(std::uint64_t seed) {
    sim::CohortConfig c;
    c.n_users = 400;
    const auto w = sim::generate_cohort(c, seed);
    const auto p1 = sim::simulate_phase1(w, seed + 1);
    const auto p2 = sim::simulate_phase2(w, p1, 2, seed + 2);
    ReportInputs in;
    in.likelihood = sim::strategy_ratings(p1);
    in.consumption = sim::strategy_ratings(p2);
    FitOptions opts;
    opts.n_starts = 4;
    in.fits = fit_all_strategies(in.likelihood, opts, 5);
    return in;
}

} // namespace

TEST(ParseRatings, SingleRecord) {
    const auto recs = parse_ratings_text("user_id,item_id,strategy,phase,rating\nu1,i1,overall_pop,1,7\n");
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0], (RatingsRecord{"u1", "i1", StrategyKind::OverallPop, 1, 7}));
}

TEST(ParseRatings, AcceptsCrlfAndMissingFinalNewline) {
    const auto recs =
        parse_ratings_text("user_id,item_id,strategy,phase,rating\r\nu1,i1,good_fr_count,2,10\r\nu2,i9,friend_pop,1,0");
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_EQ(recs[1].rating, 0);
    EXPECT_EQ(recs[0].strategy, StrategyKind::GoodFrCount);
}

TEST(ParseRatings, ErrorsNameTheLine) {
    const std::string h = "user_id,item_id,strategy,phase,rating\n";
    EXPECT_EQ(error_line(h + "u1,i1,best_friend,1,7\n"), 2u);
    EXPECT_EQ(error_line(h + "u1,i1,overall_pop,1,7\nu1,i2,overall_pop,1,11\n"), 3u);
    EXPECT_EQ(error_line(h + "u1,i1,overall_pop,1,7.5\n"), 2u);
    EXPECT_EQ(error_line(h + "u1,i1,overall_pop,3,7\n"), 2u);
    EXPECT_EQ(error_line(h + "u1,i1,overall_pop,1\n"), 2u);
    EXPECT_EQ(error_line(h + ",i1,overall_pop,1,4\n"), 2u);
    EXPECT_EQ(error_line("user,item,strategy,phase,rating\nu1,i1,overall_pop,1,7\n"), 1u);
    EXPECT_THROW(parse_ratings_text(""), ValidationError);
}

TEST(ParseRatings, EmptyDataSection) {
    EXPECT_THROW(parse_ratings_text("user_id,item_id,strategy,phase,rating\n"), EmptyInputError);
}

TEST(ParseRatings, MissingFileIsIoError) {
    EXPECT_THROW(parse_ratings("/nonexistent/ratings.csv"), IoError);
}

TEST(ParseRatings, RoundTripOfSimulatedRecords) {
    sim::CohortConfig c;
    c.n_users = 500;
    const auto w = sim::generate_cohort(c, 40);
    const auto p1 = sim::simulate_phase1(w, 41);
    auto records = to_records(p1);
    const auto p2 = to_records(sim::simulate_phase2(w, p1, 2, 42));
    records.insert(records.end(), p2.begin(), p2.end());
    records.resize(std::min<std::size_t>(records.size(), 10'000));
    ASSERT_EQ(records.size(), 10'000u);

    const auto dir = scratch_dir("roundtrip");
    write_ratings(dir / "r.csv", records);
    auto back = parse_ratings(dir / "r.csv");
    auto expected = records;
    std::sort(back.begin(), back.end());
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(back, expected);
    std::filesystem::remove_all(dir);
}

TEST(WriteRatings, RejectsUnserializableIds) {
    const std::vector<RatingsRecord> bad{{"u,1", "i1", StrategyKind::OverallPop, 1, 3}};
    EXPECT_THROW(format_ratings(bad), ValidationError);
}

TEST(AtomicWrite, LeavesNoTemporaries) {
    const auto dir = scratch_dir("atomic");
    atomic_write(dir / "a.txt", "first");
    atomic_write(dir / "a.txt", "second");
    EXPECT_EQ(read_file(dir / "a.txt"), "second");
    EXPECT_EQ(std::distance(std::filesystem::directory_iterator(dir), std::filesystem::directory_iterator()), 1);
    EXPECT_THROW(atomic_write(dir / "missing" / "a.txt", "x"), IoError);
    std::filesystem::remove_all(dir);
}

TEST(Sha256, KnownDigests) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ModelFile, RoundTripAndProvenance) {
    const std::string input = "user_id,item_id,strategy,phase,rating\nu1,i1,overall_pop,1,7\n";
    ModelFile m;
    m.per_strategy[StrategyKind::GoodFriend] = FitResult{MixtureParams::free(6.46, 2.51, 0.66, 0.46), 0.01};
    m.combined = FitResult{MixtureParams::constrained(6.88, 3.05, 0.69, 2.266), 0.02};
    m.clusters = std::vector<ClusterModel>{{0, {1.0, 2.0}, {"u1", "u2"}, m.combined}};
    m.provenance = {sha256_hex(input), 99, FitOptions{}};
    m.provenance.options.target_mean = 2.3;

    const auto dir = scratch_dir("model");
    write_model(dir / "model.json", m);
    const auto back = read_model(dir / "model.json");
    EXPECT_EQ(model_to_json(back).dump(), model_to_json(m).dump());
    EXPECT_TRUE(verify_provenance(back, input));
    EXPECT_FALSE(verify_provenance(back, input + "u2,i1,overall_pop,1,3\n"));
    EXPECT_NEAR(back.combined.params.alpha, alpha_from_constraint(0.69, 2.266, 6.88), 1e-9);
    std::filesystem::remove_all(dir);
}

TEST(ModelFile, RejectsMissingVersionAndBadParams) {
    auto j = model_to_json(ModelFile{"1", {}, FitResult{MixtureParams::free(5, 2, 0.5, 0.5)}, {}, {}});
    auto no_version = j;
    no_version.erase("version");
    EXPECT_THROW(model_from_json(no_version), ValidationError);
    auto bad = j;
    bad["combined"]["params"]["sigma"] = -1.0;
    EXPECT_THROW(model_from_json(bad), ValidationError);
}

TEST(Fmt6, FixedDecimals) {
    EXPECT_EQ(fmt6(0.1), "0.100000");
    EXPECT_EQ(fmt6(-0.0), "0.000000");
    EXPECT_EQ(fmt6(-1e-9), "0.000000");
    EXPECT_EQ(fmt6(78.8249999), "78.825000");
}

TEST(EmitReport, FilesAndDeterminism) {
    const auto in = sample_report(50);
    const auto a = scratch_dir("report_a"), b = scratch_dir("report_b");
    const auto files = emit_report(in, a);
    emit_report(sample_report(50), b);
    std::vector<std::string> names;
    for (const auto& p : files) {
        names.push_back(p.filename().string());
        EXPECT_EQ(read_file(p), read_file(b / p.filename()));
    }
    EXPECT_EQ(names, (std::vector<std::string>{"fit_parameters.csv", "fraction_above5.csv", "strategy_summary.csv",
                                               "bin_frequencies.csv"}));
    EXPECT_FALSE(std::filesystem::exists(a / "clusters.csv"));
    const auto bins = read_file(a / "bin_frequencies.csv");
    EXPECT_EQ(std::count(bins.begin(), bins.end(), '\n'), 1 + 6 * 11);
    std::filesystem::remove_all(a);
    std::filesystem::remove_all(b);
}

TEST(EmitReport, EmptyConsumptionLeavesColumnsBlank) {
    auto in = sample_report(60);
    in.consumption.clear();
    const auto files = render_report(in);
    const auto& summary = files[2].second;
    EXPECT_NE(summary.find("overall_pop,"), std::string::npos);
    EXPECT_NE(summary.find(",0,,\n"), std::string::npos);
}

TEST(EmitReport, UnwritableDirectory) {
    EXPECT_THROW(emit_report(sample_report(70), "/proc/explainmix_no_such_dir"), IoError);
}

// Ratings generated from known parameters with no affinity coupling: every
// deviation in the recovery table is within the fit round-trip tolerances.
TEST(EmitReport, RecoveryTableWithinTolerance) {
    sim::CohortConfig c;
    c.n_users = 2500;
    c.n_items = 1000;
    c.candidates_per_user = 400; // ~2e5 ratings per strategy for a single replicate
    c.lambda = 0.0;
    const auto w = sim::generate_cohort(c, 80);
    ReportInputs in;
    in.likelihood = sim::strategy_ratings(sim::simulate_phase1(w, 81));
    in.fits = fit_all_strategies(in.likelihood, FitOptions{}, 82);
    in.generating = c.strategy_params;
    const auto files = render_report(in);
    ASSERT_EQ(files.back().first, "recovery.csv");
    const std::map<std::string, double> tol{{"mu", 0.3}, {"sigma", 0.3}, {"a", 0.05}};
    std::istringstream csv(files.back().second);
    std::string line;
    std::getline(csv, line);
    std::size_t checked = 0;
    while (std::getline(csv, line)) {
        const auto f = io::detail::split_fields(line);
        ASSERT_EQ(f.size(), 5u);
        const auto t = tol.find(std::string(f[1]));
        if (t == tol.end()) continue;
        EXPECT_LE(std::stod(std::string(f[4])), t->second) << line;
        ++checked;
    }
    EXPECT_EQ(checked, 15u);
}
