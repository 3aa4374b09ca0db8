#pragma once

// Ratings CSV, model files, report tables and atomic file output.

#include "cohorts.hpp"
#include "error.hpp"
#include "estimation.hpp"
#include "model.hpp"
#include "simulator.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <vector>

namespace explainmix::io {

inline constexpr std::string_view kRatingsHeader = "user_id,item_id,strategy,phase,rating";
inline constexpr std::string_view kModelVersion = "1";

struct RatingsRecord {
    std::string user_id;
    std::string item_id;
    StrategyKind strategy = StrategyKind::OverallPop;
    int phase = 1;
    int rating = 0;

    friend auto operator<=>(const RatingsRecord&, const RatingsRecord&) = default;
};

// ---------------------------------------------------------------------------
// Files

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw IoError("cannot read '" + path.string() + "'");
    return ss.str();
}

/// Writes `content` to a temporary sibling and renames it over `path`, so
/// readers never see a partial file.
inline void atomic_write(const std::filesystem::path& path, std::string_view content) {
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + path.string() + "'");
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("cannot write '" + path.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot rename into '" + path.string() + "'");
    }
}

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ratings CSV

namespace detail {

inline std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline std::optional<int> parse_int(std::string_view s) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return v;
}

inline bool valid_id(std::string_view s) {
    return !s.empty() && s.find_first_of(",\"\r\n") == std::string_view::npos;
}

} // namespace detail

inline std::vector<RatingsRecord> parse_ratings_text(std::string_view text) {
    if (text.starts_with("\xEF\xBB\xBF")) text.remove_prefix(3);
    std::vector<RatingsRecord> out;
    std::size_t line_no = 0, pos = 0;
    bool header_seen = false;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (line.ends_with('\r')) line.remove_suffix(1);
        if (!header_seen) {
            if (line != kRatingsHeader)
                throw ValidationError("expected header '" + std::string(kRatingsHeader) + "'", line_no);
            header_seen = true;
            continue;
        }
        if (line.empty()) continue;
        const auto f = detail::split_fields(line);
        if (f.size() != 5)
            throw ValidationError("expected 5 fields, found " + std::to_string(f.size()), line_no);
        RatingsRecord r;
        if (!detail::valid_id(f[0]) || !detail::valid_id(f[1]))
            throw ValidationError("empty or malformed id", line_no);
        r.user_id = f[0];
        r.item_id = f[1];
        const auto s = strategy_from_token(f[2]);
        if (!s) throw ValidationError("unknown strategy '" + std::string(f[2]) + "'", line_no);
        r.strategy = *s;
        const auto phase = detail::parse_int(f[3]);
        if (!phase || (*phase != 1 && *phase != 2))
            throw ValidationError("phase must be 1 or 2, got '" + std::string(f[3]) + "'", line_no);
        r.phase = *phase;
        const auto rating = detail::parse_int(f[4]);
        if (!rating) throw ValidationError("rating must be an integer, got '" + std::string(f[4]) + "'", line_no);
        if (*rating < 0 || *rating > kMaxRating)
            throw ValidationError("rating " + std::to_string(*rating) + " outside 0..10", line_no);
        r.rating = *rating;
        out.push_back(std::move(r));
    }
    if (!header_seen) throw ValidationError("missing header", 1);
    if (out.empty()) throw EmptyInputError("no ratings after the header");
    return out;
}

inline std::vector<RatingsRecord> parse_ratings(const std::filesystem::path& path) {
    return parse_ratings_text(read_file(path));
}

inline std::string format_ratings(std::span<const RatingsRecord> records) {
    std::string out(kRatingsHeader);
    out += '\n';
    for (const auto& r : records) {
        if (!detail::valid_id(r.user_id) || !detail::valid_id(r.item_id))
            throw ValidationError("ids must be non-empty and free of commas, quotes and newlines");
        if (r.phase != 1 && r.phase != 2) throw ValidationError("phase must be 1 or 2");
        if (r.rating < 0 || r.rating > kMaxRating) throw ValidationError("rating outside 0..10");
        out += r.user_id;
        out += ',';
        out += r.item_id;
        out += ',';
        out += to_token(r.strategy);
        out += ',';
        out += std::to_string(r.phase);
        out += ',';
        out += std::to_string(r.rating);
        out += '\n';
    }
    return out;
}

inline void write_ratings(const std::filesystem::path& path, std::span<const RatingsRecord> records) {
    atomic_write(path, format_ratings(records));
}

inline std::vector<RatingsRecord> to_records(std::span<const sim::LikelihoodRecord> recs) {
    std::vector<RatingsRecord> out;
    out.reserve(recs.size());
    for (const auto& r : recs)
        out.push_back({"u" + std::to_string(r.user), "i" + std::to_string(r.item), r.strategy, 1, r.rating.value});
    return out;
}

inline std::vector<RatingsRecord> to_records(std::span<const sim::ConsumptionRecord> recs) {
    std::vector<RatingsRecord> out;
    out.reserve(recs.size());
    for (const auto& r : recs)
        out.push_back({"u" + std::to_string(r.user), "i" + std::to_string(r.item), r.strategy, 2, r.rating.value});
    return out;
}

inline std::vector<StrategyRating> strategy_ratings(std::span<const RatingsRecord> records, int phase) {
    std::vector<StrategyRating> out;
    for (const auto& r : records)
        if (r.phase == phase)
            out.push_back({r.strategy, make_rating(r.rating, phase == 1 ? Phase::Likelihood : Phase::Consumption)});
    return out;
}

inline std::map<std::string, std::vector<Rating>> ratings_by_user(std::span<const RatingsRecord> records, int phase) {
    std::map<std::string, std::vector<Rating>> out;
    for (const auto& r : records)
        if (r.phase == phase)
            out[r.user_id].push_back(make_rating(r.rating, phase == 1 ? Phase::Likelihood : Phase::Consumption));
    return out;
}

// Likelihood/consumption pairs joined on (user_id, item_id).
inline std::vector<sim::PairedRating<std::string>> pair_records(std::span<const RatingsRecord> records) {
    std::map<std::pair<std::string, std::string>, int> lik;
    for (const auto& r : records)
        if (r.phase == 1) lik[{r.user_id, r.item_id}] = r.rating;
    std::vector<sim::PairedRating<std::string>> out;
    for (const auto& r : records) {
        if (r.phase != 2) continue;
        const auto it = lik.find({r.user_id, r.item_id});
        if (it != lik.end())
            out.push_back({r.user_id, static_cast<double>(it->second), static_cast<double>(r.rating)});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model file

struct Provenance {
    std::string input_sha256;
    std::uint64_t seed = 0;
    FitOptions options;
};

struct ModelFile {
    std::string version{kModelVersion};
    std::map<StrategyKind, FitResult> per_strategy;
    FitResult combined;
    std::optional<std::vector<ClusterModel>> clusters;
    Provenance provenance;
};

inline nlohmann::json model_to_json(const ModelFile& m) {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [s, f] : m.per_strategy) per[std::string(to_token(s))] = f;
    nlohmann::json j{{"version", m.version},
                     {"per_strategy", per},
                     {"combined", m.combined},
                     {"provenance",
                      {{"input_sha256", m.provenance.input_sha256},
                       {"seed", m.provenance.seed},
                       {"options", m.provenance.options}}}};
    if (m.clusters) j["clusters"] = *m.clusters;
    return j;
}

inline ModelFile model_from_json(const nlohmann::json& j) {
    try {
        ModelFile m;
        if (!j.contains("version")) throw ValidationError("model file: missing version");
        m.version = j.at("version").get<std::string>();
        if (m.version != kModelVersion) throw ValidationError("model file: unsupported version '" + m.version + "'");
        for (const auto& [tok, f] : j.at("per_strategy").items()) {
            const auto s = strategy_from_token(tok);
            if (!s) throw ValidationError("model file: unknown strategy '" + tok + "'");
            m.per_strategy[*s] = f.get<FitResult>();
        }
        m.combined = j.at("combined").get<FitResult>();
        if (j.contains("clusters")) m.clusters = j.at("clusters").get<std::vector<ClusterModel>>();
        if (j.contains("provenance")) {
            const auto& p = j.at("provenance");
            m.provenance.input_sha256 = p.value("input_sha256", std::string());
            m.provenance.seed = p.value("seed", std::uint64_t{0});
            if (p.contains("options")) m.provenance.options = p.at("options").get<FitOptions>();
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("model file: ") + e.what());
    } catch (const DomainError& e) {
        throw ValidationError(std::string("model file: ") + e.what());
    }
}

inline ModelFile read_model(const std::filesystem::path& path) {
    const auto text = read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return model_from_json(j);
}

inline void write_model(const std::filesystem::path& path, const ModelFile& m) {
    atomic_write(path, model_to_json(m).dump(2) + "\n");
}

// True when `input` hashes to the digest recorded in the model.
inline bool verify_provenance(const ModelFile& m, std::string_view input) {
    return m.provenance.input_sha256 == sha256_hex(input);
}

// ---------------------------------------------------------------------------
// Reports

// Fixed 6-decimal formatting; negative zero prints as zero.
inline std::string fmt6(double v) {
    if (v == 0.0) v = 0.0;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    std::string s(buf);
    if (s == "-0.000000") s = "0.000000";
    return s;
}

struct ReportInputs {
    StrategyFits fits;
    std::vector<StrategyRating> likelihood;
    std::vector<StrategyRating> consumption;
    std::vector<ClusterModel> clusters;
    // Parameters the ratings were generated from, when known.
    std::optional<std::array<MixtureParams, 5>> generating;
    PmfMode pmf_mode = PmfMode::TruncatedRenormalized;
};

/// Report tables as (file name, CSV content), in a fixed order.
inline std::vector<std::pair<std::string, std::string>> render_report(const ReportInputs& in) {
    std::vector<std::pair<std::string, std::string>> files;
    auto rows = [&](auto&& fn) {
        for (auto s : kAllStrategies) {
            const auto it = in.fits.per_strategy.find(s);
            if (it != in.fits.per_strategy.end()) fn(std::string(to_token(s)), it->second, &in.fits.histograms.at(s));
        }
        fn(std::string("combined"), in.fits.combined, &in.fits.combined_histogram);
    };

    std::string fp = "strategy,mode,mu,sigma,a,alpha,c,rse,n\n";
    rows([&](const std::string& name, const FitResult& f, const Histogram* h) {
        const auto& p = f.params;
        fp += name + ',' + std::string(to_token(p.mode)) + ',' + fmt6(p.mu) + ',' + fmt6(p.sigma) + ',' + fmt6(p.a) +
              ',' + fmt6(p.alpha) + ',' + fmt6(p.c) + ',' + fmt6(f.rse) + ',' + std::to_string(h->total) + '\n';
    });
    files.emplace_back("fit_parameters.csv", std::move(fp));

    std::string fa = "strategy,observed,fitted\n";
    rows([&](const std::string& name, const FitResult& f, const Histogram* h) {
        double obs = 0.0;
        for (std::size_t k = 6; k < kNumBins; ++k) obs += h->freqs[k];
        fa += name + ',' + fmt6(obs) + ',' + fmt6(fraction_above(f.params, 5, in.pmf_mode)) + '\n';
    });
    files.emplace_back("fraction_above5.csv", std::move(fa));

    const auto summary = sim::strategy_report(in.likelihood, in.consumption);
    std::string ss = "strategy,likelihood_n,likelihood_mean,likelihood_std,likelihood_fraction_above5,"
                     "consumption_n,consumption_mean,consumption_std\n";
    for (const auto& s : summary) {
        ss += std::string(to_token(s.strategy)) + ',' + std::to_string(s.likelihood.n) + ',';
        if (s.likelihood.n)
            ss += fmt6(s.likelihood.mean) + ',' + fmt6(s.likelihood.std) + ',' + fmt6(s.likelihood_fraction_above5);
        else
            ss += ",,";
        ss += ',' + std::to_string(s.consumption.n) + ',';
        if (s.consumption.n) ss += fmt6(s.consumption.mean) + ',' + fmt6(s.consumption.std);
        else ss += ',';
        ss += '\n';
    }
    files.emplace_back("strategy_summary.csv", std::move(ss));

    std::string bf = "strategy,rating,observed,fitted\n";
    rows([&](const std::string& name, const FitResult& f, const Histogram* h) {
        const auto pmf = discretize_pmf(f.params, in.pmf_mode);
        for (std::size_t k = 0; k < kNumBins; ++k)
            bf += name + ',' + std::to_string(k) + ',' + fmt6(h->freqs[k]) + ',' + fmt6(pmf.probs[k]) + '\n';
    });
    files.emplace_back("bin_frequencies.csv", std::move(bf));

    if (!in.clusters.empty()) {
        std::string cl = "cluster_id,centroid_mean,centroid_variance,members,mu,sigma,a,alpha,rse\n";
        for (const auto& c : in.clusters) {
            const auto& p = c.fit.params;
            cl += std::to_string(c.cluster_id) + ',' + fmt6(c.centroid.x) + ',' + fmt6(c.centroid.y) + ',' +
                  std::to_string(c.members.size()) + ',' + fmt6(p.mu) + ',' + fmt6(p.sigma) + ',' + fmt6(p.a) + ',' +
                  fmt6(p.alpha) + ',' + fmt6(c.fit.rse) + '\n';
        }
        files.emplace_back("clusters.csv", std::move(cl));
    }

    if (in.generating) {
        std::string rc = "strategy,parameter,generating,fitted,abs_deviation\n";
        for (auto s : kAllStrategies) {
            const auto it = in.fits.per_strategy.find(s);
            if (it == in.fits.per_strategy.end()) continue;
            const auto& g = (*in.generating)[index_of(s)];
            const auto& f = it->second.params;
            const std::array<std::pair<const char*, std::pair<double, double>>, 4> vals{
                {{"mu", {g.mu, f.mu}}, {"sigma", {g.sigma, f.sigma}}, {"a", {g.a, f.a}}, {"alpha", {g.alpha, f.alpha}}}};
            for (const auto& [name, gv] : vals)
                rc += std::string(to_token(s)) + ',' + name + ',' + fmt6(gv.first) + ',' + fmt6(gv.second) + ',' +
                      fmt6(std::abs(gv.first - gv.second)) + '\n';
        }
        files.emplace_back("recovery.csv", std::move(rc));
    }
    return files;
}

/// Writes the report tables into `dir`, creating it if needed. Returns the
/// paths written.
inline std::vector<std::filesystem::path> emit_report(const ReportInputs& in, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "'");
    const auto files = render_report(in);
    std::vector<std::filesystem::path> written;
    for (const auto& [name, content] : files) {
        atomic_write(dir / name, content);
        written.push_back(dir / name);
    }
    return written;
}

} // namespace explainmix::io
